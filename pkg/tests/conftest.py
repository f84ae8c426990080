import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vitscope import ModelConfig, random_weights  # noqa: E402

_CRITERIA = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA.setdefault(marker, []).append((report.nodeid, report.outcome))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report.criterion = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        results = _CRITERIA[n]
        verdict = "PASS" if all(o == "passed" for _, o in results) else "FAIL"
        names = ", ".join(nodeid.split("::")[-1] for nodeid, _ in results)
        terminalreporter.write_line(f"criterion {n:>2}: {verdict}  ({names})")


@pytest.fixture
def toy_cfg():
    return ModelConfig(image_size=8, patch_size=2, channels=3, embed_dim=8, depth=3, num_heads=2, mlp_dim=16)


@pytest.fixture
def toy_weights(toy_cfg):
    return random_weights(toy_cfg, seed=3, scale=0.5)


@pytest.fixture
def toy_image(toy_cfg):
    rng = np.random.default_rng(11)
    s = toy_cfg.image_size
    return rng.standard_normal((s, s, toy_cfg.channels)).astype(np.float32)
