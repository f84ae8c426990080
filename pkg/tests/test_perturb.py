import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from vitscope.exceptions import ShapeError
from vitscope.patch_labels import PatchLabelMap
from vitscope.perturb import (
    DropMask,
    ShuffleSpec,
    SplitMix64,
    apply_mask,
    apply_shuffle,
    nonsalient_drop,
    random_drop,
    salient_drop,
    shuffle,
)


def _labels(values, grid):
    values = np.asarray(values, dtype=np.int64)
    return PatchLabelMap(values, [{}] * len(values), grid)


def test_splitmix_reference_value():
    assert SplitMix64(0).next_u64() == 0xE220A8397B1DCDAF


@pytest.mark.parametrize("seed", [0, 1, 42, 2**63 + 5, 2**64 - 1])
def test_splitmix_matches_scalar_reference(seed):
    rng = SplitMix64(seed)
    got = [rng.next_u64() for _ in range(5)] + [int(v) for v in rng.next_u64(20)]
    assert got == oracles.splitmix64_stream(seed, 25)


def test_splitmix_derived_draws():
    rng = SplitMix64(7)
    draws = [rng.below(10) for _ in range(2000)]
    assert min(draws) == 0 and max(draws) == 9
    u = SplitMix64(7).random(5000)
    assert u.min() >= 0 and u.max() < 1
    z = SplitMix64(7).normal(20001)
    assert abs(z.mean()) < 0.05 and abs(z.std() - 1) < 0.05
    perm = SplitMix64(3).permutation(50)
    assert sorted(perm) == list(range(50))
    with pytest.raises(ValueError):
        SplitMix64(0).sample(range(3), 4)


def test_random_drop_counts():
    m = random_drop(196, 0.5, seed=1)
    assert len(m.dropped) == 98 and len(set(m.dropped)) == 98
    assert all(1 <= i <= 196 for i in m.dropped)
    assert random_drop(196, 0.0, seed=1).dropped == ()
    assert random_drop(196, 1.0, seed=1).dropped == tuple(range(1, 197))
    assert len(random_drop(100, 0.29, seed=0).dropped) == 29
    with pytest.raises(ValueError):
        random_drop(10, 1.5, seed=0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 300), st.floats(0, 1), st.integers(0, 2**64 - 1))
def test_random_drop_property(n, r, seed):
    m = random_drop(n, r, seed)
    assert len(m.dropped) == int(np.floor(n * r + 1e-9))
    assert m == random_drop(n, r, seed)


def test_salient_and_nonsalient():
    values = np.zeros(110, dtype=np.int64)
    values[:10] = 3
    labels = _labels(values, (10, 11))
    s = salient_drop(labels, 0.2, seed=5)
    assert len(s.dropped) == 2 and set(s.dropped) <= set(range(1, 11))
    assert salient_drop(labels, 1.0, seed=5).dropped == tuple(range(1, 11))
    big = np.zeros(196, dtype=np.int64)
    big[:96] = 1
    ns = nonsalient_drop(_labels(big, (14, 14)), 0.5, seed=2)
    assert len(ns.dropped) == 50
    assert not set(ns.dropped) & set(range(1, 97))
    with pytest.raises(ValueError):
        salient_drop(_labels(np.zeros(4), (2, 2)), 0.5, 0)


def test_apply_mask_fills():
    rng = np.random.default_rng(0)
    img = rng.standard_normal((8, 8, 3)).astype(np.float32)
    empty = random_drop(16, 0.0, 0)
    np.testing.assert_array_equal(apply_mask(img, empty, 2), img)
    one = DropMask(dropped=(6,), n_patches=16)
    out = apply_mask(img, one, 2)
    changed = np.argwhere(out != img)
    assert len(changed) == 2 * 2 * 3
    np.testing.assert_array_equal(out[2:4, 2:4], -1.0)  # raw black under 0.5/0.5
    norm = apply_mask(img, DropMask((6,), 16, fill_space="normalized"), 2)
    np.testing.assert_array_equal(norm[2:4, 2:4], 0.0)
    full = apply_mask(img, random_drop(16, 1.0, 0), 2)
    np.testing.assert_array_equal(full, -1.0)


def test_noise_fill_is_seeded():
    img = np.zeros((4, 4, 3), np.float32)
    a = apply_mask(img, DropMask((1, 4), 4, fill_mode="noise", seed=9), 2)
    b = apply_mask(img, DropMask((1, 4), 4, fill_mode="noise", seed=9), 2)
    c = apply_mask(img, DropMask((1, 4), 4, fill_mode="noise", seed=10), 2)
    assert a.tobytes() == b.tobytes() and a.tobytes() != c.tobytes()
    np.testing.assert_array_equal(a[:2, 2:], 0)


def test_apply_mask_shape_checks():
    with pytest.raises(ShapeError):
        apply_mask(np.zeros((4, 4, 3)), DropMask((), 9), 2)
    with pytest.raises(ValueError):
        DropMask((0,), 4)
    with pytest.raises(ValueError):
        DropMask((1,), 4, fill_mode="blur")


def test_shuffle_trivial_and_inverse():
    rng = np.random.default_rng(1)
    img = rng.standard_normal((8, 8, 3)).astype(np.float32)
    same, spec = shuffle(img, 1, seed=3)
    assert spec.permutation == (0,)
    np.testing.assert_array_equal(same, img)
    out, spec = shuffle(img, 4, seed=3)
    np.testing.assert_array_equal(apply_shuffle(out, spec.inverse()), img)
    with pytest.raises(ShapeError):
        shuffle(img, 3, seed=0)


def test_shuffle_cells_move_whole_patches():
    img = np.arange(14 * 14 * 2 * 2).reshape(28, 28, 1).astype(np.float32)
    out, spec = shuffle(img, 14, seed=8)
    for c, src in enumerate(spec.permutation):
        r, q = divmod(c, 14)
        sr, sq = divmod(src, 14)
        np.testing.assert_array_equal(out[2 * r:2 * r + 2, 2 * q:2 * q + 2], img[2 * sr:2 * sr + 2, 2 * sq:2 * sq + 2])


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1, 2, 4, 8]), st.integers(0, 2**32))
def test_shuffle_preserves_histogram(g, seed):
    img = np.random.default_rng(seed).integers(0, 256, (16, 16, 3), dtype=np.uint8)
    out, _ = shuffle(img, g, seed)
    for ch in range(3):
        np.testing.assert_array_equal(np.bincount(out[..., ch].ravel(), minlength=256),
                                      np.bincount(img[..., ch].ravel(), minlength=256))


def test_specs_json_round_trip():
    m = random_drop(20, 0.3, seed=4, fill_mode="noise")
    assert DropMask.from_json(m.to_json()) == m
    _, s = shuffle(np.zeros((4, 4)), 2, seed=1)
    assert ShuffleSpec.from_json(s.to_json()) == s
    with pytest.raises(ValueError):
        ShuffleSpec(2, (0, 0, 1, 2))
