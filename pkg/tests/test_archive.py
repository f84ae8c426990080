import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vitscope.archive import load_archive, read_header, read_metadata, write_archive
from vitscope.exceptions import ArchiveFormatError


def _raw(path, header, payload):
    blob = json.dumps(header).encode()
    path.write_bytes(struct.pack("<Q", len(blob)) + blob + payload)
    return path


def test_round_trip_small(tmp_path):
    p = tmp_path / "a.safetensors"
    write_archive(p, {"a": np.array([[1, 2], [3, 4]], dtype=np.float32)})
    out = load_archive(p)
    assert list(out) == ["a"]
    np.testing.assert_array_equal(out["a"], [[1, 2], [3, 4]])
    assert out["a"].dtype == np.float32


def test_layout_is_bit_exact(tmp_path):
    p = tmp_path / "a.safetensors"
    write_archive(p, {"b": np.array([1.5], np.float32), "a": np.array([2.0, -0.0], np.float32)})
    raw = p.read_bytes()
    n = struct.unpack("<Q", raw[:8])[0]
    assert n % 8 == 0
    header = json.loads(raw[8:8 + n])
    assert header["a"] == {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]}
    assert header["b"] == {"dtype": "F32", "shape": [1], "data_offsets": [8, 12]}
    assert raw[8 + n:] == struct.pack("<3f", 2.0, -0.0, 1.5)


def test_sixteen_bytes_for_2x2(tmp_path):
    p = _raw(tmp_path / "x", {"w": {"dtype": "F32", "shape": [2, 2], "data_offsets": [0, 16]}},
             struct.pack("<4f", 1, 2, 3, 4))
    np.testing.assert_array_equal(load_archive(p)["w"], [[1, 2], [3, 4]])


def test_size_mismatch(tmp_path):
    p = _raw(tmp_path / "x", {"w": {"dtype": "F32", "shape": [3], "data_offsets": [0, 8]}}, bytes(8))
    with pytest.raises(ArchiveFormatError, match="size mismatch"):
        load_archive(p)


@pytest.mark.parametrize(
    "header,payload,msg",
    [
        ({"w": {"dtype": "F16", "shape": [2], "data_offsets": [0, 4]}}, bytes(4), "F32"),
        ({"w": {"dtype": "F32", "shape": [4], "data_offsets": [0, 16]}}, bytes(8), "exceeds"),
        (
            {"a": {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]},
             "b": {"dtype": "F32", "shape": [2], "data_offsets": [4, 12]}},
            bytes(12),
            "overlap",
        ),
    ],
)
def test_malformed_entries(tmp_path, header, payload, msg):
    with pytest.raises(ArchiveFormatError, match=msg):
        load_archive(_raw(tmp_path / "x", header, payload))


def test_bad_json_and_truncation(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(struct.pack("<Q", 5) + b"{nope")
    with pytest.raises(ArchiveFormatError):
        load_archive(p)
    p.write_bytes(struct.pack("<Q", 500) + b"{}")
    with pytest.raises(ArchiveFormatError):
        read_header(p)
    p.write_bytes(b"abc")
    with pytest.raises(ArchiveFormatError):
        read_header(p)


def test_metadata_round_trip_and_ignored(tmp_path):
    p = tmp_path / "m"
    write_archive(p, {"a": np.zeros(1)}, {"format": "pt"})
    assert read_metadata(p) == {"format": "pt"}
    assert list(load_archive(p)) == ["a"]


names = st.text("abcdefgh._0123", min_size=1, max_size=8)
tensors = arrays(np.float32, st.lists(st.integers(0, 4), min_size=0, max_size=3).map(tuple),
                 elements=st.floats(width=32, allow_nan=False))


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(names, tensors, min_size=1, max_size=4))
def test_round_trip_property(tmp_path_factory, data):
    p = tmp_path_factory.mktemp("arch") / "t.safetensors"
    write_archive(p, data)
    out = load_archive(p)
    assert set(out) == set(data)
    for k, v in data.items():
        assert out[k].shape == v.shape
        assert out[k].tobytes() == v.astype("<f4").tobytes()
