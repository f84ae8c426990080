"""Reader and writer for the safetensors-style tensor archive.

Layout::

    bytes [0, 8)        little-endian u64 header length L
    bytes [8, 8 + L)    UTF-8 JSON: name -> {"dtype": "F32", "shape": [...],
                        "data_offsets": [begin, end]}
    bytes [8 + L, ...)  raw little-endian float32 payload

Offsets are relative to the start of the payload. A ``__metadata__`` entry
(string -> string) is tolerated and ignored, for compatibility with files
written by other tools.
"""

import json
import os
import struct

import numpy as np

from .exceptions import ArchiveFormatError

__all__ = ["load_archive", "write_archive", "read_header", "read_metadata"]

_HEADER_PREFIX = 8
_F32_LE = np.dtype("<f4")


def read_header(path):
    """Return ``(header_dict, payload_offset, payload_length)``."""
    with open(path, "rb") as fh:
        prefix = fh.read(_HEADER_PREFIX)
        if len(prefix) < _HEADER_PREFIX:
            raise ArchiveFormatError(f"{path}: file shorter than the 8-byte header prefix")
        (header_len,) = struct.unpack("<Q", prefix)
        file_len = os.fstat(fh.fileno()).st_size
        if _HEADER_PREFIX + header_len > file_len:
            raise ArchiveFormatError(
                f"{path}: header length {header_len} exceeds file length {file_len}"
            )
        raw = fh.read(header_len)
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveFormatError(f"{path}: malformed header JSON ({exc})") from exc
    if not isinstance(header, dict):
        raise ArchiveFormatError(f"{path}: header JSON must be an object")
    payload_offset = _HEADER_PREFIX + header_len
    return header, payload_offset, file_len - payload_offset


def _entries(header, payload_len, path):
    entries = []
    for name, info in header.items():
        if name == "__metadata__":
            continue
        if not isinstance(info, dict) or not {"dtype", "shape", "data_offsets"} <= info.keys():
            raise ArchiveFormatError(f"{path}: entry {name!r} lacks dtype/shape/data_offsets")
        if info["dtype"] != "F32":
            raise ArchiveFormatError(
                f"{path}: tensor {name!r} has dtype {info['dtype']!r}, only F32 is supported"
            )
        shape = info["shape"]
        offsets = info["data_offsets"]
        if (
            not isinstance(shape, list)
            or not all(isinstance(s, int) and s >= 0 for s in shape)
            or not isinstance(offsets, list)
            or len(offsets) != 2
            or not all(isinstance(o, int) for o in offsets)
        ):
            raise ArchiveFormatError(f"{path}: tensor {name!r} has an invalid shape or offsets")
        begin, end = offsets
        if not 0 <= begin <= end:
            raise ArchiveFormatError(f"{path}: tensor {name!r} has offsets {offsets}")
        if end > payload_len:
            raise ArchiveFormatError(
                f"{path}: tensor {name!r} offset range {offsets} exceeds payload length {payload_len}"
            )
        expected = int(np.prod(shape, dtype=np.int64)) * 4
        if end - begin != expected:
            raise ArchiveFormatError(
                f"{path}: size mismatch for {name!r}: shape {shape} needs {expected} bytes, "
                f"offsets span {end - begin}"
            )
        entries.append((begin, end, name, tuple(shape)))
    entries.sort()
    for (_, prev_end, prev_name, _), (begin, _, name, _) in zip(entries, entries[1:]):
        if begin < prev_end:
            raise ArchiveFormatError(f"{path}: tensors {prev_name!r} and {name!r} overlap")
    return entries


def load_archive(path):
    """Load every tensor in the archive as a native-endian float32 array."""
    header, payload_offset, payload_len = read_header(path)
    entries = _entries(header, payload_len, path)
    with open(path, "rb") as fh:
        fh.seek(payload_offset)
        payload = fh.read(payload_len)
    tensors = {}
    for begin, end, name, shape in sorted(entries, key=lambda e: e[2]):
        data = np.frombuffer(payload, dtype=_F32_LE, count=(end - begin) // 4, offset=begin)
        tensors[name] = data.astype(np.float32).reshape(shape)
    return tensors


def read_metadata(path):
    """The ``__metadata__`` string map, or ``{}``."""
    header = read_header(path)[0]
    meta = header.get("__metadata__", {})
    if not isinstance(meta, dict):
        raise ArchiveFormatError(f"{path}: __metadata__ must be an object")
    return {str(k): str(v) for k, v in meta.items()}


def write_archive(path, tensors, metadata=None):
    """Write ``tensors`` (name -> array-like) with names in sorted order."""
    header = {}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=_F32_LE)
        buf = arr.tobytes()
        header[name] = {
            "dtype": "F32",
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(buf)],
        }
        chunks.append(buf)
        offset += len(buf)
    if metadata:
        header["__metadata__"] = {str(k): str(v) for k, v in metadata.items()}
    raw = json.dumps(header, separators=(",", ":")).encode("utf-8")
    raw += b" " * (-len(raw) % 8)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for buf in chunks:
            fh.write(buf)
