"""Binary array container: one JSON header line followed by a raw payload.

The header is a UTF-8 JSON object terminated by ``\\n``; the payload is a
little-endian, row-major dump of the array.  Feature files use the header
keys ``clip_id``, ``T`` and ``D`` (always float32); raw clip arrays use
``clip_id``, ``shape`` and ``dtype``.
"""

import json
import os

import numpy as np

from patchda.errors import DataError

_DTYPES = {"float32": "<f4", "float64": "<f8", "uint8": "u1", "int64": "<i8"}


def _encode_header(header):
    line = json.dumps(header, sort_keys=True, separators=(",", ":"))
    if "\n" in line:
        raise ValueError("header must serialise to a single line")
    return (line + "\n").encode("utf-8")


def write_array(path, array, clip_id, extra=None):
    """Write ``array`` with a ``shape``/``dtype`` header."""
    array = np.ascontiguousarray(array)
    dtype = array.dtype.name
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported dtype {dtype}")
    header = {"clip_id": clip_id, "shape": list(array.shape), "dtype": dtype}
    if extra:
        header.update(extra)
    with open(path, "wb") as fh:
        fh.write(_encode_header(header))
        fh.write(array.astype(_DTYPES[dtype], copy=False).tobytes())


def write_features(path, features, clip_id):
    """Write a T x D float32 feature matrix in the precomputed-feature format."""
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2:
        raise ValueError("features must be a T x D matrix")
    t, d = features.shape
    with open(path, "wb") as fh:
        fh.write(_encode_header({"clip_id": clip_id, "T": int(t), "D": int(d)}))
        fh.write(features.astype("<f4").tobytes())


def read_header(path):
    """Return ``(header, payload_bytes)`` for a container file."""
    if not os.path.exists(path):
        raise DataError(f"missing file {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    newline = blob.find(b"\n")
    if newline < 0:
        raise DataError(f"{path}: no header line")
    try:
        header = json.loads(blob[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable header ({exc})") from exc
    if not isinstance(header, dict):
        raise DataError(f"{path}: header is not a JSON object")
    return header, blob[newline + 1:]


def read_array(path):
    """Read a ``shape``/``dtype`` container; returns ``(header, array)``."""
    header, payload = read_header(path)
    try:
        shape = tuple(int(s) for s in header["shape"])
        dtype = np.dtype(_DTYPES[header["dtype"]])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed header {header!r}") from exc
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) != expected:
        raise DataError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    array = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return header, array.astype(dtype.newbyteorder("="))
