"""Versioned binary container shared by dataset and checkpoint files.

Layout (all integers little-endian)::

    bytes 0..3    magic b"PLTE"
    bytes 4..5    uint16 container version
    bytes 6..9    uint32 header length H
    H bytes       UTF-8 JSON header (sorted keys, no whitespace)
    rest          payload: raw array bytes, concatenated in header order

The header holds ``kind`` ("dataset" or "checkpoint"), free-form ``meta``,
an ``arrays`` list of ``{name, dtype, shape, offset, nbytes}`` entries and
the SHA-256 of the payload. Arrays are stored as ``<f8`` or ``<i8``, so
float64 values survive a round trip bit-for-bit. Given equal inputs the
file bytes are identical.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

MAGIC = b"PLTE"
VERSION = 1
_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


class ContainerError(Exception):
    """Base class for unreadable artifact files."""


class CorruptFileError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


def _code(arr):
    if np.issubdtype(arr.dtype, np.floating):
        return "f8"
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == np.bool_:
        return "i8"
    raise TypeError(f"unsupported dtype {arr.dtype}")


def dumps(kind, meta, arrays):
    entries, chunks, offset = [], [], 0
    for name in arrays:
        arr = np.asarray(arrays[name])
        code = _code(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {"kind": kind, "meta": meta, "arrays": entries,
              "sha256": hashlib.sha256(payload).hexdigest()}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<HI", VERSION, len(hbytes)) + hbytes + payload


def loads(blob, kind=None):
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise CorruptFileError("not a PLTE container (bad magic or truncated)")
    version, hlen = struct.unpack("<HI", blob[4:10])
    if version != VERSION:
        raise VersionMismatchError(f"container version {version}, this build reads {VERSION}")
    if len(blob) < 10 + hlen:
        raise CorruptFileError("truncated header")
    try:
        header = json.loads(blob[10:10 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"unreadable header: {exc}") from exc
    if kind is not None and header.get("kind") != kind:
        raise CorruptFileError(f"expected a {kind} file, found {header.get('kind')!r}")
    payload = blob[10 + hlen:]
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise CorruptFileError("payload checksum mismatch (truncated or modified file)")
    arrays = {}
    for e in header["arrays"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"]).copy()
    return header["meta"], arrays


def save(path, kind, meta, arrays):
    blob = dumps(kind, meta, arrays)
    with open(path, "wb") as fh:
        fh.write(blob)
    return path


def load(path, kind=None):
    with open(path, "rb") as fh:
        return loads(fh.read(), kind)
