"""Versioned, checksummed tensor container (``.mlw``).

Layout, all integers little-endian::

    offset 0    8 bytes   magic b"MLWEIGHT"
    offset 8    uint32    format version (currently 1)
    offset 12   uint64    header length N in bytes
    offset 20   N bytes   UTF-8 JSON header
    20 + N      payload   tensors, C-order little-endian, concatenated
    end - 32    32 bytes  SHA-256 of every preceding byte

The header object has keys ``kind`` ("lora" or "full"), ``meta`` (free-form
object) and ``tensors``: a list of ``{"name", "dtype", "shape", "offset",
"nbytes"}`` with offsets relative to the payload start. Supported dtypes are
``float32`` and ``float64``.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import ChecksumError, VersionError, WeightFileError

MAGIC = b"MLWEIGHT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DIGEST = 32
_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}


def write_weights(
    path: str | os.PathLike, kind: str, tensors: dict[str, torch.Tensor], meta: dict | None = None
) -> None:
    entries, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().numpy()
        dtype_name = arr.dtype.name
        if dtype_name not in _DTYPES:
            raise WeightFileError(f"unsupported dtype {dtype_name} for {name}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype_name]).tobytes()
        entries.append(
            {"name": name, "dtype": dtype_name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"kind": kind, "meta": meta or {}, "tensors": entries}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)) + header + b"".join(chunks)
    blob = body + hashlib.sha256(body).digest()
    dest = Path(path)
    try:
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_bytes(blob)
    except OSError as exc:
        raise WeightFileError(f"cannot write {dest}: {exc}") from exc


def read_weights(path: str | os.PathLike) -> tuple[str, dict, dict[str, torch.Tensor]]:
    """Returns ``(kind, meta, tensors)``; raises on bad magic, version or checksum."""
    src = Path(path)
    try:
        blob = src.read_bytes()
    except OSError as exc:
        raise WeightFileError(f"cannot read {src}: {exc}") from exc
    if len(blob) < _PREFIX.size + _DIGEST:
        raise WeightFileError(f"{src} is truncated")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise WeightFileError(f"{src} is not a weight file")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{src} is corrupted (checksum mismatch)")
    if version != FORMAT_VERSION:
        raise VersionError(f"{src} has format version {version}, expected {FORMAT_VERSION}")
    start = _PREFIX.size
    try:
        header = json.loads(body[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFileError(f"{src} has an unreadable header") from exc
    payload = body[start + header_len :]
    tensors = {}
    for e in header["tensors"]:
        raw = payload[e["offset"] : e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("=")))
    return header["kind"], header["meta"], tensors
