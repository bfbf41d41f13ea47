"""Flat tensor archive: named arrays, a JSON manifest, and a whole-file digest.

Layout: magic, 8-byte little-endian header length, header JSON (tensor
name -> shape/dtype/offset plus free-form metadata), raw payload bytes,
then a trailing hex sha256 over everything before it. Checkpoints and
backbone weight files share this format.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ArchiveError

_MAGIC = b"OTAR1\n"
_DIGEST_LEN = 64


def digest_of_arrays(arrays: Mapping[str, np.ndarray]) -> str:
    """Content digest of a named tensor set, independent of insertion order."""
    h = hashlib.sha256()
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(repr(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def save_archive(path: str | Path, arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> str:
    """Write the archive atomically; returns the whole-file digest."""
    path = Path(path)
    entries = {}
    payload = bytearray()
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        raw = arr.tobytes()
        entries[name] = {
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
            "offset": len(payload),
            "nbytes": len(raw),
        }
        payload.extend(raw)
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode()
    body = _MAGIC + len(header).to_bytes(8, "little") + header + bytes(payload)
    digest = hashlib.sha256(body).hexdigest()
    tmp = path.with_name(path.name + ".tmp")
    tmp.parent.mkdir(parents=True, exist_ok=True)
    with open(tmp, "wb") as fh:
        fh.write(body)
        fh.write(digest.encode())
    os.replace(tmp, path)
    return digest


def load_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read and digest-verify an archive. Returns (arrays, meta)."""
    path = Path(path)
    if not path.is_file():
        raise ArchiveError(f"archive not found: {path}")
    blob = path.read_bytes()
    if len(blob) < len(_MAGIC) + 8 + _DIGEST_LEN or not blob.startswith(_MAGIC):
        raise ArchiveError(f"not a tensor archive: {path}")
    body, stored = blob[:-_DIGEST_LEN], blob[-_DIGEST_LEN:].decode(errors="replace")
    actual = hashlib.sha256(body).hexdigest()
    if actual != stored:
        raise ArchiveError(f"digest mismatch for {path}: stored {stored[:12]}.., computed {actual[:12]}..")
    n = int.from_bytes(body[len(_MAGIC) : len(_MAGIC) + 8], "little")
    header_start = len(_MAGIC) + 8
    try:
        header = json.loads(body[header_start : header_start + n])
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"corrupt manifest in {path}: {exc}") from exc
    payload = body[header_start + n :]
    arrays = {}
    for name, entry in header["tensors"].items():
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arrays[name] = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
    return arrays, header.get("meta", {})


def archive_digest(path: str | Path) -> str:
    """Whole-file digest of an archive, verified against its trailer."""
    path = Path(path)
    if not path.is_file():
        raise ArchiveError(f"archive not found: {path}")
    blob = path.read_bytes()
    if len(blob) < _DIGEST_LEN:
        raise ArchiveError(f"not a tensor archive: {path}")
    body, stored = blob[:-_DIGEST_LEN], blob[-_DIGEST_LEN:].decode(errors="replace")
    actual = hashlib.sha256(body).hexdigest()
    if actual != stored:
        raise ArchiveError(f"digest mismatch for {path}: stored {stored[:12]}.., computed {actual[:12]}..")
    return actual
