"""Manifest-plus-blob containers.

A container is a directory holding ``manifest.json`` and ``data.bin``. The
manifest lists records; each record names its arrays with byte offset,
shape and dtype into ``data.bin``, which is the concatenation of
little-endian 32-bit blobs in manifest order. Files are written to
temporaries and renamed into place, blob first and manifest last.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

FORMAT = "affordflow-container"
VERSION = 1
_DTYPES = {"f4": np.dtype("<f4"), "i4": np.dtype("<i4")}


class ContainerError(ValueError):
    pass


class IntegrityError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


def _atomic_write(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _encode(arr) -> tuple[str, np.ndarray]:
    a = np.asarray(arr)
    if np.issubdtype(a.dtype, np.integer) or a.dtype == bool:
        return "i4", a.astype("<i4")
    return "f4", a.astype("<f4")


def write_container(path, records: list[dict], header: dict | None = None) -> Path:
    """Write ``records`` (each ``{"name", "meta", "arrays"}``) under ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blobs = []
    offset = 0
    manifest_records = []
    for rec in records:
        entry = {"name": rec["name"], "meta": rec.get("meta", {}), "arrays": {}}
        for key, arr in rec["arrays"].items():
            code, enc = _encode(arr)
            raw = enc.tobytes(order="C")
            entry["arrays"][key] = {"offset": offset, "nbytes": len(raw),
                                    "shape": list(enc.shape), "dtype": code}
            blobs.append(raw)
            offset += len(raw)
        manifest_records.append(entry)
    manifest = {"format": FORMAT, "version": VERSION, "header": header or {},
                "records": manifest_records, "total_bytes": offset}
    _atomic_write(path / "data.bin", b"".join(blobs))
    _atomic_write(path / "manifest.json",
                  json.dumps(manifest, indent=1, sort_keys=True, default=_json_default).encode("utf-8"))
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def read_container(path) -> tuple[dict, list[dict]]:
    """Return ``(header, records)`` with arrays decoded from ``data.bin``."""
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ContainerError(f"no manifest.json under {path}") from None
    if manifest.get("format") != FORMAT:
        raise ContainerError(f"{path}: not an {FORMAT} manifest")
    version = manifest.get("version")
    if version != VERSION:
        raise VersionError(f"{path}: unsupported container version {version} (supported: {VERSION})")
    data = (path / "data.bin").read_bytes()
    records = []
    for entry in manifest["records"]:
        arrays = {}
        for key, spec in entry["arrays"].items():
            dt = _DTYPES.get(spec["dtype"])
            if dt is None:
                raise ContainerError(f"record {entry['name']!r}: unknown dtype {spec['dtype']!r}")
            n = int(np.prod(spec["shape"])) * dt.itemsize
            lo = spec["offset"]
            if n != spec["nbytes"] or lo + n > len(data):
                raise IntegrityError(f"record {entry['name']!r} array {key!r}: blob length "
                                     f"does not match manifest")
            arrays[key] = np.frombuffer(data, dtype=dt, count=n // dt.itemsize,
                                        offset=lo).reshape(spec["shape"]).copy()
        records.append({"name": entry["name"], "meta": entry["meta"], "arrays": arrays})
    if len(data) != manifest.get("total_bytes", len(data)):
        raise IntegrityError(f"{path}: data.bin has {len(data)} bytes, manifest declares "
                             f"{manifest['total_bytes']}")
    return manifest.get("header", {}), records
