"""On-disk artifact formats: raw float32 grids, PGM images, CSV, manifests.

Everything written here is byte-deterministic for a given input: no
timestamps, stable key ordering, fixed float formatting.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import DomainError


def save_raw_f32(path, array: np.ndarray, meta: dict) -> None:
    """Raw little-endian float32 grid plus a text sidecar (key=value)."""
    path = Path(path)
    arr = np.ascontiguousarray(array, dtype="<f4")
    path.write_bytes(arr.tobytes())
    lines = [f"shape={','.join(str(s) for s in arr.shape)}", "dtype=float32_le"]
    for key in sorted(meta):
        lines.append(f"{key}={_fmt(meta[key])}")
    path.with_suffix(path.suffix + ".meta").write_text("\n".join(lines) + "\n")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_raw_f32(path):
    """Read a raw grid written by ``save_raw_f32``; returns (array, meta)."""
    path = Path(path)
    meta_path = path.with_suffix(path.suffix + ".meta")
    if not meta_path.exists():
        raise DomainError(f"{path}: missing sidecar {meta_path.name}")
    meta = {}
    for line in meta_path.read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        meta[key] = value
    shape = tuple(int(s) for s in meta.pop("shape").split(","))
    if meta.pop("dtype", "float32_le") != "float32_le":
        raise DomainError(f"{path}: unsupported sidecar dtype")
    data = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(shape)
    return data.astype(np.float64), meta


def save_pgm(path, db_image: np.ndarray, dynamic_range_db: float) -> None:
    """8-bit binary PGM with [-DR, 0] dB mapped linearly onto [0, 255]."""
    db = np.asarray(db_image)
    if db.ndim != 2:
        raise DomainError("PGM export needs a 2-D image")
    u8 = np.clip(np.rint((db + dynamic_range_db) / dynamic_range_db * 255.0), 0, 255)
    header = f"P5\n{db.shape[1]} {db.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + u8.astype(np.uint8).tobytes())


def load_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise DomainError(f"{path}: not a binary PGM")
    fields = []
    idx = 2
    while len(fields) < 3:
        while idx < len(raw) and raw[idx : idx + 1].isspace():
            idx += 1
        if raw[idx : idx + 1] == b"#":
            while raw[idx : idx + 1] != b"\n":
                idx += 1
            continue
        start = idx
        while idx < len(raw) and not raw[idx : idx + 1].isspace():
            idx += 1
        fields.append(int(raw[start:idx]))
    idx += 1
    width, height, maxval = fields
    if maxval != 255:
        raise DomainError(f"{path}: expected 8-bit PGM")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=idx)
    return pixels.reshape(height, width)


def write_csv(path, rows: list[dict], fieldnames: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, quoting=csv.QUOTE_MINIMAL)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(out_dir, entries: dict) -> Path:
    """Manifest with content hashes of every artifact under ``out_dir``.

    ``entries`` supplies everything except the artifact table, which is
    built here so hashes always reflect the files as written.
    """
    out_dir = Path(out_dir)
    artifacts = []
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            artifacts.append({
                "path": p.relative_to(out_dir).as_posix(),
                "sha256": sha256_file(p),
                "bytes": p.stat().st_size,
            })
    manifest = dict(entries)
    manifest["artifacts"] = artifacts
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path
