"""CSV and PGM writers used by the experiments and the export command."""

from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def format_value(x) -> str:
    # repr of a Python float round-trips exactly and is stable across runs
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(x) for x in row])
    return path


def read_csv(path: str | os.PathLike) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def to_gray8(img) -> np.ndarray:
    """Min-max scale to 0..255. A constant image maps to mid-gray (128)."""
    a = np.asarray(img, dtype=np.float64)
    lo, hi = float(a.min()), float(a.max())
    if not hi > lo:
        return np.full(a.shape, 128, dtype=np.uint8)
    return np.rint((a - lo) / (hi - lo) * 255.0).astype(np.uint8)


def encode_pgm(img) -> bytes:
    g = to_gray8(img)
    if g.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {g.shape}")
    h, w = g.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + g.tobytes()


def write_pgm(path: str | os.PathLike, img) -> Path:
    path = Path(path)
    path.write_bytes(encode_pgm(img))
    return path


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(t) for t in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def export_rows_as_pgm(W, shape: tuple[int, int], out_dir: str | os.PathLike, stem: str) -> list[Path]:
    """One PGM per row of ``W``, each row reshaped to ``shape``."""
    W = np.asarray(W, dtype=np.float64)
    h, w = shape
    if W.shape[1] != h * w:
        raise ValueError(f"row length {W.shape[1]} does not match image shape {h}x{w}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [write_pgm(out_dir / f"{stem}_row{i:03d}.pgm", row.reshape(h, w)) for i, row in enumerate(W)]
