"""Shared numerics: shape-checked products, a finite-difference oracle,
floors, seeded generators and the binary weight format.

Matrices and vectors are plain float64 numpy arrays. Every helper here
validates shapes and raises :class:`ShapeError` instead of letting numpy
broadcast silently.
"""

from __future__ import annotations

import os
from typing import Callable, Sequence

import numpy as np

WEIGHTS_MAGIC = b"PCW1"


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


class NonFiniteError(ArithmeticError):
    """Raised when a computation produces NaN or Inf."""


class CorruptWeightsError(ValueError):
    """Raised when a weight file cannot be decoded."""


def as_vector(x, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {v.shape}")
    return v


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def check_finite(x: np.ndarray, what: str = "result") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return x


def check_same_length(a: np.ndarray, b: np.ndarray, what: str = "operands") -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def matvec(m, v) -> np.ndarray:
    """Matrix-vector product with an explicit shape check."""
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise ShapeError(
            f"matvec: matrix {m.shape[0]}x{m.shape[1]} cannot multiply vector of length {v.shape[0]}"
        )
    return m @ v


def outer(a, b) -> np.ndarray:
    return np.outer(as_vector(a), as_vector(b))


def fd_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar field ``f`` at ``x``.

    ``x`` may have any shape; the result has the same shape.
    """
    if not h > 0:
        raise ValueError(f"step h must be positive, got {h}")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"f is not finite near coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return grad


def clamp_floor(v, eps: float) -> np.ndarray:
    """Elementwise ``max(eps, v)``."""
    return np.maximum(np.asarray(v, dtype=np.float64), eps)


def relative_error(a, b, floor: float = 1e-8) -> float:
    """Max-norm relative error of ``a`` against reference ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(b), initial=0.0), floor)
    return float(np.max(np.abs(a - b), initial=0.0) / scale)


# -- randomness -------------------------------------------------------------

def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def split_seeds(seed: int, n: int) -> list[int]:
    """Derive ``n`` independent 64-bit child seeds from one parent seed."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def component_rng(seed: int, component: str) -> np.random.Generator:
    """Generator keyed on (seed, component name), so components never share a stream."""
    key = [int(b) for b in component.encode("utf-8")]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & (2**64 - 1), *key])))


# -- weight persistence -----------------------------------------------------
#
# Layout: b"PCW1\n", then b"<rows> <cols>\n" in decimal ASCII, then
# rows*cols little-endian float64 values in row-major order.

def encode_weights(m) -> bytes:
    m = as_matrix(m)
    header = WEIGHTS_MAGIC + b"\n" + f"{m.shape[0]} {m.shape[1]}\n".encode("ascii")
    return header + np.ascontiguousarray(m, dtype="<f8").tobytes()


def decode_weights(blob: bytes) -> np.ndarray:
    if not blob.startswith(WEIGHTS_MAGIC + b"\n"):
        raise CorruptWeightsError("bad magic string, expected PCW1")
    rest = blob[len(WEIGHTS_MAGIC) + 1:]
    nl = rest.find(b"\n")
    if nl < 0:
        raise CorruptWeightsError("missing shape line")
    try:
        rows, cols = (int(t) for t in rest[:nl].decode("ascii").split())
    except (ValueError, UnicodeDecodeError) as exc:
        raise CorruptWeightsError(f"unreadable shape line: {rest[:nl]!r}") from exc
    if rows < 0 or cols < 0:
        raise CorruptWeightsError("negative shape")
    payload = rest[nl + 1:]
    if len(payload) != rows * cols * 8:
        raise CorruptWeightsError(
            f"payload has {len(payload)} bytes, expected {rows * cols * 8} for {rows}x{cols}"
        )
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(rows, cols)


def save_weights(path: str | os.PathLike, m) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_weights(m))


def load_weights(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_weights(fh.read())


def stack_rows(rows: Sequence[np.ndarray]) -> np.ndarray:
    return np.vstack([as_vector(r) for r in rows])
