"""Divisive input modulation: predictive coding with ratio errors and
multiplicative updates, which keeps every quantity non-negative.

    I_hat = W.T r
    e     = I / max(eps2, I_hat)
    r    <- max(eps1, r) * (W e)
    W    <- W * (1 + beta r (e^T - 1))

A perfectly reconstructed pixel has error 1, not 0, so ``e == 1`` is a
fixed point of the weight rule.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numba
import numpy as np

from .core import ShapeError, as_matrix, as_vector, check_finite, matvec


@dataclass
class DIMModel:
    W: np.ndarray  # n_units x n_pixels, non-negative
    eps1: float = 1e-2
    eps2: float = 1e-2
    beta: float = 0.05

    def __post_init__(self):
        self.W = as_matrix(self.W, "W")
        if np.any(self.W < 0):
            raise ValueError("DIM weights must be non-negative")
        if not (self.eps1 > 0 and self.eps2 > 0):
            raise ValueError("eps1 and eps2 must be positive")


@dataclass
class DIMState:
    r: np.ndarray
    e: np.ndarray


def init_model(rng: np.random.Generator, n_units: int, n_pixels: int, **kw) -> DIMModel:
    # rows start near 1/n_pixels each so that W e is O(1) at e = 1
    W = (1.0 + rng.uniform(0.0, 1.0, size=(n_units, n_pixels))) / n_pixels
    return DIMModel(W=W, **kw)


def initial_state(m: DIMModel, n_pixels: int | None = None) -> DIMState:
    n = m.W.shape[1] if n_pixels is None else n_pixels
    return DIMState(r=np.full(m.W.shape[0], m.eps1), e=np.ones(n))


def dim_predict(m: DIMModel, s: DIMState) -> np.ndarray:
    return matvec(m.W.T, s.r)


def dim_error(I, I_hat, eps2: float) -> np.ndarray:
    I = as_vector(I, "I")
    I_hat = as_vector(I_hat, "I_hat")
    if I.shape != I_hat.shape:
        raise ShapeError(f"input length {I.shape[0]} != prediction length {I_hat.shape[0]}")
    return I / np.maximum(eps2, I_hat)


def dim_update_r(m: DIMModel, s: DIMState, e) -> np.ndarray:
    return np.maximum(m.eps1, s.r) * matvec(m.W, e)


def dim_update_w(m: DIMModel, r, e) -> np.ndarray:
    """Multiplicative weight step, clamped at zero to stay non-negative."""
    r = as_vector(r, "r")
    e = as_vector(e, "e")
    if r.shape[0] != m.W.shape[0] or e.shape[0] != m.W.shape[1]:
        raise ShapeError(f"W is {m.W.shape}, got r of length {r.shape[0]} and e of length {e.shape[0]}")
    return np.maximum(0.0, m.W * (1.0 + m.beta * np.outer(r, e - 1.0)))


def kl_divergence(I, I_hat) -> float:
    """Generalised KL divergence sum(I ln(I/I_hat) - I + I_hat), with 0 ln 0 = 0."""
    I = as_vector(I, "I")
    I_hat = as_vector(I_hat, "I_hat")
    if I.shape != I_hat.shape:
        raise ShapeError(f"lengths {I.shape[0]} and {I_hat.shape[0]} differ")
    if np.any(I < 0) or np.any(I_hat < 0):
        raise ValueError("KL divergence needs non-negative inputs")
    pos = I > 0
    if np.any(I_hat[pos] == 0):
        return float("inf")
    return float(np.sum(I[pos] * np.log(I[pos] / I_hat[pos])) - I.sum() + I_hat.sum())


def dim_infer(m: DIMModel, I, r_steps: int) -> DIMState:
    """Iterate the error/representation pair ``r_steps`` times from r = eps1.

    The returned error is recomputed from the final ``r``.
    """
    I = as_vector(I, "I")
    s = initial_state(m, I.shape[0])
    for _ in range(r_steps):
        e = dim_error(I, dim_predict(m, s), m.eps2)
        s = DIMState(r=dim_update_r(m, s, e), e=e)
    return DIMState(r=s.r, e=dim_error(I, dim_predict(m, s), m.eps2))


# -- bars problem -----------------------------------------------------------

def bar_templates(side: int) -> np.ndarray:
    """The 2*side ground-truth bars (horizontal first), flattened."""
    out = np.zeros((2 * side, side, side))
    for i in range(side):
        out[i, i, :] = 1.0
        out[side + i, :, i] = 1.0
    return out.reshape(2 * side, -1)


def bars_dataset(rng: np.random.Generator, side: int, p_bar: float, n_images: int) -> np.ndarray:
    """Images (n_images x side*side) each the union of independently drawn bars."""
    if side < 2:
        raise ValueError("side must be >= 2")
    present = rng.random((n_images, 2 * side)) < p_bar
    imgs = np.zeros((n_images, side, side))
    for m in range(n_images):
        rows = present[m, :side]
        cols = present[m, side:]
        imgs[m, rows, :] = 1.0
        imgs[m, :, cols] = 1.0
    return imgs.reshape(n_images, -1)


def bars_recovered(W, side: int, threshold: float = 0.9) -> int:
    """Number of ground-truth bars matched by some weight row with cosine > threshold."""
    W = as_matrix(W)
    T = bar_templates(side)
    Wn = W / np.maximum(np.linalg.norm(W, axis=1, keepdims=True), 1e-300)
    Tn = T / np.linalg.norm(T, axis=1, keepdims=True)
    return int(np.sum((Tn @ Wn.T).max(axis=1) > threshold))


# -- training ---------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _train_epoch(W, images, order, eps1, eps2, beta, r_steps):
    k, n = W.shape
    r = np.empty(k)
    pred = np.empty(n)
    e = np.empty(n)
    kl_sum = 0.0
    for idx in order:
        I = images[idx]
        for j in range(k):
            r[j] = eps1
        for _ in range(r_steps):
            for i in range(n):
                acc = 0.0
                for j in range(k):
                    acc += W[j, i] * r[j]
                e[i] = I[i] / max(eps2, acc)
            for j in range(k):
                acc = 0.0
                for i in range(n):
                    acc += W[j, i] * e[i]
                r[j] = max(eps1, r[j]) * acc
        kl = 0.0
        for i in range(n):
            acc = 0.0
            for j in range(k):
                acc += W[j, i] * r[j]
            p = max(eps2, acc)
            e[i] = I[i] / p
            if I[i] > 0.0:
                kl += I[i] * np.log(I[i] / p)
            kl += p - I[i]
        kl_sum += kl
        for j in range(k):
            for i in range(n):
                w = W[j, i] * (1.0 + beta * r[j] * (e[i] - 1.0))
                W[j, i] = w if w > 0.0 else 0.0
    return kl_sum / order.shape[0]


def _train_epoch_reference(m: DIMModel, images, order, r_steps):
    """Same epoch written with the single-step operations (slow)."""
    kls = []
    for idx in order:
        I = images[idx]
        s = dim_infer(m, I, r_steps)
        kls.append(kl_divergence(I, np.maximum(m.eps2, dim_predict(m, s))))
        m.W = dim_update_w(m, s.r, s.e)
    return float(np.mean(kls))


def dim_train(
    m: DIMModel,
    images,
    epochs: int,
    r_steps: int = 25,
    rng: np.random.Generator | None = None,
    normalize_rows: bool = False,
    fast: bool = True,
) -> tuple[DIMModel, list[float]]:
    """Per-image training. Returns the trained copy and the per-epoch mean KL.

    Images are presented in one fixed order for the whole run (shuffled once
    if ``rng`` is given). The KL for an image is measured after its
    representation settles and before its weight update.
    """
    X = np.ascontiguousarray(as_matrix(images, "images"))
    if np.any(X < 0):
        raise ValueError("DIM training needs non-negative images")
    if X.shape[1] != m.W.shape[1]:
        raise ShapeError(f"images have {X.shape[1]} pixels, W expects {m.W.shape[1]}")
    order = rng.permutation(X.shape[0]) if rng is not None else np.arange(X.shape[0])
    out = replace(m, W=np.array(m.W, dtype=np.float64, order="C"))
    curve = []
    for _ in range(epochs):
        if fast:
            kl = _train_epoch(out.W, X, order, out.eps1, out.eps2, out.beta, r_steps)
        else:
            kl = _train_epoch_reference(out, X, order, r_steps)
        if normalize_rows:
            out.W = out.W / np.maximum(out.W.sum(axis=1, keepdims=True), 1e-300)
        curve.append(float(kl))
    check_finite(out.W, "DIM weights")
    return out, curve
