"""Hierarchical predictive elements with tied feedforward/feedback weights.

A layer holds ``W`` (repr_dim x input_dim). Its prediction of the input is
``W.T @ r`` and the error ``I - W.T @ r`` drives ``r`` back up through
``W``. The hierarchy tiles an image into overlapping patches; the first
layer is applied to every patch with one shared matrix, and each higher
layer reads the flattened representation of the layer below.

Inference minimises the summed squared error of every layer,

    J = sum_p ||I_p - W1.T r1_p||^2 + ||r1 - W2.T r2||^2 + ...

so a middle layer is pulled up by its own input error and down by the
error of the layer above it. With one layer this is exactly
``r <- r + k1 W e``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .core import ShapeError, as_matrix, as_vector, check_finite, matvec, outer

MAX_HALVINGS = 30


@dataclass
class RBLayer:
    W: np.ndarray  # repr_dim x input_dim; the feedback weights are W.T
    r: np.ndarray
    k1: float = 0.05
    k2: float = 1e-3

    def __post_init__(self):
        self.W = as_matrix(self.W, "W")
        self.r = as_vector(self.r, "r")
        if self.r.shape[0] != self.W.shape[0]:
            raise ShapeError(f"r has length {self.r.shape[0]} but W has {self.W.shape[0]} rows")
        if self.k1 < 0 or self.k2 < 0:
            raise ValueError("rates k1, k2 must be non-negative")

    @property
    def repr_dim(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class PredErr:
    e: np.ndarray
    J: float


def rb_predict(layer: RBLayer) -> np.ndarray:
    return matvec(layer.W.T, layer.r)


def rb_error(I, I_hat) -> PredErr:
    I = as_vector(I, "I")
    I_hat = as_vector(I_hat, "I_hat")
    if I.shape != I_hat.shape:
        raise ShapeError(f"input length {I.shape[0]} != prediction length {I_hat.shape[0]}")
    e = I - I_hat
    return PredErr(e=e, J=float(e @ e))


def rb_update_r(layer: RBLayer, e) -> np.ndarray:
    return layer.r + layer.k1 * matvec(layer.W, e)


def rb_update_w(layer: RBLayer, e, r) -> np.ndarray:
    """Return the new ``W``; equivalently ``W.T += k2 * e r^T``."""
    e = as_vector(e, "e")
    r = as_vector(r, "r")
    if e.shape[0] != layer.input_dim or r.shape[0] != layer.repr_dim:
        raise ShapeError(
            f"update needs e of length {layer.input_dim} and r of length {layer.repr_dim}, "
            f"got {e.shape[0]} and {r.shape[0]}"
        )
    return layer.W + layer.k2 * outer(r, e)


# -- patch geometry ---------------------------------------------------------

@dataclass(frozen=True)
class PatchGeometry:
    patch_h: int = 16
    patch_w: int = 16
    overlap: int = 11
    n_patches: int = 3

    @property
    def stride(self) -> int:
        return self.patch_w - self.overlap

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.patch_h, self.patch_w + (self.n_patches - 1) * self.stride

    @property
    def patch_dim(self) -> int:
        return self.patch_h * self.patch_w

    def offsets(self) -> list[int]:
        return [i * self.stride for i in range(self.n_patches)]

    @property
    def center(self) -> int:
        return self.n_patches // 2


def _patch_offsets(width: int, pw: int, overlap: int) -> list[int]:
    stride = pw - overlap
    if stride < 1:
        raise ValueError(f"overlap {overlap} leaves no stride for patch width {pw}")
    if width < pw or (width - pw) % stride:
        raise ValueError(f"patches of width {pw} with overlap {overlap} do not tile width {width}")
    return list(range(0, width - pw + 1, stride))


def extract_patches(image, size: tuple[int, int], overlap: int) -> list[np.ndarray]:
    """Cut a horizontal strip of overlapping patches, left to right.

    Each patch is flattened row-major. The patch height must equal the image
    height and the patches must cover the width exactly.
    """
    img = as_matrix(image, "image")
    ph, pw = size
    if img.shape[0] != ph:
        raise ValueError(f"patch height {ph} must equal image height {img.shape[0]}")
    return [img[:, o:o + pw].reshape(-1).copy() for o in _patch_offsets(img.shape[1], pw, overlap)]


def stitch_patches(patches: Sequence[np.ndarray], size: tuple[int, int], overlap: int) -> np.ndarray:
    """Inverse of :func:`extract_patches` (later patches drop their overlap)."""
    ph, pw = size
    blocks = [np.asarray(p).reshape(ph, pw) for p in patches]
    cols = [blocks[0]] + [b[:, overlap:] for b in blocks[1:]]
    return np.hstack(cols)


# -- hierarchy --------------------------------------------------------------

@dataclass
class RBHierarchy:
    """``layers[0]`` is shared over all patches; ``layers[i]`` for i >= 1 reads
    the flattened representation of ``layers[i-1]`` across all patches."""

    layers: list[RBLayer]
    geometry: PatchGeometry = field(default_factory=PatchGeometry)
    trained: bool = False

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("hierarchy needs at least one layer")
        g = self.geometry
        if self.layers[0].input_dim != g.patch_dim:
            raise ShapeError(f"layer 0 expects {self.layers[0].input_dim} inputs, patches have {g.patch_dim}")
        below = g.n_patches * self.layers[0].repr_dim
        for i, layer in enumerate(self.layers[1:], start=1):
            if layer.input_dim != below:
                raise ShapeError(f"layer {i} expects {layer.input_dim} inputs, layer below provides {below}")
            below = layer.repr_dim

    @property
    def depth(self) -> int:
        return len(self.layers)

    def copy(self) -> "RBHierarchy":
        return RBHierarchy(
            layers=[replace(l, W=l.W.copy(), r=l.r.copy()) for l in self.layers],
            geometry=self.geometry,
            trained=self.trained,
        )


def build_hierarchy(
    rng: np.random.Generator,
    geometry: PatchGeometry | None = None,
    repr_dims: Sequence[int] = (32, 32),
    k1: float = 0.05,
    k2: float = 1e-3,
    init_scale: float = 0.1,
) -> RBHierarchy:
    """Hierarchy with weights drawn i.i.d. uniform(-init_scale, init_scale)."""
    g = geometry or PatchGeometry()
    layers = []
    n_in = g.patch_dim
    for i, d in enumerate(repr_dims):
        W = rng.uniform(-init_scale, init_scale, size=(d, n_in))
        layers.append(RBLayer(W=W, r=np.zeros(d), k1=k1, k2=k2))
        n_in = d * g.n_patches if i == 0 else d
    return RBHierarchy(layers=layers, geometry=g)


@dataclass
class InferenceTrace:
    """Per-step record; index 0 is the initial state.

    ``r[t][l]`` and ``e[t][l]`` are the representation and input error of
    layer ``l``. For layer 0 these are (n_patches, dim) arrays.
    """

    r: list[list[np.ndarray]]
    e: list[list[np.ndarray]]
    J: list[list[float]]

    @property
    def final_r(self) -> list[np.ndarray]:
        return self.r[-1]

    @property
    def final_e(self) -> list[np.ndarray]:
        return self.e[-1]

    def total_J(self, t: int = -1) -> float:
        return float(sum(self.J[t]))


def _as_patch_matrix(h: RBHierarchy, x) -> np.ndarray:
    g = h.geometry
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 2 and a.shape == g.image_shape:
        return np.stack(extract_patches(a, (g.patch_h, g.patch_w), g.overlap))
    a = a.reshape(-1)
    if a.size == g.patch_dim * g.n_patches and g.n_patches == 1:
        return a.reshape(1, -1)
    if a.size == g.image_shape[0] * g.image_shape[1]:
        return _as_patch_matrix(h, a.reshape(g.image_shape))
    raise ShapeError(f"input of size {a.size} does not fit image shape {g.image_shape}")


def _errors(h: RBHierarchy, P: np.ndarray, rs: list[np.ndarray], ablate_feedback: bool):
    """Input errors of every layer for representations ``rs``."""
    es = [P - rs[0] @ h.layers[0].W]
    for i in range(1, h.depth):
        below = rs[i - 1].reshape(-1)
        if ablate_feedback:
            pred = np.zeros_like(below)
        else:
            pred = h.layers[i].W.T @ rs[i]
        es.append(below - pred)
    Js = [float(np.sum(e * e)) for e in es]
    return es, Js


def _directions(h: RBHierarchy, es: list[np.ndarray]) -> list[np.ndarray]:
    """Negative half-gradient of J w.r.t. each layer's representation."""
    dirs = [es[0] @ h.layers[0].W.T]
    for i in range(1, h.depth):
        dirs.append(h.layers[i].W @ es[i])
    for i in range(h.depth - 1):
        dirs[i] = dirs[i] - es[i + 1].reshape(dirs[i].shape)
    return dirs


def initial_representations(h: RBHierarchy, P: np.ndarray) -> list[np.ndarray]:
    """Feedforward bootstrap ``r = W x`` through the stack."""
    rs = [P @ h.layers[0].W.T]
    for i in range(1, h.depth):
        rs.append(h.layers[i].W @ rs[i - 1].reshape(-1))
    return rs


def rb_infer(
    h: RBHierarchy,
    x,
    steps: int,
    ablate_feedback: bool = False,
    init: list[np.ndarray] | None = None,
) -> InferenceTrace:
    """Settle the representations with weights frozen.

    Each step moves every layer along ``k1 * (W e_own - e_above)``. If the
    total error does not decrease, the step multiplier is halved (and stays
    halved) until it does; if no decrease is found the state is left as is.
    With ``ablate_feedback`` the top-down predictions into every layer above
    the first are replaced by zeros.
    """
    P = _as_patch_matrix(h, x)
    rs = [r.copy() for r in init] if init is not None else initial_representations(h, P)
    es, Js = _errors(h, P, rs, ablate_feedback)
    trace = InferenceTrace(r=[[r.copy() for r in rs]], e=[es], J=[Js])
    scale = 1.0
    total = sum(Js)
    for _ in range(steps):
        dirs = _directions(h, es)
        accepted = False
        for _ in range(MAX_HALVINGS):
            cand = [r + scale * layer.k1 * d for r, layer, d in zip(rs, h.layers, dirs)]
            ces, cJs = _errors(h, P, cand, ablate_feedback)
            if sum(cJs) < total:
                accepted = True
                break
            scale *= 0.5
        if accepted:
            rs, es, Js = cand, ces, cJs
            total = sum(Js)
        trace.r.append([r.copy() for r in rs])
        trace.e.append(es)
        trace.J.append(Js)
    check_finite(np.array(total), "inference cost")
    return trace


def rb_train(
    h: RBHierarchy,
    dataset: Iterable,
    epochs: int,
    steps_per_input: int,
) -> tuple[RBHierarchy, list[tuple[int, int, float]]]:
    """Alternate settling and one weight step per input.

    Returns the trained copy and a loss curve of ``(epoch, layer, mean_J)``
    rows, where ``mean_J`` is averaged over inputs after settling.
    """
    data = list(dataset)
    if not data:
        raise ValueError("dataset is empty")
    h = h.copy()
    curve = []
    for epoch in range(epochs):
        sums = np.zeros(h.depth)
        for x in data:
            tr = rb_infer(h, x, steps_per_input)
            rs, es = tr.final_r, tr.final_e
            sums += tr.J[-1]
            # first layer: one shared matrix, updates summed over patches
            for i, layer in enumerate(h.layers):
                if layer.k2 == 0:
                    continue
                if i == 0:
                    layer.W = layer.W + layer.k2 * (rs[0].T @ es[0])
                else:
                    layer.W = layer.W + layer.k2 * np.outer(rs[i], es[i])
        for i in range(h.depth):
            curve.append((epoch, i, float(sums[i] / len(data))))
        check_finite(np.array([l.W.sum() for l in h.layers]), "weights")
    h.trained = True
    return h, curve


# -- end-stopping -----------------------------------------------------------

class UntrainedHierarchyError(RuntimeError):
    pass


def bar_stimuli(geometry: PatchGeometry | None = None, thickness: int = 2, value: float = 1.0):
    """Horizontal bar through the centre row: one as wide as the centre
    patch's receptive field, one spanning the whole image."""
    g = geometry or PatchGeometry()
    H, Wd = g.image_shape
    top = H // 2 - thickness // 2
    short = np.zeros((H, Wd))
    long_ = np.zeros((H, Wd))
    c0 = g.offsets()[g.center]
    short[top:top + thickness, c0:c0 + g.patch_w] = value
    long_[top:top + thickness, :] = value
    return short, long_


def endstopping_experiment(
    h: RBHierarchy,
    bar_short,
    bar_long,
    steps: int = 30,
    ablate_feedback: bool = False,
) -> tuple[float, float]:
    """Norm of the centre module's second-level error for both stimuli."""
    if not h.trained:
        raise UntrainedHierarchyError("end-stopping needs a trained hierarchy")
    if h.depth < 2:
        raise ShapeError("end-stopping needs at least two layers")
    d = h.layers[0].repr_dim
    c = h.geometry.center
    out = []
    for stim in (bar_short, bar_long):
        tr = rb_infer(h, stim, steps, ablate_feedback=ablate_feedback)
        e2 = tr.final_e[1]
        out.append(float(np.linalg.norm(e2[c * d:(c + 1) * d])))
    return out[0], out[1]


# -- data -------------------------------------------------------------------

def bar_images(
    rng: np.random.Generator,
    n: int,
    geometry: PatchGeometry | None = None,
    thickness: int = 2,
    noise: float = 0.05,
    p_horizontal: float = 0.5,
) -> np.ndarray:
    """Images with one full-length horizontal or vertical bar plus Gaussian noise."""
    g = geometry or PatchGeometry()
    H, Wd = g.image_shape
    X = np.zeros((n, H, Wd))
    for m in range(n):
        if rng.random() < p_horizontal:
            row = rng.integers(0, H - thickness + 1)
            X[m, row:row + thickness, :] = 1.0
        else:
            col = rng.integers(0, Wd - thickness + 1)
            X[m, :, col:col + thickness] = 1.0
    if noise > 0:
        X += noise * rng.standard_normal(X.shape)
    return X


def load_raw_grayscale(path: str | os.PathLike, height: int, width: int) -> np.ndarray:
    """Read headerless 8-bit grayscale frames (height*width bytes each) scaled to [0, 1]."""
    raw = np.fromfile(path, dtype=np.uint8)
    frame = height * width
    if raw.size == 0 or raw.size % frame:
        raise ValueError(f"{path}: {raw.size} bytes is not a whole number of {height}x{width} frames")
    return raw.reshape(-1, height, width).astype(np.float64) / 255.0


def sample_crops(rng: np.random.Generator, images: np.ndarray, shape: tuple[int, int], n: int) -> np.ndarray:
    """Random crops of ``shape`` from a stack of images, mean-subtracted per crop."""
    ch, cw = shape
    N, H, Wd = images.shape
    if H < ch or Wd < cw:
        raise ValueError(f"images {H}x{Wd} smaller than crop {ch}x{cw}")
    out = np.empty((n, ch, cw))
    for m in range(n):
        k = rng.integers(0, N)
        y = rng.integers(0, H - ch + 1)
        x = rng.integers(0, Wd - cw + 1)
        crop = images[k, y:y + ch, x:x + cw]
        out[m] = crop - crop.mean()
    return out
