"""Predictive activation update on a fully connected classifier.

Activations are row vectors (or batches of rows): ``acts[0]`` is the input
and ``acts[l]`` the output of ``layers[l-1]``. Each layer owns a feedforward
matrix ``W_ff`` (d_l x d_{l-1}) and an untied feedback matrix ``W_fb``
(d_{l-1} x d_l) used only by the recurrent updates:

    prediction   r_hat_{l-1} = W_fb r_l
    error        e_{l-1}     = r_{l-1} - r_hat_{l-1}
    feedforward  r_l        <- r_l + k1 W_ff e_{l-1}
    feedback     r_{l-1}    <- (1 - beta) r_{l-1} + beta r_hat_{l-1}

Modes: ``plain`` is the feedforward sweep alone; ``global`` follows it with
T cycles of (top-down sweep, bottom-up sweep) over all layers; ``local``
interleaves T error-driven updates into the sweep, one layer pair at a
time, never touching layers below the one being refined. All forward code
is written against ``@``/``+``/``-``/scalar ``*`` so it runs on numpy
arrays and on tape variables alike; training differentiates the unrolled
graph.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _tape
from ._tape import Var, relu
from .core import ShapeError, as_matrix, check_finite, load_weights, save_weights

MODES = ("plain", "global", "local")


@dataclass
class PCNLayer:
    W_ff: np.ndarray  # d_l x d_{l-1}
    W_fb: np.ndarray  # d_{l-1} x d_l, not tied to W_ff.T
    b: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        out_dim, in_dim = self.W_ff.shape
        if self.W_fb.shape != (in_dim, out_dim):
            raise ShapeError(f"W_fb has shape {self.W_fb.shape}, expected {(in_dim, out_dim)}")
        if self.b.shape != (out_dim,):
            raise ShapeError(f"bias has shape {self.b.shape}, expected {(out_dim,)}")
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class PCNNet:
    layers: list[PCNLayer]
    W_head: np.ndarray
    b_head: np.ndarray
    T: int = 3
    k1: float = 0.1
    beta: float = 0.5
    T_max: int = 6
    skip: bool = False

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("need at least one hidden layer")
        for i in range(1, len(self.layers)):
            if self.layers[i].W_ff.shape[1] != self.layers[i - 1].W_ff.shape[0]:
                raise ShapeError(f"layer {i} input does not match layer {i - 1} output")
        if self.W_head.shape[1] != self.layers[-1].W_ff.shape[0]:
            raise ShapeError("classifier head does not match the last layer")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not 0 <= self.T <= self.T_max:
            raise ValueError(f"T must lie in [0, {self.T_max}]")

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].W_ff.shape[1]] + [l.W_ff.shape[0] for l in self.layers]

    @property
    def n_classes(self) -> int:
        return self.W_head.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        p = {}
        for i, l in enumerate(self.layers):
            p[f"W_ff{i}"] = l.W_ff
            p[f"W_fb{i}"] = l.W_fb
            p[f"b{i}"] = l.b
        p["W_head"] = self.W_head
        p["b_head"] = self.b_head
        return p

    def with_params(self, p: dict) -> "PCNNet":
        layers = [
            replace(l, W_ff=p[f"W_ff{i}"], W_fb=p[f"W_fb{i}"], b=p[f"b{i}"])
            for i, l in enumerate(self.layers)
        ]
        return replace(self, layers=layers, W_head=p["W_head"], b_head=p["b_head"])


def init_pcn(
    rng: np.random.Generator,
    dims: Sequence[int],
    n_classes: int,
    T: int = 3,
    k1: float = 0.1,
    beta: float = 0.5,
    skip: bool = False,
    activation: str = "relu",
    T_max: int = 6,
) -> PCNNet:
    """He-style init for W_ff and the head, small random W_fb, zero biases."""
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        W_ff = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_out, d_in))
        W_fb = rng.normal(0.0, np.sqrt(1.0 / d_out), size=(d_in, d_out))
        layers.append(PCNLayer(W_ff=W_ff, W_fb=W_fb, b=np.zeros(d_out), activation=activation))
    W_head = rng.normal(0.0, np.sqrt(1.0 / dims[-1]), size=(n_classes, dims[-1]))
    return PCNNet(layers=layers, W_head=W_head, b_head=np.zeros(n_classes), T=T, k1=k1, beta=beta,
                  T_max=T_max, skip=skip)


# -- single-step operations -------------------------------------------------

def _check_width(x, n: int, what: str):
    if x.shape[-1] != n:
        raise ShapeError(f"{what}: expected trailing dimension {n}, got shape {x.shape}")


def pcn_predict_down(layer: PCNLayer, r_upper):
    _check_width(r_upper, layer.W_fb.shape[1], "prediction input")
    return r_upper @ layer.W_fb.T


def pcn_error(r_lower, r_hat):
    if r_lower.shape != r_hat.shape:
        raise ShapeError(f"shapes {r_lower.shape} and {r_hat.shape} differ")
    return r_lower - r_hat


def pcn_ff_update(layer: PCNLayer, r, e_below, k1: float):
    _check_width(e_below, layer.W_ff.shape[1], "feedforward error")
    return r + k1 * (e_below @ layer.W_ff.T)


def pcn_fb_update(r, r_hat, beta: float):
    if r.shape != r_hat.shape:
        raise ShapeError(f"shapes {r.shape} and {r_hat.shape} differ")
    return (1.0 - beta) * r + beta * r_hat


def _activate(layer: PCNLayer, z):
    return relu(z) if layer.activation == "relu" else z


def feedforward_sweep(net: PCNNet, x) -> list:
    acts = [x]
    for layer in net.layers:
        a = _activate(layer, acts[-1] @ layer.W_ff.T + layer.b)
        acts.append(_skip(net, a, acts[-1]))
    return acts


def _skip(net: PCNNet, a, below):
    if net.skip and a.shape == below.shape:
        return a + below
    return a


def pcn_global_cycle(net: PCNNet, acts: list) -> list:
    """One top-down sweep (feedback blends, top to bottom) then one bottom-up
    sweep (error-driven feedforward updates, bottom to top). Predictions are
    recomputed from the current activations at every stage."""
    acts = list(acts)
    L = len(net.layers)
    for l in range(L, 0, -1):
        r_hat = pcn_predict_down(net.layers[l - 1], acts[l])
        acts[l - 1] = pcn_fb_update(acts[l - 1], r_hat, net.beta)
    for l in range(1, L + 1):
        layer = net.layers[l - 1]
        e = pcn_error(acts[l - 1], pcn_predict_down(layer, acts[l]))
        acts[l] = pcn_ff_update(layer, acts[l], e, net.k1)
    return acts


def pcn_local_cycle(net: PCNNet, acts: list, l: int) -> list:
    """One recurrent step between ``acts[l-1]`` and ``acts[l]``; only ``acts[l]`` changes."""
    if not 1 <= l <= len(net.layers):
        raise IndexError(f"layer index {l} out of range 1..{len(net.layers)}")
    acts = list(acts)
    layer = net.layers[l - 1]
    e = pcn_error(acts[l - 1], pcn_predict_down(layer, acts[l]))
    acts[l] = pcn_ff_update(layer, acts[l], e, net.k1)
    return acts


def _resolve_T(net: PCNNet, T: int | None) -> int:
    T = net.T if T is None else T
    if not 0 <= T <= net.T_max:
        raise ValueError(f"T must lie in [0, {net.T_max}], got {T}")
    return T


def run_activations(net: PCNNet, x, mode: str = "global", T: int | None = None) -> tuple[list, list]:
    """Return (activations after the initial sweep, final activations)."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    T = _resolve_T(net, T)
    _check_width(x, net.dims[0], "input")
    if mode == "local":
        initial = [x]
        acts = [x]
        for l, layer in enumerate(net.layers, start=1):
            a = _activate(layer, acts[-1] @ layer.W_ff.T + layer.b)
            initial.append(_skip(net, a, initial[-1]))
            acts = acts + [a]
            for _ in range(T):
                acts = pcn_local_cycle(net, acts, l)
            acts[l] = _skip(net, acts[l], acts[l - 1])
        return initial, acts
    acts = feedforward_sweep(net, x)
    initial = acts
    if mode == "global":
        for _ in range(T):
            acts = pcn_global_cycle(net, acts)
    return initial, acts


def head(net: PCNNet, top):
    return top @ net.W_head.T + net.b_head


def pcn_forward(net: PCNNet, x, mode: str = "global", T: int | None = None):
    """Class logits for input ``x`` (a vector or a batch of rows)."""
    x = np.asarray(x, dtype=np.float64) if not isinstance(x, Var) else x
    _, acts = run_activations(net, x, mode, T)
    return head(net, acts[-1])


def prediction_error_energy(net: PCNNet, acts: list) -> float:
    """Sum over layer pairs of ||r_{l-1} - W_fb r_l||^2 (summed over the batch)."""
    total = 0.0
    for l, layer in enumerate(net.layers, start=1):
        e = acts[l - 1] - acts[l] @ layer.W_fb.T
        total += float(np.sum(e * e))
    return total


@dataclass
class ForwardTrace:
    logits: np.ndarray
    sse_before: float
    sse_after: float


def forward_trace(net: PCNNet, x, mode: str = "global", T: int | None = None) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    initial, acts = run_activations(net, x, mode, T)
    return ForwardTrace(
        logits=head(net, acts[-1]),
        sse_before=prediction_error_energy(net, initial),
        sse_after=prediction_error_energy(net, acts),
    )


# -- training ---------------------------------------------------------------

def _check_labels(net: PCNNet, y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
        raise ValueError("labels must be a 1-D integer array")
    if y.size and (y.min() < 0 or y.max() >= net.n_classes):
        raise ValueError(f"labels must lie in [0, {net.n_classes - 1}]")
    return y


def cross_entropy(net: PCNNet, X, y, mode: str = "global", T: int | None = None) -> float:
    y = _check_labels(net, y)
    z = pcn_forward(net, np.atleast_2d(X), mode, T)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(y)), y].mean())


def loss_and_grads(net: PCNNet, X, y, mode: str = "global", T: int | None = None):
    """Mean cross-entropy and its gradient for every parameter (unrolled graph)."""
    y = _check_labels(net, y)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("batch is empty")
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"{X.shape[0]} inputs but {y.shape[0]} labels")
    pv = {k: Var(v) for k, v in net.params().items()}
    vnet = net.with_params(pv)
    logits = pcn_forward(vnet, Var(X), mode, T)
    loss = _tape.softmax_xent(logits, y)
    loss.backward()
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in pv.items()}
    return float(loss.value), grads


def pcn_train_step(net: PCNNet, X, y, lr: float, mode: str = "global", T: int | None = None):
    """One gradient-descent step on the batch; returns (new net, loss before the step)."""
    loss, grads = loss_and_grads(net, X, y, mode, T)
    new = {k: v - lr * grads[k] for k, v in net.params().items()}
    for k, v in new.items():
        check_finite(v, k)
    return net.with_params(new), loss


def accuracy(net: PCNNet, X, y, mode: str = "global", T: int | None = None) -> float:
    z = pcn_forward(net, np.atleast_2d(X), mode, T)
    return float(np.mean(np.argmax(z, axis=1) == np.asarray(y)))


@dataclass
class FitLog:
    rows: list = field(default_factory=list)  # (step, mode, T, cross_entropy, sum_sq_pred_error, accuracy)


def pcn_fit(
    net: PCNNet,
    X,
    y,
    epochs: int,
    rng: np.random.Generator,
    mode: str = "global",
    lr: float = 0.01,
    batch: int = 32,
    T: int | None = None,
) -> tuple[PCNNet, FitLog]:
    """Minibatch training; logs one row per epoch measured on the training set."""
    X = as_matrix(X, "X")
    y = _check_labels(net, y)
    T_eff = 0 if mode == "plain" else _resolve_T(net, T)
    log = FitLog()
    step = 0
    for _ in range(epochs):
        order = rng.permutation(X.shape[0])
        for s in range(0, len(order), batch):
            idx = order[s:s + batch]
            net, _ = pcn_train_step(net, X[idx], y[idx], lr, mode, T_eff)
            step += 1
        tr = forward_trace(net, X, mode, T_eff)
        z = tr.logits - tr.logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        ce = float(-logp[np.arange(len(y)), y].mean())
        acc = float(np.mean(np.argmax(tr.logits, axis=1) == y))
        log.rows.append((step, mode, T_eff, ce, tr.sse_after / X.shape[0], acc))
    return net, log


# -- toy datasets -----------------------------------------------------------

def two_gaussians(rng: np.random.Generator, n: int, dim: int = 2, separation: float = 2.0):
    y = rng.integers(0, 2, size=n)
    centers = np.zeros((2, dim))
    centers[0, 0] = -separation / 2
    centers[1, 0] = separation / 2
    X = centers[y] + rng.standard_normal((n, dim))
    return X, y


def two_moons(rng: np.random.Generator, n: int, noise: float = 0.2):
    y = rng.integers(0, 2, size=n)
    t = rng.uniform(0.0, np.pi, size=n)
    X = np.where(
        (y == 0)[:, None],
        np.stack([np.cos(t), np.sin(t)], axis=1),
        np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1),
    )
    X = X + noise * rng.standard_normal((n, 2))
    return X, y


def load_digit_raster(path: str | os.PathLike):
    """Comma-separated rows of 64 pixel values followed by an integer label."""
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.shape[1] != 65:
        raise ValueError(f"{path}: expected 65 columns (8x8 pixels + label), got {data.shape[1]}")
    return data[:, :64].astype(np.float64), data[:, 64].astype(np.int64)


# -- persistence ------------------------------------------------------------

def save_net(net: PCNNet, out_dir: str | os.PathLike) -> list[str]:
    """One PCW1 file per matrix plus a JSON manifest with hyperparameters."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for k, v in net.params().items():
        name = f"{k}.pcw"
        save_weights(out / name, np.atleast_2d(v))
        files.append(name)
    manifest = {
        "dims": net.dims, "n_classes": net.n_classes, "T": net.T, "T_max": net.T_max, "k1": net.k1,
        "beta": net.beta, "skip": net.skip, "activation": net.layers[0].activation,
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return files + ["manifest.json"]


def load_net(in_dir: str | os.PathLike) -> PCNNet:
    d = Path(in_dir)
    man = json.loads((d / "manifest.json").read_text())
    p = {}
    for name in man["files"]:
        key = name[:-len(".pcw")]
        m = load_weights(d / name)
        p[key] = m[0] if key.startswith("b") else m
    L = len(man["dims"]) - 1
    layers = [PCNLayer(p[f"W_ff{i}"], p[f"W_fb{i}"], p[f"b{i}"], man["activation"]) for i in range(L)]
    return PCNNet(layers=layers, W_head=p["W_head"], b_head=p["b_head"], T=man["T"],
                  T_max=man.get("T_max", 6), k1=man["k1"], beta=man["beta"], skip=man["skip"])
