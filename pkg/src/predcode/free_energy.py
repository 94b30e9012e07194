"""Free-energy node dynamics with explicit prediction-error units.

Scalar model: a cause ``phi`` with Gaussian prior N(v_p, sigma_p2) generates
an observation u ~ N(theta * phi, sigma_u2). The network integrates

    phi' = e_u theta - e_p
    e_p' = phi - v_p - sigma_p2 e_p
    e_u' = u - theta phi - sigma_u2 e_u

whose fixed point has e_p = (phi - v_p)/sigma_p2, e_u = (u - theta phi)/sigma_u2
and phi at the MAP estimate. Learning climbs F = ln p(u|phi) + ln p(phi)
in the parameters.

The layered network generalises this with vectors per layer:

    phi_l' = -e_l + h'(phi_l) * (Theta_{l-1}^T e_{l-1})
    e_l'   = phi_l - Theta_l h(phi_{l+1}) - Sigma_l e_l

Layer 0 is pinned to the observation; the top layer is predicted by a
fixed prior vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .core import NonFiniteError, ShapeError, as_matrix, as_vector

VARIANCE_FLOOR = 1e-6
LEARNABLE = ("v_p", "sigma_p2", "sigma_u2", "theta")


@dataclass(frozen=True)
class ScalarFE:
    phi: float
    e_p: float
    e_u: float
    v_p: float
    sigma_p2: float
    sigma_u2: float
    theta: float
    u: float

    def __post_init__(self):
        if not (self.sigma_p2 > 0 and self.sigma_u2 > 0):
            raise ValueError("variances must be positive")


def phi_star(v_p: float, sigma_p2: float, u: float, sigma_u2: float, theta: float) -> float:
    """Closed-form maximiser of F over phi for the linear scalar model."""
    if not (sigma_p2 > 0 and sigma_u2 > 0):
        raise ValueError("variances must be positive")
    return (v_p / sigma_p2 + theta * u / sigma_u2) / (1.0 / sigma_p2 + theta * theta / sigma_u2)


def fixed_point(s: ScalarFE) -> ScalarFE:
    """The state with phi, e_p, e_u at their equilibrium for the current u."""
    phi = phi_star(s.v_p, s.sigma_p2, s.u, s.sigma_u2, s.theta)
    return replace(s, phi=phi, e_p=(phi - s.v_p) / s.sigma_p2, e_u=(s.u - s.theta * phi) / s.sigma_u2)


def scalar_derivatives(s: ScalarFE) -> tuple[float, float, float]:
    dphi = s.e_u * s.theta - s.e_p
    de_p = s.phi - s.v_p - s.sigma_p2 * s.e_p
    de_u = s.u - s.theta * s.phi - s.sigma_u2 * s.e_u
    return dphi, de_p, de_u


def scalar_step(s: ScalarFE, dt: float) -> ScalarFE:
    """One forward-Euler step of all three node equations simultaneously."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    dphi, de_p, de_u = scalar_derivatives(s)
    return replace(s, phi=s.phi + dt * dphi, e_p=s.e_p + dt * de_p, e_u=s.e_u + dt * de_u)


def free_energy(s: ScalarFE, phi: float | None = None) -> float:
    """ln N(u; theta phi, sigma_u2) + ln N(phi; v_p, sigma_p2)."""
    phi = s.phi if phi is None else phi
    dp = phi - s.v_p
    du = s.u - s.theta * phi  # products, not **, so overflow gives inf instead of raising
    lp = -0.5 * math.log(2 * math.pi * s.sigma_p2) - dp * dp / (2 * s.sigma_p2)
    lu = -0.5 * math.log(2 * math.pi * s.sigma_u2) - du * du / (2 * s.sigma_u2)
    return lp + lu


def learning_directions(s: ScalarFE) -> dict[str, float]:
    return {
        "v_p": s.e_p,
        "sigma_p2": 0.5 * (s.e_p * s.e_p - 1.0 / s.sigma_p2),
        "sigma_u2": 0.5 * (s.e_u * s.e_u - 1.0 / s.sigma_u2),
        "theta": s.e_u * s.phi,
    }


def scalar_learn(s: ScalarFE, rate: float, learn: Iterable[str] = LEARNABLE) -> ScalarFE:
    """One ascent step on F for the chosen parameters; variances re-floored."""
    learn = set(learn)
    unknown = learn - set(LEARNABLE)
    if unknown:
        raise ValueError(f"unknown parameters: {sorted(unknown)}")
    d = learning_directions(s)
    upd = {k: getattr(s, k) + rate * d[k] for k in learn}
    for k in ("sigma_p2", "sigma_u2"):
        if k in upd:
            upd[k] = max(VARIANCE_FLOOR, upd[k])
    return replace(s, **upd)


def settle(s: ScalarFE, inner_steps: int, dt: float) -> ScalarFE:
    for _ in range(inner_steps):
        s = scalar_step(s, dt)
    return s


def run_free_energy_algorithm(
    s: ScalarFE,
    u_stream: Iterable[float],
    inner_steps: int = 500,
    dt: float = 0.01,
    rate: float = 0.01,
    learn: Iterable[str] = LEARNABLE,
) -> tuple[ScalarFE, list[dict]]:
    """Per observation: present u (phi starts at the prior mean, errors at 0),
    integrate the node equations, then take one learning step.

    The trace holds one record per observation with the settled state
    (before learning) and the free energy there.
    """
    if inner_steps < 1:
        raise ValueError("inner_steps must be >= 1")
    learn = tuple(learn)
    trace = []
    seen = False
    for k, u in enumerate(u_stream):
        seen = True
        s = replace(s, u=float(u), phi=s.v_p, e_p=0.0, e_u=0.0)
        s = settle(s, inner_steps, dt)
        if not all(math.isfinite(x) for x in (s.phi, s.e_p, s.e_u)):
            raise NonFiniteError(f"node dynamics diverged at observation {k}")
        trace.append({
            "step": k, "u": s.u, "phi": s.phi, "e_p": s.e_p, "e_u": s.e_u,
            "F": free_energy(s), "v_p": s.v_p, "sigma_p2": s.sigma_p2,
            "sigma_u2": s.sigma_u2, "theta": s.theta,
        })
        s = scalar_learn(s, rate, learn)
        if not all(math.isfinite(getattr(s, k)) for k in LEARNABLE):
            raise NonFiniteError(f"parameters diverged after observation {k}")
    if not seen:
        raise ValueError("observation stream is empty")
    return s, trace


# -- layered network --------------------------------------------------------

def _h(name: str, x: np.ndarray) -> np.ndarray:
    return x if name == "identity" else np.tanh(x)


def _h_prime(name: str, x: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.ones_like(x)
    t = np.tanh(x)
    return 1.0 - t * t


@dataclass
class FENet:
    """``phi[0]`` is the observation; ``theta[l]`` maps layer l+1 to layer l;
    ``sigma[l]`` is the diagonal of layer l's covariance; ``prior`` predicts
    the top layer."""

    phi: list[np.ndarray]
    e: list[np.ndarray]
    theta: list[np.ndarray]
    sigma: list[np.ndarray]
    prior: np.ndarray
    h: str = "identity"

    def __post_init__(self):
        if self.h not in ("identity", "tanh"):
            raise ValueError(f"unknown nonlinearity {self.h!r}")
        self.phi = [as_vector(p, "phi") for p in self.phi]
        self.e = [as_vector(x, "e") for x in self.e]
        self.sigma = [np.diag(s).copy() if np.ndim(s) == 2 else as_vector(s, "sigma") for s in self.sigma]
        self.theta = [as_matrix(t, "theta") for t in self.theta]
        self.prior = as_vector(self.prior, "prior")
        L = len(self.phi)
        if L < 2 or len(self.e) != L or len(self.sigma) != L or len(self.theta) != L - 1:
            raise ShapeError("need phi, e, sigma per layer (>= 2 layers) and one theta per adjacent pair")
        for l in range(L):
            if self.e[l].shape != self.phi[l].shape or self.sigma[l].shape != self.phi[l].shape:
                raise ShapeError(f"layer {l}: phi, e and sigma lengths differ")
            if np.any(self.sigma[l] <= 0):
                raise ValueError(f"layer {l}: covariance diagonal must be positive")
        for l, t in enumerate(self.theta):
            if t.shape != (self.phi[l].shape[0], self.phi[l + 1].shape[0]):
                raise ShapeError(f"theta[{l}] has shape {t.shape}, expected "
                                 f"{(self.phi[l].shape[0], self.phi[l + 1].shape[0])}")
        if self.prior.shape != self.phi[-1].shape:
            raise ShapeError("prior must match the top layer")

    @property
    def n_layers(self) -> int:
        return len(self.phi)

    def predictions(self) -> list[np.ndarray]:
        """Top-down prediction of each layer's activity."""
        preds = [self.theta[l] @ _h(self.h, self.phi[l + 1]) for l in range(self.n_layers - 1)]
        preds.append(self.prior)
        return preds


def init_fenet(
    rng: np.random.Generator,
    dims: Sequence[int],
    observation,
    h: str = "identity",
    sigma_range: tuple[float, float] = (0.5, 2.0),
    weight_scale: float = 0.5,
    prior=None,
) -> FENet:
    dims = list(dims)
    phi = [as_vector(observation).copy()] + [np.zeros(d) for d in dims[1:]]
    if phi[0].shape[0] != dims[0]:
        raise ShapeError("observation length must equal dims[0]")
    theta = [rng.normal(0, weight_scale, size=(dims[l], dims[l + 1])) for l in range(len(dims) - 1)]
    sigma = [rng.uniform(*sigma_range, size=d) for d in dims]
    pri = np.zeros(dims[-1]) if prior is None else as_vector(prior)
    return FENet(phi=phi, e=[np.zeros(d) for d in dims], theta=theta, sigma=sigma, prior=pri, h=h)


def fenet_derivatives(n: FENet) -> tuple[list[np.ndarray], list[np.ndarray]]:
    preds = n.predictions()
    dphi = [np.zeros_like(n.phi[0])]
    for l in range(1, n.n_layers):
        dphi.append(-n.e[l] + _h_prime(n.h, n.phi[l]) * (n.theta[l - 1].T @ n.e[l - 1]))
    de = [n.phi[l] - preds[l] - n.sigma[l] * n.e[l] for l in range(n.n_layers)]
    return dphi, de


def fenet_step(n: FENet, dt: float) -> FENet:
    """Simultaneous Euler step of every phi and e (global update); phi[0] stays pinned."""
    dphi, de = fenet_derivatives(n)
    return replace(
        n,
        phi=[n.phi[0].copy()] + [n.phi[l] + dt * dphi[l] for l in range(1, n.n_layers)],
        e=[n.e[l] + dt * de[l] for l in range(n.n_layers)],
    )


def fenet_residuals(n: FENet) -> float:
    """Largest absolute right-hand side over both equation families."""
    dphi, de = fenet_derivatives(n)
    return float(max(np.max(np.abs(x), initial=0.0) for x in dphi[1:] + de))


def fenet_energy(n: FENet, phi: Sequence[np.ndarray] | None = None) -> float:
    """Negative free energy up to a constant: -1/2 sum_l eps_l^T Sigma_l^-1 eps_l
    - 1/2 sum_l ln det Sigma_l, with eps_l = phi_l - prediction_l."""
    phi = n.phi if phi is None else phi
    total = 0.0
    for l in range(n.n_layers):
        pred = n.prior if l == n.n_layers - 1 else n.theta[l] @ _h(n.h, phi[l + 1])
        eps = phi[l] - pred
        total += -0.5 * float(eps @ (eps / n.sigma[l])) - 0.5 * float(np.sum(np.log(n.sigma[l])))
    return total


def scalar_as_fenet(s: ScalarFE) -> FENet:
    """The scalar model as a two-layer network (observation + one cause)."""
    return FENet(
        phi=[np.array([s.u]), np.array([s.phi])],
        e=[np.array([s.e_u]), np.array([s.e_p])],
        theta=[np.array([[s.theta]])],
        sigma=[np.array([s.sigma_u2]), np.array([s.sigma_p2])],
        prior=np.array([s.v_p]),
    )


# -- generative hierarchy ---------------------------------------------------

@dataclass
class GenHierarchy:
    """``thetas[0]`` maps v_1 to u; ``thetas[i]`` maps v_{i+1} to v_i.
    ``sigmas[i]`` is the covariance of the noise added at that level."""

    thetas: list[np.ndarray]
    sigmas: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.thetas = [as_matrix(t) for t in self.thetas]
        if not self.sigmas:
            self.sigmas = [np.zeros((t.shape[0], t.shape[0])) for t in self.thetas]
        self.sigmas = [as_matrix(s) for s in self.sigmas]
        if len(self.sigmas) != len(self.thetas):
            raise ShapeError("one covariance per level")
        for i in range(len(self.thetas)):
            d = self.thetas[i].shape[0]
            if self.sigmas[i].shape != (d, d):
                raise ShapeError(f"level {i}: covariance must be {d}x{d}")
            if i + 1 < len(self.thetas) and self.thetas[i].shape[1] != self.thetas[i + 1].shape[0]:
                raise ShapeError(f"levels {i} and {i + 1} do not chain")


def generative_sample(g: GenHierarchy, v_top, rng: np.random.Generator) -> np.ndarray:
    """Descend from ``v_top``: v_{i-1} = theta_i v_i + delta_i, delta_i ~ N(0, Sigma_i)."""
    v = as_vector(v_top, "v_top")
    for theta, sigma in zip(reversed(g.thetas), reversed(g.sigmas)):
        if theta.shape[1] != v.shape[0]:
            raise ShapeError(f"level expects {theta.shape[1]} causes, got {v.shape[0]}")
        v = theta @ v
        if np.any(sigma != 0):
            v = v + rng.multivariate_normal(np.zeros(v.shape[0]), sigma, method="eigh")
    return v
