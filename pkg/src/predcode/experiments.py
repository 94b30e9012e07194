"""Runnable experiments behind ``predcode run``.

Each experiment takes a parsed config and an output directory, writes
its CSV (and where it makes sense PGM / weight) artifacts there, and
returns ``(metrics, artifacts)``. All randomness is drawn from generators
keyed on ``(seed, component)``, so output depends on the seed and config
alone.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dim, free_energy as fe, pcn, rao_ballard as rb
from .config import ConfigError, ExperimentConfig
from .core import check_finite, component_rng, save_weights
from .io import export_rows_as_pgm, write_csv


@dataclass
class RunReport:
    experiment: str
    seed: int
    wall_time: float
    metrics: dict
    artifacts: list[str] = field(default_factory=list)


def _rel(paths, root: Path) -> list[str]:
    return [str(Path(p).relative_to(root)) for p in paths]


def run_rb_endstopping(cfg: ExperimentConfig, out: Path):
    hp, ds = cfg.hyperparams, cfg.dataset
    geo = rb.PatchGeometry()
    data_rng = component_rng(cfg.seed, "data")
    if ds["generator"] == "bars":
        X = rb.bar_images(data_rng, ds["n_images"], geo, hp["thickness"], ds["noise"], ds["p_horizontal"])
    elif ds["generator"] == "raw":
        if not ds["path"]:
            raise ConfigError("path", "generator=raw needs a path")
        imgs = rb.load_raw_grayscale(ds["path"], ds["height"], ds["width"])
        X = rb.sample_crops(data_rng, imgs, geo.image_shape, ds["n_images"])
    else:
        raise ConfigError("generator", f"rb_endstopping supports bars or raw, got {ds['generator']!r}")
    h = rb.build_hierarchy(component_rng(cfg.seed, "init"), geo, (hp["repr_dim1"], hp["repr_dim2"]),
                           hp["k1"], hp["k2"], hp["init_scale"])
    h, curve = rb.rb_train(h, X, hp["epochs"], hp["steps"])
    short, long_ = rb.bar_stimuli(geo, hp["thickness"])
    rows = []
    conditions = [("intact", False)] + ([("ablated", True)] if hp["ablate_feedback"] else [])
    metrics = {}
    for label, ablate in conditions:
        es, el = rb.endstopping_experiment(h, short, long_, hp["steps"], ablate)
        rows += [(label, "short", es), (label, "long", el)]
        metrics[f"{label}_short"] = es
        metrics[f"{label}_long"] = el
    arts = [
        write_csv(out / "loss_curve.csv", ("epoch", "layer", "mean_J"), curve),
        write_csv(out / "endstopping.csv", ("condition", "stimulus", "center_error_norm"), rows),
    ]
    save_weights(out / "W0.pcw", h.layers[0].W)
    save_weights(out / "W1.pcw", h.layers[1].W)
    arts += [out / "W0.pcw", out / "W1.pcw"]
    arts += export_rows_as_pgm(h.layers[0].W, (geo.patch_h, geo.patch_w), out / "pgm", "W0")
    metrics["endstopping"] = bool(metrics["intact_long"] < metrics["intact_short"])
    return metrics, arts


def run_dim_bars(cfg: ExperimentConfig, out: Path):
    hp, ds = cfg.hyperparams, cfg.dataset
    if ds["generator"] != "bars":
        raise ConfigError("generator", f"dim_bars supports bars, got {ds['generator']!r}")
    side = ds["side"]
    X = dim.bars_dataset(component_rng(cfg.seed, "data"), side, ds["p_bar"], ds["n_images"])
    m = dim.init_model(component_rng(cfg.seed, "init"), hp["n_units"], side * side,
                       eps1=hp["eps1"], eps2=hp["eps2"], beta=hp["beta"])
    m, curve = dim.dim_train(m, X, hp["epochs"], hp["r_steps"], component_rng(cfg.seed, "order"),
                             normalize_rows=bool(hp["normalize_rows"]))
    found = dim.bars_recovered(m.W, side, hp["threshold"])
    arts = [write_csv(out / "kl_curve.csv", ("epoch", "mean_kl"), enumerate(curve))]
    arts.append(write_csv(out / "recovery.csv", ("bars_total", "bars_recovered", "threshold"),
                          [(2 * side, found, hp["threshold"])]))
    save_weights(out / "W.pcw", m.W)
    arts.append(out / "W.pcw")
    arts += export_rows_as_pgm(m.W, (side, side), out / "pgm", "W")
    return {"bars_recovered": found, "final_kl": curve[-1] if curve else None}, arts


def run_fe_scalar(cfg: ExperimentConfig, out: Path):
    hp, ds = cfg.hyperparams, cfg.dataset
    if ds["generator"] != "linear_gaussian":
        raise ConfigError("generator", f"fe_scalar supports linear_gaussian, got {ds['generator']!r}")
    if ds["v_var"] <= 0:
        raise ConfigError("v_var", "must be positive")
    rng = component_rng(cfg.seed, "data")
    v = rng.normal(ds["v_mean"], np.sqrt(ds["v_var"]), size=hp["n_obs"])
    u = ds["theta_true"] * v
    learn = [k for k in fe.LEARNABLE if hp[f"learn_{k}"]]
    s0 = fe.ScalarFE(phi=hp["v_p0"], e_p=0.0, e_u=0.0, v_p=hp["v_p0"], sigma_p2=hp["sigma_p2_0"],
                     sigma_u2=hp["sigma_u2_0"], theta=hp["theta0"], u=0.0)
    s, trace = fe.run_free_energy_algorithm(s0, u, hp["inner_steps"], hp["dt"], hp["rate"], learn)
    rows = []
    for t in trace:
        rows.append((t["step"], 0, abs(t["u"]), abs(t["e_u"]), t["F"]))
        rows.append((t["step"], 1, abs(t["phi"]), abs(t["e_p"]), t["F"]))
    keys = ("step", "u", "phi", "e_p", "e_u", "F", "v_p", "sigma_p2", "sigma_u2", "theta")
    arts = [
        write_csv(out / "trace.csv", ("step", "layer", "phi_norm", "e_norm", "F"), rows),
        write_csv(out / "params.csv", keys, ([t[k] for k in keys] for t in trace)),
    ]
    return {"theta": s.theta, "v_p": s.v_p, "sigma_p2": s.sigma_p2, "sigma_u2": s.sigma_u2}, arts


def run_fe_multilayer(cfg: ExperimentConfig, out: Path):
    hp, ds = cfg.hyperparams, cfg.dataset
    if ds["generator"] != "hierarchy":
        raise ConfigError("generator", f"fe_multilayer supports hierarchy, got {ds['generator']!r}")
    if hp["depth"] < 2:
        raise ConfigError("depth", "need at least 2 layers")
    if hp["record_every"] < 1:
        raise ConfigError("record_every", "must be >= 1")
    w, depth = hp["width"], hp["depth"]
    nl = "tanh" if hp["tanh"] else "identity"
    gen_rng = component_rng(cfg.seed, "data")
    thetas = [gen_rng.normal(0, hp["weight_scale"], size=(w, w)) for _ in range(depth - 1)]
    sig = ds["sigma"] ** 2 * np.eye(w)
    g = fe.GenHierarchy(thetas, [sig] * (depth - 1))
    prior = np.full(w, hp["prior"])
    u = fe.generative_sample(g, prior, gen_rng)
    n = fe.init_fenet(component_rng(cfg.seed, "init"), [w] * depth, u, nl,
                      weight_scale=hp["weight_scale"], prior=prior)
    n = replace(n, theta=[t.copy() for t in thetas])  # infer causes under the true model
    rows = []

    def record(step, n):
        for l in range(n.n_layers):
            rows.append((step, l, float(np.linalg.norm(n.phi[l])), float(np.linalg.norm(n.e[l])), ""))

    record(0, n)
    for k in range(1, hp["steps"] + 1):
        n = fe.fenet_step(n, hp["dt"])
        if k % hp["record_every"] == 0 or k == hp["steps"]:
            record(k, n)
    check_finite(np.concatenate(n.phi[1:]), "FENet state")
    arts = [write_csv(out / "trace.csv", ("step", "layer", "phi_norm", "e_norm", "F"), rows)]
    return {"residual": fe.fenet_residuals(n), "energy": fe.fenet_energy(n)}, arts


def _pcn_data(cfg: ExperimentConfig):
    ds = cfg.dataset
    rng = component_rng(cfg.seed, "data")
    gen = ds["generator"]
    if gen == "moons":
        return pcn.two_moons(rng, ds["n_train"], ds["noise"]) + pcn.two_moons(rng, ds["n_test"], ds["noise"])
    if gen == "gaussians":
        return (pcn.two_gaussians(rng, ds["n_train"], 2, ds["separation"])
                + pcn.two_gaussians(rng, ds["n_test"], 2, ds["separation"]))
    if gen == "digits":
        if not ds["path"]:
            raise ConfigError("path", "generator=digits needs a path")
        X, y = pcn.load_digit_raster(ds["path"])
        X = X / max(X.max(), 1.0)
        idx = rng.permutation(len(y))
        n_test = int(round(ds["test_fraction"] * len(y)))
        te, tr = idx[:n_test], idx[n_test:]
        return X[tr], y[tr], X[te], y[te]
    raise ConfigError("generator", f"pcn_classify supports moons, gaussians or digits, got {gen!r}")


def run_pcn_classify(cfg: ExperimentConfig, out: Path):
    hp = cfg.hyperparams
    Xtr, ytr, Xte, yte = _pcn_data(cfg)
    if hp["T"] > hp["T_max"]:
        raise ConfigError("T", f"exceeds T_max={hp['T_max']}")
    n_classes = int(max(ytr.max(), yte.max())) + 1
    dims = [Xtr.shape[1]] + [hp["hidden"]] * hp["n_hidden"]
    init = pcn.init_pcn(component_rng(cfg.seed, "init"), dims, n_classes, hp["T"], hp["k1"],
                        hp["beta"], bool(hp["skip"]), T_max=hp["T_max"])
    log_rows, test_rows, arts, metrics = [], [], [], {}
    for mode in pcn.MODES:
        # identical init and batch order for every mode
        net, log = pcn.pcn_fit(init, Xtr, ytr, hp["epochs"], component_rng(cfg.seed, "order"),
                               mode, hp["lr"], hp["batch"])
        log_rows += log.rows
        tr = pcn.forward_trace(net, Xte, mode)
        acc = float(np.mean(np.argmax(tr.logits, axis=1) == yte))
        T = 0 if mode == "plain" else net.T
        test_rows.append((mode, T, acc, tr.sse_before, tr.sse_after))
        metrics[f"{mode}_accuracy"] = acc
        arts += [out / "weights" / mode / f for f in pcn.save_net(net, out / "weights" / mode)]
    arts.append(write_csv(out / "train_log.csv",
                          ("step", "mode", "T", "cross_entropy", "sum_sq_pred_error", "accuracy"), log_rows))
    arts.append(write_csv(out / "test_metrics.csv",
                          ("mode", "T", "test_accuracy", "sse_before", "sse_after"), test_rows))
    return metrics, arts


EXPERIMENTS = {
    "rb_endstopping": run_rb_endstopping,
    "dim_bars": run_dim_bars,
    "fe_scalar": run_fe_scalar,
    "fe_multilayer": run_fe_multilayer,
    "pcn_classify": run_pcn_classify,
}


def run_experiment(cfg: ExperimentConfig, out_dir: Path | None = None) -> RunReport:
    """Run one experiment into ``out_dir`` (default: the config's) and write run_manifest.json."""
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    metrics, arts = EXPERIMENTS[cfg.experiment](cfg, out)
    wall = time.perf_counter() - t0
    arts = _rel(arts, out)
    manifest = {**cfg.as_dict(), "out_dir": str(out), "wall_time_s": wall, "metrics": metrics,
                "artifacts": arts}
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    arts.append("run_manifest.json")
    missing = [a for a in arts if not (out / a).exists()]
    if missing:
        raise RuntimeError(f"artifacts missing after run: {missing}")
    return RunReport(cfg.experiment, cfg.seed, wall, metrics, arts)
