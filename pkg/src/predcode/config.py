"""Experiment configuration: an INI file with three sections.

    [experiment]
    name = dim_bars
    seed = 3
    out_dir = runs/dim

    [hyperparams]
    beta = 0.05
    epochs = 200

    [dataset]
    generator = bars
    side = 8

Every experiment declares its hyperparameter and dataset keys with
defaults; a default of ``None`` marks a required key. Unknown keys are
rejected by name.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

REQUIRED = None

# experiment -> (hyperparams, dataset) key/default tables
SCHEMAS: dict[str, tuple[dict, dict]] = {
    "rb_endstopping": (
        {"k1": 0.05, "k2": 1e-3, "epochs": 5, "steps": 30, "repr_dim1": 32, "repr_dim2": 32,
         "init_scale": 0.1, "thickness": 2, "ablate_feedback": 0},
        {"generator": "bars", "n_images": 2000, "noise": 0.05, "p_horizontal": 0.5,
         "path": "", "height": 0, "width": 0},
    ),
    "dim_bars": (
        {"beta": 0.05, "eps1": 1e-2, "eps2": 1e-2, "epochs": REQUIRED, "r_steps": 25,
         "n_units": 16, "normalize_rows": 0, "threshold": 0.9},
        {"generator": "bars", "side": 8, "p_bar": 0.125, "n_images": 1000},
    ),
    "fe_scalar": (
        {"dt": 0.01, "inner_steps": 500, "rate": 0.01, "n_obs": REQUIRED,
         "theta0": 1.0, "v_p0": 5.0, "sigma_p2_0": 1.0, "sigma_u2_0": 1.0,
         "learn_v_p": 0, "learn_sigma_p2": 0, "learn_sigma_u2": 0, "learn_theta": 1},
        {"generator": "linear_gaussian", "theta_true": 2.0, "v_mean": 5.0, "v_var": 1.0},
    ),
    "fe_multilayer": (
        {"dt": 0.01, "steps": REQUIRED, "depth": 3, "width": 4, "tanh": 0, "prior": 0.0,
         "record_every": 10, "weight_scale": 0.5},
        {"generator": "hierarchy", "sigma": 0.1},
    ),
    "pcn_classify": (
        {"T": 3, "k1": 0.1, "beta": 0.5, "lr": 0.01, "batch": 32, "epochs": REQUIRED,
         "hidden": 16, "n_hidden": 2, "skip": 0, "T_max": 6},
        {"generator": "moons", "n_train": 400, "n_test": 1000, "noise": 0.25,
         "separation": 2.0, "path": "", "test_fraction": 0.25},
    ),
}

# hyperparameters that must be whole numbers
INTEGER_KEYS = {"epochs", "steps", "repr_dim1", "repr_dim2", "thickness", "ablate_feedback",
                "r_steps", "n_units", "normalize_rows", "inner_steps", "n_obs", "learn_v_p",
                "learn_sigma_p2", "learn_sigma_u2", "learn_theta", "depth", "width", "tanh",
                "record_every", "T", "batch", "hidden", "n_hidden", "skip", "T_max",
                "n_images", "side", "height", "width", "n_train", "n_test"}
STRING_KEYS = {"generator", "path"}


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    out_dir: Path
    hyperparams: dict = field(default_factory=dict)
    dataset: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"experiment": self.experiment, "seed": self.seed, "out_dir": str(self.out_dir),
                "hyperparams": dict(self.hyperparams), "dataset": dict(self.dataset)}


def _number(key: str, raw: str):
    try:
        val = float(raw)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {raw!r}") from None
    if not math.isfinite(val):
        raise ConfigError(key, "must be finite")
    if key in INTEGER_KEYS:
        if val != int(val):
            raise ConfigError(key, f"expected an integer, got {raw!r}")
        return int(val)
    return val


def _fill(section: str, given: dict[str, str], schema: dict) -> dict:
    for key in given:
        if key not in schema:
            raise ConfigError(key, f"unknown key in [{section}]; allowed: {', '.join(sorted(schema))}")
    out = {}
    for key, default in schema.items():
        if key not in given:
            if default is REQUIRED:
                raise ConfigError(key, f"required key missing from [{section}]")
            out[key] = default
        elif key in STRING_KEYS:
            out[key] = given[key]
        else:
            out[key] = _number(key, given[key])
    return out


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__",
                                   inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep key case (T vs t)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).replace("\n", " ")) from None
    for sec in cp.sections():
        if sec not in ("experiment", "hyperparams", "dataset"):
            raise ConfigError(sec, "unknown section")
    if not cp.has_section("experiment"):
        raise ConfigError("experiment", "missing [experiment] section")
    exp = dict(cp["experiment"])
    for key in exp:
        if key not in ("name", "seed", "out_dir"):
            raise ConfigError(key, "unknown key in [experiment]")
    name = exp.get("name")
    if name is None:
        raise ConfigError("name", "required key missing from [experiment]")
    if name not in SCHEMAS:
        raise ConfigError("name", f"unknown experiment {name!r}; known: {', '.join(SCHEMAS)}")
    try:
        seed = int(exp.get("seed", "0"), 0)
    except ValueError:
        raise ConfigError("seed", f"expected an integer, got {exp['seed']!r}") from None
    if not 0 <= seed < 2**64:
        raise ConfigError("seed", "must fit in 64 unsigned bits")
    hp_schema, ds_schema = SCHEMAS[name]
    hp = _fill("hyperparams", dict(cp["hyperparams"]) if cp.has_section("hyperparams") else {}, hp_schema)
    ds = _fill("dataset", dict(cp["dataset"]) if cp.has_section("dataset") else {}, ds_schema)
    return ExperimentConfig(name, seed, Path(exp.get("out_dir", f"runs/{name}")), hp, ds)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


def render_config(cfg: ExperimentConfig) -> str:
    """Inverse of :func:`parse_config` (all keys written out)."""
    lines = ["[experiment]", f"name = {cfg.experiment}", f"seed = {cfg.seed}", f"out_dir = {cfg.out_dir}", ""]
    for sec, d in (("hyperparams", cfg.hyperparams), ("dataset", cfg.dataset)):
        lines.append(f"[{sec}]")
        lines += [f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}" for k, v in d.items()]
        lines.append("")
    return "\n".join(lines)
