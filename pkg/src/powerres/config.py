"""Flat ``key = value`` experiment configuration.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Every key has a typed default (see ``KEYS``), except ``seed`` which must be
given explicitly.  List-valued keys take comma-separated items.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from .core import ContractError
from .data import NORMALIZATION_SCHEMES, TEST_FUNCTIONS, parse_scheme
from .network import ACTIVATIONS, canonical_kind


class ConfigError(ContractError):
    pass


@dataclass(frozen=True)
class Key:
    type: str          # int, float, str, bool, ints, strs, floats
    default: object
    doc: str


_REQUIRED = object()

KEYS = {
    # common
    "seed": Key("int", _REQUIRED, "master seed; every random draw derives from it"),
    "out_dir": Key("str", "runs/out", "output directory for manifest and artifacts"),
    "arch": Key("str", "sqr_skip_resnet", "plain | resnet | skip_resnet | sqr_skip_resnet"),
    "power": Key("int", 2, "exponent p of the power skip term"),
    "n_layers": Key("int", 10, "number of hidden layers n_l"),
    "n_neurons": Key("int", 50, "neurons per hidden layer n_n"),
    "activation": Key("str", "tanh", "hidden activation: tanh | identity"),
    "optimizer": Key("str", "lbfgs", "lbfgs | adam"),
    "lr": Key("float", 1e-3, "Adam learning rate"),
    "adam_iters": Key("int", 10000, "Adam iterations"),
    "max_iter": Key("int", 20000, "L-BFGS iteration cap"),
    "grad_tol": Key("float", 1e-9, "L-BFGS stop when max |gradient| <= grad_tol"),
    "f_change_tol": Key("float", 1e-9, "L-BFGS stop when |f_k - f_k-1| <= tol * max(1, |f_k|)"),
    "history_size": Key("int", 10, "L-BFGS memory"),
    "eval_every": Key("int", 10, "validation error cadence in iterations"),
    "save_checkpoint": Key("bool", True, "write the trained parameters as JSON"),
    # interpolation data
    "dataset": Key("str", "f1", "f1 | f2 | f3 | f4 | csv | point_cloud"),
    "data_path": Key("str", "", "input file for dataset = csv or point_cloud"),
    "point_scale": Key("float", 10.0, "scale applied to point-cloud coordinates"),
    "target_function": Key("str", "f4", "function sampled on point-cloud points"),
    "n_train": Key("int", 500, "number of training points n"),
    "n_val_per_dim": Key("int", 100, "validation lattice size per dimension (builtin functions)"),
    "normalization": Key("str", "input_unit_box+target_zscore", "input/target scaling scheme"),
    # diagnostics
    "record_norms": Key("bool", False, "record per-layer Frobenius norms every iteration"),
    "hist_layers": Key("ints", (), "weight layers (1-based) whose gradients are histogrammed"),
    "hist_bins": Key("int", 50, "gradient histogram bins"),
    "hist_epochs": Key("ints", (), "histogram snapshot iterations; empty = first, middle, last"),
    # Burgers
    "n_obs": Key("int", 500, "observations of u"),
    "n_col": Key("int", 10000, "collocation points n_c"),
    "reference_path": Key("str", "", "x,t,u reference CSV; empty = generate in memory"),
    "generate_reference": Key("bool", True, "allow generating the reference when reference_path is missing"),
    "ref_nx": Key("int", 256, "reference lattice points in x"),
    "ref_nt": Key("int", 100, "reference lattice points in t"),
    "ref_nodes": Key("int", 100, "Gauss-Hermite nodes for the reference"),
    "lambda1_init": Key("float", 2.0, "initial convection coefficient"),
    "lambda2_init": Key("float", 0.2, "initial viscosity"),
    "lambda1_true": Key("float", 1.0, "ground-truth convection coefficient"),
    "lambda2_true": Key("float", 0.01 / math.pi, "ground-truth viscosity (also used by the reference)"),
    # suite grid; empty = the single value from the matching base key
    "suite_task": Key("str", "interpolate", "task run for each grid cell: interpolate | pinn-burgers"),
    "suite_arch": Key("strs", None, "architectures"),
    "suite_n": Key("ints", None, "training sizes (n_train, or n_obs for Burgers)"),
    "suite_n_neurons": Key("ints", None, "widths"),
    "suite_n_layers": Key("ints", None, "depths"),
    "suite_optimizer": Key("strs", None, "optimizers"),
    "suite_seeds": Key("ints", None, "seeds"),
}


def _parse(name: str, key: Key, raw: str):
    raw = raw.strip()
    try:
        if key.type == "int":
            return int(raw)
        if key.type == "float":
            return float(raw)
        if key.type == "str":
            return raw
        if key.type == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if key.type == "ints":
            return tuple(int(s) for s in items)
        if key.type == "floats":
            return tuple(float(s) for s in items)
        return tuple(items)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {key.type}") from None


def parse_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{ln}: expected key = value")
        name, raw = (s.strip() for s in line.split("=", 1))
        if name not in KEYS:
            raise ConfigError(f"{source}:{ln}: unknown key {name!r}")
        out[name] = _parse(name, KEYS[name], raw)
    return out


def load_config(path=None, overrides=()) -> dict:
    """Defaults, then the file, then ``key=value`` overrides; validated."""
    cfg = {k: v.default for k, v in KEYS.items()}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        cfg.update(parse_text(p.read_text(), str(p)))
    for item in overrides:
        cfg.update(parse_text(item, "--set"))
    return validate(cfg)


def validate(cfg: dict) -> dict:
    if cfg.get("seed") is _REQUIRED or cfg.get("seed") is None:
        raise ConfigError("seed is required")
    if cfg["seed"] < 0:
        raise ConfigError("seed must be non-negative")
    try:
        cfg["arch"] = canonical_kind(cfg["arch"])
    except ContractError as e:
        raise ConfigError(str(e)) from None
    for k in ("n_layers", "n_neurons", "n_train", "n_obs", "n_col", "max_iter", "adam_iters",
              "history_size", "eval_every", "ref_nodes"):
        if cfg[k] < 1:
            raise ConfigError(f"{k} must be >= 1")
    if cfg["hist_bins"] < 2:
        raise ConfigError("hist_bins must be >= 2")
    if cfg["ref_nx"] < 2 or cfg["ref_nt"] < 2 or cfg["n_val_per_dim"] < 2:
        raise ConfigError("lattice sizes must be >= 2")
    if cfg["power"] < 1:
        raise ConfigError("power must be >= 1")
    if cfg["activation"] not in ACTIVATIONS:
        raise ConfigError(f"activation must be one of {ACTIVATIONS}")
    if cfg["optimizer"] not in ("lbfgs", "adam"):
        raise ConfigError("optimizer must be lbfgs or adam")
    for k in ("lr", "grad_tol", "f_change_tol", "point_scale", "lambda2_true"):
        if not cfg[k] > 0:
            raise ConfigError(f"{k} must be positive")
    try:
        parse_scheme(cfg["normalization"])
    except ContractError:
        raise ConfigError(f"normalization must combine {NORMALIZATION_SCHEMES} with '+'") from None
    ds = cfg["dataset"]
    if ds not in (*TEST_FUNCTIONS, "csv", "point_cloud"):
        raise ConfigError(f"unknown dataset {ds!r}; expected one of {sorted(TEST_FUNCTIONS)}, csv, point_cloud")
    if ds in ("csv", "point_cloud"):
        if not cfg["data_path"] or not Path(cfg["data_path"]).is_file():
            raise ConfigError(f"data_path {cfg['data_path']!r} does not exist")
    if cfg["target_function"] not in TEST_FUNCTIONS:
        raise ConfigError(f"unknown target_function {cfg['target_function']!r}")
    if cfg["reference_path"] and not Path(cfg["reference_path"]).is_file() and not cfg["generate_reference"]:
        raise ConfigError(f"reference file {cfg['reference_path']!r} not found and generation is disabled")
    if cfg["suite_task"] not in ("interpolate", "pinn-burgers"):
        raise ConfigError("suite_task must be interpolate or pinn-burgers")
    for k in ("suite_arch", "suite_n", "suite_n_neurons", "suite_n_layers", "suite_optimizer", "suite_seeds"):
        if cfg[k] is not None and len(cfg[k]) == 0:
            raise ConfigError(f"{k} is empty; the suite grid would have no runs")
    try:
        cfg["suite_arch"] = cfg["suite_arch"] and tuple(canonical_kind(a) for a in cfg["suite_arch"])
    except ContractError as e:
        raise ConfigError(f"suite_arch: {e}") from None
    for o in cfg["suite_optimizer"] or ():
        if o not in ("lbfgs", "adam"):
            raise ConfigError(f"suite_optimizer: unknown optimizer {o!r}")
    return cfg


def render(cfg: dict) -> str:
    """Config text that reloads to ``cfg``."""
    lines = []
    for k in KEYS:
        v = cfg[k]
        if v is None:
            continue
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def describe() -> str:
    rows = []
    for k, key in KEYS.items():
        d = "(required)" if key.default is _REQUIRED else key.default
        rows.append(f"{k:20s} {key.type:6s} default={d!s:32s} {key.doc}")
    return "\n".join(rows)
