"""Experiment configs: JSON files validated into plain dicts plus builders.

A config is one JSON object. Shared keys:

    experiment   one of the subcommand names (optional; the CLI subcommand wins)
    seed         base RNG seed (int, default 0)
    domain       {"kind": "box"|"ball"|"voxel-mask", ...}
    g, rho, u, u0, D
                 field specs {"kind": ..., parameters}
    kernel       {"profile": "exp-square"|"indicator"|"triangular"}
    quad         {"n": int, "rule": "trapezoid"|"uniform"}
    eps          {"rule": "per-d"|"per-d-plus-2", "C": float} or {"value": float}

Schema problems raise ConfigError (exit code 2 at the CLI); the message names
the offending key.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigError
from .fields import field_from_spec
from .geometry import domain_from_spec
from .kernels import Kernel
from .metric import SegmentQuadrature

SUBCOMMANDS = (
    "sample", "build-graph", "energy-compare", "rates",
    "recover", "recover-sweep", "pde-run", "boundary-gap",
)


def load_config(path):
    """Parse a JSON config file. Missing file is an I/O error, not a schema one."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def require(cfg, key, types=None, where="config"):
    if key not in cfg:
        raise ConfigError(f"{where}: missing required key '{key}'")
    v = cfg[key]
    if types is not None and not isinstance(v, types):
        raise ConfigError(f"{where}: key '{key}' has wrong type {type(v).__name__}")
    return v


def _positive(cfg, key, where="config"):
    v = require(cfg, key, (int, float), where)
    if v <= 0:
        raise ConfigError(f"{where}: key '{key}' must be positive, got {v}")
    return float(v)


def _int_list(cfg, key, where="config"):
    v = require(cfg, key, list, where)
    if not v or not all(isinstance(x, int) and x > 0 for x in v):
        raise ConfigError(f"{where}: key '{key}' must be a nonempty list of positive ints")
    return list(v)


def build_domain(cfg, where="config"):
    spec = require(cfg, "domain", dict, where)
    try:
        return domain_from_spec(spec)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: bad domain spec: {exc}") from None


def build_field(cfg, key, where="config", default=None):
    if key not in cfg:
        if default is not None:
            return default
        raise ConfigError(f"{where}: missing required field spec '{key}'")
    spec = cfg[key]
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: field spec '{key}' must be an object")
    try:
        return field_from_spec(spec)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: bad field spec '{key}': {exc}") from None


def build_kernel(cfg, where="config", default_profile="exp-square"):
    spec = cfg.get("kernel", {"profile": default_profile})
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: 'kernel' must be an object")
    try:
        return Kernel(spec.get("profile", default_profile))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def build_quad(cfg, where="config"):
    spec = cfg.get("quad", {})
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: 'quad' must be an object")
    extra = set(spec) - {"N", "rule"}
    if extra:
        raise ConfigError(f"{where}: unknown quad keys {sorted(extra)}")
    try:
        return SegmentQuadrature(N=int(spec.get("N", 10)),
                                 rule=spec.get("rule", "trapezoid"))
    except ValueError as exc:
        raise ConfigError(f"{where}: bad quad spec: {exc}") from None


def eps_spec(cfg, where="config"):
    """Returns ("value", x) or ("rule", rule, C). Default per-d-plus-2, C=1."""
    spec = cfg.get("eps", {"rule": "per-d-plus-2", "C": 1.0})
    if isinstance(spec, (int, float)):
        spec = {"value": float(spec)}
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: 'eps' must be an object or a number")
    if "value" in spec:
        v = float(spec["value"])
        if v <= 0:
            raise ConfigError(f"{where}: eps value must be positive")
        return ("value", v)
    rule = spec.get("rule", "per-d-plus-2")
    if rule not in ("per-d", "per-d-plus-2"):
        raise ConfigError(f"{where}: unknown eps rule '{rule}'")
    C = float(spec.get("C", 1.0))
    if C <= 0:
        raise ConfigError(f"{where}: eps C must be positive")
    return ("rule", rule, C)


def resolve_eps(cfg, n, d, where="config"):
    from .graph import eps_scaling
    spec = eps_spec(cfg, where)
    if spec[0] == "value":
        return spec[1]
    return eps_scaling(n, d, C=spec[2], rule=spec[1])


def build_train_config(cfg, seed, where="config"):
    from .recovery import TrainConfig
    spec = cfg.get("train", {})
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: 'train' must be an object")
    known = {"lr", "beta1", "beta2", "adam_eps", "max_iters", "loss_threshold",
             "plateau_patience", "plateau_tol", "k_folds", "n_quad"}
    extra = set(spec) - known
    if extra:
        raise ConfigError(f"{where}: unknown train keys {sorted(extra)}")
    try:
        return TrainConfig(seed=seed, **spec)
    except TypeError as exc:
        raise ConfigError(f"{where}: bad train config: {exc}") from None


def validate(cfg, experiment):
    """Check required keys for one experiment kind. Returns cfg unchanged."""
    if experiment not in SUBCOMMANDS:
        raise ConfigError(f"unknown experiment '{experiment}'")
    w = experiment
    if "experiment" in cfg and cfg["experiment"] != experiment:
        raise ConfigError(
            f"config says experiment '{cfg['experiment']}' but subcommand is '{experiment}'")

    if experiment == "sample":
        require(cfg, "domain", dict, w)
        require(cfg, "n", int, w)
    elif experiment == "build-graph":
        require(cfg, "domain", dict, w)
        require(cfg, "n", int, w)
        backend = cfg.get("backend", "euclidean")
        if backend not in ("euclidean", "segment", "grid-oracle"):
            raise ConfigError(f"{w}: unknown backend '{backend}'")
        if backend != "euclidean":
            require(cfg, "g", dict, w)
    elif experiment == "energy-compare":
        require(cfg, "domain", dict, w)
        require(cfg, "g", dict, w)
        require(cfg, "u", dict, w)
        require(cfg, "n", int, w)
    elif experiment == "rates":
        kind = require(cfg, "kind", str, w)
        if kind not in ("nonlocal-vs-local", "discrete-vs-nonlocal", "straight-line"):
            raise ConfigError(f"{w}: unknown rates kind '{kind}'")
        require(cfg, "domain", dict, w)
        require(cfg, "g", dict, w)
        if kind == "nonlocal-vs-local":
            require(cfg, "u", dict, w)
            eps_values = require(cfg, "eps_values", list, w)
            if len(eps_values) < 5:
                raise ConfigError(f"{w}: eps_values needs >= 5 entries")
        elif kind == "discrete-vs-nonlocal":
            require(cfg, "u", dict, w)
            _int_list(cfg, "n_values", w)
            require(cfg, "n_seeds", int, w)
        else:
            require(cfg, "x0", list, w)
            require(cfg, "radii", list, w)
            _positive(cfg, "h", w)
    elif experiment in ("recover", "recover-sweep"):
        require(cfg, "domain", dict, w)
        require(cfg, "g", dict, w)
        if experiment == "recover":
            require(cfg, "n", int, w)
        else:
            _int_list(cfg, "n_values", w)
            require(cfg, "n_seeds", int, w)
        require(cfg, "n_test", int, w)
    elif experiment == "pde-run":
        require(cfg, "domain", dict, w)
        if ("g" in cfg) == ("D" in cfg):
            raise ConfigError(f"{w}: give exactly one of 'g' or 'D'")
        require(cfg, "u0", dict, w)
        _positive(cfg, "dt", w)
        _positive(cfg, "T", w)
    elif experiment == "boundary-gap":
        require(cfg, "domain", dict, w)
        require(cfg, "g", dict, w)
        require(cfg, "u0", dict, w)
    return cfg
