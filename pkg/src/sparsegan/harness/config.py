"""Experiment configuration: a small TOML schema with strict validation."""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from ..balance import DENSITY_CONTROLLED, ControllerKind
from ..errors import ConfigError
from ..gan import LossSpec
from ..sparsity import ALLOCATION_MODES, GROW_MODES

REQUIRED = object()

# section -> key -> (field name, type, default); "" is the top level
SCHEMA = {
    "": {
        "controller": ("controller", str, REQUIRED),
        "seed": ("seed", int, 0),
        "iterations": ("iterations", int, 20000),
        "loss": ("loss", str, "hinge"),
        "out": ("out", str, None),
    },
    "dataset": {
        "kind": ("dataset", str, REQUIRED),
        "k": ("ring_k", int, 8),
        "radius": ("ring_radius", float, 2.0),
        "m": ("grid_m", int, 5),
        "spacing": ("grid_spacing", float, 2.0),
        "sigma": ("data_sigma", float, 0.02),
    },
    "arch": {
        "latent_dim": ("latent_dim", int, 2),
        "g_hidden": ("g_hidden", list, [64, 64]),
        "d_hidden": ("d_hidden", list, [64, 64]),
    },
    "sparsity": {
        "d_g": ("d_g", float, REQUIRED),
        "d_d_init": ("d_d_init", float, None),
        "d_max": ("d_max", float, None),
        "d_min": ("d_min", float, None),
        "strategy": ("strategy", str, "balance"),
        "allocation": ("allocation", str, "ER"),
        "grow_mode": ("grow_mode", str, "gradient"),
        "gamma": ("gamma", float, 0.5),
        "dt_g": ("dt_g", int, 500),
        "dt_d": ("dt_d", int, 1000),
        "delta_d": ("delta_d", float, 0.05),
    },
    "balance": {
        "b_lo": ("b_lo", float, 0.45),
        "b_hi": ("b_hi", float, 0.55),
        "window": ("window", int, 1000),
        "br_eval_interval": ("br_eval_interval", int, 1),
    },
    "optim": {
        "lr": ("lr", float, 1e-3),
        "lr_g": ("lr_g", float, None),
        "lr_d": ("lr_d", float, None),
        "beta1": ("beta1", float, 0.0),
        "beta2": ("beta2", float, 0.9),
        "eps": ("adam_eps", float, 1e-8),
        "n_dis": ("n_dis", int, 5),
        "batch_g": ("batch_g", int, 128),
        "batch_d": ("batch_d", int, 64),
        "ema_beta": ("ema_beta", float, 0.999),
    },
    "eval": {
        "interval": ("eval_interval", int, 500),
        "samples": ("eval_samples", int, 4096),
        "wall_time": ("log_wall_time", bool, False),
        "br_trace": ("br_trace", bool, False),
    },
}


@dataclass
class ExperimentConfig:
    controller: ControllerKind
    dataset: str
    d_g: float
    seed: int = 0
    iterations: int = 20000
    loss: str = "hinge"
    out: str = None
    ring_k: int = 8
    ring_radius: float = 2.0
    grid_m: int = 5
    grid_spacing: float = 2.0
    data_sigma: float = 0.02
    latent_dim: int = 2
    g_hidden: list = field(default_factory=lambda: [64, 64])
    d_hidden: list = field(default_factory=lambda: [64, 64])
    d_d_init: float = None
    d_max: float = None
    d_min: float = None
    strategy: str = "balance"
    allocation: str = "ER"
    grow_mode: str = "gradient"
    gamma: float = 0.5
    dt_g: int = 500
    dt_d: int = 1000
    delta_d: float = 0.05
    b_lo: float = 0.45
    b_hi: float = 0.55
    window: int = 1000
    br_eval_interval: int = 1
    lr: float = 1e-3
    lr_g: float = None
    lr_d: float = None
    beta1: float = 0.0
    beta2: float = 0.9
    adam_eps: float = 1e-8
    n_dis: int = 5
    batch_g: int = 128
    batch_d: int = 64
    ema_beta: float = 0.999
    eval_interval: int = 500
    eval_samples: int = 4096
    log_wall_time: bool = False
    br_trace: bool = False

    def __post_init__(self):
        self.controller = ControllerKind.parse(self.controller)
        fill_defaults(self)
        validate(self)

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with overrides; derived defaults are recomputed unless given."""
        base = dict(self._explicit)
        base.update(changes)
        return ExperimentConfig(**base)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["controller"] = self.controller.value
        return d


def fill_defaults(cfg: ExperimentConfig):
    cfg._explicit = {
        f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)
    }
    cfg._explicit["controller"] = cfg.controller.value
    if cfg.d_max is None and cfg.controller is not ControllerKind.ADAPT_STRICT:
        cfg.d_max = 1.0
    if cfg.lr_g is None:
        cfg.lr_g = cfg.lr
    if cfg.lr_d is None:
        cfg.lr_d = cfg.lr
    if cfg.d_min is None:
        cfg.d_min = cfg.delta_d
    if cfg.d_d_init is None:
        if cfg.controller is ControllerKind.POSTHOC:
            cfg.d_d_init = 1.0
        elif cfg.controller in DENSITY_CONTROLLED or cfg.strategy == "balance":
            cfg.d_d_init = cfg.d_g
        else:
            cfg.d_d_init = cfg.d_max


def validate(cfg: ExperimentConfig):
    def frac(name):
        v = getattr(cfg, name)
        if v is None or not 0.0 < v <= 1.0:
            raise ConfigError(f"{name} must lie in (0, 1], got {v}")

    if cfg.controller is ControllerKind.ADAPT_STRICT and cfg.d_max is None:
        raise ConfigError("controller ADAPT_STRICT requires sparsity.d_max")
    for name in ("d_g", "d_d_init", "d_max", "d_min", "gamma", "delta_d", "ema_beta"):
        frac(name)
    if cfg.dataset not in ("ring", "grid"):
        raise ConfigError(f"dataset.kind must be 'ring' or 'grid', got {cfg.dataset!r}")
    if cfg.strategy not in ("balance", "strong"):
        raise ConfigError(f"strategy must be 'balance' or 'strong', got {cfg.strategy!r}")
    if cfg.allocation not in ALLOCATION_MODES:
        raise ConfigError(f"allocation must be one of {ALLOCATION_MODES}, got {cfg.allocation!r}")
    if cfg.grow_mode not in GROW_MODES:
        raise ConfigError(f"grow_mode must be one of {GROW_MODES}, got {cfg.grow_mode!r}")
    LossSpec.parse(cfg.loss)
    for name in ("iterations", "dt_g", "dt_d", "window", "br_eval_interval", "n_dis", "batch_g",
                 "batch_d", "eval_interval", "eval_samples", "latent_dim", "ring_k", "grid_m"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1, got {getattr(cfg, name)}")
    if cfg.eval_samples < 2:
        raise ConfigError("eval.samples must be >= 2")
    if cfg.iterations < cfg.dt_g:
        raise ConfigError(f"iterations ({cfg.iterations}) must be >= dt_g ({cfg.dt_g})")
    if not cfg.b_lo < cfg.b_hi:
        raise ConfigError(f"need b_lo < b_hi, got [{cfg.b_lo}, {cfg.b_hi}]")
    if min(cfg.lr, cfg.lr_g, cfg.lr_d) < 0 or not 0 <= cfg.beta1 < 1 or not 0 <= cfg.beta2 < 1:
        raise ConfigError("optimizer needs lr >= 0 and betas in [0, 1)")
    for name in ("g_hidden", "d_hidden"):
        widths = getattr(cfg, name)
        if not all(isinstance(w, int) and w >= 1 for w in widths):
            raise ConfigError(f"{name} must be a list of positive integers, got {widths}")
    if cfg.controller in DENSITY_CONTROLLED:
        if not cfg.d_min <= cfg.d_d_init <= cfg.d_max:
            raise ConfigError(f"d_d_init={cfg.d_d_init} outside [d_min={cfg.d_min}, d_max={cfg.d_max}]")


def _line_of(text: str, section: str, key: str):
    current = ""
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"^{re.escape(key)}\s*=", s):
            return lineno
    return None


def _coerce(value, typ, where, line):
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if typ is bool and not isinstance(value, bool):
        raise ConfigError(f"{where} must be a boolean, got {value!r}", line)
    if typ is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{where} must be an integer, got {value!r}", line)
    if not isinstance(value, typ):
        raise ConfigError(f"{where} must be {typ.__name__}, got {value!r}", line)
    return value


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a configuration document."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    kwargs = {}
    for section, body in doc.items():
        if isinstance(body, dict):
            if section not in SCHEMA or section == "":
                line = next((i for i, ln in enumerate(text.splitlines(), 1)
                             if ln.strip().startswith(f"[{section}]")), None)
                raise ConfigError(f"unknown section [{section}]", line)
            items, sec = body.items(), section
        else:
            items, sec = [(section, body)], ""
        for key, value in items:
            where = f"{sec}.{key}" if sec else key
            line = _line_of(text, sec, key)
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {where!r}", line)
            name, typ, _ = SCHEMA[sec][key]
            kwargs[name] = _coerce(value, typ, where, line)
    for sec, keys in SCHEMA.items():
        for key, (name, _, default) in keys.items():
            if default is REQUIRED and name not in kwargs:
                where = f"{sec}.{key}" if sec else key
                raise ConfigError(f"missing required field {where!r}")
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError as exc:
        if exc.line is None:
            for sec, keys in SCHEMA.items():
                for key, (name, _, _) in keys.items():
                    if re.search(rf"\b{re.escape(name)}\b", str(exc)) and name in kwargs:
                        raise ConfigError(str(exc), _line_of(text, sec, key)) from None
        raise


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
