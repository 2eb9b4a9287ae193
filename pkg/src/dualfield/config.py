"""Run configuration: defaults, TOML config files, and flag overrides.

Precedence is command line > config file > built-in defaults. The defaults
carry the method's reference constants: blend caps 0.1, growth rate
0.005, start temperature 1, one image update and ten training iterations per
round, guidance weights 1.5 / 7.5, and a 15000-iteration editing budget.
`--paper-scale` switches the reconstruction budget and batch size to the
full-scale settings; everything else stays identical.
"""

from __future__ import annotations

import copy
from pathlib import Path

import numpy as np
import tomli

from .field import BlendState
from .idu import IDUConfig
from .trainer import TrainConfig

SECTION_ORDER = ("field", "trainer", "idu", "renderer", "backend")

DEFAULTS = {
    "field": {
        "resolution": 64,
        "w_max_sigma": 0.1,
        "w_max_c": 0.1,
        "rate": 0.005,
        "density_init": -3.0,
    },
    "trainer": {
        "static_iterations": 2000,
        "batch_size": 1024,
        "n_samples": 64,
        "lr": 0.01,
        "lr_edit": 0.05,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "strategy": "stratified",
        "seed": 0,
    },
    "idu": {
        "d": 1,
        "n": 10,
        "total_iterations": 15000,
        "sa_enabled": True,
        "cci_enabled": True,
        "t0": 1.0,
        "s_image": 1.5,
        "s_text": 7.5,
        "steps": 20,
        "sticky_tau": 0.05,
        "render_samples": 64,
        "checkpoint_every": 100,
    },
    "renderer": {
        "n_samples": 128,
        "background": [0.0, 0.0, 0.0],
    },
    "backend": {
        "editor": "synthetic-oracle",
        "embedder": "toy",
        "endpoint": "",
    },
}

PAPER_SCALE_OVERRIDES = {
    "trainer": {"static_iterations": 30000, "batch_size": 4096},
}


class ConfigError(ValueError):
    """Bad config file or unknown option."""


def load_config(path: str | Path | None = None, overrides: dict | None = None,
                paper_scale: bool = False) -> dict:
    """Merge defaults <- optional TOML file <- explicit overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if paper_scale:
        _merge(cfg, PAPER_SCALE_OVERRIDES)
    if path is not None:
        try:
            with open(path, "rb") as f:
                data = tomli.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}")
        _merge(cfg, data)
    if overrides:
        _merge(cfg, overrides)
    return cfg


def _merge(base: dict, extra: dict) -> None:
    for section, values in extra.items():
        if section not in base:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"section [{section}] must be a table")
        for key, value in values.items():
            if key not in base[section]:
                raise ConfigError(f"unknown option {key!r} in [{section}]")
            base[section][key] = value


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize config value {value!r}")


def dump_config(cfg: dict) -> str:
    """Byte-stable TOML rendering: fixed section and key order."""
    lines = []
    for section in SECTION_ORDER:
        lines.append(f"[{section}]")
        for key in DEFAULTS[section]:
            lines.append(f"{key} = {_format_value(cfg[section][key])}")
        lines.append("")
    return "\n".join(lines)


def make_blend_state(cfg: dict) -> BlendState:
    f = cfg["field"]
    return BlendState(w_max_sigma=f["w_max_sigma"], w_max_c=f["w_max_c"],
                      rate=f["rate"], t0=cfg["idu"]["t0"])


def make_train_config(cfg: dict, iterations: int | None = None,
                      seed: int | None = None) -> TrainConfig:
    t = cfg["trainer"]
    f = cfg["field"]
    res = int(f["resolution"])
    return TrainConfig(
        iterations=int(iterations if iterations is not None else t["static_iterations"]),
        batch_size=int(t["batch_size"]), n_samples=int(t["n_samples"]),
        lr=float(t["lr"]), beta1=float(t["beta1"]), beta2=float(t["beta2"]),
        eps=float(t["eps"]), grid_resolution=(res, res, res),
        density_init=float(f["density_init"]),
        seed=int(seed if seed is not None else t["seed"]),
        strategy=str(t["strategy"]),
        background=np.asarray(cfg["renderer"]["background"], dtype=np.float64),
        blend=make_blend_state(cfg))


def make_idu_config(cfg: dict, prompt: str, iterations: int | None = None,
                    seed: int | None = None) -> IDUConfig:
    i = cfg["idu"]
    b = cfg["backend"]
    train = make_edit_train_config(cfg, seed=seed)
    return IDUConfig(
        d=int(i["d"]), n=int(i["n"]),
        total_iterations=int(iterations if iterations is not None else i["total_iterations"]),
        sa_enabled=bool(i["sa_enabled"]), cci_enabled=bool(i["cci_enabled"]),
        editor=str(b["editor"]), embedder=str(b["embedder"]),
        endpoint=str(b["endpoint"]) or None,
        sticky_tau=float(i["sticky_tau"]), prompt=prompt,
        s_image=float(i["s_image"]), s_text=float(i["s_text"]), steps=int(i["steps"]),
        t0=float(i["t0"]), render_samples=int(i["render_samples"]),
        checkpoint_every=int(i["checkpoint_every"]),
        seed=int(seed if seed is not None else cfg["trainer"]["seed"]),
        train=train)


def make_edit_train_config(cfg: dict, seed: int | None = None) -> TrainConfig:
    train = make_train_config(cfg, seed=seed)
    train.lr = float(cfg["trainer"]["lr_edit"])
    return train
