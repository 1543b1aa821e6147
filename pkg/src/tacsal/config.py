"""Run configuration: defaults, named size profiles and YAML overrides."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "profile": "full",
    "seed": 0,
    "res": 64,
    "data": {
        "condepnet_n": 7000,
        "targets_n": 2000,
        "noise_n": 2000,
        "composites_per_epoch": 4000,
        "cone_share": 0.1,
        "blobs": [1, 3],
        "clean_fraction": 0.1,
        "empty_fraction": 0.05,
        "posenet_n": 4000,
    },
    "condepnet": {"epochs": 100, "base": 32, "l1_weight": 100.0, "batch_size": 16,
                  "lr_g": 2e-4, "lr_d": 2e-4},
    "tacsalnet": {"epochs": 100, "base": 32, "l1_weight": 100.0, "batch_size": 16,
                  "lr_g": 2e-4, "lr_d": 2e-4},
    "tacngen": {"epochs": 200, "base": 32, "latent": 8, "kl_weight": 1.0, "batch_size": 16,
                "lr": 1e-3, "recon_sigma": 0.1, "sample_sigma": 1.0},
    "posenet": {"epochs": 100, "base": 32, "batch_size": 16, "lr": 1e-3},
    "eval": {
        "ablation_n": 1000,
        "corner_n": 200,
        "pose_n": 500,
        "follow_seeds": 10,
        "objects": ["square", "flower", "volute", "foil"],
    },
    "follow": {
        "z": 4.5,
        "pid": {"y_gains": [0.5, 0.05, 0.1], "rz_gains": [0.3, 0.02, 0.05], "step": 2.0},
        "image": {"step": 2.0, "lateral_gain": 0.5},
    },
}

PROFILES: dict[str, dict[str, Any]] = {
    "smoke": {
        "data": {"condepnet_n": 200, "targets_n": 200, "noise_n": 200,
                 "composites_per_epoch": 200, "posenet_n": 300},
        "condepnet": {"epochs": 5, "base": 8},
        "tacsalnet": {"epochs": 5, "base": 8},
        "tacngen": {"epochs": 5, "base": 8},
        "posenet": {"epochs": 5, "base": 8},
        "eval": {"ablation_n": 50, "corner_n": 20, "pose_n": 50, "follow_seeds": 1},
    },
    "desk": {
        "condepnet": {"epochs": 8, "base": 16},
        "tacsalnet": {"epochs": 8, "base": 16},
        "tacngen": {"epochs": 200, "base": 16},
        "posenet": {"epochs": 15, "base": 16},
    },
    "full": {},
}


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_keys(over: dict, ref: dict, path: str = "") -> None:
    for k, v in over.items():
        if k not in ref:
            raise ConfigError(f"unknown config key {path}{k}")
        if isinstance(v, dict) and isinstance(ref[k], dict):
            _check_keys(v, ref[k], f"{path}{k}.")


def validate(cfg: dict) -> dict:
    d = cfg["data"]
    for key in ("condepnet_n", "targets_n", "noise_n", "composites_per_epoch", "posenet_n"):
        if int(d[key]) < 1:
            raise ConfigError(f"data.{key} must be >= 1")
    if not 0 <= d["cone_share"] <= 1:
        raise ConfigError("data.cone_share must be in [0, 1]")
    lo, hi = d["blobs"]
    if not 0 <= lo <= hi:
        raise ConfigError("data.blobs must be an ordered pair of counts")
    if d["clean_fraction"] + d["empty_fraction"] > 1:
        raise ConfigError("clean and empty fractions exceed 1")
    for stage in ("condepnet", "tacsalnet", "tacngen", "posenet"):
        if int(cfg[stage]["epochs"]) < 1:
            raise ConfigError(f"{stage}.epochs must be >= 1")
    for stage in ("condepnet", "tacsalnet"):
        if cfg[stage]["l1_weight"] <= 0:
            raise ConfigError(f"{stage}.l1_weight must be positive")
    if cfg["tacngen"]["kl_weight"] <= 0 or cfg["tacngen"]["latent"] < 2:
        raise ConfigError("tacngen needs kl_weight > 0 and latent >= 2")
    if cfg["res"] % 16:
        raise ConfigError("res must be a multiple of 16")
    return cfg


def load_config(path: str | Path | None = None, profile: str | None = None,
                seed: int | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the named profile, then the YAML file, then explicit overrides.

    A profile named inside the file applies before the file's own values; an
    explicit ``profile`` argument wins over it.
    """
    user: dict = {}
    if path is not None:
        try:
            user = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a mapping")
    name = profile or user.get("profile") or DEFAULTS["profile"]
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}")
    _check_keys(user, DEFAULTS)
    cfg = deep_merge(deep_merge(DEFAULTS, PROFILES[name]), user)
    if overrides:
        _check_keys(overrides, DEFAULTS)
        cfg = deep_merge(cfg, overrides)
    cfg["profile"] = name
    if seed is not None:
        cfg["seed"] = int(seed)
    return validate(cfg)


def config_digest(cfg: dict, keys: tuple[str, ...] | None = None) -> str:
    """Stable hash of the whole config or of the given top-level sections."""
    part = cfg if keys is None else {k: cfg[k] for k in keys}
    return hashlib.sha256(json.dumps(part, sort_keys=True).encode()).hexdigest()[:16]
