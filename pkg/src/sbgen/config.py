"""Run configuration: YAML input, defaults, validation and resolved snapshots."""

import copy
import json
import os
import re

import yaml

from .errors import InputError

PRESET_DIR = os.path.join(os.path.dirname(__file__), "configs")

DEFAULTS = {
    "seed": 0,
    "target": {"kind": "double_well", "dim": 1, "barrier": 1.0, "tilt": 0.0, "temperature_scale": 1.0},
    "data": {
        "x0": None,                      # chain start; defaults to the origin
        "seed": None,                    # overrides the run seed for the chain and split
        "chain": {"steps": 300000, "step_size": 1e-2, "burn_in": 0, "kind": "mala", "thin": 10},
        "split": {"train": 10000, "val": 2000, "test": 10000},
        "format": "csv",
    },
    "flow": {
        "n_layers": 6,
        "hidden": [32, 32],
        "activation": "tanh",
        "scale_clamp": 5.0,
        "com_sigma": 0.1,                # used only for particle targets
        "center": "auto",                # auto -> com for particle targets, mean otherwise
    },
    "train": {
        "learning_rate": 1e-4, "weight_decay": 4e-4, "adam_betas": [0.90, 0.95], "adam_eps": 1e-8,
        "epochs": 500, "batch_size": 256, "warmup_fraction": 0.05, "lr_floor_ratio": 1.0 / 500.0,
        "ema_decay": 0.999, "eval_every": 1, "augment_rotations": True,
        "val_samples": 2000, "crop_quantile": 0.999,
    },
    "schedule": {"n_steps": 100, "epsilon": 1e-5, "ess_threshold": 0.5,
                 "resample_scheme": "multinomial", "drift_clip": 1e3},
    "filters": {"energy_gamma": None, "likelihood_delta": None, "weight_clip": 0.002,
                "gamma_auto": None},    # gamma_auto: {b, rho, lambda} derives energy_gamma
    "metrics": {"K": 10000, "hist_bins": 60, "hist_range": None, "torus_n": 2000},
    "ablation": {"centroid_norm": False},
}

SECTIONS = tuple(DEFAULTS)


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}.{k}" if path else k
        if k not in base:
            # target blocks carry kind-specific keys; everything else is closed
            if path.split(".")[0] == "target" or path == "target":
                out[k] = v
                continue
            raise InputError(f"unknown config key {where!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, where)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(cfg):
    """Fill defaults, reject unknown keys, normalise a few conveniences."""
    cfg = cfg or {}
    if not isinstance(cfg, dict):
        raise InputError("config must be a mapping")
    target = cfg.get("target")
    base = copy.deepcopy(DEFAULTS)
    if target is not None:
        # a new target kind replaces the default block instead of merging into it
        base["target"] = {"temperature_scale": 1.0}
    out = _merge(base, cfg)
    if "kind" not in out["target"]:
        raise InputError("target.kind is required")
    return out


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads exponent floats without a dot (1e-3), as YAML 1.2 does."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def preset_path(name):
    return os.path.join(PRESET_DIR, f"{name}.yaml")


def list_presets():
    return sorted(f[:-5] for f in os.listdir(PRESET_DIR) if f.endswith(".yaml"))


def load(path_or_name):
    """Read a YAML (or JSON snapshot) config from a path or a preset name."""
    path = path_or_name
    if not os.path.exists(path) and os.path.exists(preset_path(path_or_name)):
        path = preset_path(path_or_name)
    try:
        with open(path) as fh:
            raw = json.load(fh) if path.endswith(".json") else yaml.load(fh, Loader=_Loader)
    except FileNotFoundError:
        raise InputError(f"config file {path_or_name!r} not found") from None
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot parse {path}: {exc}") from None
    return resolve(raw)


def snapshot(cfg, path):
    """Write the resolved config as JSON; loading it reproduces the run."""
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
