"""Dataset files, flow checkpoints and JSON output with lossless floats."""

import base64
import json
import math
import os
import struct

import numpy as np

from .errors import InputError
from .flow import CouplingLayer, FlowModel, Standardization
from .gradcore import Mlp

CHECKPOINT_VERSION = 1


# -- datasets ---------------------------------------------------------------


def write_csv(path, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    with open(path, "w") as fh:
        fh.write(f"# dim={X.shape[1]}\n")
        for row in X:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_csv(path):
    with open(path) as fh:
        head = fh.readline().strip()
        if not head.startswith("#") or "dim=" not in head:
            raise InputError(f"{path}: missing '# dim=<d>' header")
        dim = int(head.split("dim=")[1].split()[0])
        rows = [line for line in fh if line.strip()]
    if not rows:
        return np.zeros((0, dim))
    X = np.array([[float(v) for v in line.split(",")] for line in rows])
    if X.shape[1] != dim:
        raise InputError(f"{path}: header says dim={dim}, rows have {X.shape[1]} columns")
    return X


def write_binary(path, X):
    X = np.ascontiguousarray(np.atleast_2d(X), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", X.shape[0], X.shape[1]))
        fh.write(X.tobytes())


def read_binary(path):
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16:
            raise InputError(f"{path}: truncated header")
        n, d = struct.unpack("<QQ", head)
        body = fh.read()
    if len(body) != 8 * n * d:
        raise InputError(f"{path}: expected {n}x{d} doubles, found {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape(n, d).astype(np.float64)


def write_dataset(path, X, fmt=None):
    fmt = fmt or ("binary" if path.endswith(".bin") else "csv")
    (write_binary if fmt == "binary" else write_csv)(path, X)


def read_dataset(path):
    with open(path, "rb") as fh:
        first = fh.read(1)
    return read_csv(path) if first == b"#" else read_binary(path)


# -- JSON -------------------------------------------------------------------


def _encode_array(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d):
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def dump_json(path, obj):
    """JSON with shortest round-trip float repr (17 significant digits at most)."""
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


# -- checkpoints ------------------------------------------------------------


def model_to_dict(model):
    layers = []
    for layer in model.layers:
        layers.append({
            "mask": layer.mask.tolist(),
            "scale_clamp": layer.scale_clamp,
            "activation": layer.scale_net.activation,
            "widths": layer.scale_net.widths,
            "scale_net": [_encode_array(p) for p in layer.scale_net.params],
            "shift_net": [_encode_array(p) for p in layer.shift_net.params],
        })
    return {
        "version": CHECKPOINT_VERSION,
        "dim": model.dim,
        "com_sigma": model.com_sigma,
        "spatial_dim": model.spatial_dim,
        "standardization": model.standardization.to_dict(),
        "layers": layers,
        "ema_params": None if model.ema_params is None else [_encode_array(p) for p in model.ema_params],
    }


def _mlp(widths, activation, blobs):
    net = Mlp(widths, activation, rng=0)
    net.params = [_decode_array(b) for b in blobs]
    return net


def model_from_dict(d):
    if d.get("version") != CHECKPOINT_VERSION:
        raise InputError(f"unsupported checkpoint version {d.get('version')!r}")
    layers = []
    for ld in d["layers"]:
        mask = np.array(ld["mask"], dtype=np.float64)
        layer = CouplingLayer(mask, tuple(ld["widths"][1:-1]), ld["activation"], ld["scale_clamp"], rng=0)
        layer.scale_net = _mlp(ld["widths"], ld["activation"], ld["scale_net"])
        layer.shift_net = _mlp(ld["widths"], ld["activation"], ld["shift_net"])
        layers.append(layer)
    model = FlowModel(d["dim"], layers, Standardization.from_dict(d["standardization"]),
                      d["com_sigma"], d["spatial_dim"])
    if d.get("ema_params") is not None:
        model.ema_params = [_decode_array(b) for b in d["ema_params"]]
    return model


def save_checkpoint(path, model, trainer=None, extra=None):
    """Write model (+ optimizer state when ``trainer`` is given) as JSON."""
    d = {"model": model_to_dict(model), "extra": extra or {}}
    if trainer is not None:
        opt = trainer.opt.state_dict()
        d["trainer"] = {
            "step": trainer.step, "epoch": trainer.epoch, "total_steps": trainer.total_steps,
            "best_metric": trainer.best_metric if math.isfinite(trainer.best_metric) else None,
            "opt_t": opt["t"],
            "opt_m": [_encode_array(a) for a in opt["m"]],
            "opt_v": [_encode_array(a) for a in opt["v"]],
            "rng": trainer.rng.bit_generator.state,
            "best_model": None if trainer.best_model is None else model_to_dict(trainer.best_model),
        }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(_plain(d), fh)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Return ``(model, trainer_state_or_None, extra)``."""
    d = load_json(path)
    return model_from_dict(d["model"]), d.get("trainer"), d.get("extra", {})


def restore_trainer(trainer, state):
    trainer.step = state["step"]
    trainer.epoch = state["epoch"]
    trainer.total_steps = state["total_steps"]
    trainer.best_metric = math.inf if state["best_metric"] is None else state["best_metric"]
    trainer.opt.load_state_dict({"t": state["opt_t"],
                                 "m": [_decode_array(a) for a in state["opt_m"]],
                                 "v": [_decode_array(a) for a in state["opt_v"]]})
    trainer.rng.bit_generator.state = state["rng"]
    if state.get("best_model") is not None:
        trainer.best_model = model_from_dict(state["best_model"])
    return trainer
