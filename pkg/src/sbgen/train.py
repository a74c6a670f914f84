"""Maximum-likelihood training of the flow.

AdamW with decoupled weight decay, linear warmup into a cosine decay whose
start and end sit 500x below the peak rate, an EMA shadow of the weights, and
checkpoint-best selection on a validation energy-W1 metric.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .errors import InputError, NumericalError
from .flow import augment_rotation, lift_com
from .metrics import energy_w1

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 4e-4
    adam_betas: tuple = (0.90, 0.95)
    adam_eps: float = 1e-8
    epochs: int = 500
    batch_size: int = 256
    warmup_fraction: float = 0.05
    lr_floor_ratio: float = 1.0 / 500.0
    ema_decay: float = 0.999
    seed: int = 0
    eval_every: int = 1
    augment_rotations: bool = True

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        if not self.learning_rate > 0:
            raise InputError("learning_rate must be positive")
        if not 0 <= self.ema_decay < 1:
            raise InputError("ema_decay must lie in [0, 1)")
        if not 0 < self.warmup_fraction < 1:
            raise InputError("warmup_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise InputError("batch_size must be positive and epochs non-negative")


def lr_schedule(step, total_steps, peak, warmup_fraction=0.05, floor_ratio=1.0 / 500.0):
    """Learning rate at optimizer step ``step`` (0-based) of ``total_steps``."""
    lo = peak * floor_ratio
    warm = max(1, int(round(warmup_fraction * total_steps)))
    if step <= warm:
        return lo + (peak - lo) * step / warm
    span = max(1, total_steps - 1 - warm)
    progress = min(1.0, (step - warm) / span)
    return lo + (peak - lo) * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    def __init__(self, params, betas=(0.9, 0.95), eps=1e-8, weight_decay=0.0):
        self.params = params
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads, lr):
        b1, b2 = self.betas
        self.t += 1
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p *= 1.0 - lr * self.weight_decay
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state_dict(self, state):
        self.t = int(state["t"])
        for dst, src in zip(self.m + self.v, list(state["m"]) + list(state["v"])):
            dst[...] = src


def nll_loss(model, batch):
    """Mean negative log-likelihood and its parameter gradients."""
    X = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    n = len(X)
    if n == 0:
        raise InputError("nll_loss needs a non-empty batch")
    logp, grads, _ = model.log_prob_and_grads(X, weights=np.full(n, -1.0 / n), need_input=False)
    bad = ~np.isfinite(logp)
    if bad.any():
        raise NumericalError(f"non-finite log-likelihood at row {int(np.flatnonzero(bad)[0])}",
                             index=int(np.flatnonzero(bad)[0]))
    return float(-logp.mean()), grads


def energy_w1_hook(target, val_data, n_samples=2000, crop_quantile=0.999, seed=0):
    """Validation metric: energy-W1 of cropped proposal samples against ``val_data``.

    ``target`` must evaluate energies in model coordinates (see
    ``StandardizedTarget``).  Proposal samples whose energy exceeds the
    ``crop_quantile`` of validation energies are dropped first.
    """
    val_e = target.energy(val_data)
    cutoff = np.quantile(val_e, crop_quantile)

    def hook(model):
        x, _ = model.sample(np.random.default_rng(seed), n_samples)
        finite = np.all(np.isfinite(x), axis=1)
        e = target.energy(x[finite]) if finite.any() else np.array([])
        e = e[e <= cutoff]
        if len(e) == 0:
            return math.inf
        return energy_w1(e, val_e)

    return hook


@dataclass
class EpochRecord:
    epoch: int
    step: int
    lr: float
    train_nll: float
    val_metric: float | None = None


class Trainer:
    """Owns the optimizer, EMA shadow and schedule position for one model."""

    def __init__(self, model, cfg, total_steps=None, n_train=None):
        self.model = model
        self.cfg = cfg
        self.opt = AdamW(model.params, cfg.adam_betas, cfg.adam_eps, cfg.weight_decay)
        if model.ema_params is None:
            model.ema_params = [p.copy() for p in model.params]
        self.step = 0
        self.epoch = 0
        self.history = []
        self.best_metric = math.inf
        self.best_model = None
        self.total_steps = total_steps
        self.rng = np.random.default_rng(cfg.seed)

    def ema_model(self):
        m = self.model.copy()
        m.set_params(self.model.ema_params)
        return m

    def _update_ema(self):
        d = self.cfg.ema_decay
        for s, p in zip(self.model.ema_params, self.model.params):
            s *= d
            s += (1.0 - d) * p

    def _augment(self, batch):
        model = self.model
        if model.spatial_dim and self.cfg.augment_rotations:
            batch = augment_rotation(batch, self.rng, model.spatial_dim)
        if model.com_sigma > 0:
            batch = lift_com(batch, model.com_sigma, self.rng, model.spatial_dim)
        return batch

    def run(self, train_data, epochs, val_hook=None):
        cfg = self.cfg
        train_data = np.atleast_2d(np.asarray(train_data, dtype=np.float64))
        n = len(train_data)
        if n == 0:
            raise InputError("training data is empty")
        per_epoch = -(-n // cfg.batch_size)
        if self.total_steps is None:
            self.total_steps = per_epoch * cfg.epochs
        last_good = [p.copy() for p in self.model.params]
        last_good_ema = [p.copy() for p in self.model.ema_params]
        for _ in range(epochs):
            order = self.rng.permutation(n)
            losses = []
            lr = 0.0
            for b in range(per_epoch):
                batch = self._augment(train_data[order[b * cfg.batch_size:(b + 1) * cfg.batch_size]])
                lr = lr_schedule(self.step, self.total_steps, cfg.learning_rate,
                                 cfg.warmup_fraction, cfg.lr_floor_ratio)
                try:
                    loss, grads = nll_loss(self.model, batch)
                except NumericalError as exc:
                    log.error("training diverged at step %d: %s; restoring last good weights", self.step, exc)
                    self.model.set_params(last_good)
                    self.model.ema_params = last_good_ema
                    self.diverged = True
                    return self.result()
                self.opt.step(grads, lr)
                self._update_ema()
                self.step += 1
                losses.append(loss)
            self.epoch += 1
            rec = EpochRecord(self.epoch, self.step, lr, float(np.mean(losses)))
            last_good = [p.copy() for p in self.model.params]
            last_good_ema = [p.copy() for p in self.model.ema_params]
            if val_hook is not None and (self.epoch % cfg.eval_every == 0 or _ == epochs - 1):
                ema = self.ema_model()
                rec.val_metric = float(val_hook(ema))
                if rec.val_metric < self.best_metric or self.best_model is None:
                    self.best_metric = rec.val_metric
                    self.best_model = ema
            self.history.append(rec)
            log.debug("epoch %d step %d lr %.3e nll %.5f val %s", rec.epoch, rec.step, rec.lr,
                      rec.train_nll, rec.val_metric)
        self.diverged = False
        return self.result()

    def result(self):
        best = self.best_model if self.best_model is not None else self.ema_model()
        best.ema_params = [p.copy() for p in best.params]
        return best


def fit(model, train_data, val_data=None, cfg=None, val_metric_hook=None, trainer=None):
    """Train ``model`` in place and return the best EMA-weight copy.

    ``train_data`` must already be in model (standardized, mean-free for
    particle systems) coordinates; rotation augmentation and CoM lifting are
    applied per batch.  With ``epochs == 0`` the model is returned unchanged.
    """
    cfg = cfg or TrainConfig()
    if cfg.epochs == 0:
        return model
    if val_data is not None and len(val_data) == 0:
        raise InputError("validation data is empty")
    trainer = trainer or Trainer(model, cfg)
    return trainer.run(train_data, cfg.epochs, val_metric_hook)
