"""Langevin chains for biased training data and long reference runs."""

from dataclasses import dataclass
import logging

import numpy as np

from . import _core
from .errors import InputError, NumericalError
from .targets import pack

log = logging.getLogger(__name__)

_CHUNK = 1 << 15


@dataclass(frozen=True)
class ChainConfig:
    steps: int
    step_size: float
    burn_in: int = 0
    kind: str = "mala"
    seed: int = 0
    thin: int = 1

    def __post_init__(self):
        if self.kind not in ("ula", "mala"):
            raise InputError(f"chain kind must be 'ula' or 'mala', got {self.kind!r}")
        if self.step_size < 0 or (self.step_size == 0 and self.kind == "mala"):
            raise InputError("step_size must be positive")
        if self.steps < 0 or not 0 <= self.burn_in <= max(self.steps - 1, 0):
            raise InputError("need 0 <= burn_in < steps")
        if self.thin < 1:
            raise InputError("thin must be >= 1")

    @property
    def n_records(self):
        return max(0, -(-(self.steps - self.burn_in) // self.thin))


@dataclass
class ChainStats:
    accepted: int
    steps: int

    @property
    def acceptance_rate(self):
        return self.accepted / self.steps if self.steps else float("nan")


def run_chain(target, x0, cfg, backend=None, return_stats=False):
    """Run one ULA or MALA chain on the reduced energy of ``target``.

    ULA: x <- x - h grad U(x) + sqrt(2h) xi.  MALA adds the Metropolis-Hastings
    correction for the Langevin proposal.  States are recorded after
    ``burn_in`` steps, every ``thin`` steps.  Noise is drawn in fixed-size
    chunks from ``numpy.random.default_rng(cfg.seed)``, so the compiled and
    pure-Python kernels see identical randomness.
    """
    x = np.array(x0, dtype=np.float64).ravel()
    if x.size != target.dim:
        raise InputError(f"x0 has length {x.size}, target dim is {target.dim}")
    if not np.all(np.isfinite(x)):
        raise InputError("x0 must be finite")
    kernel = _core.get_kernel(backend)
    code, dp, ip = pack(target)
    inv_t = 1.0 / target.temperature_scale
    rng = np.random.default_rng(cfg.seed)
    out = np.empty((cfg.n_records, target.dim))
    accepted = rows = 0
    done = 0
    while done < cfg.steps:
        n = min(_CHUNK, cfg.steps - done)
        noise = rng.standard_normal((n, target.dim))
        unif = rng.random(n)
        acc, wrote, fail = kernel.run_chain(code, dp, ip, inv_t, x, cfg.step_size, noise, unif,
                                            cfg.kind == "mala", out[rows:], done, cfg.burn_in, cfg.thin)
        if fail >= 0:
            raise NumericalError(f"chain state became non-finite at step {fail}", index=fail)
        accepted += acc
        rows += wrote
        done += n
    stats = ChainStats(accepted, cfg.steps)
    log.info("%s chain: %d steps, acceptance %.4f", cfg.kind, cfg.steps, stats.acceptance_rate)
    if return_stats:
        return out, stats
    return out


def split_biased(chain, train_n, val_n, test_n, seed):
    """Contiguous train/validation blocks plus a uniform test subsample.

    Train is the first ``train_n`` rows, validation the next ``val_n``; test
    draws ``test_n`` rows without replacement from what remains.  Returns the
    three matrices and the index arrays that produced them.
    """
    chain = np.asarray(chain)
    rows = len(chain)
    if train_n < 0 or val_n < 0 or test_n < 0:
        raise InputError("split sizes must be non-negative")
    if train_n + val_n >= rows and not (train_n + val_n == rows and test_n == 0):
        raise InputError(f"chain has {rows} rows, cannot take {train_n}+{val_n} contiguous rows")
    rest = np.arange(train_n + val_n, rows)
    if test_n > len(rest):
        raise InputError(f"only {len(rest)} rows remain for a test split of {test_n}")
    rng = np.random.default_rng(seed)
    test_idx = np.sort(rng.choice(rest, size=test_n, replace=False))
    idx = {
        "train": np.arange(train_n),
        "val": np.arange(train_n, train_n + val_n),
        "test": test_idx,
    }
    return chain[idx["train"]], chain[idx["val"]], chain[idx["test"]], idx
