"""One-shot importance sampling, the log-Z lower bound, and sample filters."""

from dataclasses import dataclass
import logging
import math

import numpy as np
from scipy.special import logsumexp

from .errors import EstimationError, InputError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightedSample:
    position: np.ndarray
    log_target: float
    log_proposal: float

    @property
    def log_weight(self):
        return self.log_target - self.log_proposal


@dataclass
class WeightedSamples:
    """Column-oriented batch of ``WeightedSample`` records.

    ``index`` tracks each row's position in the original draw so filters stay
    traceable.
    """

    positions: np.ndarray
    log_target: np.ndarray
    log_proposal: np.ndarray
    index: np.ndarray = None

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        self.log_target = np.asarray(self.log_target, dtype=np.float64).ravel()
        self.log_proposal = np.asarray(self.log_proposal, dtype=np.float64).ravel()
        n = len(self.log_target)
        if len(self.log_proposal) != n or len(self.positions) != n:
            raise InputError("positions, log_target and log_proposal must have one row per sample")
        self.index = np.arange(n) if self.index is None else np.asarray(self.index, dtype=np.int64)

    @classmethod
    def from_target(cls, target, positions, log_proposal):
        """Build from positions and proposal log-densities; log_target = -E/kT."""
        positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
        lt = -target.energy(positions) if len(positions) else np.zeros(0)
        return cls(positions, lt, log_proposal)

    @classmethod
    def from_list(cls, samples):
        samples = list(samples)
        if not samples:
            raise InputError("cannot infer dimension from an empty sample list")
        return cls(np.stack([s.position for s in samples]),
                   [s.log_target for s in samples], [s.log_proposal for s in samples])

    def __len__(self):
        return len(self.log_target)

    def __getitem__(self, i):
        return WeightedSample(self.positions[i], float(self.log_target[i]), float(self.log_proposal[i]))

    @property
    def log_weight(self):
        return self.log_target - self.log_proposal

    @property
    def energy(self):
        return -self.log_target

    def subset(self, keep):
        keep = np.asarray(keep)
        return WeightedSamples(self.positions[keep], self.log_target[keep],
                               self.log_proposal[keep], self.index[keep])


def _as_batch(samples):
    if isinstance(samples, WeightedSamples):
        return samples
    return WeightedSamples.from_list(samples)


def normalized_weights(log_weights):
    lw = np.asarray(log_weights, dtype=np.float64)
    if lw.size == 0 or not np.any(np.isfinite(lw)):
        raise EstimationError("no finite log-weight; cannot normalise")
    w = np.exp(lw - np.max(lw[np.isfinite(lw)]))
    w[np.isnan(w)] = 0.0
    return w / w.sum()


def ess_from_log_weights(log_weights):
    w = normalized_weights(log_weights)
    return float(1.0 / np.sum(w * w))


def snis(samples, phi):
    """Self-normalised estimate of E_target[phi] and the ESS of the weights.

    ``phi`` maps the (n, d) position matrix to n values.
    """
    s = _as_batch(samples)
    w = normalized_weights(s.log_weight)
    vals = np.asarray(phi(s.positions), dtype=np.float64)
    live = w > 0
    return float(np.sum(w[live] * vals[live])), float(1.0 / np.sum(w * w))


def log_mean_exp(values):
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise EstimationError("log-mean-exp of an empty set")
    if not np.any(v > -np.inf):
        raise EstimationError("all log-weights are -inf")
    return float(logsumexp(v) - math.log(v.size))


def log_z_hat(samples):
    """Mean log-weight: a lower bound on log Z (Jensen), asserted against log-mean-exp."""
    s = _as_batch(samples)
    lw = s.log_weight
    if len(lw) == 0 or not np.any(np.isfinite(lw)):
        raise EstimationError("log_z_hat needs at least one finite log-weight")
    bound = float(np.mean(lw))
    lme = log_mean_exp(lw)
    # mean <= log-mean-exp holds exactly; allow for rounding in the two reductions
    assert bound <= lme + 1e-12 * max(1.0, abs(lme)), (bound, lme)
    return bound


def _report(name, parameter, before, after):
    rep = {"filter": name, "parameter": float(parameter), "removed": before - after,
           "remaining": after, "empty": after == 0}
    if after == 0:
        log.warning("%s(%r) removed every sample", name, parameter)
    return rep


def energy_filter(samples, gamma, report=False):
    """Drop samples whose reduced energy exceeds ``gamma``."""
    if math.isnan(gamma) or gamma == -math.inf:
        raise InputError("gamma must be a number (use +inf to keep everything)")
    s = _as_batch(samples)
    out = s.subset(np.flatnonzero(~(s.energy > gamma)))
    rep = _report("energy", gamma, len(s), len(out))
    return (out, rep) if report else out


def likelihood_filter(samples, delta, report=False):
    """Keep samples with proposal density p(x) >= delta."""
    if math.isnan(delta) or delta < 0:
        raise InputError("delta must be a non-negative number")
    s = _as_batch(samples)
    log_delta = math.log(delta) if delta > 0 else -math.inf
    out = s.subset(np.flatnonzero(s.log_proposal >= log_delta))
    rep = _report("likelihood", delta, len(s), len(out))
    return (out, rep) if report else out


def weight_clip(samples, fraction, report=False):
    """Remove the ceil(fraction * K) largest log-weights; ties go to the lower index."""
    if not 0 <= fraction < 1:
        raise InputError("fraction must lie in [0, 1)")
    s = _as_batch(samples)
    k = len(s)
    n_drop = math.ceil(fraction * k)
    # float products like 0.002 * 1000 can land a hair above the integer
    if n_drop - fraction * k > 1 - 1e-9:
        n_drop -= 1
    order = np.lexsort((np.arange(k), -s.log_weight))
    out = s.subset(np.sort(order[n_drop:]))
    rep = _report("weight_clip", fraction, k, len(out))
    return (out, rep) if report else out


def _log_mgf(X, lam):
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        raise EstimationError("no samples for the moment-generating-function estimate")
    val = log_mean_exp(-lam * X) if np.any(np.isfinite(-lam * X)) else -math.inf
    if not math.isfinite(val):
        raise EstimationError("E[exp(-lambda X)] underflowed to zero; choose a smaller lambda")
    return val


def _check_threshold_args(K, b, rho, lam):
    if K < 1 or not b > 0 or not rho > 0 or not lam > 0:
        raise InputError("need K >= 1 and b, rho, lambda > 0")


def threshold_from_log_mgf(K, b, rho, lam, log_mgf, offset=0.0):
    _check_threshold_args(K, b, rho, lam)
    return (math.log(K * b / (12.0 * rho)) - log_mgf) / lam + offset


def gamma_threshold(K, b, rho, lam, samples, log_z=None):
    """Energy truncation level for K samples: X = reduced energies, plus log Z-hat."""
    s = _as_batch(samples)
    _check_threshold_args(K, b, rho, lam)
    lz = log_z_hat(s) if log_z is None else log_z
    return threshold_from_log_mgf(K, b, rho, lam, _log_mgf(s.energy, lam), lz)


def delta_threshold(K, b, rho, lam, samples):
    """Likelihood truncation level for K samples: X = proposal log-likelihoods."""
    s = _as_batch(samples)
    _check_threshold_args(K, b, rho, lam)
    return threshold_from_log_mgf(K, b, rho, lam, _log_mgf(s.log_proposal, lam))
