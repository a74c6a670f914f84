"""Annealed Langevin transport of weighted particle ensembles.

The interpolated energy is E_tau = (1 - tau) E_0 + tau E_1 with E_0 = -log p
(the proposal) and E_1 the reduced target energy.  Each step moves particles
by Euler-Maruyama on E_tau and accumulates log w -= dE_tau/dtau * dtau, the
weight increment being evaluated before the move.
"""

from dataclasses import dataclass
import logging
import math
import os

import numpy as np

from .errors import EstimationError, InputError, StateError, UnsupportedError
from .flow import FlowModel, FlowProposal
from .reweight import log_mean_exp

log = logging.getLogger(__name__)

DRIFT_CLIP = 1e3
MAX_DIVERGENCE_DIM = 32
DUMP_TAUS = (0.0, 0.25, 0.5, 0.75, 1.0)

# named child streams of a run seed; fixed ids keep streams stable when K changes
STREAMS = {"draw": 0, "move": 1, "resample": 2, "metrics": 3, "train": 4, "data": 5}


def stream(seed, name):
    """Generator for the named child stream of ``seed``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name],)))


def as_proposal(model):
    if isinstance(model, FlowModel):
        return FlowProposal(model)
    if not hasattr(model, "log_prob_and_grad"):
        raise InputError("proposal must be a FlowModel or expose log_prob_and_grad")
    return model


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    log_weights: np.ndarray
    tau: float = 0.0
    lineage: np.ndarray = None
    quarantined: np.ndarray = None
    log_z_accum: float = 0.0       # log-mean weight banked at each resampling
    n_resamples: int = 0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        self.log_weights = np.asarray(self.log_weights, dtype=np.float64).ravel()
        if len(self.log_weights) != len(self.positions):
            raise InputError("one log-weight per particle required")
        if self.quarantined is None:
            self.quarantined = np.zeros(len(self.positions), dtype=bool)
        if not 0.0 <= self.tau <= 1.0:
            raise InputError("tau must lie in [0, 1]")

    @property
    def K(self):
        return len(self.positions)

    @property
    def dim(self):
        return self.positions.shape[1]

    def copy(self):
        return ParticleEnsemble(self.positions.copy(), self.log_weights.copy(), self.tau,
                                None if self.lineage is None else self.lineage.copy(),
                                self.quarantined.copy(), self.log_z_accum, self.n_resamples)


def draw_ensemble(model, K, seed):
    """K proposal samples with log-weights 0 at tau = 0 (uses the 'draw' stream)."""
    prop = as_proposal(model)
    x, _ = prop.sample(stream(seed, "draw"), K)
    return ParticleEnsemble(x, np.zeros(K))


@dataclass
class AnnealSchedule:
    n_steps: int = 100
    epsilon: object = 1e-5
    ess_threshold: float = 0.5
    resample_scheme: str = "multinomial"
    drift_clip: float | None = DRIFT_CLIP

    def __post_init__(self):
        if self.n_steps < 1:
            raise InputError("n_steps must be >= 1")
        eps = np.broadcast_to(np.asarray(self.epsilon, dtype=np.float64), (self.n_steps,))
        if np.any(eps < 0) or not np.all(np.isfinite(eps)):
            raise InputError("epsilon must be finite and non-negative")
        self.eps = eps.copy()
        if not 0.0 <= self.ess_threshold <= 1.0:
            raise InputError("ess_threshold must lie in [0, 1]")
        if self.resample_scheme not in ("multinomial", "stratified"):
            raise InputError(f"unknown resampling scheme {self.resample_scheme!r}")

    @property
    def dtau(self):
        return 1.0 / self.n_steps

    def tau(self, i):
        return i / self.n_steps


def interp_energy(model, target, x, tau):
    """(E_tau, grad E_tau, dE_tau/dtau) at the rows of ``x``."""
    if not 0.0 <= tau <= 1.0:
        raise InputError("tau must lie in [0, 1]")
    prop = as_proposal(model)
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    lp, glp = prop.log_prob_and_grad(X)
    e, ge = target.energy_and_grad(X)
    value = (1.0 - tau) * (-lp) + tau * e
    grad = (1.0 - tau) * (-glp) + tau * ge
    dtau = e + lp
    if np.ndim(x) == 1:
        return float(value[0]), grad[0], float(dtau[0])
    return value, grad, dtau


def _clip_rows(G, max_norm):
    if max_norm is None:
        return G
    n = np.linalg.norm(G, axis=1)
    over = n > max_norm
    if over.any():
        G = G.copy()
        G[over] *= (max_norm / n[over])[:, None]
    return G


def _quarantine(ens, active, x_new, lw_new, x_old):
    bad = ~(np.all(np.isfinite(x_new), axis=1) & np.isfinite(lw_new))
    if bad.any():
        idx = active[bad]
        log.warning("quarantining %d particle(s) at tau=%.4f", len(idx), ens.tau)
        x_new[bad] = x_old[bad]
        lw_new[bad] = -np.inf
        ens.quarantined[idx] = True
    ens.positions[active] = x_new
    ens.log_weights[active] = lw_new


def langevin_step(ens, prop, target, schedule, i, rng):
    """Advance ``ens`` in place from tau_i to tau_{i+1}."""
    tau, dt, eps = schedule.tau(i), schedule.dtau, schedule.eps[i]
    noise = rng.standard_normal(ens.positions.shape)
    active = np.flatnonzero(~ens.quarantined)
    if len(active):
        X = ens.positions[active]
        with np.errstate(all="ignore"):
            lp, glp = prop.log_prob_and_grad(X)
            e, ge = target.energy_and_grad(X)
            grad = _clip_rows((1.0 - tau) * (-glp) + tau * ge, schedule.drift_clip)
            lw = ens.log_weights[active] - (e + lp) * dt
            Xn = X - eps * grad * dt + math.sqrt(2.0 * eps * dt) * noise[active]
        _quarantine(ens, active, Xn, lw, X)
    ens.tau = schedule.tau(i + 1)


def _dump(ens, path):
    d = ens.dim
    head = ",".join([f"x{j}" for j in range(d)] + ["log_weight", "quarantined"])
    table = np.column_stack([ens.positions, ens.log_weights, ens.quarantined.astype(float)])
    np.savetxt(path, table, delimiter=",", header=head, comments="", fmt="%.17g")


def _dump_steps(n_steps):
    return {int(round(t * n_steps)): t for t in DUMP_TAUS}


def _maybe_dump(ens, step, marks, dump_dir):
    if dump_dir is not None and step in marks:
        _dump(ens, os.path.join(dump_dir, f"trajectory_tau{marks[step]:.2f}.csv"))


def _check_start(ensemble):
    if ensemble.tau != 0.0:
        raise StateError("annealing must start from tau = 0")


def anneal(ensemble, model, target, schedule, seed, dump_dir=None):
    """Annealed Langevin transport tau: 0 -> 1 with no resampling.

    Returns a new ensemble; the input is left untouched.  Langevin noise comes
    from the 'move' stream of ``seed``.
    """
    _check_start(ensemble)
    prop = as_proposal(model)
    ens = ensemble.copy()
    rng = stream(seed, "move")
    marks = _dump_steps(schedule.n_steps)
    _maybe_dump(ens, 0, marks, dump_dir)
    for i in range(schedule.n_steps):
        langevin_step(ens, prop, target, schedule, i, rng)
        _maybe_dump(ens, i + 1, marks, dump_dir)
    return ens


def jarzynski_log_z_ratio(ensemble):
    """log(Z_tau / Z_0) from the accumulated log-weights.

    Resampling banks the log-mean weight before each reset, so the estimate
    remains valid after SMC steps; with no resampling it is the plain
    log-mean-exp of the log-weights.
    """
    lw = np.asarray(ensemble.log_weights)
    if not np.any(lw > -np.inf):
        raise EstimationError("every particle has log-weight -inf")
    return ensemble.log_z_accum + log_mean_exp(lw)


def _divergence(field_fn, X, h):
    n, d = X.shape
    eye = h * np.eye(d)
    pts = np.concatenate([(X[:, None, :] + eye[None]).reshape(-1, d),
                          (X[:, None, :] - eye[None]).reshape(-1, d)])
    F = field_fn(pts)
    plus = F[:n * d].reshape(n, d, d)
    minus = F[n * d:].reshape(n, d, d)
    return np.einsum("njj->n", plus - minus) / (2.0 * h)


def target_only_step(ens, prop, target, schedule, i, rng, h=1e-4):
    tau, dt, eps = schedule.tau(i), schedule.dtau, schedule.eps[i]
    noise = rng.standard_normal(ens.positions.shape)
    active = np.flatnonzero(~ens.quarantined)
    if len(active):
        X = ens.positions[active]

        def nu(P):
            _, g_lp = prop.log_prob_and_grad(P)
            _, g_e = target.energy_and_grad(P)
            return eps * (1.0 - tau) * (-g_lp - g_e)

        with np.errstate(all="ignore"):
            lp, glp = prop.log_prob_and_grad(X)
            e, ge = target.energy_and_grad(X)
            v = eps * (1.0 - tau) * (-glp - ge)
            grad_tau = (1.0 - tau) * (-glp) + tau * ge
            div = _divergence(nu, X, h) if eps > 0 and tau < 1.0 else 0.0
            lw = ens.log_weights[active] + (div - np.sum(grad_tau * v, axis=1) - (e + lp)) * dt
            drift = _clip_rows(ge, schedule.drift_clip)
            Xn = X - eps * drift * dt + math.sqrt(2.0 * eps * dt) * noise[active]
        _quarantine(ens, active, Xn, lw, X)
    ens.tau = schedule.tau(i + 1)


def anneal_target_only(ensemble, model, target, schedule, seed, h=1e-4, dump_dir=None):
    """Proposal-free transport: particles follow Langevin dynamics on E_1 alone.

    The log-weights carry the drift correction
    dw = (div nu - grad E_tau . nu - dE_tau/dtau) dtau with
    nu = eps (1 - tau)(grad E_0 - grad E_1); the divergence uses central
    differences with step ``h`` (model units), which costs 2d extra gradient
    evaluations per particle and step.
    """
    _check_start(ensemble)
    if ensemble.dim > MAX_DIVERGENCE_DIM:
        raise UnsupportedError(f"finite-difference divergence limited to dim <= {MAX_DIVERGENCE_DIM}")
    prop = as_proposal(model)
    ens = ensemble.copy()
    rng = stream(seed, "move")
    marks = _dump_steps(schedule.n_steps)
    _maybe_dump(ens, 0, marks, dump_dir)
    for i in range(schedule.n_steps):
        target_only_step(ens, prop, target, schedule, i, rng, h)
        _maybe_dump(ens, i + 1, marks, dump_dir)
    return ens
