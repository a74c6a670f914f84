"""Sequential Boltzmann generator sampling: annealing with ESS-triggered resampling."""

import logging

import numpy as np

from .errors import EstimationError, InputError, NumericalError
from .reweight import WeightedSamples, energy_filter, likelihood_filter, log_mean_exp, weight_clip
from .transport import (ParticleEnsemble, _check_start, _dump_steps, _maybe_dump, as_proposal,
                        draw_ensemble, langevin_step, stream)

log = logging.getLogger(__name__)

SCHEMES = ("multinomial", "stratified")


def ess(log_weights):
    """1 / sum(wbar^2) for self-normalised weights; -inf entries count as zero."""
    lw = np.asarray(log_weights, dtype=np.float64)
    finite = np.isfinite(lw)
    if not finite.any():
        raise EstimationError("ESS undefined: no finite log-weight")
    w = np.exp(lw[finite] - lw[finite].max())
    s = w.sum()
    return float(s * s / np.sum(w * w))


def resample_indices(log_weights, scheme, rng):
    """Ancestor indices for K offspring under ``scheme``."""
    if scheme not in SCHEMES:
        raise InputError(f"unknown resampling scheme {scheme!r}")
    lw = np.asarray(log_weights, dtype=np.float64)
    finite = np.isfinite(lw)
    if not finite.any():
        raise EstimationError("cannot resample: no finite log-weight")
    K = len(lw)
    w = np.zeros(K)
    w[finite] = np.exp(lw[finite] - lw[finite].max())
    cdf = np.cumsum(w)
    total = cdf[-1]
    if scheme == "multinomial":
        u = rng.random(K) * total
    else:
        # unnormalised cumulative weights keep equal weights on exact integers
        u = (np.arange(K) + rng.random(K)) * (total / K)
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, K - 1)


def resample(ensemble, scheme="multinomial", seed=0):
    """Offspring ensemble with log-weights reset to 0 and ``lineage`` recorded.

    The log-mean weight is banked in ``log_z_accum`` so partition-function
    estimates survive the reset.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = resample_indices(ensemble.log_weights, scheme, rng)
    out = ParticleEnsemble(ensemble.positions[idx].copy(), np.zeros(len(idx)), ensemble.tau,
                           idx, ensemble.quarantined[idx].copy(),
                           ensemble.log_z_accum + log_mean_exp(ensemble.log_weights),
                           ensemble.n_resamples + 1)
    return out


def apply_prefilters(ensemble, model, target, filters):
    """Energy crop / likelihood cut / weight clip on the tau = 0 draw.

    ``filters`` keys: ``energy_gamma``, ``likelihood_delta``, ``weight_clip``
    (any may be None).  Returns the surviving ensemble and the filter reports.
    """
    prop = as_proposal(model)
    lp = prop.log_prob(ensemble.positions)
    s = WeightedSamples.from_target(target, ensemble.positions, lp)
    reports = []
    if filters.get("energy_gamma") is not None:
        s, rep = energy_filter(s, filters["energy_gamma"], report=True)
        reports.append(rep)
    if filters.get("likelihood_delta") is not None:
        s, rep = likelihood_filter(s, filters["likelihood_delta"], report=True)
        reports.append(rep)
    if filters.get("weight_clip"):
        s, rep = weight_clip(s, filters["weight_clip"], report=True)
        reports.append(rep)
    keep = s.index
    out = ParticleEnsemble(ensemble.positions[keep].copy(), ensemble.log_weights[keep].copy(),
                           ensemble.tau, None, ensemble.quarantined[keep].copy())
    return out, reports


def sbg_run(model, target, schedule, K, seed, filters=None, ensemble=None, dump_dir=None):
    """Draw K proposal particles and run annealed SMC from tau = 0 to 1.

    After every Langevin step and weight update the normalised ESS is compared
    with ``schedule.ess_threshold`` and the ensemble is resampled when it falls
    below.  Randomness: proposal draw, Langevin noise and resampling use the
    'draw', 'move' and 'resample' streams of ``seed``, so with a zero threshold
    the result matches ``transport.anneal`` bit for bit.

    Returns ``(ensemble, diagnostics)``.
    """
    if K < 2:
        raise InputError("sbg_run needs K >= 2")
    prop = as_proposal(model)
    ens = draw_ensemble(prop, K, seed) if ensemble is None else ensemble.copy()
    _check_start(ens)
    diag = {"K": int(ens.K), "n_steps": schedule.n_steps, "threshold": schedule.ess_threshold,
            "scheme": schedule.resample_scheme, "filters": [], "steps": []}
    if filters:
        ens, diag["filters"] = apply_prefilters(ens, prop, target, filters)
        if ens.K < 2:
            raise EstimationError(f"pre-filters left {ens.K} particle(s)")
    move = stream(seed, "move")
    rs = stream(seed, "resample")
    marks = _dump_steps(schedule.n_steps)
    _maybe_dump(ens, 0, marks, dump_dir)
    for i in range(schedule.n_steps):
        langevin_step(ens, prop, target, schedule, i, move)
        n_q = int(ens.quarantined.sum())
        if n_q == ens.K:
            err = NumericalError(f"all particles quarantined at step {i}", index=i)
            err.diagnostics = diag
            raise err
        e = ess(ens.log_weights)
        rec = {"step": i + 1, "tau": ens.tau, "ess": e, "ess_normalized": e / ens.K,
               "resampled": False, "quarantined": n_q}
        if schedule.ess_threshold >= 1.0 or e / ens.K < schedule.ess_threshold:
            ens = resample(ens, schedule.resample_scheme, rs)
            rec["resampled"] = True
            rec["quarantined"] = int(ens.quarantined.sum())
        diag["steps"].append(rec)
        _maybe_dump(ens, i + 1, marks, dump_dir)
    final = ess(ens.log_weights)
    diag["final_ess"] = final
    diag["final_ess_normalized"] = final / ens.K
    diag["n_resamples"] = ens.n_resamples
    log.info("sbg_run: K=%d, %d resampling events, final ESS/K %.4f", ens.K, ens.n_resamples,
             final / ens.K)
    return ens, diag
