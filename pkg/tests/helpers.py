"""Shared statistical helpers for the test-suite."""

import numpy as np


def snis_estimate(log_w, values):
    w = np.exp(log_w - np.max(log_w))
    return float(np.sum(w * values) / np.sum(w))


def bootstrap_se(log_w, values, n_boot=200, seed=0):
    """Bootstrap standard error of the self-normalized estimate."""
    log_w = np.asarray(log_w, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    rng = np.random.default_rng(seed)
    n = len(log_w)
    reps = [snis_estimate(log_w[i], values[i]) for i in (rng.integers(0, n, n) for _ in range(n_boot))]
    return float(np.std(reps, ddof=1))


def bootstrap_se_lme(log_w, n_boot=200, seed=0):
    """Bootstrap standard error of log-mean-exp(log_w)."""
    from scipy.special import logsumexp

    log_w = np.asarray(log_w, dtype=np.float64)
    rng = np.random.default_rng(seed)
    n = len(log_w)
    reps = [logsumexp(log_w[rng.integers(0, n, n)]) - np.log(n) for _ in range(n_boot)]
    return float(np.std(reps, ddof=1))


# criterion number -> (passed, detail); filled by test_acceptance, printed by conftest
ACCEPTANCE = {}
