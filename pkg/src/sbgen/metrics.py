"""Sample-quality metrics: energy W1, torus W2, histograms, ESS reports."""

from dataclasses import dataclass, asdict
import itertools
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InputError, UnsupportedError

MAX_ASSIGNMENT = 2000


def _normalized(log_weights, n):
    if log_weights is None:
        return None
    lw = np.asarray(log_weights, dtype=np.float64)
    if lw.shape != (n,):
        raise InputError("log_weights must have one entry per sample")
    if not np.isfinite(lw).any():
        raise InputError("all log-weights are -inf")
    w = np.exp(lw - lw.max())
    return w / w.sum()


def _is_uniform(w):
    return w is None or np.all(w == w[0])


def energy_w1(energies_a, energies_b, log_weights_a=None, log_weights_b=None):
    """Exact 1D Wasserstein-1 distance between (weighted) empirical laws.

    Equal-size unweighted inputs use the sorted-matching formula; anything else
    integrates |F_a - F_b| over the merged support, which is the same quantity.
    """
    a = np.asarray(energies_a, dtype=np.float64).ravel()
    b = np.asarray(energies_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise InputError("energy_w1 needs non-empty inputs")
    wa = _normalized(log_weights_a, a.size)
    wb = _normalized(log_weights_b, b.size)
    if _is_uniform(wa) and _is_uniform(wb) and a.size == b.size:
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
    wa = np.full(a.size, 1.0 / a.size) if wa is None else wa
    wb = np.full(b.size, 1.0 / b.size) if wb is None else wb
    values = np.concatenate([a, b])
    mass = np.concatenate([wa, -wb])
    order = np.argsort(values, kind="stable")
    values, mass = values[order], mass[order]
    cdf_gap = np.cumsum(mass)[:-1]
    return float(np.sum(np.abs(cdf_gap) * np.diff(values)))


def wrap_distance(x, y):
    """Geodesic distance on the circle, in [0, pi]."""
    d = np.mod(np.abs(np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)), 2 * math.pi)
    return np.minimum(d, 2 * math.pi - d)


def wrap_angle(a):
    return np.mod(np.asarray(a) + math.pi, 2 * math.pi) - math.pi


def torus_cost(A, B):
    """Squared ground cost sum_i d_wrap(a_i, b_i)^2 for all row pairs."""
    diff = wrap_distance(A[:, None, :], B[None, :, :])
    return np.sum(diff * diff, axis=2)


def _resample_rows(X, w, n, rng):
    return X[rng.choice(len(X), size=n, p=w)]


def torus_w2(angles_a, angles_b, log_weights_a=None, log_weights_b=None, seed=0):
    """Exact W2 on the flat torus via optimal assignment.

    Unequal sizes are subsampled without replacement to the smaller count;
    non-uniform weights are turned into an unweighted set by multinomial
    resampling.  Both use ``seed``.
    """
    A = np.atleast_2d(np.asarray(angles_a, dtype=np.float64))
    B = np.atleast_2d(np.asarray(angles_b, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise InputError("angle sets have different numbers of coordinates")
    if len(A) == 0 or len(B) == 0:
        raise InputError("torus_w2 needs non-empty inputs")
    rng = np.random.default_rng(seed)
    wa = _normalized(log_weights_a, len(A))
    wb = _normalized(log_weights_b, len(B))
    n = min(len(A), len(B))
    if not _is_uniform(wa):
        A = _resample_rows(A, wa, n, rng)
    if not _is_uniform(wb):
        B = _resample_rows(B, wb, n, rng)
    if len(A) > n:
        A = A[np.sort(rng.choice(len(A), n, replace=False))]
    if len(B) > n:
        B = B[np.sort(rng.choice(len(B), n, replace=False))]
    if n > MAX_ASSIGNMENT:
        raise UnsupportedError(f"exact assignment limited to {MAX_ASSIGNMENT} points; subsample first")
    C = torus_cost(A, B)
    rows, cols = linear_sum_assignment(C)
    return float(math.sqrt(C[rows, cols].mean()))


def torus_w2_bruteforce(angles_a, angles_b):
    """Enumerate every assignment; only for tiny n (test oracle)."""
    C = torus_cost(np.atleast_2d(angles_a), np.atleast_2d(angles_b))
    n = len(C)
    best = min(sum(C[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))
    return math.sqrt(best / n)


def histogram(values, bins, range, log_weights=None):
    """Normalised density table with explicit under/overflow mass.

    Densities integrate to one over ``range``; weights of out-of-range values
    are reported in ``underflow``/``overflow`` (as fractions of the total).
    """
    lo, hi = float(range[0]), float(range[1])
    if bins < 1:
        raise InputError("bins must be >= 1")
    if not hi > lo:
        raise InputError("histogram range is degenerate")
    v = np.asarray(values, dtype=np.float64).ravel()
    w = _normalized(log_weights, v.size)
    w = np.full(v.size, 1.0 / max(v.size, 1)) if w is None else w
    edges = np.linspace(lo, hi, bins + 1)
    inside = (v >= lo) & (v <= hi)
    counts, _ = np.histogram(v[inside], bins=edges, weights=w[inside])
    width = (hi - lo) / bins
    total = counts.sum()
    density = counts / (total * width) if total > 0 else np.zeros(bins)
    return {
        "center": 0.5 * (edges[:-1] + edges[1:]),
        "density": density,
        "mass": counts,
        "width": width,
        "underflow": float(w[v < lo].sum()),
        "overflow": float(w[v > hi].sum()),
        "n": int(v.size),
    }


def histogram_csv(table, path):
    with open(path, "w") as fh:
        fh.write(f"# n={table['n']} underflow={float(table['underflow'])!r} "
                 f"overflow={float(table['overflow'])!r}\n")
        fh.write("center,density\n")
        for c, d in zip(table["center"], table["density"]):
            fh.write(f"{float(c)!r},{float(d)!r}\n")


# -- angle extraction -------------------------------------------------------


def _dihedrals(P):
    b0 = P[:, :-3] - P[:, 1:-2]
    b1 = P[:, 2:-1] - P[:, 1:-2]
    b2 = P[:, 3:] - P[:, 2:-1]
    b1n = b1 / np.maximum(np.linalg.norm(b1, axis=2, keepdims=True), 1e-12)
    v = b0 - np.sum(b0 * b1n, axis=2, keepdims=True) * b1n
    w = b2 - np.sum(b2 * b1n, axis=2, keepdims=True) * b1n
    x = np.sum(v * w, axis=2)
    y = np.sum(np.cross(b1n, v) * w, axis=2)
    return np.arctan2(y, x)


def _bond_turns(P):
    u = P[:, 1:-1] - P[:, :-2]
    v = P[:, 2:] - P[:, 1:-1]
    return np.arctan2(u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0], np.sum(u * v, axis=2))


def extract_angles(target, X):
    """Angle coordinates in [-pi, pi] used by torus_w2, or None if undefined.

    Point targets: atan2 of consecutive coordinate pairs.  3D particle systems:
    dihedrals of consecutive particle quadruples.  2D particle systems: signed
    turning angles of consecutive bond pairs.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if target.kind == "many_body_pairwise":
        s, n = target.params["spatial_dim"], target.params["n_particles"]
        P = X.reshape(len(X), n, s)
        if s == 3 and n >= 4:
            return wrap_angle(_dihedrals(P))
        if s == 2 and n >= 3:
            return wrap_angle(_bond_turns(P))
        return None
    if X.shape[1] < 2:
        return None
    m = X.shape[1] // 2
    return np.arctan2(X[:, 1:2 * m:2], X[:, 0:2 * m:2])


@dataclass
class MetricsReport:
    estimator: str
    ess: float
    ess_normalized: float
    energy_w1: float
    torus_w2: float | None
    log_z_hat: float | None
    log_z_jarzynski: float | None
    n_samples: int
    seed: int

    def to_dict(self):
        return asdict(self)
