"""Synthetic Boltzmann targets with analytic gradients.

Every target exposes ``energy_and_grad`` on a single point or a batch of rows.
Values are reduced energies, i.e. already divided by ``temperature_scale``
(which plays the role of k_B T).

Kinds and their ``params`` keys:

``gaussian``
    ``mean`` (d,), ``std`` (d,).  E = 1/2 sum((x - mean) / std)^2.
``gaussian_mixture``
    ``weights`` (K,), ``means`` (K, d), ``stds`` (K, d).
    E = -log sum_k w_k exp(-1/2 |(x - m_k) / s_k|^2) (unnormalised kernels).
``double_well``
    ``barrier`` a, ``tilt`` b.  E = a (x_0^2 - 1)^2 + b x_0 + 1/2 sum_{i>0} x_i^2.
``muller_brown``
    ``A``, ``a``, ``b``, ``c``, ``x0``, ``y0`` (4 each) and ``exp_cap``.
    Standard four-term exponential sum; exponents above ``exp_cap`` are
    continued linearly so the energy stays finite far from the basin.
``many_body_pairwise``
    ``n_particles``, ``spatial_dim``, ``a``, ``b``, ``c``, ``d0``.
    E = sum_{i<j} a u + b u^2 + c u^4 with u = |x_i - x_j| - d0.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import logsumexp

from .errors import InputError, UnsupportedError

KINDS = ("gaussian", "gaussian_mixture", "double_well", "muller_brown", "many_body_pairwise")

MULLER_BROWN_DEFAULTS = {
    "A": (-200.0, -100.0, -170.0, 15.0),
    "a": (-1.0, -1.0, -6.5, 0.7),
    "b": (0.0, 0.0, 11.0, 0.6),
    "c": (-10.0, -10.0, -6.5, 0.7),
    "x0": (1.0, 0.0, -0.5, -1.0),
    "y0": (0.0, 0.5, 1.5, 1.0),
    "exp_cap": 50.0,
}

# Lean DW-4 style pair potential: wells at u = +-sqrt(-b / 2c).
MANY_BODY_DEFAULTS = {"a": 0.0, "b": -4.0, "c": 0.9, "d0": 4.0}

_MIN_PAIR_DISTANCE = 1e-12


@dataclass(frozen=True, eq=False)
class EnergyTarget:
    kind: str
    dim: int
    params: dict = field(default_factory=dict)
    temperature_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown target kind {self.kind!r}")
        if self.dim < 1:
            raise InputError("dim must be positive")
        if not self.temperature_scale > 0:
            raise InputError("temperature_scale must be positive")

    @property
    def spatial_dim(self):
        """Spatial dimension of a particle system, or None for point targets."""
        if self.kind == "many_body_pairwise":
            return int(self.params["spatial_dim"])
        return None

    def energy_and_grad(self, x):
        """Reduced energy and its gradient.

        Accepts a vector of length ``dim`` (returns a float and a vector) or an
        ``(n, dim)`` batch (returns two arrays).
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise InputError(f"expected points of dimension {self.dim}, got shape {x.shape}")
        if not np.all(np.isfinite(X)):
            raise InputError("energy_and_grad received non-finite coordinates")
        e, g = _ENERGY[self.kind](self.params, X)
        e = e / self.temperature_scale
        g = g / self.temperature_scale
        if single:
            return float(e[0]), g[0]
        return e, g

    def energy(self, x):
        return self.energy_and_grad(x)[0]


def energy_and_grad(target, x):
    return target.energy_and_grad(x)


# -- constructors -----------------------------------------------------------


def gaussian(mean, std=1.0, temperature_scale=1.0):
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    std = np.broadcast_to(np.asarray(std, dtype=np.float64), mean.shape).copy()
    if np.any(std <= 0):
        raise InputError("gaussian std must be positive")
    return EnergyTarget("gaussian", mean.size, {"mean": mean, "std": std}, temperature_scale)


def gaussian_mixture(weights, means, stds=1.0, temperature_scale=1.0):
    weights = np.asarray(weights, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    if means.ndim == 1:
        means = means[:, None]
    stds = np.asarray(stds, dtype=np.float64)
    if stds.ndim == 1 and stds.shape[0] == means.shape[0]:
        stds = stds[:, None]
    stds = np.broadcast_to(stds, means.shape).copy()
    if weights.shape != (means.shape[0],) or np.any(weights <= 0):
        raise InputError("mixture weights must be positive, one per component")
    if np.any(stds <= 0):
        raise InputError("mixture stds must be positive")
    params = {"weights": weights / weights.sum(), "means": means, "stds": stds}
    return EnergyTarget("gaussian_mixture", means.shape[1], params, temperature_scale)


def double_well(dim=1, barrier=1.0, tilt=0.0, temperature_scale=1.0):
    if barrier <= 0:
        raise InputError("double_well barrier must be positive")
    return EnergyTarget("double_well", dim, {"barrier": float(barrier), "tilt": float(tilt)},
                        temperature_scale)


def muller_brown(temperature_scale=1.0, **overrides):
    params = {k: np.asarray(v, dtype=np.float64) for k, v in MULLER_BROWN_DEFAULTS.items()}
    for k, v in overrides.items():
        if k not in params:
            raise InputError(f"unknown muller_brown parameter {k!r}")
        params[k] = np.asarray(v, dtype=np.float64)
    params["exp_cap"] = float(params["exp_cap"])
    return EnergyTarget("muller_brown", 2, params, temperature_scale)


def many_body_pairwise(n_particles=4, spatial_dim=3, temperature_scale=1.0, **coeffs):
    if n_particles < 2:
        raise InputError("many_body_pairwise needs at least two particles")
    params = dict(MANY_BODY_DEFAULTS)
    for k, v in coeffs.items():
        if k not in params:
            raise InputError(f"unknown many_body_pairwise parameter {k!r}")
        params[k] = float(v)
    params.update(n_particles=int(n_particles), spatial_dim=int(spatial_dim))
    return EnergyTarget("many_body_pairwise", n_particles * spatial_dim, params, temperature_scale)


def from_config(cfg):
    """Build a target from a config mapping with a ``kind`` key."""
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    T = float(cfg.pop("temperature_scale", 1.0))
    try:
        if kind == "gaussian":
            return gaussian(cfg.pop("mean"), cfg.pop("std", 1.0), T)
        if kind == "gaussian_mixture":
            return gaussian_mixture(cfg.pop("weights"), cfg.pop("means"), cfg.pop("stds", 1.0), T)
        if kind == "double_well":
            return double_well(int(cfg.pop("dim", 1)), cfg.pop("barrier", 1.0), cfg.pop("tilt", 0.0), T)
        if kind == "muller_brown":
            return muller_brown(T, **cfg)
        if kind == "many_body_pairwise":
            return many_body_pairwise(int(cfg.pop("n_particles", 4)), int(cfg.pop("spatial_dim", 3)),
                                      T, **cfg)
    except KeyError as exc:
        raise InputError(f"target config for {kind!r} is missing key {exc}") from None
    raise InputError(f"unknown target kind {kind!r}")


# -- energies (unscaled) ----------------------------------------------------


def _gaussian(p, X):
    z = (X - p["mean"]) / p["std"]
    return 0.5 * np.sum(z * z, axis=1), z / p["std"]


def _mixture(p, X):
    means, stds = p["means"], p["stds"]
    z = (X[:, None, :] - means[None]) / stds[None]          # (n, K, d)
    logits = np.log(p["weights"])[None] - 0.5 * np.sum(z * z, axis=2)
    lse = logsumexp(logits, axis=1)
    resp = np.exp(logits - lse[:, None])
    grad = np.einsum("nk,nkd->nd", resp, z / stds[None])
    return -lse, grad


def _double_well(p, X):
    a, b = p["barrier"], p["tilt"]
    x0 = X[:, 0]
    q = x0 * x0 - 1.0
    e = a * q * q + b * x0 + 0.5 * np.sum(X[:, 1:] ** 2, axis=1)
    g = X.copy()
    g[:, 0] = 4.0 * a * x0 * q + b
    return e, g


def _capped_exp(u, cap):
    # exp(u) below cap, first-order continuation above; returns (value, derivative)
    base = np.exp(np.minimum(u, cap))
    over = u > cap
    val = np.where(over, base * (1.0 + (u - cap)), base)
    return val, base


def _muller_brown(p, X):
    x = X[:, :1] - p["x0"][None]
    y = X[:, 1:2] - p["y0"][None]
    a, b, c = p["a"][None], p["b"][None], p["c"][None]
    u = a * x * x + b * x * y + c * y * y
    ev, dv = _capped_exp(u, p["exp_cap"])
    A = p["A"][None]
    e = np.sum(A * ev, axis=1)
    gx = np.sum(A * dv * (2 * a * x + b * y), axis=1)
    gy = np.sum(A * dv * (b * x + 2 * c * y), axis=1)
    return e, np.stack([gx, gy], axis=1)


def _many_body(p, X):
    n, s = p["n_particles"], p["spatial_dim"]
    P = X.reshape(len(X), n, s)
    iu, ju = np.triu_indices(n, 1)
    diff = P[:, iu, :] - P[:, ju, :]                         # (m, pairs, s)
    r = np.sqrt(np.sum(diff * diff, axis=2))
    u = r - p["d0"]
    e = np.sum(p["a"] * u + p["b"] * u ** 2 + p["c"] * u ** 4, axis=1)
    dedr = p["a"] + 2 * p["b"] * u + 4 * p["c"] * u ** 3
    f = (dedr / np.maximum(r, _MIN_PAIR_DISTANCE))[:, :, None] * diff
    G = np.zeros_like(P)
    for k, (i, j) in enumerate(zip(iu, ju)):
        G[:, i] += f[:, k]
        G[:, j] -= f[:, k]
    return e, G.reshape(len(X), -1)


_ENERGY = {
    "gaussian": _gaussian,
    "gaussian_mixture": _mixture,
    "double_well": _double_well,
    "muller_brown": _muller_brown,
    "many_body_pairwise": _many_body,
}


# -- reference quantities ---------------------------------------------------


@dataclass
class ReferenceOracle:
    log_partition: float | None
    mean: np.ndarray | None
    method: str
    grid: dict | None = None


def reference(target, method=None, resolution=None):
    """Ground-truth log partition function and mean of a target.

    Closed form for gaussians and (at unit temperature) gaussian mixtures;
    otherwise trapezoidal quadrature on a box grown until the reduced energy
    on its boundary exceeds the minimum by 40, with ``resolution`` points per
    axis (default 4001 in 1D, 801 in 2D).  A double well in d > 2 is handled
    as 1D quadrature times the analytic harmonic remainder.
    """
    kind = target.kind
    T = target.temperature_scale
    if method is None:
        if kind == "gaussian" or (kind == "gaussian_mixture" and T == 1.0):
            method = "analytic"
        else:
            method = "quadrature"
    if method == "analytic":
        if kind == "gaussian":
            s = target.params["std"] * math.sqrt(T)
            logz = float(np.sum(0.5 * math.log(2 * math.pi) + np.log(s)))
            return ReferenceOracle(logz, target.params["mean"].copy(), "analytic")
        if kind == "gaussian_mixture" and T == 1.0:
            p = target.params
            log_zk = np.log(p["weights"]) + np.sum(0.5 * math.log(2 * math.pi) + np.log(p["stds"]), axis=1)
            logz = float(logsumexp(log_zk))
            mean = np.exp(log_zk - logz) @ p["means"]
            return ReferenceOracle(logz, mean, "analytic")
        raise UnsupportedError(f"no closed-form reference for {kind} at temperature {T}")
    if method != "quadrature":
        raise InputError(f"unknown reference method {method!r}")
    if kind == "many_body_pairwise":
        raise UnsupportedError("translation-invariant targets have no finite partition function")
    if kind == "double_well" and target.dim > 2:
        sub = double_well(1, target.params["barrier"], target.params["tilt"], T)
        ref = reference(sub, "quadrature", resolution)
        rest = target.dim - 1
        logz = ref.log_partition + rest * (0.5 * math.log(2 * math.pi) + 0.5 * math.log(T))
        mean = np.zeros(target.dim)
        mean[0] = ref.mean[0]
        return ReferenceOracle(logz, mean, "quadrature", ref.grid)
    if target.dim > 2:
        raise UnsupportedError("quadrature reference is limited to dim <= 2")
    return _quadrature(target, resolution)


def _initial_box(target):
    kind, p, d = target.kind, target.params, target.dim
    if kind == "muller_brown":
        return np.array([-1.5, -0.5]), np.array([1.2, 2.0])
    if kind == "gaussian":
        s = p["std"] * math.sqrt(target.temperature_scale)
        return p["mean"] - 6 * s, p["mean"] + 6 * s
    if kind == "gaussian_mixture":
        s = p["stds"] * math.sqrt(target.temperature_scale)
        return (p["means"] - 6 * s).min(axis=0), (p["means"] + 6 * s).max(axis=0)
    return -2.0 * np.ones(d), 2.0 * np.ones(d)


def _boundary_points(lo, hi, n=64):
    if len(lo) == 1:
        return np.array([[lo[0]], [hi[0]]])
    t = np.linspace(0, 1, n)
    xs = lo[0] + t * (hi[0] - lo[0])
    ys = lo[1] + t * (hi[1] - lo[1])
    return np.concatenate([
        np.stack([xs, np.full(n, lo[1])], 1), np.stack([xs, np.full(n, hi[1])], 1),
        np.stack([np.full(n, lo[0]), ys], 1), np.stack([np.full(n, hi[0]), ys], 1),
    ])


def _grid(lo, hi, resolution):
    axes = [np.linspace(lo[i], hi[i], resolution) for i in range(len(lo))]
    mesh = np.meshgrid(*axes, indexing="ij")
    return axes, np.stack([m.ravel() for m in mesh], axis=1)


def _quadrature(target, resolution=None):
    d = target.dim
    resolution = resolution or (4001 if d == 1 else 801)
    lo, hi = _initial_box(target)
    lo, hi = lo.astype(float), hi.astype(float)
    for _ in range(60):
        axes, pts = _grid(lo, hi, 201 if d == 2 else 2001)
        emin = target.energy(pts).min()
        eb = target.energy(_boundary_points(lo, hi))
        if eb.min() - emin > 40.0:
            break
        center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        lo, hi = center - 1.5 * half, center + 1.5 * half
    axes, pts = _grid(lo, hi, resolution)
    e = target.energy(pts)
    shift = e.min()
    dens = np.exp(-(e - shift)).reshape([resolution] * d)
    moments = [dens] + [(dens * pts[:, i].reshape(dens.shape)) for i in range(d)]
    integrals = []
    for m in moments:
        for ax in reversed(axes):
            m = trapezoid(m, ax, axis=-1)
        integrals.append(float(m))
    z = integrals[0]
    mean = np.array(integrals[1:]) / z
    grid = {"lo": lo.tolist(), "hi": hi.tolist(), "resolution": resolution}
    return ReferenceOracle(math.log(z) - shift, mean, "quadrature", grid)


# -- exact samplers ---------------------------------------------------------


def sample_exact(target, seed, n):
    rng = np.random.default_rng(seed)
    d = target.dim
    if n == 0:
        return np.empty((0, d))
    T = target.temperature_scale
    if target.kind == "gaussian":
        p = target.params
        return p["mean"] + p["std"] * math.sqrt(T) * rng.standard_normal((n, d))
    if target.kind == "gaussian_mixture" and T == 1.0:
        p = target.params
        log_zk = np.log(p["weights"]) + np.sum(np.log(p["stds"]), axis=1)
        probs = np.exp(log_zk - logsumexp(log_zk))
        comp = rng.choice(len(probs), size=n, p=probs)
        return p["means"][comp] + p["stds"][comp] * rng.standard_normal((n, d))
    raise UnsupportedError(f"no exact sampler for {target.kind} at temperature {T}")


# -- packing for the compiled chain kernel ----------------------------------

KIND_CODES = {k: i for i, k in enumerate(KINDS)}


def pack(target):
    """Flatten a target into (kind code, float params, int params) for the kernels."""
    p, kind = target.params, target.kind
    if kind == "gaussian":
        dp = np.concatenate([p["mean"], 1.0 / p["std"] ** 2])
        ip = []
    elif kind == "gaussian_mixture":
        dp = np.concatenate([np.log(p["weights"]), p["means"].ravel(), (1.0 / p["stds"] ** 2).ravel()])
        ip = [len(p["weights"])]
    elif kind == "double_well":
        dp = np.array([p["barrier"], p["tilt"]])
        ip = []
    elif kind == "muller_brown":
        dp = np.concatenate([p[k] for k in ("A", "a", "b", "c", "x0", "y0")] + [[p["exp_cap"]]])
        ip = []
    else:
        dp = np.array([p["a"], p["b"], p["c"], p["d0"]])
        ip = [p["n_particles"], p["spatial_dim"]]
    return (KIND_CODES[kind], np.ascontiguousarray(dp, dtype=np.float64),
            np.asarray(ip, dtype=np.int64))
