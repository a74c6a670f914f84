"""Affine coupling flow with exact log-likelihoods and input scores.

Directions: ``forward`` maps prior samples to data space, ``inverse`` maps data
to the prior.  Each layer keeps the coordinates where ``mask == 1`` fixed and
applies ``y = x * exp(s(m * x)) + t(m * x)`` to the rest, with the scale
squashed as ``s = clamp * tanh(raw / clamp)``.

All model quantities live in standardized coordinates; ``Standardization``
and ``StandardizedTarget`` move between those and physical units.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import gammaln

from .errors import InputError, NumericalError, UnsupportedError
from .gradcore import Mlp

LOG_2PI = math.log(2.0 * math.pi)
_MIN_CENTROID_NORM = 1e-12


class CouplingLayer:
    def __init__(self, mask, hidden, activation="tanh", scale_clamp=5.0, rng=None):
        self.mask = np.asarray(mask, dtype=np.float64)
        self.free = 1.0 - self.mask
        d = self.mask.size
        widths = [d, *hidden, d]
        self.scale_net = Mlp(widths, activation, rng, zero_last=True)
        self.shift_net = Mlp(widths, activation, rng, zero_last=True)
        self.scale_clamp = float(scale_clamp)

    @property
    def params(self):
        return self.scale_net.params + self.shift_net.params

    def _conditioner(self, x):
        c = x * self.mask
        raw, tape_s = self.scale_net.forward(c)
        t_raw, tape_t = self.shift_net.forward(c)
        th = np.tanh(raw / self.scale_clamp)
        s = self.scale_clamp * th * self.free
        t = t_raw * self.free
        return s, t, th, tape_s, tape_t

    def forward(self, x):
        s, t, *_ = self._conditioner(x)
        return x * np.exp(s) + t, s.sum(axis=1)

    def inverse(self, y, record=False):
        s, t, th, tape_s, tape_t = self._conditioner(y)
        e = np.exp(-s)
        x = (y - t) * e
        cache = (y, t, th, e, tape_s, tape_t) if record else None
        return x, -s.sum(axis=1), cache

    def backward_inverse(self, cache, gx, gld, need_params):
        """Pull back cotangents of the inverse output and its log-det."""
        y, t, th, e, tape_s, tape_t = cache
        gy = gx * e
        gs = (-(gx * (y - t) * e) - gld[:, None]) * self.free
        gt = -gy * self.free
        graw = gs * (1.0 - th * th)
        ps, cs = self.scale_net.backward(tape_s, graw, need_params)
        pt, ct = self.shift_net.backward(tape_t, gt, need_params)
        gy = gy + (cs + ct) * self.mask
        return (ps + pt if need_params else None), gy


def default_masks(dim, n_layers):
    """Alternating binary masks; every consecutive pair differs.

    In one dimension no coordinate can condition another, so every mask is
    all-zero and each layer is an unconditioned affine map.
    """
    if dim == 1:
        return [np.zeros(1) for _ in range(n_layers)]
    parity = (np.arange(dim) % 2 == 0).astype(float)
    patterns = [parity, 1.0 - parity]
    if dim >= 4:
        half = (np.arange(dim) < dim // 2).astype(float)
        patterns += [half, 1.0 - half]
    return [patterns[i % len(patterns)].copy() for i in range(n_layers)]


@dataclass
class Standardization:
    """Affine map from physical to model coordinates.

    ``center`` is ``"com"`` (subtract each row's particle centroid),
    ``"mean"`` (subtract a fitted mean vector) or ``"none"``.
    """

    center: str = "none"
    scale: float = 1.0
    mean: np.ndarray | None = None
    spatial_dim: int | None = None

    def __post_init__(self):
        if not self.scale > 0:
            raise InputError("standardization scale must be positive")
        if self.center == "com" and not self.spatial_dim:
            raise InputError("centroid standardization needs a spatial_dim")

    @classmethod
    def fit(cls, data, center="mean", spatial_dim=None):
        data = np.asarray(data, dtype=np.float64)
        stats = cls(center, 1.0, None, spatial_dim)
        if center == "mean":
            stats.mean = data.mean(axis=0)
        centered = stats.shift_out(data)
        scale = float(np.std(centered))
        if not scale > 0:
            raise InputError("cannot standardize data with zero spread")
        stats.scale = scale
        return stats

    def offsets(self, data):
        if self.center == "com":
            return _broadcast_centroid(data, self.spatial_dim)
        if self.center == "mean":
            return np.broadcast_to(self.mean, data.shape)
        return np.zeros_like(data)

    def shift_out(self, data):
        return data - self.offsets(data)

    def standardize(self, data, return_offsets=False):
        data = np.asarray(data, dtype=np.float64)
        off = self.offsets(data)
        out = (data - off) / self.scale
        return (out, off) if return_offsets else out

    def destandardize(self, data, offsets=None):
        data = np.asarray(data, dtype=np.float64)
        if offsets is None:
            offsets = self.mean if self.center == "mean" else 0.0
        return data * self.scale + offsets

    def to_dict(self):
        return {"center": self.center, "scale": self.scale, "spatial_dim": self.spatial_dim,
                "mean": None if self.mean is None else np.asarray(self.mean).tolist()}

    @classmethod
    def from_dict(cls, d):
        mean = None if d.get("mean") is None else np.asarray(d["mean"], dtype=np.float64)
        return cls(d["center"], float(d["scale"]), mean, d.get("spatial_dim"))


def standardize(batch, stats):
    return stats.standardize(batch)


def destandardize(batch, stats, offsets=None):
    return stats.destandardize(batch, offsets)


class StandardizedTarget:
    """A physical target seen through a ``Standardization``.

    In model coordinates ``y`` the reduced energy is ``E(scale * y + offset)``
    and its gradient picks up a factor ``scale``.  Partition functions differ
    by ``log_jacobian = dim * log(scale)``.
    """

    def __init__(self, target, stats):
        self.target = target
        self.stats = stats
        self.dim = target.dim
        self.log_jacobian = target.dim * math.log(stats.scale)

    def energy_and_grad(self, y):
        x = self.stats.destandardize(y)
        e, g = self.target.energy_and_grad(x)
        return e, g * self.stats.scale

    def energy(self, y):
        return self.energy_and_grad(y)[0]


# -- particle helpers -------------------------------------------------------


def centroid(x, spatial_dim):
    x = np.atleast_2d(x)
    if x.shape[1] % spatial_dim:
        raise InputError(f"row length {x.shape[1]} is not divisible by spatial_dim {spatial_dim}")
    return x.reshape(len(x), -1, spatial_dim).mean(axis=1)


def _broadcast_centroid(x, spatial_dim):
    c = centroid(x, spatial_dim)
    return np.tile(c, x.shape[1] // spatial_dim)


def chi_log_density(r, sigma, k):
    """Log-density of |c| when c ~ N(0, sigma^2 I_k)."""
    r = np.maximum(r, _MIN_CENTROID_NORM)
    const = (0.5 * k - 1.0) * math.log(2.0) + gammaln(0.5 * k)
    return (k - 1) * np.log(r) - k * math.log(sigma) - r * r / (2.0 * sigma * sigma) - const


def lift_com(x_meanfree, sigma, seed, spatial_dim=3):
    """Add one Gaussian centroid offset per row, broadcast to every particle."""
    x = np.asarray(x_meanfree, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if sigma < 0:
        raise InputError("sigma must be non-negative")
    if np.max(np.abs(centroid(X, spatial_dim)), initial=0.0) > 1e-10:
        raise InputError("lift_com expects mean-free configurations")
    rng = np.random.default_rng(seed)
    c = sigma * rng.standard_normal((len(X), spatial_dim))
    out = X + np.tile(c, X.shape[1] // spatial_dim)
    return out[0] if single else out


def random_rotations(n, spatial_dim, rng):
    """Haar-distributed rotation matrices, shape (n, s, s)."""
    G = rng.standard_normal((n, spatial_dim, spatial_dim))
    Q, R = np.linalg.qr(G)
    Q = Q * np.sign(np.diagonal(R, axis1=1, axis2=2))[:, None, :]
    flip = np.linalg.det(Q) < 0
    Q[flip, :, 0] *= -1.0
    return Q


def augment_rotation(batch, seed, spatial_dim=3, identity=False, return_rotations=False):
    """Rotate every row about the origin by its own uniformly drawn rotation."""
    X = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if X.shape[1] % spatial_dim:
        raise InputError(f"row length {X.shape[1]} is not divisible by spatial_dim {spatial_dim}")
    n = len(X)
    if identity:
        R = np.broadcast_to(np.eye(spatial_dim), (n, spatial_dim, spatial_dim)).copy()
    else:
        R = random_rotations(n, spatial_dim, np.random.default_rng(seed))
    P = X.reshape(n, -1, spatial_dim)
    out = np.einsum("nps,nts->npt", P, R).reshape(X.shape)
    return (out, R) if return_rotations else out


# -- the flow ---------------------------------------------------------------


class FlowModel:
    def __init__(self, dim, layers, standardization=None, com_sigma=0.0, spatial_dim=None):
        self.dim = int(dim)
        self.layers = list(layers)
        self.standardization = standardization or Standardization()
        self.com_sigma = float(com_sigma)
        self.spatial_dim = spatial_dim
        self.ema_params = None
        self._check_masks()

    @classmethod
    def create(cls, dim, n_layers=6, hidden=(32, 32), activation="tanh", scale_clamp=5.0,
               seed=0, standardization=None, com_sigma=0.0, spatial_dim=None, masks=None):
        rng = np.random.default_rng(seed)
        masks = default_masks(dim, n_layers) if masks is None else masks
        layers = [CouplingLayer(m, hidden, activation, scale_clamp, rng) for m in masks]
        return cls(dim, layers, standardization, com_sigma, spatial_dim)

    def _check_masks(self):
        for i, layer in enumerate(self.layers):
            m = layer.mask
            if m.shape != (self.dim,):
                raise InputError(f"mask {i} has wrong length")
            if self.dim > 1:
                if m.min() != 0 or m.max() != 1:
                    raise InputError(f"mask {i} must contain both a 0 and a 1")
                if i and np.array_equal(m, self.layers[i - 1].mask):
                    raise InputError(f"masks {i - 1} and {i} are identical")
        if self.com_sigma > 0 and not self.spatial_dim:
            raise InputError("com_sigma > 0 requires a particle layout (spatial_dim)")

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    @property
    def n_params(self):
        return sum(p.size for p in self.params)

    def set_params(self, values):
        for p, v in zip(self.params, values, strict=True):
            p[...] = v

    def copy(self):
        clone = FlowModel.__new__(FlowModel)
        clone.__dict__.update(self.__dict__)
        clone.layers = []
        for layer in self.layers:
            new = CouplingLayer.__new__(CouplingLayer)
            new.__dict__.update(layer.__dict__)
            for name in ("scale_net", "shift_net"):
                net = getattr(layer, name)
                twin = Mlp.__new__(Mlp)
                twin.__dict__.update(net.__dict__)
                twin.params = [p.copy() for p in net.params]
                setattr(new, name, twin)
            clone.layers.append(new)
        if self.ema_params is not None:
            clone.ema_params = [p.copy() for p in self.ema_params]
        return clone

    def _rows(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.dim:
            raise InputError(f"expected {self.dim} coordinates, got shape {x.shape}")
        return X, single

    @staticmethod
    def _check(X, i, check):
        if check and not np.all(np.isfinite(X)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(X), axis=1))[0])
            raise NumericalError(f"non-finite value after coupling layer {i} (row {bad})", index=i)

    def forward(self, z, check=True):
        X, single = self._rows(z)
        ld = np.zeros(len(X))
        for i, layer in enumerate(self.layers):
            X, l = layer.forward(X)
            ld += l
            self._check(X, i, check)
        return (X[0], float(ld[0])) if single else (X, ld)

    def inverse(self, x, check=True):
        X, single = self._rows(x)
        ld = np.zeros(len(X))
        for i in reversed(range(len(self.layers))):
            X, l, _ = self.layers[i].inverse(X)
            ld += l
            self._check(X, i, check)
        return (X[0], float(ld[0])) if single else (X, ld)

    @staticmethod
    def prior_log_prob(z):
        return -0.5 * np.sum(z * z, axis=1) - 0.5 * z.shape[1] * LOG_2PI

    def log_prob(self, x, check=True):
        X, single = self._rows(x)
        z, ld = self.inverse(X, check)
        lp = self.prior_log_prob(z) + ld
        return float(lp[0]) if single else lp

    def log_prob_and_grads(self, x, weights=None, need_params=True, need_input=True, check=True):
        """One inverse pass plus one reverse sweep.

        Returns ``(logp, param_grads, input_grads)`` where ``param_grads`` is the
        gradient of ``sum_i weights[i] * logp[i]`` (weights default to 1) and
        ``input_grads[i]`` is the score at row ``i`` scaled by ``weights[i]``.
        """
        X, _ = self._rows(x)
        caches = [None] * len(self.layers)
        ld = np.zeros(len(X))
        Z = X
        for i in reversed(range(len(self.layers))):
            Z, l, caches[i] = self.layers[i].inverse(Z, record=True)
            ld += l
            self._check(Z, i, check)
        logp = self.prior_log_prob(Z) + ld
        w = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=np.float64)
        g = -Z * w[:, None]
        grads = []
        for i, layer in enumerate(self.layers):
            pg, g = layer.backward_inverse(caches[i], g, w, need_params)
            if need_params:
                grads.extend(pg)
        return logp, (grads if need_params else None), (g if need_input else None)

    def grad_log_prob(self, x, check=True):
        X, single = self._rows(x)
        _, _, g = self.log_prob_and_grads(X, need_params=False, check=check)
        return g[0] if single else g

    def sample(self, seed, n):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        z = rng.standard_normal((n, self.dim))
        if n == 0:
            return z, np.zeros(0)
        x, ld = self.forward(z)
        return x, self.prior_log_prob(z) - ld

    # -- centre-of-mass adjustment --

    def com_log_density(self, x):
        """chi_k log-density of the centroid norm, k = spatial_dim."""
        X, single = self._rows(x)
        if not self.com_sigma > 0:
            raise UnsupportedError("com adjustment needs com_sigma > 0; use log_prob")
        r = np.linalg.norm(centroid(X, self.spatial_dim), axis=1)
        out = chi_log_density(r, self.com_sigma, self.spatial_dim)
        return float(out[0]) if single else out

    def com_log_density_grad(self, X):
        k, sigma = self.spatial_dim, self.com_sigma
        c = centroid(X, k)
        r = np.maximum(np.linalg.norm(c, axis=1), _MIN_CENTROID_NORM)
        coef = ((k - 1) / r - r / sigma ** 2) / (r * (X.shape[1] // k))
        return np.tile(coef[:, None] * c, X.shape[1] // k)

    def com_adjusted_log_prob(self, x):
        X, single = self._rows(x)
        out = self.log_prob(X) - self.com_log_density(X)
        return float(out[0]) if single else out


def flow_forward(model, x0):
    return model.forward(x0)


def flow_inverse(model, x1):
    return model.inverse(x1)


def log_prob(model, x):
    return model.log_prob(x)


def grad_log_prob(model, x):
    return model.grad_log_prob(x)


def flow_sample(model, seed, n):
    return model.sample(seed, n)


def com_adjusted_log_prob(model, x):
    return model.com_adjusted_log_prob(x)


# -- proposals seen by the transport code -----------------------------------


class FlowProposal:
    """Proposal energy E_0 = -log p for annealing, built on a flow.

    With ``com_adjust`` (default: whenever ``com_sigma > 0``) the centroid-norm
    chi log-density is removed from the log-likelihood.
    """

    def __init__(self, model, com_adjust=None):
        self.model = model
        self.dim = model.dim
        self.com_adjust = model.com_sigma > 0 if com_adjust is None else bool(com_adjust)

    def log_prob(self, X):
        lp = self.model.log_prob(X, check=False)
        if self.com_adjust:
            lp = lp - self.model.com_log_density(X)
        return lp

    def log_prob_and_grad(self, X):
        lp, _, g = self.model.log_prob_and_grads(X, need_params=False, check=False)
        if self.com_adjust:
            lp = lp - self.model.com_log_density(X)
            g = g - self.model.com_log_density_grad(X)
        return lp, g

    def sample(self, rng, n):
        x, lp = self.model.sample(rng, n)
        if self.com_adjust and n:
            lp = lp - self.model.com_log_density(x)
        return x, lp


class AnalyticProposal:
    """Proposal defined by a target with an exact sampler (gaussian kinds).

    ``log_prob`` is ``-E(x)`` (optionally minus log Z), so annealing from it
    estimates partition-function ratios against that target's own Z.
    """

    def __init__(self, target, normalized=False):
        from .targets import reference

        self.target = target
        self.dim = target.dim
        self.log_z = reference(target).log_partition if normalized else 0.0

    def log_prob(self, X):
        return -self.target.energy(X) - self.log_z

    def log_prob_and_grad(self, X):
        e, g = self.target.energy_and_grad(X)
        return -e - self.log_z, -g

    def sample(self, rng, n):
        from .targets import sample_exact

        seed = rng.integers(2 ** 63) if isinstance(rng, np.random.Generator) else rng
        x = sample_exact(self.target, seed, n)
        return x, self.log_prob(x) if n else np.zeros(0)
