"""Small reverse-mode engine for fully connected conditioner networks.

Only what the coupling flow needs: a batched MLP forward pass that records a
single-use tape, and the matching reverse sweep returning gradients with
respect to the parameters (summed over rows) and the input rows.
"""

import math

import numpy as np
from scipy.special import erf

from .errors import InputError, StateError

_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _tanh(z):
    a = np.tanh(z)
    return a, 1.0 - a * a


def _gelu(z):
    cdf = 0.5 * (1.0 + erf(z / _SQRT_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return z * cdf, cdf + z * pdf


ACTIVATIONS = {"tanh": _tanh, "gelu": _gelu}


class Tape:
    __slots__ = ("net", "inputs", "slopes", "single", "used")

    def __init__(self, net, inputs, slopes, single):
        self.net = net
        self.inputs = inputs      # input to each affine layer
        self.slopes = slopes      # activation derivative after each hidden layer
        self.single = single
        self.used = False


class Mlp:
    """Dense network with an activation on every hidden layer and a linear output.

    ``params`` is a flat list ``[W0, b0, W1, b1, ...]`` with ``W_i`` of shape
    ``(widths[i], widths[i + 1])``.
    """

    def __init__(self, widths, activation="tanh", rng=None, zero_last=False):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise InputError("an Mlp needs at least two positive layer widths")
        if activation not in ACTIVATIONS:
            raise InputError(f"unknown activation {activation!r}")
        self.widths = widths
        self.activation = activation
        rng = np.random.default_rng(rng)
        self.params = []
        for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
            if zero_last and i == len(widths) - 2:
                W = np.zeros((fi, fo))
            else:
                lim = math.sqrt(6.0 / (fi + fo))
                W = rng.uniform(-lim, lim, size=(fi, fo))
            self.params += [W, np.zeros(fo)]

    @property
    def n_params(self):
        return sum(p.size for p in self.params)

    @property
    def n_layers(self):
        return len(self.widths) - 1

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        a = x[None] if single else x
        if a.ndim != 2 or a.shape[1] != self.widths[0]:
            raise InputError(f"Mlp expects input width {self.widths[0]}, got shape {x.shape}")
        act = ACTIVATIONS[self.activation]
        inputs, slopes = [], []
        for i in range(self.n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            inputs.append(a)
            z = a @ W + b
            if i < self.n_layers - 1:
                a, s = act(z)
                slopes.append(s)
            else:
                a = z
        y = a[0] if single else a
        return y, Tape(self, inputs, slopes, single)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, tape, upstream, need_params=True):
        """Reverse sweep for the cotangent ``upstream`` of the output rows.

        Returns ``(grad_params, grad_input)``; ``grad_params`` is ``None`` when
        ``need_params`` is false (input gradients only, as in Langevin drifts).
        """
        if tape.net is not self:
            raise StateError("tape was recorded by a different network")
        if tape.used:
            raise StateError("tape already consumed by a reverse sweep")
        tape.used = True
        g = np.asarray(upstream, dtype=np.float64)
        if tape.single:
            g = g[None]
        if g.shape != (tape.inputs[0].shape[0], self.widths[-1]):
            raise InputError(f"upstream has shape {np.shape(upstream)}, expected output width {self.widths[-1]}")
        grads = [None] * len(self.params)
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                g = g * tape.slopes[i]
            W = self.params[2 * i]
            if need_params:
                grads[2 * i] = tape.inputs[i].T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ W.T
        return (grads if need_params else None), (g[0] if tape.single else g)


def mlp_forward(net, x):
    return net.forward(x)


def mlp_backward(tape, upstream):
    return tape.net.backward(tape, upstream)
