import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sbgen import targets
from sbgen.errors import InputError, UnsupportedError
from sbgen.flow import random_rotations


def all_targets():
    return [
        targets.gaussian([0.5, -1.0], [1.0, 2.0], temperature_scale=1.5),
        targets.gaussian_mixture([0.3, 0.7], [[-2.0, 0.0], [1.0, 1.0]], [[0.5, 1.0], [1.0, 0.7]]),
        targets.double_well(1, barrier=2.0, tilt=0.3),
        targets.double_well(3, barrier=1.0, tilt=-0.5),
        targets.muller_brown(temperature_scale=10.0),
        targets.many_body_pairwise(4, 3),
        targets.many_body_pairwise(3, 2, a=0.2),
    ]


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_gaussian_examples():
    t = targets.gaussian([0.0, 0.0])
    e, g = t.energy_and_grad(np.zeros(2))
    assert e == 0.0 and np.all(g == 0)
    e, g = t.energy_and_grad(np.array([3.0, 4.0]))
    assert e == 12.5
    np.testing.assert_array_equal(g, [3.0, 4.0])


def test_double_well_minimum():
    t = targets.double_well(1, barrier=1.0)
    e, g = t.energy_and_grad(np.array([1.0]))
    assert e == 0.0 and g[0] == 0.0


def test_temperature_scale_divides():
    t1 = targets.double_well(1, 2.0, 0.5)
    t2 = targets.double_well(1, 2.0, 0.5, temperature_scale=4.0)
    x = np.array([0.3])
    assert t2.energy(x) == pytest.approx(t1.energy(x) / 4.0, rel=1e-15)


def test_muller_brown_against_direct_sum():
    p = targets.MULLER_BROWN_DEFAULTS
    x, y = -0.558, 1.442  # global minimum basin
    direct = sum(A * math.exp(a * (x - x0) ** 2 + b * (x - x0) * (y - y0) + c * (y - y0) ** 2)
                 for A, a, b, c, x0, y0 in zip(p["A"], p["a"], p["b"], p["c"], p["x0"], p["y0"]))
    t = targets.muller_brown()
    assert abs(t.energy(np.array([x, y])) - direct) < 1e-3
    assert direct == pytest.approx(-146.7, abs=0.1)


def test_muller_brown_finite_far_away():
    t = targets.muller_brown()
    e, g = t.energy_and_grad(np.array([[50.0, -40.0], [-1e3, 1e3]]))
    assert np.all(np.isfinite(e)) and np.all(np.isfinite(g))


def test_input_errors():
    t = targets.gaussian([0.0, 0.0])
    with pytest.raises(InputError):
        t.energy_and_grad(np.zeros(3))
    with pytest.raises(InputError):
        t.energy_and_grad(np.array([np.nan, 0.0]))
    with pytest.raises(InputError):
        targets.from_config({"kind": "banana"})


@pytest.mark.parametrize("target", all_targets(), ids=lambda t: f"{t.kind}-{t.dim}")
def test_gradient_matches_finite_differences(target):
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = rng.normal(scale=1.5, size=target.dim)
        if target.kind == "many_body_pairwise":
            x = x * 2.0
        if target.kind == "muller_brown":
            x = rng.uniform([-1.5, -0.5], [1.0, 2.0])
        e, g = target.energy_and_grad(x)
        fd = fd_grad(target.energy, x)
        assert np.all(np.abs(g - fd) / (1 + np.abs(g)) < 1e-5)


def test_batch_matches_single_rows():
    for t in all_targets():
        X = np.random.default_rng(1).normal(size=(5, t.dim))
        e, g = t.energy_and_grad(X)
        for i in range(5):
            ei, gi = t.energy_and_grad(X[i])
            assert ei == pytest.approx(e[i], rel=1e-14, abs=1e-14)
            np.testing.assert_allclose(gi, g[i], rtol=1e-14, atol=1e-14)


@pytest.mark.parametrize("n,s", [(4, 3), (5, 2)])
def test_many_body_rigid_invariance(n, s):
    t = targets.many_body_pairwise(n, s)
    rng = np.random.default_rng(2)
    x = rng.normal(scale=2.0, size=n * s)
    e0 = t.energy(x)
    R = random_rotations(20, s, rng)
    for k in range(20):
        shift = rng.normal(size=s) * 5
        y = (x.reshape(n, s) @ R[k].T + shift).ravel()
        assert abs(t.energy(y) - e0) < 1e-10


def test_reference_gaussian_closed_form():
    ref = targets.reference(targets.gaussian([0.0]))
    assert ref.method == "analytic"
    assert ref.log_partition == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-15)
    ref = targets.reference(targets.gaussian([1.0], 3.0))
    assert ref.log_partition == pytest.approx(0.5 * math.log(2 * math.pi) + math.log(3.0), abs=1e-14)


def test_reference_double_well_converged():
    t = targets.double_well(1, 3.0, 0.5)
    coarse = targets.reference(t)
    fine = targets.reference(t, resolution=16001)
    assert coarse.method == "quadrature" and coarse.grid["resolution"] == 4001
    assert abs(coarse.log_partition - fine.log_partition) < 1e-4


@pytest.mark.parametrize("mix", [
    targets.gaussian_mixture([0.9, 0.1], [-3.0, 3.0], [1.0, 0.5]),
    targets.gaussian_mixture([1.0, 2.0], [[0.0, 0.0], [2.0, -1.0]], [[1.0, 0.5], [0.7, 1.2]]),
])
def test_reference_mixture_matches_quadrature(mix):
    a = targets.reference(mix)
    q = targets.reference(mix, method="quadrature")
    assert a.method == "analytic" and q.method == "quadrature"
    assert abs(a.log_partition - q.log_partition) < 1e-4
    np.testing.assert_allclose(a.mean, q.mean, atol=1e-4)


def test_reference_high_dim_quadrature_unsupported():
    with pytest.raises(UnsupportedError):
        targets.reference(targets.gaussian_mixture([1.0], np.zeros((1, 3))), method="quadrature")
    with pytest.raises(UnsupportedError):
        targets.reference(targets.many_body_pairwise())


def test_sample_exact_empty_and_unsupported():
    assert targets.sample_exact(targets.gaussian([0.0, 0.0]), 0, 0).shape == (0, 2)
    with pytest.raises(UnsupportedError):
        targets.sample_exact(targets.double_well(), 0, 10)


def test_sample_exact_gaussian_moments():
    t = targets.gaussian([1.0, -2.0], [0.5, 2.0])
    X = targets.sample_exact(t, 3, 10**6)
    se = t.params["std"] / math.sqrt(len(X))
    assert np.all(np.abs(X.mean(axis=0) - t.params["mean"]) < 4 * se)


def test_sample_exact_symmetric_mixture():
    t = targets.gaussian_mixture([0.5, 0.5], [-3.0, 3.0])
    X = targets.sample_exact(t, 4, 10**5)
    se = X.std() / math.sqrt(len(X))
    assert abs(X.mean()) < 4 * se


def test_sample_exact_mixture_fraction():
    t = targets.gaussian_mixture([0.9, 0.1], [-3.0, 3.0])
    n = 10**5
    frac = np.mean(targets.sample_exact(t, 5, n)[:, 0] > 0)
    se = math.sqrt(0.1 * 0.9 / n)
    assert abs(frac - 0.1) < 4 * se


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 5), st.floats(-2, 2))
def test_double_well_energy_finite(x, a, b):
    t = targets.double_well(1, a, b)
    e, g = t.energy_and_grad(np.array([x]))
    assert math.isfinite(e) and np.all(np.isfinite(g))
