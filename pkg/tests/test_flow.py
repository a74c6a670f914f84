import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.special import gammaln

from sbgen import targets
from sbgen.errors import InputError, NumericalError, UnsupportedError
from sbgen.flow import (
    FlowModel, FlowProposal, Standardization, StandardizedTarget, augment_rotation, centroid,
    chi_log_density, com_adjusted_log_prob, flow_forward, flow_inverse, flow_sample, grad_log_prob,
    lift_com, log_prob, random_rotations,
)


def random_model(dim, n_layers=4, seed=0, scale=0.3, **kw):
    m = FlowModel.create(dim, n_layers, (8, 8), seed=seed, **kw)
    rng = np.random.default_rng(seed + 100)
    for p in m.params:
        p[...] = rng.normal(scale=scale, size=p.shape)
    return m


def fd_jacobian(f, x, h=1e-6):
    J = np.zeros((len(x), len(x)))
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (f(x + e) - f(x - e)) / (2 * h)
    return J


def test_identity_initialization():
    m = FlowModel.create(3, 4, (8,))
    x = np.array([0.3, -1.0, 2.0])
    y, ld = flow_forward(m, x)
    np.testing.assert_array_equal(y, x)
    assert ld == 0.0
    z, ld = flow_inverse(m, x)
    np.testing.assert_array_equal(z, x)
    assert ld == 0.0


def test_identity_log_prob_and_score():
    for d in (1, 2, 5):
        m = FlowModel.create(d, 2, (4,))
        assert log_prob(m, np.zeros(d)) == pytest.approx(-0.5 * d * math.log(2 * math.pi), abs=1e-15)
        e1 = np.eye(d)[0]
        assert log_prob(m, e1) == pytest.approx(-0.5 * d * math.log(2 * math.pi) - 0.5, abs=1e-15)
        x = np.linspace(-1, 1, d)
        np.testing.assert_allclose(grad_log_prob(m, x), -x, atol=1e-15)


def test_constant_scale_logdet():
    m = FlowModel.create(4, 1, (3,))
    layer = m.layers[0]
    s = 0.4
    # zero weights, bias set so that the clamped scale equals s on free coordinates
    layer.scale_net.params[-1][...] = layer.scale_clamp * np.arctanh(s / layer.scale_clamp)
    k = int(layer.free.sum())
    _, ld = m.forward(np.ones(4))
    assert ld == pytest.approx(k * s, abs=1e-12)


@pytest.mark.parametrize("dim", [2, 3, 6])
def test_logdet_matches_dense_jacobian(dim):
    m = random_model(dim, seed=dim)
    rng = np.random.default_rng(1)
    for _ in range(5):
        z = rng.normal(size=dim)
        _, ld = m.forward(z)
        J = fd_jacobian(lambda v: m.forward(v)[0], z)
        assert abs(ld - np.linalg.slogdet(J)[1]) < 1e-4


@pytest.mark.parametrize("dim", [1, 2, 5, 12])
def test_round_trip_and_logdet_cancel(dim):
    m = random_model(dim, n_layers=6, seed=7)
    X = np.random.default_rng(2).normal(size=(100, dim))
    Y, ldf = m.forward(X)
    Z, ldi = m.inverse(Y)
    assert np.max(np.abs(Z - X)) < 1e-8
    assert np.max(np.abs(ldf + ldi)) < 1e-10
    X2, _ = m.forward(m.inverse(X)[0])
    assert np.max(np.abs(X2 - X)) < 1e-8


@pytest.mark.parametrize("dim", [1, 3, 6])
def test_score_matches_finite_differences(dim):
    m = random_model(dim, seed=3)
    X = np.random.default_rng(4).normal(size=(100, dim))
    G = m.grad_log_prob(X)
    h = 1e-5
    for i in range(len(X)):
        for j in range(dim):
            e = np.zeros(dim)
            e[j] = h
            fd = (m.log_prob(X[i] + e) - m.log_prob(X[i] - e)) / (2 * h)
            assert abs(G[i, j] - fd) / max(1.0, abs(fd)) < 1e-5


def test_param_grads_match_finite_differences():
    m = random_model(3, n_layers=2, seed=5)
    X = np.random.default_rng(6).normal(size=(7, 3))
    w = np.random.default_rng(7).uniform(0.5, 2.0, 7)
    _, grads, _ = m.log_prob_and_grads(X, weights=w)
    h = 1e-5
    for p, g in zip(m.params, grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in range(0, flat.size, max(1, flat.size // 6)):
            old = flat[j]
            flat[j] = old + h
            fp = w @ m.log_prob(X)
            flat[j] = old - h
            fm = w @ m.log_prob(X)
            flat[j] = old
            fd = (fp - fm) / (2 * h)
            assert abs(gflat[j] - fd) / max(1.0, abs(fd)) < 1e-5


@pytest.mark.parametrize("dim", [1, 2])
def test_normalization_by_quadrature(dim):
    m = random_model(dim, seed=11, scale=0.2)
    if dim == 1:
        val, _ = quad(lambda t: math.exp(m.log_prob(np.array([t]))), -np.inf, np.inf, limit=200)
    else:
        g = np.linspace(-12, 12, 801)
        xx, yy = np.meshgrid(g, g, indexing="ij")
        lp = m.log_prob(np.column_stack([xx.ravel(), yy.ravel()]))
        val = np.trapezoid(np.trapezoid(np.exp(lp).reshape(xx.shape), g, axis=1), g)
    assert 0.999 <= val <= 1.001


def test_sample_consistency_and_empty():
    m = random_model(4, seed=12)
    x, lp = flow_sample(m, 0, 0)
    assert x.shape == (0, 4) and lp.shape == (0,)
    x, lp = flow_sample(m, 1, 200)
    assert np.max(np.abs(lp - m.log_prob(x))) < 1e-8
    y, lp2 = m.sample(1, 200)
    np.testing.assert_array_equal(x, y)


def test_identity_samples_standard_normal():
    m = FlowModel.create(2, 2, (4,))
    n = 20000
    x, _ = m.sample(3, n)
    C = np.cov(x.T)
    se = math.sqrt(2.0 / n)  # variance of a sample variance for unit Gaussians
    assert abs(C[0, 0] - 1) < 4 * se and abs(C[1, 1] - 1) < 4 * se
    assert abs(C[0, 1]) < 4 / math.sqrt(n)


def test_non_finite_names_layer():
    m = FlowModel.create(2, 3, (4,))
    m.layers[1].shift_net.params[-1][...] = np.inf
    with pytest.raises(NumericalError) as exc:
        m.forward(np.zeros(2))
    assert exc.value.index == 1


def test_mask_validation():
    with pytest.raises(InputError):
        FlowModel.create(3, 2, (4,), masks=[np.array([1.0, 1.0, 1.0]), np.array([0.0, 1.0, 0.0])])
    with pytest.raises(InputError):
        FlowModel.create(3, 2, (4,), masks=[np.array([1.0, 0.0, 1.0])] * 2)
    for m in FlowModel.create(7, 6, (4,)).layers:
        assert 0 < m.mask.sum() < 7


def test_copy_is_independent():
    m = random_model(3, seed=1)
    c = m.copy()
    c.params[0][...] += 1.0
    x = np.ones(3)
    assert m.log_prob(x) != c.log_prob(x)


# -- standardization ---------------------------------------------------------


def test_standardize_round_trip_and_unit_std():
    X = np.random.default_rng(0).normal(loc=3.0, scale=2.0, size=(5000, 6))
    for center, sd in (("mean", None), ("com", 3), ("none", None)):
        st_ = Standardization.fit(X, center=center, spatial_dim=sd)
        Y, off = st_.standardize(X, return_offsets=True)
        assert abs(np.std(Y) - 1.0) < 1e-6
        assert np.max(np.abs(st_.destandardize(Y, off) - X)) < 1e-12


def test_standardize_errors_and_scale():
    with pytest.raises(InputError):
        Standardization.fit(np.ones((10, 2)))
    with pytest.raises(InputError):
        Standardization(scale=0.0)
    n = 40000
    X = np.random.default_rng(1).normal(scale=2.0, size=(n, 1))
    s = Standardization.fit(X, center="none").scale
    assert abs(s - 2.0) < 4 * 2.0 / math.sqrt(2 * n)


def test_standardized_target_gradient():
    t = targets.double_well(2, 2.0, 0.5)
    stats = Standardization("mean", 1.7, np.array([0.3, -0.2]))
    mt = StandardizedTarget(t, stats)
    y = np.array([0.4, 0.9])
    _, g = mt.energy_and_grad(y)
    h = 1e-6
    fd = [(mt.energy(y + e) - mt.energy(y - e)) / (2 * h) for e in np.eye(2) * h]
    np.testing.assert_allclose(g, fd, rtol=1e-6)
    assert mt.log_jacobian == pytest.approx(2 * math.log(1.7))


# -- centre of mass ----------------------------------------------------------


def test_chi3_value_and_normalization():
    val = chi_log_density(np.array([1.0]), 1.0, 3)[0]
    expect = math.log(1.0) - 0.5 - math.log(math.sqrt(2.0) * math.exp(gammaln(1.5)))
    assert val == pytest.approx(expect, abs=1e-14)
    assert val == pytest.approx(-0.7258, abs=1e-4)
    for k, sigma in ((3, 1.0), (3, 0.1), (2, 0.5)):
        area, _ = quad(lambda r: math.exp(chi_log_density(np.array([r]), sigma, k)[0]), 0, 20 * sigma)
        assert abs(area - 1.0) < 1e-6


def meanfree(rng, n, particles=4, s=3):
    X = rng.normal(size=(n, particles * s))
    return X - np.tile(centroid(X, s), particles)


def test_lift_com_properties():
    rng = np.random.default_rng(0)
    X = meanfree(rng, 5)
    np.testing.assert_array_equal(lift_com(X, 0.0, 1), X)
    Y = lift_com(X, 0.3, 1)
    c = centroid(Y, 3)
    np.testing.assert_allclose(Y - np.tile(c, 4), X, atol=1e-14)
    with pytest.raises(InputError):
        lift_com(X + 1.0, 0.1, 1)


def test_lift_com_centroid_std():
    n = 10**5
    X = np.zeros((n, 6))
    sigma = 0.7
    c = centroid(lift_com(X, sigma, 5, spatial_dim=3), 3)
    se = sigma / math.sqrt(2 * n)
    assert np.all(np.abs(c.std(axis=0) - sigma) < 4 * se)


def com_model(seed=0):
    return random_model(12, seed=seed, scale=0.1, com_sigma=0.5, spatial_dim=3)


def test_com_adjustment_depends_on_norm_only():
    m = com_model()
    rng = np.random.default_rng(2)
    x = lift_com(meanfree(rng, 1)[0], 0.5, 3)
    c = centroid(x, 3)[0]
    base = com_adjusted_log_prob(m, x) - log_prob(m, x)
    for R in random_rotations(10, 3, rng):
        y = x - np.tile(c, 4) + np.tile(R @ c, 4)
        assert abs((com_adjusted_log_prob(m, y) - log_prob(m, y)) - base) < 1e-10


def test_com_adjustment_requires_sigma():
    m = random_model(12, seed=1)
    with pytest.raises(UnsupportedError):
        m.com_adjusted_log_prob(np.ones(12))


def test_com_proposal_gradient():
    m = com_model(3)
    prop = FlowProposal(m)
    assert prop.com_adjust
    X = lift_com(meanfree(np.random.default_rng(4), 3), 0.5, 5)
    lp, g = prop.log_prob_and_grad(X)
    np.testing.assert_allclose(lp, m.com_adjusted_log_prob(X), atol=1e-12)
    h = 1e-6
    for i in range(3):
        for j in range(12):
            e = np.zeros(12)
            e[j] = h
            fd = (prop.log_prob(X[i:i + 1] + e)[0] - prop.log_prob(X[i:i + 1] - e)[0]) / (2 * h)
            assert abs(g[i, j] - fd) / max(1.0, abs(fd)) < 1e-5


def test_augment_rotation():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 12))
    np.testing.assert_array_equal(augment_rotation(X, 0, identity=True), X)
    Y, R = augment_rotation(X, 1, return_rotations=True)
    eye = np.eye(3)
    for r in R:
        assert abs(np.linalg.det(r) - 1) < 1e-12
        assert np.max(np.abs(r.T @ r - eye)) < 1e-12
    P, Q = X.reshape(50, 4, 3), Y.reshape(50, 4, 3)
    dp = np.linalg.norm(P[:, :, None] - P[:, None], axis=-1)
    dq = np.linalg.norm(Q[:, :, None] - Q[:, None], axis=-1)
    assert np.max(np.abs(dp - dq)) < 1e-10
    t = targets.many_body_pairwise(4, 3)
    assert np.max(np.abs(t.energy(X) - t.energy(Y))) < 1e-10
    with pytest.raises(InputError):
        augment_rotation(np.ones((2, 5)), 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_round_trip_property(seed, dim):
    m = random_model(dim, n_layers=3, seed=seed % 1000)
    x = np.random.default_rng(seed).normal(size=(4, dim)) * 2
    y, ldf = m.forward(x)
    z, ldi = m.inverse(y)
    assert np.max(np.abs(z - x)) < 1e-8
    assert np.max(np.abs(ldf + ldi)) < 1e-10
