import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sbgen import targets
from sbgen.errors import InputError, UnsupportedError
from sbgen.metrics import (
    MetricsReport, energy_w1, extract_angles, histogram, histogram_csv, torus_w2,
    torus_w2_bruteforce, wrap_distance,
)

finite = st.floats(-1e3, 1e3)


def test_energy_w1_examples():
    x = np.array([3.0, -1.0, 2.5])
    assert energy_w1(x, x[::-1]) == 0.0
    assert energy_w1([0.0], [4.5]) == 4.5
    assert energy_w1([0.0, 1.0], [2.0, 5.0]) == 3.0
    with pytest.raises(InputError):
        energy_w1([], [1.0])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=finite), st.floats(-100, 100))
def test_energy_w1_translation(x, c):
    assert abs(energy_w1(x, x + c) - abs(c)) < 1e-12 * max(1.0, np.max(np.abs(x)), abs(c))


def test_energy_w1_unequal_sizes_and_weights():
    # {0, 1} vs {0, 0, 1, 1} are the same law
    assert energy_w1([0.0, 1.0], [0.0, 0.0, 1.0, 1.0]) == 0.0
    a = np.array([0.0, 1.0, 4.0])
    b = np.array([2.0, 3.0, 5.0])
    assert energy_w1(a, b, np.zeros(3)) == pytest.approx(energy_w1(a, b), abs=1e-12)
    # weights (1, 0): the law collapses to the first sample
    assert energy_w1([1.0, 7.0], [3.0], [0.0, -np.inf]) == pytest.approx(2.0, abs=1e-15)
    # a point mass 1/3 at 0 and 2/3 at 3 against a point at 2: 1/3*2 + 2/3*1
    assert energy_w1([0.0, 3.0], [2.0], np.log([1.0, 2.0])) == pytest.approx(4.0 / 3.0, abs=1e-12)


def test_energy_w1_weighted_matches_quantile_integral():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=40), rng.normal(1.0, 2.0, size=25)
    lwa = rng.normal(size=40)
    wa = np.exp(lwa) / np.exp(lwa).sum()
    # independent route: integrate |F_a^{-1}(u) - F_b^{-1}(u)| over u
    u = (np.arange(200000) + 0.5) / 200000
    oa = np.argsort(a)
    qa = a[oa][np.minimum(np.searchsorted(np.cumsum(wa[oa]), u), 39)]
    qb = np.sort(b)[np.minimum(np.searchsorted(np.arange(1, 26) / 25, u), 24)]
    assert energy_w1(a, b, lwa) == pytest.approx(np.mean(np.abs(qa - qb)), abs=1e-3)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 10, elements=finite), arrays(np.float64, 10, elements=finite))
def test_energy_w1_permutation_invariance(a, b):
    assert energy_w1(a, b) == energy_w1(a[::-1], np.roll(b, 3))


def test_wrap_distance_examples_and_properties():
    assert wrap_distance(math.pi - 0.01, -math.pi + 0.01) == pytest.approx(0.02, abs=1e-12)
    rng = np.random.default_rng(1)
    x, y, z = rng.uniform(-math.pi, math.pi, (3, 1000))
    dxy, dyx = wrap_distance(x, y), wrap_distance(y, x)
    assert np.all(dxy >= 0) and np.all(dxy <= math.pi)
    np.testing.assert_array_equal(dxy, dyx)
    assert np.all(wrap_distance(x, z) <= dxy + wrap_distance(y, z) + 1e-12)


def test_torus_w2_examples():
    A = np.random.default_rng(2).uniform(-math.pi, math.pi, (20, 4))
    assert torus_w2(A, A) == 0.0
    assert torus_w2([[math.pi - 0.01]], [[-math.pi + 0.01]]) == pytest.approx(0.02, abs=1e-12)


def test_torus_w2_matches_bruteforce():
    rng = np.random.default_rng(3)
    for _ in range(20):
        A = rng.uniform(-math.pi, math.pi, (3, 2))
        B = rng.uniform(-math.pi, math.pi, (3, 2))
        assert abs(torus_w2(A, B) - torus_w2_bruteforce(A, B)) < 1e-12


def test_torus_w2_symmetry_and_permutation():
    rng = np.random.default_rng(4)
    A = rng.uniform(-math.pi, math.pi, (30, 2))
    B = rng.uniform(-math.pi, math.pi, (30, 2))
    assert abs(torus_w2(A, B) - torus_w2(B, A)) < 1e-12
    assert abs(torus_w2(A, B) - torus_w2(A[rng.permutation(30)], B[rng.permutation(30)])) < 1e-12


def test_torus_w2_limits():
    A = np.zeros((2001, 1))
    with pytest.raises(UnsupportedError):
        torus_w2(A, A)
    with pytest.raises(InputError):
        torus_w2(np.zeros((3, 1)), np.zeros((3, 2)))
    # larger set is subsampled down to the smaller one
    B = np.zeros((50, 1))
    assert torus_w2(np.zeros((5, 1)), B) == 0.0


def test_histogram_examples():
    h = histogram([0.3], 1, (0.0, 2.0))
    assert h["density"][0] == 0.5
    h = histogram([-1.0, 0.5, 0.7, 3.0, 4.0], 4, (0.0, 2.0))
    assert h["underflow"] == pytest.approx(0.2) and h["overflow"] == pytest.approx(0.4)
    assert np.sum(h["density"]) * h["width"] == pytest.approx(1.0)
    with pytest.raises(InputError):
        histogram([1.0], 3, (1.0, 1.0))
    with pytest.raises(InputError):
        histogram([1.0], 0, (0.0, 1.0))


def test_histogram_uniform_density():
    n, bins = 10**5, 20
    v = np.random.default_rng(5).uniform(-1, 3, n)
    h = histogram(v, bins, (-1.0, 3.0))
    p = 1.0 / bins
    se = math.sqrt(p * (1 - p) / n) / h["width"]
    assert np.all(np.abs(h["density"] - 0.25) < 4 * se)


def test_weighted_histogram():
    rng = np.random.default_rng(6)
    v = rng.normal(size=1000)
    h0 = histogram(v, 10, (-3, 3))
    h1 = histogram(v, 10, (-3, 3), np.zeros(1000))
    np.testing.assert_allclose(h0["density"], h1["density"], atol=1e-12)
    K = 10**5
    v = rng.normal(size=K)
    lw = -0.5 * (v - 0.7) ** 2 + 0.5 * v ** 2
    hw = histogram(v, 12, (-3, 4), lw)
    w = np.exp(lw - lw.max())
    w /= w.sum()
    r = v[rng.choice(K, K, p=w)]
    hr = histogram(r, 12, (-3, 4))
    p = np.clip(hw["density"] * hw["width"], 1e-12, 1)
    se = np.sqrt(p * (1 - p) / K * (1 + K / np.exp(2 * np.log(w.sum()) - np.log(np.sum(w ** 2))))) / hw["width"]
    assert np.all(np.abs(hw["density"] - hr["density"]) < 4 * se)


def test_histogram_csv(tmp_path):
    h = histogram([0.1, 0.2, 0.9], 2, (0.0, 1.0))
    path = tmp_path / "h.csv"
    histogram_csv(h, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# n=3") and lines[1] == "center,density"
    table = np.loadtxt(path, delimiter=",", skiprows=2)
    np.testing.assert_array_equal(table[:, 1], h["density"])


def test_extract_angles():
    mb = targets.many_body_pairwise(4, 3)
    rng = np.random.default_rng(7)
    X = rng.normal(size=(10, 12))
    ang = extract_angles(mb, X)
    assert ang.shape == (10, 1) and np.all(np.abs(ang) <= math.pi)
    # rigid rotations leave dihedrals unchanged
    from sbgen.flow import augment_rotation

    np.testing.assert_allclose(extract_angles(mb, augment_rotation(X, 1)), ang, atol=1e-10)
    # a planar trans configuration has dihedral pi
    trans = np.array([[0, 1, 0], [0, 0, 0], [1, 0, 0], [1, -1, 0]], dtype=float).ravel()
    assert abs(abs(extract_angles(mb, trans)[0, 0]) - math.pi) < 1e-12
    pts = extract_angles(targets.muller_brown(), np.array([[0.0, 1.0], [-1.0, 0.0]]))
    np.testing.assert_allclose(pts[:, 0], [math.pi / 2, math.pi])
    assert extract_angles(targets.double_well(1), np.zeros((3, 1))) is None
    assert extract_angles(targets.many_body_pairwise(3, 2), rng.normal(size=(4, 6))).shape == (4, 1)


def test_metrics_report_fields():
    r = MetricsReport("bg", 10.0, 0.1, 0.5, None, -1.0, -0.9, 100, 3)
    assert set(r.to_dict()) == {"estimator", "ess", "ess_normalized", "energy_w1", "torus_w2",
                                "log_z_hat", "log_z_jarzynski", "n_samples", "seed"}
