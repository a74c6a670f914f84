import math

import numpy as np
import pytest

from sbgen.errors import InputError
from sbgen.flow import FlowModel, Standardization
from sbgen.train import AdamW, Trainer, TrainConfig, fit, lr_schedule, nll_loss


def small_model(dim=2, seed=0, scale=0.2):
    m = FlowModel.create(dim, 2, (6,), seed=seed)
    rng = np.random.default_rng(seed + 1)
    for p in m.params:
        p[...] = rng.normal(scale=scale, size=p.shape)
    return m


def test_nll_identity_closed_form():
    m = FlowModel.create(3, 2, (4,))
    X = np.random.default_rng(0).normal(size=(64, 3))
    loss, _ = nll_loss(m, X)
    expect = 1.5 * math.log(2 * math.pi) + 0.5 * np.mean(np.sum(X * X, axis=1))
    assert loss == pytest.approx(expect, abs=1e-12)


def test_nll_grads_finite_differences():
    m = small_model()
    X = np.random.default_rng(1).normal(size=(16, 2))
    _, grads = nll_loss(m, X)
    h = 1e-5
    for p, g in zip(m.params, grads):
        flat, gf = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            fp = nll_loss(m, X)[0]
            flat[j] = old - h
            fm = nll_loss(m, X)[0]
            flat[j] = old
            fd = (fp - fm) / (2 * h)
            assert abs(gf[j] - fd) / max(1.0, abs(fd)) < 1e-5


def test_nll_duplicated_rows():
    m = small_model()
    X = np.random.default_rng(2).normal(size=(8, 2))
    a, ga = nll_loss(m, X)
    b, gb = nll_loss(m, np.vstack([X, X]))
    assert a == pytest.approx(b, rel=1e-14)
    for u, v in zip(ga, gb):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-15)


def test_nll_empty_batch():
    with pytest.raises(InputError):
        nll_loss(small_model(), np.zeros((0, 2)))


def test_lr_schedule_endpoints():
    total, peak = 1000, 1e-4
    warm = int(round(0.05 * total))
    assert abs(lr_schedule(warm, total, peak) - peak) < 1e-15
    assert abs(lr_schedule(total - 1, total, peak) - peak / 500) < 1e-9
    assert abs(lr_schedule(0, total, peak) - peak / 500) < 1e-9
    lrs = [lr_schedule(s, total, peak) for s in range(total)]
    assert np.all(np.diff(lrs[:warm + 1]) > 0) and np.all(np.diff(lrs[warm:]) <= 0)


def test_config_validation():
    with pytest.raises(InputError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(InputError):
        TrainConfig(ema_decay=1.0)
    with pytest.raises(InputError):
        TrainConfig(warmup_fraction=0.0)


def test_epochs_zero_returns_model_unchanged():
    m = small_model()
    before = [p.copy() for p in m.params]
    out = fit(m, np.zeros((4, 2)), cfg=TrainConfig(epochs=0))
    assert out is m
    assert all(np.array_equal(a, b) for a, b in zip(before, m.params))


def test_decoupled_weight_decay():
    p = [np.array([1.0, -2.0, 3.0])]
    opt = AdamW(p, weight_decay=0.5)
    lr = 1e-3
    for k in range(1, 6):
        opt.step([np.zeros(3)], lr)
        np.testing.assert_allclose(p[0], np.array([1.0, -2.0, 3.0]) * (1 - lr * 0.5) ** k, rtol=1e-15)


def test_ema_is_exact_exponential_average():
    m = small_model()
    cfg = TrainConfig(epochs=1, batch_size=10, learning_rate=1e-2, ema_decay=0.9, seed=3)
    tr = Trainer(m, cfg)
    traj = [[p.copy() for p in m.params]]
    step = tr.opt.step

    def recording(grads, lr):
        step(grads, lr)
        traj.append([p.copy() for p in m.params])

    tr.opt.step = recording
    X = np.random.default_rng(4).normal(size=(100, 2))
    tr.run(X, 1)
    assert len(traj) == 11
    d = 0.9
    for i, shadow in enumerate(m.ema_params):
        expect = d ** 10 * traj[0][i]
        for k in range(1, 11):
            expect = expect + (1 - d) * d ** (10 - k) * traj[k][i]
        assert np.max(np.abs(shadow - expect)) < 1e-12


def test_seeded_determinism():
    X = np.random.default_rng(5).normal(size=(300, 2))
    cfg = TrainConfig(epochs=3, batch_size=64, learning_rate=1e-3, seed=9)
    a = fit(small_model(seed=1), X, cfg=cfg)
    b = fit(small_model(seed=1), X, cfg=cfg)
    for u, v in zip(a.params, b.params):
        assert np.array_equal(u, v)


def test_divergence_restores_last_good():
    m = small_model()
    cfg = TrainConfig(epochs=3, batch_size=50, learning_rate=1e-3)
    tr = Trainer(m, cfg)
    X = np.random.default_rng(6).normal(size=(100, 2))
    tr.run(X, 1)
    good = [p.copy() for p in m.params]
    X[57, 0] = 1e308  # overflows inside the flow and poisons the loss
    tr.run(X * 1e5, 1)
    assert tr.diverged
    assert all(np.array_equal(a, b) for a, b in zip(good, m.params))


def test_checkpoint_best_on_validation_metric():
    m = small_model()
    cfg = TrainConfig(epochs=4, batch_size=50, learning_rate=1e-3)
    metrics = iter([3.0, 1.0, 2.0, 5.0])
    tr = Trainer(m, cfg)
    tr.run(np.random.default_rng(7).normal(size=(100, 2)), 4, lambda model: next(metrics))
    assert tr.best_metric == 1.0
    assert [r.val_metric for r in tr.history] == [3.0, 1.0, 2.0, 5.0]


@pytest.mark.parametrize("loc,scale", [(0.0, 1.0), (1.5, 0.5)])
def test_gaussian_fit_reaches_entropy(loc, scale):
    rng = np.random.default_rng(8)
    X = rng.normal(loc, scale, size=(2000, 1))
    cfg = TrainConfig(epochs=200, batch_size=256, learning_rate=1e-2, weight_decay=0.0, seed=1)
    stats = Standardization.fit(X)
    best = fit(FlowModel.create(1, 2, (4,), seed=2), stats.standardize(X), cfg=cfg)
    fresh = rng.normal(loc, scale, size=(200000, 1))
    # density in physical units picks up the standardization Jacobian
    nll = -best.log_prob(stats.standardize(fresh)).mean() + math.log(stats.scale)
    entropy = 0.5 * math.log(2 * math.pi * math.e * scale ** 2)
    assert abs(nll - entropy) < 0.05


def test_training_loss_decreases_on_gaussian():
    X = np.random.default_rng(9).normal(2.0, 0.5, size=(1000, 2))
    cfg = TrainConfig(epochs=30, batch_size=100, learning_rate=1e-2, seed=2)
    tr = Trainer(FlowModel.create(2, 4, (8,), seed=3), cfg)
    tr.run(X, 30)
    losses = [r.train_nll for r in tr.history]
    assert losses[-1] < losses[0] - 1.0
    assert np.all(np.diff(losses) < 0.05)
