"""Training-loop tests: Adam math against closed forms, the restart and
plateau batch-doubling policies on exact event ladders, determinism, and
split evaluation."""

import csv

import numpy as np
import pytest

from monde.models import (CopulaConfig, CopulaMonde, DiagonalGaussian,
                          StandardStats, UmondeConfig, UnivariateMonde)
from monde.training import (NonFiniteGradient, OptimState, TrainConfig,
                            TrainingDiverged, adam_step, evaluate_split,
                            train)


class ToyData:
    """Minimal split container with the interface train() expects."""

    def __init__(self, seed=0, n_train=256, n_val=64, n_test=64):
        rng = np.random.default_rng(seed)
        n = n_train + n_val + n_test
        X = rng.uniform(-1.0, 1.0, size=(n, 1))
        Y = 0.6 * X + 0.3 * rng.standard_normal((n, 1))
        cuts = [0, n_train, n_train + n_val, n]
        names = ["train", "val", "test"]
        self._splits = {nm: (X[a:b], Y[a:b])
                        for nm, a, b in zip(names, cuts[:-1], cuts[1:])}

    def split(self, name):
        return self._splits[name]

    def standardized(self, name):
        X, Y = self._splits[name]
        return X.copy(), Y.copy()


def tiny_model(seed=0):
    return UnivariateMonde(1, StandardStats.identity(1, 1),
                           UmondeConfig(cov_widths=(4,), mono_widths=(4,)),
                           seed=seed)


# -- adam --------------------------------------------------------------------


def test_adam_first_step_closed_form():
    rng = np.random.default_rng(3)
    grad = rng.standard_normal(11)
    params = rng.standard_normal(11)
    before = params.copy()
    st = OptimState.zeros(11)
    adam_step(params, grad, st, lr=1e-3, eps=1e-7)
    # t=1 bias correction cancels the decay: delta = -lr * g / (|g| + eps)
    expect = before - 1e-3 * grad / (np.abs(grad) + 1e-7)
    assert np.allclose(params, expect, rtol=0, atol=1e-15)
    assert st.t == 1


def test_adam_first_step_magnitude_window():
    params = np.zeros(1)
    adam_step(params, np.ones(1), OptimState.zeros(1), lr=1e-3, eps=1e-7)
    assert 0.000999 <= abs(params[0]) <= 0.001


def test_adam_three_steps_match_reference_recurrence():
    rng = np.random.default_rng(7)
    params = rng.standard_normal(5)
    ref = params.copy()
    st = OptimState.zeros(5)
    m = np.zeros(5)
    v = np.zeros(5)
    for t in range(1, 4):
        grad = rng.standard_normal(5)
        adam_step(params, grad, st, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-7)
        m = 0.9 * m + 0.1 * grad
        v = 0.999 * v + 0.001 * grad * grad
        ref -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-7)
    assert np.allclose(params, ref, rtol=1e-12, atol=0)


def test_adam_rejects_nonfinite_gradient():
    params = np.zeros(3)
    bad = np.array([0.0, np.nan, 1.0])
    with pytest.raises(NonFiniteGradient):
        adam_step(params, bad, OptimState.zeros(3), lr=1e-3)
    assert np.all(params == 0.0)


# -- plateau / early-stop ladder (lr=0 makes every epoch identical) ----------


def test_zero_lr_is_bit_identical_and_walks_the_plateau_ladder():
    model = tiny_model(seed=1)
    init = model.store.snapshot()
    data = ToyData(seed=2)
    hist = train(model, data, TrainConfig(lr=0.0, batch_size=32, seed=4))
    assert np.array_equal(model.store.flat, init)
    # epoch 0 sets the best; equality never beats it, so the stale counter
    # doubles at 10 and 20 and stops at 30
    assert len(hist.rows) == 31
    assert hist.best_epoch == 0
    ev = hist.events()
    assert ev[10] == "double" and ev[20] == "double" and ev[30] == "stop"
    assert all(e == "" for i, e in enumerate(ev) if i not in (10, 20, 30))
    bs = hist.batch_sizes()
    assert bs[:10] == [32] * 10
    assert bs[10:20] == [64] * 10
    assert bs[20:30] == [128] * 10
    assert bs[30] == 128
    assert all(b2 >= b1 for b1, b2 in zip(bs, bs[1:]))
    vals = [r[2] for r in hist.rows]
    assert all(v == vals[0] for v in vals)


def test_two_runs_same_seed_are_identical():
    outs = []
    for _ in range(2):
        model = tiny_model(seed=9)
        hist = train(model, ToyData(seed=5),
                     TrainConfig(lr=1e-3, batch_size=64, max_epochs=8, seed=11))
        outs.append((model.store.snapshot(), hist.rows))
    assert np.array_equal(outs[0][0], outs[1][0])
    assert outs[0][1] == outs[1][1]


def test_training_improves_validation_loglik():
    model = tiny_model(seed=0)
    data = ToyData(seed=1)
    hist = train(model, data,
                 TrainConfig(lr=3e-3, batch_size=64, max_epochs=25, seed=2))
    assert hist.best_val_ll > hist.rows[0][2]


def test_best_epoch_params_are_restored():
    model = tiny_model(seed=3)
    data = ToyData(seed=4)
    hist = train(model, data,
                 TrainConfig(lr=3e-3, batch_size=64, max_epochs=12, seed=5))
    xs_val, ys_val = data.standardized("val")
    recomputed = model.val_loglik(xs_val, ys_val) - model.val_jacobian()
    assert recomputed == hist.best_val_ll


# -- non-finite handling -----------------------------------------------------


def test_injected_nan_restores_snapshot_and_doubles_batch():
    model = tiny_model(seed=6)
    data = ToyData(seed=7)

    def hook(epoch, b, loss, grad):
        if epoch == 2 and b == 0:
            return float("nan"), grad
        return loss, grad

    hist = train(model, data,
                 TrainConfig(lr=1e-3, batch_size=32, max_epochs=6, seed=8),
                 batch_loss_hook=hook)
    assert hist.restarts == 1
    assert len(hist.rows) == 6
    epoch2 = hist.rows[2]
    assert epoch2[4] == "restart"
    assert np.isnan(epoch2[1])
    bs = hist.batch_sizes()
    assert bs[:2] == [32, 32]
    assert bs[2:] == [64] * 4
    assert all(b2 >= b1 for b1, b2 in zip(bs, bs[1:]))


def test_nan_on_first_epoch_restores_initial_params():
    model = tiny_model(seed=10)
    init = model.store.snapshot()
    hist = train(model, ToyData(seed=11),
                 TrainConfig(lr=1e-3, batch_size=64, max_epochs=1, seed=12),
                 batch_loss_hook=lambda e, b, l, g: (float("nan"), g))
    assert len(hist.rows) == 1
    assert hist.rows[0][4] == "restart"
    assert np.array_equal(model.store.flat, init)


def test_nan_gradient_also_triggers_restart():
    model = tiny_model(seed=13)

    def hook(epoch, b, loss, grad):
        if epoch == 1 and b == 0:
            g = grad.copy()
            g[0] = np.inf
            return loss, g
        return loss, grad

    hist = train(model, ToyData(seed=14),
                 TrainConfig(lr=1e-3, batch_size=64, max_epochs=3, seed=15),
                 batch_loss_hook=hook)
    assert hist.events()[1] == "restart"
    assert hist.restarts == 1


def test_persistent_nan_climbs_to_cap_then_diverges():
    model = tiny_model(seed=16)
    data = ToyData(seed=17, n_train=64)
    seen = []

    def hook(epoch, b, loss, grad):
        seen.append(epoch)
        return float("nan"), grad

    with pytest.raises(TrainingDiverged):
        train(model, data,
              TrainConfig(lr=1e-3, batch_size=16, max_epochs=50, seed=18),
              batch_loss_hook=hook)
    # 16 -> 32 -> 64(cap), one tolerated failure at cap, second raises
    assert seen == [0, 1, 2, 3]


def test_diverges_immediately_when_starting_at_cap():
    model = tiny_model(seed=19)
    data = ToyData(seed=20, n_train=64)
    with pytest.raises(TrainingDiverged):
        train(model, data,
              TrainConfig(lr=1e-3, batch_size=64, max_epochs=50, seed=21),
              batch_loss_hook=lambda e, b, l, g: (float("nan"), g))


# -- hooks and history -------------------------------------------------------


def test_pre_epoch_hook_is_called_each_epoch():
    calls = []

    class Hooked(UnivariateMonde):
        def pre_epoch(self, xs, ys):
            calls.append((xs.shape, ys.shape))

    model = Hooked(1, StandardStats.identity(1, 1),
                   UmondeConfig(cov_widths=(4,), mono_widths=(4,)), seed=0)
    train(model, ToyData(seed=1),
          TrainConfig(lr=1e-3, batch_size=64, max_epochs=3, seed=2))
    assert calls == [((256, 1), (256, 1))] * 3


def test_constant_correlation_refits_during_training():
    rng = np.random.default_rng(0)
    n = 240
    X = rng.uniform(-1, 1, size=(n, 1))
    z = rng.multivariate_normal([0, 0], [[1.0, 0.7], [0.7, 1.0]], size=n)
    Y = z + 0.3 * X

    class Wrap(ToyData):
        def __init__(self):
            cut = 180
            self._splits = {"train": (X[:cut], Y[:cut]),
                            "val": (X[cut:], Y[cut:]),
                            "test": (X[cut:], Y[cut:])}

    model = CopulaMonde(1, 2, StandardStats.identity(1, 2),
                        CopulaConfig(x_widths=(3,), xpart_widths=(3,),
                                     y_widths=(3,), corr="const"), seed=3)
    assert np.array_equal(model.rho_, np.eye(2))
    train(model, Wrap(),
          TrainConfig(lr=1e-3, batch_size=64, max_epochs=2, seed=4))
    off = model.rho_[0, 1]
    assert off != 0.0 and abs(off) < 1.0
    assert np.allclose(np.diag(model.rho_), 1.0)


def test_history_csv_round_trip(tmp_path):
    model = tiny_model(seed=22)

    def hook(epoch, b, loss, grad):
        return (float("nan"), grad) if epoch == 1 and b == 0 else (loss, grad)

    hist = train(model, ToyData(seed=23),
                 TrainConfig(lr=1e-3, batch_size=32, max_epochs=4, seed=24),
                 batch_loss_hook=hook)
    path = tmp_path / "history.csv"
    hist.to_csv(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "train_loss", "val_ll", "batch_size", "event"]
    assert len(rows) == 1 + len(hist.rows)
    for raw, (epoch, tl, vl, bs, ev) in zip(rows[1:], hist.rows):
        assert int(raw[0]) == epoch and int(raw[3]) == bs and raw[4] == ev
        back = float(raw[1])
        assert back == tl or (np.isnan(back) and np.isnan(tl))
        assert float(raw[2]) == vl


# -- evaluation --------------------------------------------------------------


def test_evaluate_split_matches_direct_computation():
    data = ToyData(seed=30, n_test=50)
    X, Y = data.split("test")
    model = DiagonalGaussian(np.array([0.1]), np.array([0.8]))
    mean, stderr = evaluate_split(model, data, "test")
    ll = -0.5 * np.log(2 * np.pi) - np.log(0.8) \
        - 0.5 * ((Y[:, 0] - 0.1) / 0.8) ** 2
    assert np.isclose(mean, ll.mean(), rtol=1e-12)
    assert np.isclose(stderr, ll.std(ddof=1) / np.sqrt(50), rtol=1e-12)


def test_evaluate_split_single_row_has_zero_stderr():
    data = ToyData(seed=31, n_test=1)
    model = DiagonalGaussian(np.zeros(1), np.ones(1))
    mean, stderr = evaluate_split(model, data, "test")
    assert np.isfinite(mean)
    assert stderr == 0.0
