"""Training loop: Adam on the flat parameter vector, validation-based early
stopping, and the batch-doubling restart policy for non-finite losses."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TrainConfig", "TrainHistory", "OptimState", "NonFiniteGradient",
    "TrainingDiverged", "adam_step", "train", "evaluate_split",
]


class NonFiniteGradient(FloatingPointError):
    """Adam was handed a NaN/inf gradient; callers treat it as a restart."""


class TrainingDiverged(RuntimeError):
    """Batch size at cap and the loss still came back non-finite twice in a
    row."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 200
    early_stop_patience: int = 30
    plateau_patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    seed: int = 0
    val_fraction_fallback: float = 0.2   # used only if the dataset has no val split


@dataclass
class OptimState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @staticmethod
    def zeros(n: int) -> "OptimState":
        return OptimState(np.zeros(n), np.zeros(n))


def adam_step(params: np.ndarray, grad: np.ndarray, state: OptimState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-7) -> None:
    """One in-place Adam update with bias correction."""
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("non-finite gradient")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class TrainHistory:
    """One row per epoch: (epoch, train_loss, val_ll, batch_size, event).
    val_ll is the de-standardized mean validation log-likelihood; event is
    '' for a plain epoch, 'restart' after a non-finite batch, 'double' on a
    plateau doubling, 'stop' on early stop."""

    rows: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_ll: float = -np.inf
    restarts: int = 0

    def add(self, epoch, train_loss, val_ll, batch_size, event=""):
        self.rows.append((epoch, train_loss, val_ll, batch_size, event))

    def batch_sizes(self):
        return [r[3] for r in self.rows]

    def events(self):
        return [r[4] for r in self.rows]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_ll", "batch_size", "event"])
            for epoch, tl, vl, bs, ev in self.rows:
                w.writerow([epoch, f"{tl:.17g}", f"{vl:.17g}", bs, ev])


def train(model, dataset, cfg: TrainConfig = TrainConfig(),
          batch_loss_hook=None) -> TrainHistory:
    """Fit the model on the dataset's train split, early-stopping on the val
    split, and load the best-validation parameters back into the model.

    batch_loss_hook(epoch, batch_index, loss, grad) -> (loss, grad) can
    perturb batch results (fault-injection tests use it).

    Non-finite batch loss or gradient: restore the end-of-last-finite-epoch
    snapshot, double the batch size (capped at the train-split size), reset
    optimizer moments, and move to the next epoch. Hitting the cap with
    non-finite results twice in a row raises TrainingDiverged. Ten epochs
    without validation improvement also doubles the batch size; thirty
    stops training.
    """
    xs_tr, ys_tr = dataset.standardized("train")
    try:
        xs_val, ys_val = dataset.standardized("val")
    except KeyError:
        n = ys_tr.shape[0]
        cut = max(1, int(n * (1.0 - cfg.val_fraction_fallback)))
        xs_val, ys_val = xs_tr[cut:], ys_tr[cut:]
        xs_tr, ys_tr = xs_tr[:cut], ys_tr[:cut]
    n_train = ys_tr.shape[0]
    # constant shift between standardized and original-unit log-likelihood
    jac = model.val_jacobian()

    rng = np.random.default_rng(cfg.seed)
    bs = min(cfg.batch_size, n_train)
    cap = n_train
    state = OptimState.zeros(model.store.size)
    hist = TrainHistory()
    snapshot = model.store.snapshot()
    best_params = model.store.snapshot()
    since_best = 0
    consec_at_cap = 0

    for epoch in range(cfg.max_epochs):
        if hasattr(model, "pre_epoch"):
            model.pre_epoch(xs_tr, ys_tr)
        perm = rng.permutation(n_train)
        batch_losses = []
        failed = False
        for b, lo in enumerate(range(0, n_train, bs)):
            idx = perm[lo:lo + bs]
            loss, grad = model.loss_grad(xs_tr[idx], ys_tr[idx])
            if batch_loss_hook is not None:
                loss, grad = batch_loss_hook(epoch, b, loss, grad)
            bad = not (np.isfinite(loss) and np.all(np.isfinite(grad)))
            if not bad:
                try:
                    adam_step(model.store.flat, grad, state, cfg.lr,
                              cfg.beta1, cfg.beta2, cfg.eps)
                    batch_losses.append(loss)
                except NonFiniteGradient:
                    bad = True
            if bad:
                if bs >= cap:
                    consec_at_cap += 1
                    if consec_at_cap >= 2:
                        raise TrainingDiverged(
                            f"non-finite loss at batch-size cap in epoch {epoch}")
                model.store.restore(snapshot)
                bs = min(2 * bs, cap)
                state = OptimState.zeros(model.store.size)
                hist.restarts += 1
                val_ll = model.val_loglik(xs_val, ys_val) - jac
                hist.add(epoch, float("nan"), val_ll, bs, "restart")
                failed = True
                break
        if failed:
            continue
        consec_at_cap = 0

        event = ""
        val_ll = model.val_loglik(xs_val, ys_val) - jac
        if val_ll > hist.best_val_ll:
            hist.best_val_ll = val_ll
            hist.best_epoch = epoch
            best_params = model.store.snapshot()
            since_best = 0
        else:
            since_best += 1
        snapshot = model.store.snapshot()

        if since_best >= cfg.early_stop_patience:
            event = "stop"
        elif since_best > 0 and since_best % cfg.plateau_patience == 0:
            bs = min(2 * bs, cap)
            state = OptimState.zeros(model.store.size)
            event = "double"
        hist.add(epoch, float(np.mean(batch_losses)) if batch_losses else float("nan"),
                 val_ll, bs, event)
        if event == "stop":
            break

    model.store.restore(best_params)
    return hist


def evaluate_split(model, dataset, split: str = "test"):
    """Mean per-row original-unit log-likelihood on a split, with its
    standard error (sample sd / sqrt(n); zero for a single row)."""
    X, Y = dataset.split(split)
    ll = model.logpdf(X, Y)
    n = ll.shape[0]
    stderr = float(ll.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(ll.mean()), stderr
