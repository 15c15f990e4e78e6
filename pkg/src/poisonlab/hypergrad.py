"""Gradients of a validation objective through unrolled training.

Training is replaced by a fixed number T of full-batch gradient steps; the
attacker objective is the validation loss of the final iterate. Reversing
the step sequence with Hessian-vector and mixed second-derivative products
yields the objective's gradient with respect to one poison point's features
at the cost of O(T) gradient evaluations, independent of the feature count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import Dataset
from .nn import MlpParams, TrainTrace, grad_params, hvp, loss, mixed_grad


class NonFiniteHypergradientError(RuntimeError):
    """An intermediate of the reverse pass overflowed or produced NaN."""


@dataclass
class UnrollSpec:
    """Fixed-horizon inner training: T steps of size eta from given weights.

    `seed` records which init produced `initial_params`; the unroll itself
    is deterministic and consumes no randomness.
    """

    unroll_epochs: int
    step_size: float
    initial_params: MlpParams
    seed: int = 0

    def __post_init__(self):
        if self.unroll_epochs < 0:
            raise ValueError("unroll_epochs must be >= 0")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")


def unroll_train(
    data: Dataset, spec: UnrollSpec, record_loss: bool = True
) -> tuple[MlpParams, TrainTrace]:
    """Run exactly T full-batch steps, keeping every iterate w_0..w_T.

    `record_loss=False` skips the per-step loss evaluations; the attack's
    inner loops only need the snapshots.
    """
    if data.n == 0:
        raise ValueError("cannot unroll on empty dataset")
    params = spec.initial_params.copy()
    snapshots = [params]
    losses: list[float] = []
    for _ in range(spec.unroll_epochs):
        g = grad_params(params, data)
        params = params.add_scaled(g, -spec.step_size)
        snapshots.append(params)
        if record_loss:
            losses.append(loss(params, data))
    trace = TrainTrace(
        initial=spec.initial_params.copy(),
        final=params,
        epochs_run=spec.unroll_epochs,
        best_epoch=spec.unroll_epochs - 1,
        train_loss=losses,
        holdout_loss=[],
        holdout_indices=np.empty(0, dtype=np.int64),
        snapshots=snapshots,
    )
    return params, trace


def back_gradient(
    x_p: np.ndarray,
    y_p: int,
    train_data: Dataset,
    val_data: Dataset,
    spec: UnrollSpec,
) -> tuple[np.ndarray, float]:
    """Gradient of the validation loss after unrolled training w.r.t. x_p.

    The poison point is appended to the training set for the unroll. The
    reverse pass walks the stored iterates backwards, accumulating

        dx -= eta/N * mixed(w_t, x_p) . dw
        dw -= eta   * H(w_t) . dw

    starting from dw = grad of the validation loss at w_T. The validation
    set never contains x_p, so there is no direct feature term. Returns
    (dA/dx_p, A) where A is the validation loss of the final iterate.
    """
    x_p = np.asarray(x_p, dtype=np.float64)
    augmented = Dataset(
        train_data.name,
        np.vstack([train_data.X, x_p[None, :]]),
        np.append(train_data.y, y_p),
        train_data.n_classes,
    )
    w_final, trace = unroll_train(augmented, spec, record_loss=False)
    objective = loss(w_final, val_data)

    eta = spec.step_size
    n_aug = augmented.n
    dw = grad_params(w_final, val_data)
    dx = np.zeros_like(x_p)
    for t in range(spec.unroll_epochs - 1, -1, -1):
        w_t = trace.snapshots[t]
        dx -= (eta / n_aug) * mixed_grad(w_t, x_p, y_p, dw)
        dw = dw.add_scaled(hvp(w_t, augmented, dw), -eta)
        if not (np.isfinite(dx).all() and dw.is_finite()):
            raise NonFiniteHypergradientError(
                f"reverse pass became non-finite at step {t} of {spec.unroll_epochs}"
            )
    return dx, objective


def attack_objective(
    x_p: np.ndarray, y_p: int, train_data: Dataset, val_data: Dataset, spec: UnrollSpec
) -> float:
    """Validation loss of the unrolled model with (x_p, y_p) in training."""
    x_p = np.asarray(x_p, dtype=np.float64)
    augmented = Dataset(
        train_data.name,
        np.vstack([train_data.X, x_p[None, :]]),
        np.append(train_data.y, y_p),
        train_data.n_classes,
    )
    w_final, _ = unroll_train(augmented, spec, record_loss=False)
    return loss(w_final, val_data)
