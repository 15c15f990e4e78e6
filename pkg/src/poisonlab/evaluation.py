"""Detection metrics, ROC curves, model scoring, and figure data.

Note the rate convention: FPR and FNR are normalized by the *total*
dataset size, not per class.  Under this convention a detector that flags
a uniformly random nu-fraction scores nu * (1 - nu) on both rates, which
is the comparison baseline used throughout.  ROC curves use the usual
class-conditional normalization instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import Dataset
from .nn import TrainConfig, loss, predict_proba, train


@dataclass(frozen=True)
class DetectionMetrics:
    fpr: float
    fnr: float
    flagged_count: int
    n: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.fpr <= 1.0 and 0.0 <= self.fnr <= 1.0):
            raise ValueError("rates must lie in [0, 1]")
        if self.fpr + self.fnr > 1.0 + 1e-12:
            raise ValueError("fpr + fnr cannot exceed 1 under total-N normalization")


def detection_metrics(flagged: np.ndarray, poison_mask: np.ndarray) -> DetectionMetrics:
    """Score a flagged index set against ground truth.

    fpr = flagged benign / N, fnr = unflagged poison / N.
    """
    poison_mask = np.asarray(poison_mask, dtype=bool)
    n = poison_mask.shape[0]
    flagged = np.asarray(flagged, dtype=np.int64)
    if flagged.size and (flagged.min() < 0 or flagged.max() >= n):
        raise IndexError("flagged index out of range")
    is_flagged = np.zeros(n, dtype=bool)
    is_flagged[flagged] = True
    fp = int(np.sum(is_flagged & ~poison_mask))
    fn = int(np.sum(~is_flagged & poison_mask))
    return DetectionMetrics(fp / n, fn / n, int(is_flagged.sum()), n)


def random_baseline(nu: float) -> tuple[float, float]:
    """Expected (fpr, fnr) of flagging a uniformly random nu-fraction."""
    if not 0.0 <= nu <= 1.0:
        raise ValueError("nu must lie in [0, 1]")
    value = nu * (1.0 - nu)
    return value, value


def roc_curve(scores: np.ndarray, poison_mask: np.ndarray) -> np.ndarray:
    """Threshold sweep over suspicion scores (higher = more suspicious).

    Returns an (m, 2) array of (benign flagged fraction, poison flagged
    fraction) from (0, 0) to (1, 1).  A mask with only one class present
    has no meaningful curve and degenerates to the two corners.
    """
    scores = np.asarray(scores, dtype=np.float64)
    poison_mask = np.asarray(poison_mask, dtype=bool)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    n_pos = int(poison_mask.sum())
    n_neg = int((~poison_mask).sum())
    if n_pos == 0 or n_neg == 0:
        return np.array([[0.0, 0.0], [1.0, 1.0]])
    order = np.argsort(-scores, kind="stable")
    sorted_mask = poison_mask[order]
    tp = np.cumsum(sorted_mask)
    fp = np.cumsum(~sorted_mask)
    # collapse runs of equal scores: only the last point of each run is a
    # reachable operating point
    distinct = np.flatnonzero(np.diff(scores[order]) != 0)
    keep = np.concatenate([distinct, [scores.shape[0] - 1]])
    curve = np.column_stack([fp[keep] / n_neg, tp[keep] / n_pos])
    return np.vstack([[0.0, 0.0], curve])


_trapezoid = getattr(np, "trapezoid", np.trapz)


def auc(curve: np.ndarray) -> float:
    """Area under an ROC curve via the trapezoid rule."""
    return float(_trapezoid(curve[:, 1], curve[:, 0]))


def evaluate_model(params, test: Dataset) -> tuple[float, float]:
    """Mean cross-entropy and argmax accuracy on held-out data."""
    if test.n == 0:
        raise ValueError("empty test set")
    proba = predict_proba(params, test.X)
    predicted = np.argmax(proba, axis=1)
    accuracy = float(np.mean(predicted == test.y))
    return loss(params, test), accuracy


def make_grid(
    X: np.ndarray, resolution: int = 20, inflation: float = 0.1
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Regular 2-D lattice over the data's bounding box, inflated slightly.

    Returns (points, xs, ys) where points has shape (resolution**2, 2) in
    row-major (y outer, x inner) order.
    """
    if X.shape[1] != 2:
        raise ValueError("grids require a 2-D feature space")
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    pad = inflation * (hi - lo)
    xs = np.linspace(lo[0] - pad[0], hi[0] + pad[0], resolution)
    ys = np.linspace(lo[1] - pad[1], hi[1] + pad[1], resolution)
    xx, yy = np.meshgrid(xs, ys)
    return np.column_stack([xx.ravel(), yy.ravel()]), xs, ys


def poison_grid_sweep(
    train_data: Dataset,
    val_data: Dataset,
    poison_label: int,
    grid_points: np.ndarray,
    cfg: TrainConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth attacker landscape: one training run per lattice cell.

    Cell p gets a model trained on train + {(p, poison_label)}; returns the
    validation loss and accuracy per cell, aligned with grid_points rows.
    """
    if train_data.d != 2:
        raise ValueError("grid sweeps require a 2-D feature space")
    losses = np.empty(grid_points.shape[0], dtype=np.float64)
    accs = np.empty(grid_points.shape[0], dtype=np.float64)
    for i, point in enumerate(grid_points):
        augmented = Dataset(
            train_data.name,
            np.vstack([train_data.X, point[None, :]]),
            np.concatenate([train_data.y, [poison_label]]),
            train_data.n_classes,
        )
        params, _ = train(augmented, cfg)
        losses[i], accs[i] = evaluate_model(params, val_data)
    return losses, accs


def decision_surface(params, grid_points: np.ndarray) -> np.ndarray:
    """Predicted class at each lattice point."""
    if grid_points.shape[1] != 2:
        raise ValueError("decision surfaces require a 2-D feature space")
    return np.argmax(predict_proba(params, grid_points), axis=1).astype(np.int64)


def write_knee_plot(path, sorted_l: np.ndarray, is_poison: np.ndarray, cutoff: int) -> None:
    """Knee-plot data: rank, likelihood, ground-truth poison flag."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# knee plot, cutoff_index={cutoff}\n")
        fh.write("# rank\tlikelihood\tis_poison\n")
        for rank, (l, p) in enumerate(zip(sorted_l, is_poison)):
            fh.write(f"{rank}\t{float(l)!r}\t{int(p)}\n")


def write_roc(path, curve: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# roc curve, auc={auc(curve)!r}\n")
        fh.write("# benign_flagged_fraction\tpoison_flagged_fraction\n")
        for fpr, tpr in curve:
            fh.write(f"{float(fpr)!r}\t{float(tpr)!r}\n")


def write_grid(path, grid_points: np.ndarray, values: np.ndarray, label: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# grid sweep: {label}\n")
        fh.write(f"# x1\tx2\t{label}\n")
        for (x1, x2), v in zip(grid_points, values):
            fh.write(f"{float(x1)!r}\t{float(x2)!r}\t{float(v)!r}\n")
