"""Label-likelihood defence against training-set poisoning.

The defence retrains on the suspect data, scores every instance by the
model's predicted probability of its recorded label, sorts those scores
ascending, and cuts at the knee of the resulting curve: the argmax of a
sliding-window first derivative.  Instances left of the knee are removed
and the loop repeats until no knee remains, a class would be emptied, or
an iteration cap is hit; once an iteration's estimated poison fraction
falls below the window resolution, one final verification pass runs and
then the loop stops.

Removal bookkeeping is in the original dataset's index space throughout,
so reports can be scored directly against a ground-truth poison mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .datasets import Dataset
from .nn import EarlyStopping, TrainConfig, predict_logits, predict_proba, train

Scorer = Callable[[Dataset, int], np.ndarray]


def scorer_train_config() -> TrainConfig:
    """Default training budget for the defence's scoring model.

    Deliberately short: a capped epoch budget stops the scorer while it
    still reflects the majority structure and before it has capacity to
    memorize individual mislabeled rows.  (A fully-trained network fits
    the poison too, which flattens the likelihood knee; see the victim
    config in nn.TrainConfig for the difference.)
    """
    return TrainConfig(epochs=80, early_stopping=EarlyStopping(holdout_fraction=0.0))


@dataclass(frozen=True)
class DefenceConfig:
    """``window=None`` resolves to max(3, round(0.02 * N)) per iteration.

    The floor of 3 matters on small datasets: a width-2 window reduces the
    knee detector to an argmax over adjacent-pair differences, which chains
    up smooth benign score rises instead of spanning the poison-to-benign
    transition.  For N >= 125 the 2% term dominates and the floor is inert.
    """

    window: int | None = None
    max_iterations: int = 5
    train: TrainConfig = field(default_factory=scorer_train_config)
    use_logits: bool = False

    def __post_init__(self) -> None:
        if self.window is not None and self.window < 1:
            raise ValueError("window must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def resolve_window(self, n: int) -> int:
        if self.window is not None:
            return self.window
        return max(3, int(round(0.02 * n)))


@dataclass
class DefenceIteration:
    """One retrain/score/cut pass.

    ``indices`` are the original-space rows alive at the start of the
    iteration; ``likelihoods`` aligns with them.  ``order`` sorts the
    likelihoods ascending; ``removed_indices`` (original space) are the
    rows left of the knee.  ``applied`` is False when the removal was
    vetoed because it would have emptied a class.
    """

    indices: np.ndarray
    likelihoods: np.ndarray
    order: np.ndarray
    window: int
    cutoff_index: int
    nu_hat: float
    removed_indices: np.ndarray
    applied: bool = True

    @property
    def sorted_likelihoods(self) -> np.ndarray:
        return self.likelihoods[self.order]


@dataclass
class DefenceReport:
    iterations: list[DefenceIteration]
    kept_indices: np.ndarray
    n_original: int

    @property
    def iterations_run(self) -> int:
        return len(self.iterations)

    @property
    def removed_indices(self) -> np.ndarray:
        removed = [it.removed_indices for it in self.iterations if it.applied]
        if not removed:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(removed))

    @property
    def nu_hat_total(self) -> float:
        """Cumulative removed fraction of the original dataset."""
        return self.removed_indices.shape[0] / self.n_original


def label_likelihoods(params, data: Dataset, use_logits: bool = False) -> np.ndarray:
    """Score of instance n: model's predicted probability (or logit) of y_n."""
    scores = predict_logits(params, data.X) if use_logits else predict_proba(params, data.X)
    if scores.shape[0] != data.n:
        raise ValueError("score/label shape mismatch")
    return scores[np.arange(data.n), data.y]


def knee_cutoff(sorted_l: np.ndarray, window: int) -> int:
    """Boundary index of the knee in an ascending score curve.

    Returns the smallest k maximizing sorted_l[k + window] - sorted_l[k];
    indices <= k are flagged.  Returns -1 when the maximal windowed rise
    is <= 0 (a flat curve has no knee, so nothing should be flagged).
    """
    sorted_l = np.asarray(sorted_l, dtype=np.float64)
    n = sorted_l.shape[0]
    if window < 1:
        raise ValueError("window must be >= 1")
    if window >= n:
        raise ValueError(f"window {window} must be smaller than N={n}")
    if np.any(np.diff(sorted_l) < 0):
        raise ValueError("scores must be sorted ascending")
    rises = sorted_l[window:] - sorted_l[:-window]
    if rises.max() <= 0.0:
        return -1
    return int(np.argmax(rises))  # argmax takes the smallest maximizer


def _mlp_scorer(cfg: DefenceConfig) -> Scorer:
    def score(data: Dataset, seed: int) -> np.ndarray:
        params, _ = train(data, cfg.train.with_seed(seed))
        return label_likelihoods(params, data, use_logits=cfg.use_logits)

    return score


def defend(
    data: Dataset, cfg: DefenceConfig, scorer: Scorer | None = None
) -> tuple[DefenceReport, Dataset]:
    """Iteratively remove suspected poison until convergence.

    The model is retrained from scratch each iteration (seed + iteration
    number) so that weights fitted to since-removed poison cannot leak
    forward.  ``scorer`` can be overridden for testing; it receives the
    current dataset and the iteration's training seed and must return one
    score per instance (higher = more label-consistent).
    """
    if data.n == 0:
        raise ValueError("cannot defend an empty dataset")
    if scorer is None:
        scorer = _mlp_scorer(cfg)

    alive = np.arange(data.n, dtype=np.int64)
    iterations: list[DefenceIteration] = []
    verifying = False

    for j in range(cfg.max_iterations):
        current = data.subset(alive)
        likelihoods = scorer(current, cfg.train.seed + j)
        order = np.argsort(likelihoods, kind="stable").astype(np.int64)
        window = cfg.resolve_window(current.n)
        if window >= current.n:
            break
        k = knee_cutoff(likelihoods[order], window)
        flagged_local = order[: k + 1] if k >= 0 else np.empty(0, dtype=np.int64)
        removed = np.sort(alive[flagged_local])
        nu_hat = flagged_local.shape[0] / current.n

        if flagged_local.shape[0] == 0:
            iterations.append(
                DefenceIteration(alive.copy(), likelihoods, order, window, k, 0.0, removed)
            )
            break
        if verifying and k == 0:
            # The steepest rise sitting at the very bottom of the curve is
            # the signature of one isolated low scorer, not a poison
            # cluster boundary; on the verification pass that is noise.
            iterations.append(
                DefenceIteration(
                    alive.copy(), likelihoods, order, window, k, nu_hat, removed,
                    applied=False,
                )
            )
            break

        survivors = np.setdiff1d(alive, removed, assume_unique=True)
        would_empty = np.any(
            np.bincount(data.y[survivors], minlength=data.n_classes) == 0
        )
        iteration = DefenceIteration(
            alive.copy(), likelihoods, order, window, k, nu_hat, removed,
            applied=not would_empty,
        )
        iterations.append(iteration)
        if would_empty:
            break
        alive = survivors
        if verifying:
            break
        # A knee shallower than the window can resolve is more likely
        # noise than a poison cluster: apply the removal, allow one
        # verification pass to mop up stragglers, then stop.
        if nu_hat < 1.0 / window:
            verifying = True

    report = DefenceReport(iterations, alive.copy(), data.n)
    return report, data.subset(alive)
