"""Training-set poisoning attacks.

Two attackers with a shared label-corruption scheme:

* random label flipping -- corrupt ``floor(nu * N)`` training labels in
  place, no feature manipulation;
* back-gradient optimization -- append points sampled from the validation
  pool and push their features up the hypergradient of the validation
  loss, so the victim's own training procedure is turned against it.

Both return a :class:`PoisonedDataset` carrying a boolean mask and full
per-point provenance, which the defence evaluation uses as ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .hypergrad import (
    NonFiniteHypergradientError,
    UnrollSpec,
    attack_objective,
    back_gradient,
)
from .nn import TrainConfig, init_params


@dataclass
class PoisonRecord:
    """Provenance for a single poison point.

    ``trajectory`` holds every accepted feature position, seed first; for
    label flips (no feature movement) it contains the single original row.
    ``objective_values[i]`` is the attacker objective evaluated at
    ``trajectory[i]``; empty for flips.  ``frozen`` marks points whose
    optimization was stopped early by a non-finite hypergradient.
    """

    source_index: int
    original_label: int
    poison_label: int
    trajectory: list[np.ndarray] = field(default_factory=list)
    objective_values: list[float] = field(default_factory=list)
    frozen: bool = False

    @property
    def x_final(self) -> np.ndarray:
        return self.trajectory[-1]


@dataclass
class PoisonedDataset:
    data: Dataset
    poison_mask: np.ndarray
    provenance: list[PoisonRecord]

    def __post_init__(self) -> None:
        self.poison_mask = np.asarray(self.poison_mask, dtype=bool)
        if self.poison_mask.shape != (self.data.n,):
            raise ValueError(
                f"mask length {self.poison_mask.shape} does not match "
                f"dataset size {self.data.n}"
            )
        if int(self.poison_mask.sum()) != len(self.provenance):
            raise ValueError("mask count disagrees with provenance records")

    @property
    def n_poisoned(self) -> int:
        return int(self.poison_mask.sum())

    @property
    def nu_actual(self) -> float:
        return self.n_poisoned / self.data.n if self.data.n else 0.0


@dataclass(frozen=True)
class AttackConfig:
    """Knobs for the back-gradient attacker.

    ``outer_iters`` counts hypergradient ascent steps per poison point;
    ``unroll_epochs``/``unroll_step`` parameterize the inner training loop
    that is differentiated through.

    Ascent happens in box-scaled coordinates: ``attack_step`` is the
    fraction of each feature's range moved per iteration (0.02 = 2%), and
    the gradient is unit-normalized in that space by default.  Raw
    hypergradients of a mean loss scale like eta * T / N -- far too small
    for a fixed step -- and a step that is sane for one feature scale
    pins points against the box walls on another, so both conventions are
    per-range.  ``feature_bounds`` is an optional ``(lo, hi)`` pair of
    per-dimension vectors; when omitted the box spanned by train +
    validation data is used, which keeps poison points from taking values
    no benign instance could have.
    """

    nu: float
    outer_iters: int = 26
    attack_step: float = 0.02
    normalize_gradient: bool = True
    unroll_epochs: int = 60
    unroll_step: float = 0.2
    hidden_width: int = 10
    feature_bounds: tuple[np.ndarray, np.ndarray] | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.nu < 0.5:
            raise ValueError(f"nu must lie in [0, 0.5), got {self.nu}")
        if self.outer_iters < 0:
            raise ValueError("outer_iters must be >= 0")
        if self.attack_step <= 0:
            raise ValueError("attack_step must be positive")
        if self.feature_bounds is not None:
            lo, hi = self.feature_bounds
            lo = np.asarray(lo, dtype=np.float64)
            hi = np.asarray(hi, dtype=np.float64)
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValueError("feature bounds must be finite")
            if np.any(lo > hi):
                raise ValueError("feature bounds must satisfy lo <= hi")


def flip_count(nu: float, n: int) -> int:
    """Number of in-place flips: exactly ``floor(nu * N)``."""
    return int(np.floor(nu * n))


def poison_count(nu: float, n: int) -> int:
    """Number of appended poison points so they make up a ``nu`` fraction.

    Appending p points to N benign ones gives rate p / (N + p); solving
    for p yields ``nu * N / (1 - nu)``, rounded to the nearest integer.
    """
    if not 0.0 <= nu < 1.0:
        raise ValueError(f"nu must lie in [0, 1), got {nu}")
    return int(round(nu * n / (1.0 - nu)))


def _flip_label(rng: np.random.Generator, label: int, n_classes: int) -> int:
    """Uniform draw over the ``n_classes - 1`` labels other than ``label``."""
    return int((label + 1 + rng.integers(n_classes - 1)) % n_classes)


def _choose_and_flip(
    rng: np.random.Generator, labels: np.ndarray, count: int, n_classes: int
) -> tuple[np.ndarray, np.ndarray]:
    """Pick ``count`` row indices without replacement and flip their labels.

    Indices are sorted ascending before the label draws so that the two
    attacks consume identical random streams given identical inputs.
    """
    chosen = np.sort(rng.choice(labels.shape[0], size=count, replace=False))
    flipped = np.array(
        [_flip_label(rng, labels[i], n_classes) for i in chosen], dtype=np.int64
    )
    return chosen.astype(np.int64), flipped


def flip_labels(
    data: Dataset, nu: float, seed: int = 0, n_classes: int | None = None
) -> PoisonedDataset:
    """Flip ``floor(nu * N)`` labels chosen uniformly without replacement.

    Each corrupted label is drawn uniformly from the other classes;
    features are untouched.  ``nu = 0`` returns the dataset unchanged with
    an empty mask.
    """
    if not 0.0 <= nu < 1.0:
        raise ValueError(f"nu must lie in [0, 1), got {nu}")
    n_classes = data.n_classes if n_classes is None else n_classes
    rng = np.random.default_rng(seed)
    n_flip = flip_count(nu, data.n)
    mask = np.zeros(data.n, dtype=bool)
    y = data.y.copy()
    records: list[PoisonRecord] = []
    if n_flip > 0:
        chosen, flipped = _choose_and_flip(rng, data.y, n_flip, n_classes)
        y[chosen] = flipped
        mask[chosen] = True
        records = [
            PoisonRecord(
                source_index=int(i),
                original_label=int(data.y[i]),
                poison_label=int(y[i]),
                trajectory=[data.X[i].copy()],
            )
            for i in chosen
        ]
    poisoned = Dataset(data.name, data.X.copy(), y, data.n_classes)
    return PoisonedDataset(poisoned, mask, records)


def sample_poison_seeds(
    val_data: Dataset,
    count: int,
    rng: np.random.Generator | int = 0,
    n_classes: int | None = None,
) -> list[PoisonRecord]:
    """Draw poison seeds from the validation pool, labels pre-flipped.

    Sampling is uniform without replacement; each seed's poison label is
    uniform over the classes other than its recorded one.  The returned
    records have the seed position as the sole trajectory entry.
    """
    if count > val_data.n:
        raise ValueError(
            f"cannot sample {count} poison seeds from {val_data.n} "
            "validation instances"
        )
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    n_classes = val_data.n_classes if n_classes is None else n_classes
    if count == 0:
        return []
    chosen, flipped = _choose_and_flip(rng, val_data.y, count, n_classes)
    return [
        PoisonRecord(
            source_index=int(i),
            original_label=int(val_data.y[i]),
            poison_label=int(lab),
            trajectory=[val_data.X[i].copy()],
        )
        for i, lab in zip(chosen, flipped)
    ]


def default_feature_bounds(
    train: Dataset, val: Dataset
) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension [min, max] box over train + validation features."""
    stacked = np.vstack([train.X, val.X])
    return stacked.min(axis=0), stacked.max(axis=0)


def _augment(train: Dataset, records: list[PoisonRecord]) -> Dataset:
    if not records:
        return train
    X = np.vstack([train.X] + [r.x_final[None, :] for r in records])
    y = np.concatenate(
        [train.y, np.array([r.poison_label for r in records], dtype=np.int64)]
    )
    return Dataset(train.name, X, y, train.n_classes)


def back_gradient_attack(
    train_data: Dataset, val_data: Dataset, cfg: AttackConfig
) -> PoisonedDataset:
    """Optimize appended poison points by hypergradient ascent.

    Points are optimized one at a time (greedy); point i sees the benign
    training set plus the already-finalized points 0..i-1.  Candidate
    positions are clipped to the feature box and kept only when they
    strictly improve the validation objective; on rejection the step backs
    off geometrically and the point stops once no scale makes progress.
    A non-finite hypergradient freezes the point at its last valid
    position rather than aborting the whole attack.
    """
    if train_data.n == 0 or val_data.n == 0:
        raise ValueError("train and validation data must be nonempty")
    n_p = poison_count(cfg.nu, train_data.n)
    rng = np.random.default_rng(cfg.seed)
    records = sample_poison_seeds(val_data, n_p, rng, train_data.n_classes)

    if cfg.feature_bounds is not None:
        lo = np.asarray(cfg.feature_bounds[0], dtype=np.float64)
        hi = np.asarray(cfg.feature_bounds[1], dtype=np.float64)
    else:
        lo, hi = default_feature_bounds(train_data, val_data)
    box = hi - lo  # constant features have zero range and never move

    w0 = init_params(
        train_data.d,
        train_data.n_classes,
        TrainConfig(hidden_width=cfg.hidden_width, seed=cfg.seed),
    )
    spec = UnrollSpec(
        unroll_epochs=cfg.unroll_epochs,
        step_size=cfg.unroll_step,
        initial_params=w0,
        seed=cfg.seed,
    )

    for i, rec in enumerate(records):
        current = _augment(train_data, records[:i])
        x = rec.trajectory[0]
        step = cfg.attack_step
        for _ in range(cfg.outer_iters):
            try:
                dx, objective = back_gradient(
                    x, rec.poison_label, current, val_data, spec
                )
            except NonFiniteHypergradientError:
                rec.frozen = True
                break
            if not rec.objective_values:
                rec.objective_values.append(objective)  # objective at the seed
            # chain rule into box-scaled coordinates, step there, map back
            scaled = dx * box
            if cfg.normalize_gradient:
                norm = float(np.linalg.norm(scaled))
                if norm > 0:
                    scaled = scaled / norm
            candidate = np.clip(x + step * box * scaled, lo, hi)
            cand_obj = attack_objective(
                candidate, rec.poison_label, current, val_data, spec
            )
            # Greedy ascent with backtracking: only steps that strictly
            # improve the validation objective are kept, so the poison
            # stops moving once the attack saturates instead of drifting
            # on noise from the normalized gradient.
            if np.isfinite(cand_obj) and cand_obj > rec.objective_values[-1]:
                x = candidate
                rec.trajectory.append(x)
                rec.objective_values.append(float(cand_obj))
                step = cfg.attack_step
            else:
                step *= 0.5
                if step < cfg.attack_step / 16.0:
                    break

    final = _augment(train_data, records)
    mask = np.zeros(final.n, dtype=bool)
    mask[train_data.n :] = True
    return PoisonedDataset(final, mask, records)
