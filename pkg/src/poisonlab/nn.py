"""One-hidden-layer softmax classifier trained by plain gradient descent.

The network is deliberately small (10 tanh units by default) and everything
runs in float64: the attack differentiates through training with
finite-difference Hessian-vector products, which need both a smooth
activation and 64-bit headroom.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import Dataset

PROB_FLOOR = 1e-12
FD_SCALE = 1e-4  # relative step for second-order finite differences


class TrainingDivergedError(RuntimeError):
    """Parameters became non-finite during a gradient step."""


@dataclass
class MlpParams:
    """Weights and biases: input->hidden (w1, b1) and hidden->output (w2, b2)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]

    @property
    def size(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def copy(self) -> "MlpParams":
        return MlpParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.w1.ravel(), self.b1.ravel(), self.w2.ravel(), self.b2.ravel()]
        )

    @classmethod
    def from_vector(cls, vec: np.ndarray, d_in: int, hidden: int, n_classes: int) -> "MlpParams":
        sizes = [d_in * hidden, hidden, hidden * n_classes, n_classes]
        if vec.size != sum(sizes):
            raise ValueError(f"vector size {vec.size} != parameter count {sum(sizes)}")
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        return cls(
            parts[0].reshape(d_in, hidden),
            parts[1].copy(),
            parts[2].reshape(hidden, n_classes),
            parts[3].copy(),
        )

    def add_scaled(self, other: "MlpParams", alpha: float) -> "MlpParams":
        """self + alpha * other, as a new MlpParams."""
        return MlpParams(
            self.w1 + alpha * other.w1,
            self.b1 + alpha * other.b1,
            self.w2 + alpha * other.w2,
            self.b2 + alpha * other.b2,
        )

    def norm(self) -> float:
        return float(np.sqrt(
            (self.w1 ** 2).sum() + (self.b1 ** 2).sum()
            + (self.w2 ** 2).sum() + (self.b2 ** 2).sum()
        ))

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.w1).all() and np.isfinite(self.b1).all()
            and np.isfinite(self.w2).all() and np.isfinite(self.b2).all()
        )

    def zeros_like(self) -> "MlpParams":
        return MlpParams(
            np.zeros_like(self.w1), np.zeros_like(self.b1),
            np.zeros_like(self.w2), np.zeros_like(self.b2),
        )


@dataclass(frozen=True)
class EarlyStopping:
    patience: int = 10
    min_delta: float = 1e-4
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.holdout_fraction < 0.5:
            raise ValueError(f"holdout_fraction {self.holdout_fraction} outside [0, 0.5)")


@dataclass(frozen=True)
class TrainConfig:
    hidden_width: int = 10
    learning_rate: float = 0.1
    epochs: int = 500
    batch_size: int | None = None  # None = full batch
    early_stopping: EarlyStopping = field(default_factory=EarlyStopping)
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


@dataclass
class TrainTrace:
    """Everything needed to replay a training run step for step.

    Full-batch descent is deterministic given (data, config, initial), so the
    trace stores the initial parameters plus the bookkeeping that fixes the
    step sequence: the holdout row selection, per-epoch minibatch orders when
    minibatching, the epoch count actually run, and which epoch won early
    stopping. `snapshots` is filled only by the attack's unrolled training,
    which needs every intermediate iterate for the reverse pass.
    """

    initial: MlpParams
    final: MlpParams
    epochs_run: int
    best_epoch: int
    train_loss: list[float]
    holdout_loss: list[float]
    holdout_indices: np.ndarray
    batch_orders: list[np.ndarray] | None = None
    snapshots: list[MlpParams] | None = None


def init_params(d_in: int, n_classes: int, config: TrainConfig) -> MlpParams:
    """Seeded Glorot-uniform weights, zero biases."""
    if d_in < 1:
        raise ValueError(f"d_in must be >= 1, got {d_in}")
    if n_classes < 2:
        raise ValueError(f"n_classes must be >= 2, got {n_classes}")
    rng = np.random.default_rng(config.seed)
    h = config.hidden_width
    lim1 = np.sqrt(6.0 / (d_in + h))
    lim2 = np.sqrt(6.0 / (h + n_classes))
    return MlpParams(
        rng.uniform(-lim1, lim1, size=(d_in, h)),
        np.zeros(h),
        rng.uniform(-lim2, lim2, size=(h, n_classes)),
        np.zeros(n_classes),
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_cache(params: MlpParams, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hidden = np.tanh(X @ params.w1 + params.b1)
    probs = _softmax(hidden @ params.w2 + params.b2)
    return hidden, probs


def predict_proba(params: MlpParams, X: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch of rows."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != params.w1.shape[0]:
        raise ValueError(f"{X.shape[1]} features but network expects {params.w1.shape[0]}")
    return _forward_cache(params, X)[1]


def predict_logits(params: MlpParams, X: np.ndarray) -> np.ndarray:
    hidden = np.tanh(X @ params.w1 + params.b1)
    return hidden @ params.w2 + params.b2


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Probability vector over classes for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"forward expects a single feature vector, got shape {x.shape}")
    return predict_proba(params, x[None, :])[0]


def loss(params: MlpParams, data: Dataset) -> float:
    """Mean cross-entropy of the recorded labels, probability-clamped."""
    if data.n == 0:
        raise ValueError("loss of empty dataset")
    probs = predict_proba(params, data.X)
    p_true = np.clip(probs[np.arange(data.n), data.y], PROB_FLOOR, 1.0)
    return float(-np.log(p_true).mean())


def grad_params(params: MlpParams, data: Dataset) -> MlpParams:
    """Exact backpropagation gradient of the mean cross-entropy."""
    if data.n == 0:
        raise ValueError("gradient of empty dataset")
    X = data.X
    hidden, probs = _forward_cache(params, X)
    delta2 = probs.copy()
    delta2[np.arange(data.n), data.y] -= 1.0
    delta2 /= data.n
    g_w2 = hidden.T @ delta2
    g_b2 = delta2.sum(axis=0)
    delta1 = (delta2 @ params.w2.T) * (1.0 - hidden ** 2)
    g_w1 = X.T @ delta1
    g_b1 = delta1.sum(axis=0)
    return MlpParams(g_w1, g_b1, g_w2, g_b2)


def grad_input(params: MlpParams, x: np.ndarray, y: int) -> np.ndarray:
    """Gradient of one instance's cross-entropy w.r.t. its feature vector."""
    x = np.asarray(x, dtype=np.float64)
    hidden = np.tanh(x @ params.w1 + params.b1)
    probs = _softmax(hidden @ params.w2 + params.b2)
    delta2 = probs
    delta2[y] -= 1.0
    delta1 = (params.w2 @ delta2) * (1.0 - hidden ** 2)
    return params.w1 @ delta1


def _fd_epsilon(w_norm: float, v_norm: float) -> float:
    return FD_SCALE * (1.0 + w_norm) / (1.0 + v_norm)


def hvp(params: MlpParams, data: Dataset, v: MlpParams) -> MlpParams:
    """Hessian-vector product of the mean loss via central differences.

    (grad(w + eps v) - grad(w - eps v)) / (2 eps), with eps scaled to the
    parameter and direction norms so truncation and round-off stay balanced.
    """
    v_norm = v.norm()
    if v_norm == 0.0:
        return v.zeros_like()
    eps = _fd_epsilon(params.norm(), v_norm)
    g_plus = grad_params(params.add_scaled(v, eps), data)
    g_minus = grad_params(params.add_scaled(v, -eps), data)
    return MlpParams(
        (g_plus.w1 - g_minus.w1) / (2 * eps),
        (g_plus.b1 - g_minus.b1) / (2 * eps),
        (g_plus.w2 - g_minus.w2) / (2 * eps),
        (g_plus.b2 - g_minus.b2) / (2 * eps),
    )


def fd_directional_grad(grad_fn, w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Central-difference directional derivative of a gradient field.

    Returns d/dt grad_fn(w + t v) at t=0 for flat vectors; the finite step
    follows the same relative scaling rule as `hvp`.
    """
    v_norm = float(np.linalg.norm(v))
    if v_norm == 0.0:
        return np.zeros_like(grad_fn(w))
    eps = _fd_epsilon(float(np.linalg.norm(w)), v_norm)
    return (grad_fn(w + eps * v) - grad_fn(w - eps * v)) / (2 * eps)


def mixed_grad(params: MlpParams, x_p: np.ndarray, y_p: int, v: MlpParams) -> np.ndarray:
    """Contraction of the mixed feature/parameter second derivative with v.

    Computes (d^2 loss_p / dx dw) v for a single instance's cross-entropy.
    Since the loss is twice continuously differentiable, the contraction
    equals the directional derivative of the input gradient along v in
    parameter space, which needs two input-gradient evaluations instead of
    2*d_in parameter gradients.
    """
    x_p = np.asarray(x_p, dtype=np.float64)
    if x_p.shape[0] != params.w1.shape[0]:
        raise ValueError(f"poison point has {x_p.shape[0]} features, expected {params.w1.shape[0]}")
    v_norm = v.norm()
    if v_norm == 0.0:
        return np.zeros_like(x_p)
    eps = _fd_epsilon(params.norm(), v_norm)
    g_plus = grad_input(params.add_scaled(v, eps), x_p, y_p)
    g_minus = grad_input(params.add_scaled(v, -eps), x_p, y_p)
    return (g_plus - g_minus) / (2 * eps)


def _holdout_split(data: Dataset, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Seeded stratified holdout carve; keeps every class in the fit part."""
    if fraction <= 0.0:
        return np.arange(data.n), np.empty(0, dtype=np.int64)
    hold: list[np.ndarray] = []
    for c in range(data.n_classes):
        rows = rng.permutation(np.flatnonzero(data.y == c))
        take = int(round(fraction * rows.size))
        take = min(take, rows.size - 1)  # never empty a class on the fit side
        hold.append(rows[:take])
    hold_idx = np.sort(np.concatenate(hold)) if hold else np.empty(0, dtype=np.int64)
    fit_idx = np.setdiff1d(np.arange(data.n), hold_idx)
    return fit_idx, hold_idx


def train(data: Dataset, config: TrainConfig) -> tuple[MlpParams, TrainTrace]:
    """Gradient-descent training with early stopping on a holdout slice.

    Fully deterministic per (data, config): the holdout carve, minibatch
    orders, and weight init all derive from config.seed. Returns the
    parameters of the best holdout epoch (or the last epoch when no holdout
    is configured).
    """
    if data.n == 0:
        raise ValueError("cannot train on empty dataset")
    counts = data.class_counts()
    if (counts == 0).any():
        missing = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"classes {missing} missing from training data")

    rng = np.random.default_rng(config.seed)
    es = config.early_stopping
    fit_idx, hold_idx = _holdout_split(data, es.holdout_fraction, rng)
    fit = data.subset(fit_idx)
    holdout = data.subset(hold_idx) if hold_idx.size else None

    params = init_params(data.n_features, data.n_classes, config)
    initial = params.copy()
    eta = config.learning_rate

    best_loss = np.inf
    best_epoch = -1
    best_params = params.copy()
    bad_epochs = 0
    train_losses: list[float] = []
    holdout_losses: list[float] = []
    batch_orders: list[np.ndarray] | None = [] if config.batch_size else None

    epochs_run = 0
    for epoch in range(config.epochs):
        if config.batch_size is None:
            g = grad_params(params, fit)
            params = params.add_scaled(g, -eta)
        else:
            order = rng.permutation(fit.n)
            batch_orders.append(order)
            for start in range(0, fit.n, config.batch_size):
                batch = fit.subset(order[start : start + config.batch_size])
                g = grad_params(params, batch)
                params = params.add_scaled(g, -eta)
        if not params.is_finite():
            raise TrainingDivergedError(
                f"non-finite parameters at epoch {epoch} (lr={eta})"
            )
        epochs_run = epoch + 1
        train_losses.append(loss(params, fit))

        if holdout is None:
            best_params, best_epoch = params, epoch
            continue
        h_loss = loss(params, holdout)
        holdout_losses.append(h_loss)
        if h_loss < best_loss - es.min_delta:
            best_loss = h_loss
            best_epoch = epoch
            best_params = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if es.patience > 0 and bad_epochs >= es.patience:
                break

    if best_epoch < 0:  # no epoch ever improved; fall back to epoch 0's params
        best_params, best_epoch = params, epochs_run - 1
    trace = TrainTrace(
        initial=initial,
        final=best_params.copy(),
        epochs_run=epochs_run,
        best_epoch=best_epoch,
        train_loss=train_losses,
        holdout_loss=holdout_losses,
        holdout_indices=hold_idx,
        batch_orders=batch_orders,
    )
    return best_params, trace


def replay(data: Dataset, config: TrainConfig, trace: TrainTrace) -> MlpParams:
    """Re-run the recorded step sequence; must reproduce trace.final bitwise."""
    fit_idx = np.setdiff1d(np.arange(data.n), trace.holdout_indices)
    fit = data.subset(fit_idx)
    params = trace.initial.copy()
    eta = config.learning_rate
    best = params
    for epoch in range(trace.epochs_run):
        if config.batch_size is None:
            params = params.add_scaled(grad_params(params, fit), -eta)
        else:
            order = trace.batch_orders[epoch]
            for start in range(0, fit.n, config.batch_size):
                batch = fit.subset(order[start : start + config.batch_size])
                params = params.add_scaled(grad_params(params, batch), -eta)
        if epoch == trace.best_epoch:
            best = params.copy()
    return best
