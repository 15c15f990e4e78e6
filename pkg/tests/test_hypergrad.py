"""Unrolled training and reverse-mode hypergradients."""

import numpy as np
import pytest

import oracles
from poisonlab.datasets import Dataset, make_points
from poisonlab.hypergrad import (
    UnrollSpec,
    attack_objective,
    back_gradient,
    unroll_train,
)
from poisonlab.nn import TrainConfig, grad_params, init_params, loss


@pytest.fixture(scope="module")
def points():
    return make_points(90, seed=2)


@pytest.fixture(scope="module")
def val_points():
    return make_points(60, seed=8)


def _spec(T, w0, step=0.2):
    return UnrollSpec(unroll_epochs=T, step_size=step, initial_params=w0)


def test_unroll_zero_epochs_is_identity(points):
    w0 = init_params(2, 3, TrainConfig(seed=0))
    wT, trace = unroll_train(points, _spec(0, w0))
    assert np.array_equal(wT.to_vector(), w0.to_vector())
    assert len(trace.snapshots) == 1


def test_unroll_single_epoch_is_one_gradient_step(points):
    w0 = init_params(2, 3, TrainConfig(seed=0))
    wT, trace = unroll_train(points, _spec(1, w0))
    manual = w0.add_scaled(grad_params(w0, points), -0.2)
    assert np.array_equal(wT.to_vector(), manual.to_vector())
    assert len(trace.snapshots) == 2


def test_unroll_snapshot_count_linear_in_depth(points):
    w0 = init_params(2, 3, TrainConfig(seed=0))
    for T in (0, 3, 17):
        _, trace = unroll_train(points, _spec(T, w0))
        assert len(trace.snapshots) == T + 1


def test_unroll_decreases_loss(points):
    w0 = init_params(2, 3, TrainConfig(seed=0))
    wT, _ = unroll_train(points, _spec(50, w0, step=0.1))
    assert loss(wT, points) <= loss(w0, points)


def test_spec_validation():
    w0 = init_params(2, 3, TrainConfig(seed=0))
    with pytest.raises(ValueError):
        UnrollSpec(unroll_epochs=-1, step_size=0.1, initial_params=w0)
    with pytest.raises(ValueError):
        UnrollSpec(unroll_epochs=5, step_size=0.0, initial_params=w0)


def test_back_gradient_zero_depth_is_zero(points, val_points):
    w0 = init_params(2, 3, TrainConfig(seed=0))
    x = np.array([0.5, -0.5])
    dx, objective = back_gradient(x, 1, points, val_points, _spec(0, w0))
    # with no training steps, w_T doesn't depend on the poison point
    assert np.all(dx == 0.0)
    assert objective == loss(w0, val_points)


def test_back_gradient_matches_end_to_end_fd(points, val_points):
    w0 = init_params(2, 3, TrainConfig(seed=0))
    spec = _spec(20, w0)
    rng = np.random.default_rng(7)
    lo, hi = points.X.min(axis=0), points.X.max(axis=0)
    worst = 0.0
    for _ in range(5):
        x = rng.uniform(lo, hi)
        y = int(rng.integers(3))
        dx, _ = back_gradient(x, y, points, val_points, spec)
        fd = oracles.fd_gradient_oracle(
            lambda q: attack_objective(q, y, points, val_points, spec), x, eps=1e-5
        )
        worst = max(worst, oracles.relative_error(dx, fd))
    assert worst <= 1e-2


def test_back_gradient_objective_matches_attack_objective(points, val_points):
    w0 = init_params(2, 3, TrainConfig(seed=0))
    spec = _spec(15, w0)
    x = np.array([1.0, 1.0])
    _, objective = back_gradient(x, 2, points, val_points, spec)
    assert objective == attack_objective(x, 2, points, val_points, spec)


def test_one_normalized_step_improves_objective(points, val_points):
    # ascent sanity: stepping along the hypergradient should raise the
    # validation loss for nearly every seed point
    w0 = init_params(2, 3, TrainConfig(seed=1))
    spec = _spec(30, w0)
    rng = np.random.default_rng(42)
    lo, hi = points.X.min(axis=0), points.X.max(axis=0)
    wins = trials = 0
    for _ in range(50):
        x = rng.uniform(lo, hi)
        y = int(rng.integers(3))
        dx, objective = back_gradient(x, y, points, val_points, spec)
        norm = np.linalg.norm(dx)
        if norm == 0.0:
            continue
        trials += 1
        stepped = attack_objective(x + 0.02 * dx / norm, y, points, val_points, spec)
        wins += stepped > objective
    assert trials >= 45
    assert wins / trials >= 0.9
