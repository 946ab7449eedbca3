import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_regression
from subspace_inference import (
    Architecture,
    ConfigError,
    DeviationBuffer,
    ParamVector,
    TrainConfig,
    init_weights,
    run_swa,
    train_sgd,
)
from subspace_inference.train import loss_and_grad, minibatches


@pytest.fixture
def problem(rng):
    arch = Architecture(2, (6,))
    data = random_regression(rng, 40, 2)
    return arch, data, init_weights(arch, 0)


def test_minibatches_cover_each_epoch_exactly_once():
    stream = minibatches(10, 4, np.random.default_rng(0))
    epoch = [next(stream) for _ in range(3)]
    assert [len(b) for b in epoch] == [4, 4, 2]
    assert sorted(np.concatenate(epoch).tolist()) == list(range(10))


def test_weight_decay_term_and_noise_exemption(problem):
    arch, data, p0 = problem
    flat = p0.to_array()
    batch = np.arange(len(data))
    l0, g0 = loss_and_grad(arch, flat, data, batch, 0.0)
    l1, g1 = loss_and_grad(arch, flat, data, batch, 0.1)
    w = flat[:-1]
    assert l1 - l0 == pytest.approx(0.05 * float(w @ w), rel=1e-12)
    np.testing.assert_allclose(g1[:-1] - g0[:-1], 0.1 * w, atol=1e-15)
    assert g1[-1] == g0[-1]


def test_zero_learning_rate_leaves_weights_unchanged(problem):
    arch, data, p0 = problem
    out = train_sgd(arch, p0, data, TrainConfig(learning_rate=0.0, num_steps=5, batch_size=8))
    assert out == p0


def test_training_is_deterministic_and_reduces_loss(problem):
    arch, data, p0 = problem
    cfg = TrainConfig(learning_rate=1e-2, num_steps=300, batch_size=8, seed=4)
    a = train_sgd(arch, p0, data, cfg)
    b = train_sgd(arch, p0, data, cfg)
    assert a == b
    full = np.arange(len(data))
    assert loss_and_grad(arch, a.to_array(), data, full, 0)[0] < loss_and_grad(arch, p0.to_array(), data, full, 0)[0]


def test_trace_records_each_step(problem):
    arch, data, p0 = problem
    records = []
    train_sgd(arch, p0, data, TrainConfig(num_steps=7, batch_size=8), trace=records.append)
    assert [r.step for r in records] == list(range(1, 8))
    assert all(r.learning_rate == 1e-3 for r in records)


def test_invalid_config_is_rejected(problem):
    arch, data, p0 = problem
    with pytest.raises(ConfigError):
        train_sgd(arch, p0, data, TrainConfig(batch_size=len(data) + 1))
    with pytest.raises(ConfigError):
        TrainConfig(momentum=1.0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(capture_frequency=0).validate()


def test_swa_mean_includes_start_and_every_capture(problem):
    arch, data, p0 = problem
    cfg = TrainConfig(learning_rate=1e-2, num_steps=30, capture_frequency=3, max_deviation_cols=4, batch_size=8)
    iterates = []
    result = run_swa(arch, p0, data, cfg, iterate_log=iterates)
    assert len(iterates) == 10
    expected = np.mean([p0.to_array(), *iterates], axis=0)
    np.testing.assert_allclose(result.w_swa.to_array(), expected, rtol=1e-12, atol=1e-14)


def test_swa_deviations_use_the_updated_running_mean(problem):
    arch, data, p0 = problem
    cfg = TrainConfig(learning_rate=1e-2, num_steps=12, capture_frequency=2, max_deviation_cols=3, batch_size=8)
    iterates = []
    result = run_swa(arch, p0, data, cfg, iterate_log=iterates)
    assert result.buffer.n_captured == 6 and len(result.buffer) == 3
    expected = []
    for i in range(len(iterates)):
        mean = np.mean([p0.to_array(), *iterates[: i + 1]], axis=0)
        expected.append(iterates[i][:-1] - mean[:-1])
    np.testing.assert_allclose(result.buffer.matrix(), np.array(expected[-3:]), rtol=1e-10, atol=1e-13)


def test_swa_with_capture_interval_beyond_run_keeps_start(problem):
    arch, data, p0 = problem
    result = run_swa(arch, p0, data, TrainConfig(num_steps=3, capture_frequency=5, batch_size=8))
    assert result.w_swa == p0
    assert len(result.buffer) == 0


@given(st.integers(1, 6), st.integers(0, 20))
def test_deviation_buffer_keeps_newest_columns(max_cols, n):
    buf = DeviationBuffer(max_cols)
    for i in range(n):
        buf.append(np.full(3, float(i)))
    assert len(buf) == min(n, max_cols)
    assert buf.n_captured == n
    if n:
        np.testing.assert_array_equal(buf.matrix()[:, 0], np.arange(max(0, n - max_cols), n, dtype=float))


def test_swa_on_quadratic_like_problem_is_finite(problem):
    arch, data, p0 = problem
    result = run_swa(arch, p0, data, TrainConfig(learning_rate=5e-3, num_steps=50, capture_frequency=5, batch_size=8))
    assert isinstance(result.w_swa, ParamVector) and result.w_swa.is_finite()
    assert len(result.trace) == 50
