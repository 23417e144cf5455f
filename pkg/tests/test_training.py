import math

import numpy as np
import pytest

from core.checkpoint import load_checkpoint
from core.errors import CorpusError, NonFiniteGradientError
from core.network import init_model, toy_spec
from core.schemas import TrainConfig
from core.training import AdamState, adam_step, mse_cost, plateau_update, train


def test_mse_cost_and_gradient(rng):
    Z = rng.standard_normal((4, 1, 2, 3))
    S = rng.standard_normal((4, 1, 2, 3))
    cost, grad = mse_cost(Z, S)
    assert math.isclose(cost, np.sum((Z - S) ** 2) / 4)
    np.testing.assert_allclose(grad, (Z - S) / 2)
    assert mse_cost(S, S)[0] == 0.0


def test_adam_first_step_is_lr_times_sign():
    config = TrainConfig()
    params = [np.zeros(3)]
    grads = [np.array([2.0, -0.5, 1e-3])]
    new, state = adam_step(params, grads, AdamState.zeros_like(params), 1e-4, config)
    np.testing.assert_allclose(new[0], [-1e-4, 1e-4, -1e-4], rtol=1e-4)
    assert state.t == 1
    np.testing.assert_allclose(state.m[0], 0.1 * grads[0])


def test_adam_rejects_non_finite_gradients():
    params = [np.zeros(2)]
    with pytest.raises(NonFiniteGradientError):
        adam_step(params, [np.array([np.nan, 0.0])], AdamState.zeros_like(params), 1e-4, TrainConfig())


def _hand_adam(theta, g, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


def test_adam_matches_hand_recursion():
    config = TrainConfig()
    params = [np.array([1.0])]
    state = AdamState.zeros_like(params)
    for step in (1, 2):
        params, state = adam_step(params, [np.array([0.5])], state, 1e-4, config)
        assert abs(params[0][0] - _hand_adam(1.0, 0.5, 1e-4, step)) < 1e-15
        assert abs(params[0][0] - (1.0 - step * 1e-4)) < 1e-9
    assert state.t == 2


def test_adam_ignores_parameter_layout(rng):
    config = TrainConfig()
    p = rng.standard_normal((2, 3))
    g = rng.standard_normal((2, 3))
    shaped, _ = adam_step([p], [g], AdamState.zeros_like([p]), 1e-3, config)
    flat, _ = adam_step([p.ravel()], [g.ravel()], AdamState.zeros_like([p.ravel()]), 1e-3, config)
    np.testing.assert_array_equal(shaped[0].ravel(), flat[0])


def test_one_step_on_quadratic_reduces_cost():
    theta = np.array([0.0])

    def cost(t):
        return float((t[0] - 3.0) ** 2)

    params, _ = adam_step([theta], [2 * (theta - 3.0)], AdamState.zeros_like([theta]), 1e-4, TrainConfig())
    assert cost(params[0]) < cost(theta)


def _replay(costs, config):
    lr = config.lr0
    rates = []
    for k in range(1, len(costs) + 1):
        lr = plateau_update(costs[:k], lr, config)
        rates.append(lr)
    return rates


def test_plateau_single_reduction():
    config = TrainConfig()
    rates = _replay([5.0, 4.0, 4.1, 4.2, 4.3], config)
    assert rates[:-1] == [1e-4] * 4
    assert math.isclose(rates[-1], 1e-5)


def test_plateau_waits_for_patience():
    config = TrainConfig()
    assert _replay([5.0, 4.0, 4.1, 4.2], config)[-1] == 1e-4
    # an improvement resets the counter
    assert _replay([5.0, 4.0, 4.1, 4.2, 3.9, 4.0], config)[-1] == 1e-4


def test_plateau_reduces_again_after_patience():
    rates = _replay([4.0] * 9, TrainConfig())
    assert math.isclose(rates[-1], 1e-6)


def _toy_data(seed, n=12):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, size=(n, 1, 4, 6))
    S = 0.5 * X
    return X, S


def test_train_zero_epochs_returns_model_unchanged():
    model = init_model(toy_spec(), seed=0)
    before = [p.copy() for p in model.parameters()]
    model, history = train(model, _toy_data(0), None, TrainConfig(max_epochs=0))
    assert history.records == []
    for a, b in zip(before, model.parameters()):
        np.testing.assert_array_equal(a, b)


def test_train_rejects_empty_training_set():
    empty = np.zeros((0, 1, 4, 6))
    with pytest.raises(CorpusError):
        train(init_model(toy_spec(), seed=0), (empty, empty), None, TrainConfig(max_epochs=1))


def test_train_reduces_cost_and_checkpoints(tmp_path):
    config = TrainConfig(max_epochs=15, batch_size=4, lr0=1e-2)
    model = init_model(toy_spec(), seed=0)
    model, history = train(model, _toy_data(0), _toy_data(1, n=4), config,
                           checkpoint_path=tmp_path / 'toy.ckpt', history_path=tmp_path / 'history.csv')
    assert len(history.records) == 15
    assert history.records[-1].train_cost < history.records[0].train_cost
    assert not history.validation_fallback
    loaded, metadata = load_checkpoint(tmp_path / 'toy.ckpt')
    assert metadata['epoch'] == history.best_epoch
    lines = (tmp_path / 'history.csv').read_text().splitlines()
    assert lines[0] == 'epoch,train_cost,val_cost,lr'
    assert len(lines) == 16


def test_empty_validation_falls_back_to_training_cost():
    empty = np.zeros((0, 1, 4, 6))
    model, history = train(init_model(toy_spec(), seed=0), _toy_data(0), (empty, empty),
                           TrainConfig(max_epochs=2, batch_size=4))
    assert history.validation_fallback
    assert history.warnings
    assert all(r.val_cost is None for r in history.records)


@pytest.mark.parametrize('precision', ['f32', 'f64'])
def test_training_is_deterministic(tmp_path, precision):
    config = TrainConfig(max_epochs=3, batch_size=5, lr0=1e-3, seed=4)
    outputs = []
    for run in ('a', 'b'):
        model = init_model(toy_spec(), seed=1, precision=precision)
        train(model, _toy_data(0), _toy_data(1, n=5), config,
              checkpoint_path=tmp_path / run / 'toy.ckpt', history_path=tmp_path / run / 'history.csv')
        outputs.append(((tmp_path / run / 'toy.ckpt').read_bytes(), (tmp_path / run / 'history.csv').read_bytes()))
    assert outputs[0] == outputs[1]


def test_toy_overfits_fixed_segments():
    config = TrainConfig(max_epochs=200, lr0=1e-2)
    model, history = train(init_model(toy_spec(), seed=0), _toy_data(0, n=8), None, config)
    costs = [r.train_cost for r in history.records]
    assert len(costs) == 200
    assert costs[-1] < 0.1 * costs[0]
