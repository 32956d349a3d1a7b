import numpy as np
import pytest
import torch
from numpy.testing import assert_allclose

from hjbnode.envs import make_env
from hjbnode.errors import ContractError, NumericDomainError, TrainingDiverged
from hjbnode.hjb import lqr_cost, riccati_value
from hjbnode.nets import QuadraticValue
from hjbnode.rollout import evaluate_cost, lyapunov_descent_fraction
from hjbnode.train import (PRESET_REFERENCES, PRESETS, AdamState, TrainConfig, adam_step, normalized_cost,
                           preset_config, train)


def _small_config(**overrides):
    settings = dict(env='di', loss_kind='lyapunov', net_kind='icnn-pd', layer_widths=[3, 4, 4, 1], num_initial=4,
                    horizon=0.3, dt=0.01, epochs=3, lr=1e-2, seed=5)
    settings.update(overrides)
    return TrainConfig(**settings)


def test_adam_first_step_moves_by_learning_rate():
    state = AdamState.zeros(3)
    params = torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64)
    grads = torch.tensor([0.5, -2.0, 1e-3], dtype=torch.float64)
    state, new = adam_step(state, params, grads, lr=0.1, eps=1e-12)
    assert state.step == 1
    assert_allclose(new.numpy(), [0.9, 2.1, 2.9], rtol=1e-8)


def test_adam_matches_reference_recurrence():
    rng = np.random.default_rng(0)
    params = rng.normal(size=4)
    state = AdamState.zeros(4)
    m = np.zeros(4)
    v = np.zeros(4)
    p = params.copy()
    current = torch.tensor(params)
    for step in range(1, 4):
        g = rng.normal(size=4)
        state, current = adam_step(state, current, torch.tensor(g), lr=1e-3)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        p = p - 1e-3 * (m / (1 - 0.9 ** step)) / (np.sqrt(v / (1 - 0.999 ** step)) + 1e-8)
    assert_allclose(current.numpy(), p, rtol=1e-12)


def test_adam_rejects_non_finite_gradients():
    with pytest.raises(NumericDomainError):
        adam_step(AdamState.zeros(2), torch.zeros(2, dtype=torch.float64),
                  torch.tensor([1.0, float('nan')], dtype=torch.float64), lr=1e-3)


def test_normalized_cost():
    assert normalized_cost([2.0, 1.0, 0.5]) == [1.0, 0.5, 0.25]
    with pytest.raises(ContractError):
        normalized_cost([0.0, 1.0])
    with pytest.raises(ContractError):
        normalized_cost([])


@pytest.mark.parametrize("overrides", [
    dict(env='pendulum'),
    dict(loss_kind='hinge'),
    dict(net_kind='mlp'),
    dict(epochs=0),
    dict(lr=0.0),
    dict(beta1=1.0),
    dict(layer_widths=[5, 4, 1]),
    dict(horizon=0.305),
    dict(layer_widths=[3, 4, 2]),
    dict(layer_widths=[3, 0, 1]),
    dict(epsilon=0.0),
    dict(env_params={'mass': 1.0}),
])
def test_invalid_configs(overrides):
    with pytest.raises(ContractError):
        _small_config(**overrides)


@pytest.mark.parametrize("overrides", [dict(epochs='3'), dict(resample=1), dict(learning_rate=1e-3)])
def test_config_type_errors(overrides):
    with pytest.raises(TypeError):
        _small_config(**overrides)


def test_config_roundtrip():
    config = _small_config(env_params={'Q': [1.0, 0.5]})
    assert TrainConfig.from_dict(config.to_dict()) == config
    assert config.replace(seed=9).seed == 9


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_are_valid(name):
    config = preset_config(name)
    assert config.env == PRESETS[name]['env']
    assert name in PRESET_REFERENCES


def test_unknown_preset():
    with pytest.raises(ContractError):
        preset_config('pendulum')


def test_train_curves_and_projection():
    result = train(_small_config(check_icnn=True))
    assert result.completed
    assert len(result.losses) == len(result.mean_costs) == len(result.wall_ms) == 4
    assert result.normalized_costs[0] == 1.0
    assert bool((result.value.params[result.value.nonnegative_mask] >= 0).all())
    assert len(result.icnn_checks) == 4
    assert all(check['origin'] and check['nonnegative'] for check in result.icnn_checks)


def test_train_is_deterministic():
    a = train(_small_config(loss_kind='value', net_kind='fcn', layer_widths=[3, 6, 1], resample=True))
    b = train(_small_config(loss_kind='value', net_kind='fcn', layer_widths=[3, 6, 1], resample=True))
    assert a.losses == b.losses
    assert a.mean_costs == b.mean_costs
    assert torch.equal(a.params, b.params)


def test_train_changes_parameters():
    config = _small_config(loss_kind='value', net_kind='fcn', layer_widths=[3, 6, 1])
    result = train(config)
    initial = train(config.replace(epochs=1))
    assert not torch.equal(result.params, initial.params)


def test_diverged_training_keeps_partial_result():
    config = _small_config(net_kind='fcn', layer_widths=[3, 4, 1], horizon=20.0, dt=1.0)
    with pytest.raises(TrainingDiverged) as err:
        train(config, value=QuadraticValue(-1e100 * np.eye(2)))
    assert err.value.result.failed_epoch == 0
    assert err.value.result.losses == []
    assert not err.value.result.completed


@pytest.mark.slow
@pytest.mark.parametrize("name,overrides,bound", [
    ('di_lyapunov', {}, 0.35),
    ('cp_balance_lyapunov', {}, 0.95),
    ('twolink_value', {}, 0.60),
    ('cp_swingup_value', {'num_initial': 25}, 0.95),
])
def test_preset_reaches_normalized_cost(name, overrides, bound):
    reached = 0
    for seed in range(5):
        try:
            result = train(preset_config(name, seed=seed, **overrides))
        except TrainingDiverged:
            continue
        if result.normalized_costs and min(result.normalized_costs) <= bound:
            reached += 1
    assert reached >= 4


@pytest.mark.slow
@pytest.mark.parametrize("name", ['di_lyapunov', 'cp_balance_lyapunov'])
def test_icnn_presets_keep_invariants_every_epoch(name):
    result = train(preset_config(name, check_icnn=True))
    assert result.completed
    assert len(result.icnn_checks) == result.config.epochs + 1
    for report in result.icnn_checks:
        assert report['convex'] and report['origin'] and report['lower_bound'] and report['nonnegative']


@pytest.mark.slow
@pytest.mark.parametrize("name", ['di_lyapunov', 'cp_balance_lyapunov'])
def test_trained_lyapunov_function_decreases_along_closed_loop(name):
    config = preset_config(name)
    result = train(config)
    env = make_env(config.env)
    x0 = env.sample_initial(np.random.default_rng(1234), 20)
    assert lyapunov_descent_fraction(result.value, env, x0, config.grid()) <= 0.05


@pytest.mark.slow
def test_di_value_preset_is_near_riccati_optimal():
    config = preset_config('di_value')
    result = train(config)
    env = make_env('di')
    x0 = env.sample_initial(np.random.default_rng(4321), 20)
    optimal = lqr_cost(riccati_value(env, config.horizon), x0)
    assert evaluate_cost(result.value, env, x0, config.grid()) <= 1.15 * optimal
