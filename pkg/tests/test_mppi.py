import numpy as np
import pytest
import torch
from numpy.testing import assert_allclose

from hjbnode import mppi
from hjbnode.envs import make_env
from hjbnode.errors import ContractError, ControllerError
from hjbnode.hjb import lqr_gain, lqr_value
from hjbnode.nets import as_tensor
from hjbnode.rollout import TimeGrid, rollout
from hjbnode.train import preset_config, train


def test_importance_weights():
    weights = mppi.importance_weights([3.0, 1.0, 2.0], temperature=1.0)
    assert_allclose(weights.sum().item(), 1.0)
    assert int(torch.argmax(weights)) == 1
    expected = np.exp(-np.array([2.0, 0.0, 1.0]))
    assert_allclose(weights.numpy(), expected / expected.sum(), rtol=1e-12)


def test_importance_weights_ignore_diverged_samples():
    weights = mppi.importance_weights([float('inf'), 1.0, float('nan')], temperature=0.5)
    assert_allclose(weights.numpy(), [0.0, 1.0, 0.0])
    with pytest.raises(ControllerError):
        mppi.importance_weights([float('inf'), float('nan')], temperature=1.0)


def test_combine_samples_with_one_hot_weights():
    sequences = torch.arange(12, dtype=torch.float64).reshape(3, 4, 1)
    assert_allclose(mppi.combine_samples([0.0, 1.0, 0.0], sequences).numpy(), sequences[1].numpy())


@pytest.mark.parametrize("horizon_ms,dt,steps", [(200, 0.01, 20), (8, 0.01, 1), (300, 0.08, 4)])
def test_horizon_steps(horizon_ms, dt, steps):
    assert mppi.horizon_steps(horizon_ms, dt) == steps


def test_single_sample_keeps_nominal():
    env = make_env('di')
    cfg = mppi.MppiConfig(samples=1, horizon=3)
    nominal = as_tensor([[0.5], [-0.2], [0.1]])
    updated, weights, _ = mppi.mppi_sequence(cfg, env, as_tensor([1.0, 0.0]), nominal, 0)
    assert_allclose(updated.numpy(), nominal.numpy())
    assert_allclose(weights.numpy(), [1.0])


def test_update_shifts_sequence():
    env = make_env('di')
    cfg = mppi.MppiConfig(samples=1, horizon=3)
    nominal = as_tensor([[0.5], [-0.2], [0.1]])
    u0, shifted = mppi.mppi_update(cfg, env, as_tensor([1.0, 0.0]), nominal, 0)
    assert_allclose(u0.numpy(), [0.5])
    assert_allclose(shifted.numpy(), [[-0.2], [0.1], [0.0]])


def test_terminal_value_adds_value_at_horizon_end():
    env = make_env('di')
    value = lqr_value(env)
    x = as_tensor([0.5, 0.5])
    nominal = torch.zeros(4, 1, dtype=torch.float64)
    plain = mppi.MppiConfig(samples=8, horizon=4)
    with_value = plain.replace(terminal_value=True)
    _, _, costs = mppi.mppi_sequence(plain, env, x, nominal, 3, value=value)
    _, _, costs_value = mppi.mppi_sequence(with_value, env, x, nominal, 3, value=value)
    assert bool((costs_value > costs).all())


def test_nominal_shape_checked():
    env = make_env('twolink')
    cfg = mppi.MppiConfig(horizon=3)
    with pytest.raises(ContractError):
        mppi.mppi_sequence(cfg, env, torch.zeros(4, dtype=torch.float64), torch.zeros(3, 1, dtype=torch.float64), 0)


@pytest.mark.parametrize("overrides", [dict(samples=0), dict(temperature=0.0), dict(integrator='rk45'),
                                       dict(noise_std=[1.0, -1.0]), dict(dt=-0.01)])
def test_invalid_mppi_configs(overrides):
    with pytest.raises(ContractError):
        mppi.MppiConfig(**overrides)


def test_warmstart_requires_value():
    env = make_env('di')
    with pytest.raises(ContractError):
        mppi.run_mpc(env, mppi.MppiConfig(warmstart=True), as_tensor([1.0, 0.0]))


@pytest.mark.parametrize("integrator", ['euler', 'rk4'])
def test_warmstarted_mpc_reaches_goal(integrator):
    env = make_env('di')
    cfg = mppi.MppiConfig(samples=16, horizon=5, noise_std=0.1, warmstart=True, max_steps=1000, tolerance=0.1,
                          integrator=integrator)
    result = mppi.run_mpc(env, cfg, as_tensor([0.5, 0.0]), value=lqr_value(env))
    assert result.completed
    assert 0 < result.steps < 1000
    assert result.states.shape == (result.steps + 1, 2)
    again = mppi.run_mpc(env, cfg, as_tensor([0.5, 0.0]), value=lqr_value(env))
    assert again.steps == result.steps and again.cost == result.cost


def test_step_cap():
    env = make_env('di')
    cfg = mppi.MppiConfig(samples=4, horizon=2, max_steps=7, tolerance=1e-9)
    result = mppi.run_mpc(env, cfg, as_tensor([1.0, 0.0]))
    assert not result.completed
    assert result.steps == 7
    assert result.horizon_ms == pytest.approx(20.0)


def test_compare_rows():
    env = make_env('di')
    cfg = mppi.MppiConfig(samples=4, horizon_large=3, horizon_small=1, max_steps=5, tolerance=1e-9,
                          initial_conditions=2)
    rows = mppi.compare(env, cfg, lqr_value(env), seeds=[0, 1])
    assert [row['warmstart'] for row in rows] == [False, False, True, True]
    assert [row['seed'] for row in rows] == [0, 1, 0, 1]
    assert rows[0]['horizon_ms'] == pytest.approx(30.0)
    assert rows[2]['horizon_ms'] == pytest.approx(10.0)
    assert all(row['steps'] == 5.0 for row in rows)
    assert all(row['env'] == 'di' and row['samples'] == 4 for row in rows)


def test_weights_are_translation_invariant():
    costs = as_tensor([3.0, 1.0, 2.5, 7.0])
    sequences = as_tensor(np.random.default_rng(0).normal(size=(4, 3, 2)))
    weights = mppi.importance_weights(costs, temperature=0.7)
    shifted = mppi.importance_weights(costs + 123.0, temperature=0.7)
    assert_allclose(shifted.numpy(), weights.numpy(), rtol=1e-12)
    assert_allclose(mppi.combine_samples(shifted, sequences).numpy(),
                    mppi.combine_samples(weights, sequences).numpy(), rtol=1e-12)


def test_high_temperature_gives_the_mean_sequence():
    sequences = as_tensor(np.random.default_rng(1).normal(size=(3, 4, 1)))
    weights = mppi.importance_weights([1.0, 5.0, 100.0], temperature=1e6)
    assert_allclose(mppi.combine_samples(weights, sequences).numpy(), sequences.mean(dim=0).numpy(),
                    rtol=1e-3, atol=1e-3)


def test_low_temperature_gives_the_best_sequence():
    sequences = as_tensor(np.random.default_rng(2).normal(size=(2, 4, 1)))
    weights = mppi.importance_weights([1.0, 100.0], temperature=1e-3)
    assert_allclose(mppi.combine_samples(weights, sequences).numpy(), sequences[0].numpy())


def test_warmstart_nominal_is_the_lqr_sequence():
    env = make_env('di')
    value = lqr_value(env)
    x0 = as_tensor([1.0, -0.5])
    controls = mppi.warmstart_nominal(value, env, x0, 5, 0.01)
    assert torch.equal(controls, rollout(value, env, x0, TimeGrid.from_steps(0.01, 5)).controls)
    K = lqr_gain(value, env).numpy()
    x = x0.numpy()
    for k in range(5):
        u = -K @ x
        assert_allclose(controls[k].numpy(), u, rtol=1e-10, atol=1e-12)
        x = x + 0.01 * np.array([x[1], u[0]])


class _UnusedValue(object):

    def __getattr__(self, name):
        raise AssertionError('value function accessed through %s' % name)


def test_vanilla_mpc_never_evaluates_the_value():
    env = make_env('di')
    cfg = mppi.MppiConfig(samples=4, horizon=3, max_steps=5)
    result = mppi.run_mpc(env, cfg, as_tensor([1.0, 0.0]), value=_UnusedValue())
    assert result.steps == 5


@pytest.mark.slow
@pytest.mark.parametrize("name,preset", [('di', 'di_value'), ('twolink', 'twolink_value')])
def test_warmstart_shortens_the_horizon(name, preset):
    env = make_env(name)
    value = train(preset_config(preset)).value
    cfg = mppi.MppiConfig(horizon_small=2, horizon_large=50, initial_conditions=20)
    rows = mppi.compare(env, cfg, value, seeds=[0, 1, 2])
    vanilla = np.mean([row['cost'] for row in rows if not row['warmstart']])
    warm = np.mean([row['cost'] for row in rows if row['warmstart']])
    assert warm <= vanilla
