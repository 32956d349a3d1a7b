import numpy as np
import pytest
import torch
from numpy.testing import assert_allclose

from hjbnode.envs import make_env
from hjbnode.errors import ContractError, DivergedRolloutError
from hjbnode.nets import QuadraticValue, ValueNetwork, as_tensor
from hjbnode.rollout import (TimeGrid, TrajectoryBatch, adjoint_gradient, adjoint_sweep, evaluate_cost,
                             lyapunov_descent_fraction, rollout)
from hjbnode.train import hinge_loss, squared_loss
from hjbnode import hjb


def _loss(value, env, x0, grid, loss_kind, include_control_cost=False):
    batch = rollout(value, env, x0, grid)
    if loss_kind == 'value':
        return squared_loss(hjb.value_residual(value, batch)).item()
    return hinge_loss(hjb.lyapunov_inner(value, batch, include_control_cost)).item()


def _fd_gradient(value, env, x0, grid, loss_kind, indices, h=1e-6, include_control_cost=False):
    out = []
    for i in indices:
        plus = value.params.clone()
        minus = value.params.clone()
        plus[i] += h
        minus[i] -= h
        out.append((_loss(value.with_params(plus), env, x0, grid, loss_kind, include_control_cost) -
                    _loss(value.with_params(minus), env, x0, grid, loss_kind, include_control_cost)) / (2 * h))
    return np.array(out)


@pytest.mark.parametrize("T,dt,K", [(7.0, 0.01, 700), (3.04, 0.08, 38), (1.0, 0.008, 125)])
def test_time_grid(T, dt, K):
    grid = TimeGrid(T, dt)
    assert grid.K == K
    assert grid.times.shape == (K + 1, )
    other = TimeGrid.from_steps(dt, K)
    assert other.K == K and other.T == pytest.approx(T)


@pytest.mark.parametrize("T,dt", [(1.0, 0.3), (0.0, 0.1), (1.0, -0.1)])
def test_invalid_time_grid(T, dt):
    with pytest.raises(ContractError):
        TimeGrid(T, dt)


def test_rollout_shapes():
    env = make_env('twolink')
    value = ValueNetwork('fcn', [5, 8, 1], seed=0)
    grid = TimeGrid(0.05, 0.01)
    batch = rollout(value, env, env.sample_initial(0, 3), grid)
    assert isinstance(batch, TrajectoryBatch)
    assert len(batch) == 3
    assert batch.states.shape == (6, 3, 4)
    assert batch.controls.shape == (5, 3, 2)
    assert batch.state_costs.shape == (5, 3)
    single = rollout(value, env, env.sample_initial(0, 3)[1], grid)
    assert_allclose(single.states.numpy(), batch.states[:, 1].numpy(), rtol=1e-10)


def test_rollout_of_zero_value_is_free_motion():
    env = make_env('di')
    value = QuadraticValue(np.zeros((2, 2)))
    grid = TimeGrid(0.1, 0.01)
    traj = rollout(value, env, as_tensor([0.0, 1.0]), grid)
    assert_allclose(traj.controls.numpy(), 0.0)
    assert_allclose(traj.states[-1].numpy(), [0.1, 1.0], rtol=1e-12)


def test_rollout_divergence_reports_step():
    env = make_env('di')
    value = QuadraticValue(-1e100 * np.eye(2))
    with pytest.raises(DivergedRolloutError) as err:
        rollout(value, env, as_tensor([1.0, 1.0]), TimeGrid(20.0, 1.0))
    assert 1 <= err.value.step <= 20


def test_rollout_rejects_bad_initial_states():
    env = make_env('di')
    value = QuadraticValue(np.eye(2))
    with pytest.raises(ContractError):
        rollout(value, env, as_tensor([[float('nan'), 0.0]]), TimeGrid(0.1, 0.01))
    with pytest.raises(ContractError):
        rollout(value, env, torch.zeros(2, 3, dtype=torch.float64), TimeGrid(0.1, 0.01))


@pytest.mark.parametrize("name,widths,T,dt,loss_kind", [
    ('di', [3, 5, 1], 0.2, 0.01, 'value'),
    ('cartpole_balance', [5, 6, 1], 0.04, 0.008, 'value'),
    ('twolink', [5, 4, 1], 0.05, 0.01, 'value'),
])
def test_value_gradient_matches_finite_differences(name, widths, T, dt, loss_kind):
    env = make_env(name)
    value = ValueNetwork('fcn', widths, seed=1, input_map=env.encode if env.has_encoding else None)
    grid = TimeGrid(T, dt)
    x0 = env.sample_initial(2, 3)
    loss, grad = adjoint_gradient(value, env, x0, grid, loss_kind)
    assert loss.item() == pytest.approx(_loss(value, env, x0, grid, loss_kind))
    indices = list(range(0, value.num_params, 2))
    assert_allclose(grad[indices].numpy(), _fd_gradient(value, env, x0, grid, loss_kind, indices),
                    rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("include_control_cost", [False, True])
def test_lyapunov_gradient_matches_finite_differences(include_control_cost):
    env = make_env('di')
    value = ValueNetwork('icnn-pd', [3, 4, 4, 1], seed=3)
    grid = TimeGrid(0.3, 0.01)
    x0 = env.sample_initial(4, 5)
    loss, grad = adjoint_gradient(value, env, x0, grid, 'lyapunov', include_control_cost=include_control_cost)
    indices = list(range(0, value.num_params, 3))
    fd = _fd_gradient(value, env, x0, grid, 'lyapunov', indices, include_control_cost=include_control_cost)
    assert_allclose(grad[indices].numpy(), fd, rtol=1e-5, atol=1e-8)


def test_open_loop_gradient_differs():
    env = make_env('cartpole_balance')
    value = ValueNetwork('fcn', [5, 6, 1], seed=1, input_map=env.encode)
    grid = TimeGrid(0.04, 0.008)
    x0 = env.sample_initial(2, 3)
    _, closed = adjoint_gradient(value, env, x0, grid, 'value')
    _, opened = adjoint_gradient(value, env, x0, grid, 'value', closed_loop=False)
    assert opened.shape == closed.shape
    assert bool(torch.isfinite(opened).all())
    assert not torch.allclose(opened, closed)


def test_adjoint_sweep_records_every_step():
    env = make_env('di')
    value = ValueNetwork('fcn', [3, 4, 1], seed=0)
    grid = TimeGrid(0.1, 0.01)
    batch = rollout(value, env, env.sample_initial(0, 2), grid)
    state, history = adjoint_sweep(value, env, batch, torch.ones(2, dtype=torch.float64), record=True)
    assert len(history) == grid.K + 1
    assert torch.equal(history[0], state.a)


def test_unknown_loss_kind():
    env = make_env('di')
    with pytest.raises(ContractError):
        adjoint_gradient(QuadraticValue(np.eye(2)), env, env.sample_initial(0, 2), TimeGrid(0.1, 0.01), 'hinge')


def test_evaluate_cost_and_descent_fraction():
    env = make_env('di')
    value = hjb.lqr_value(env)
    grid = TimeGrid(1.0, 0.01)
    x0 = env.sample_initial(0, 4)
    batch = rollout(value, env, x0, grid)
    assert evaluate_cost(value, env, x0, grid) == pytest.approx(batch.total_cost().mean().item())
    fraction = lyapunov_descent_fraction(value, env, x0, grid)
    assert 0.0 <= fraction <= 1.0


def test_gradient_is_invariant_under_batch_permutation():
    env = make_env('di')
    value = ValueNetwork('icnn-pd', [3, 4, 4, 1], seed=2)
    grid = TimeGrid(0.5, 0.01)
    x0 = env.sample_initial(6, 5)
    permuted = x0[torch.tensor([3, 0, 4, 2, 1])]
    for loss_kind in ('value', 'lyapunov'):
        loss, grad = adjoint_gradient(value, env, x0, grid, loss_kind)
        loss_p, grad_p = adjoint_gradient(value, env, permuted, grid, loss_kind)
        assert loss_p.item() == pytest.approx(loss.item(), rel=1e-12)
        assert_allclose(grad_p.numpy(), grad.numpy(), rtol=1e-12, atol=1e-12 * float(grad.abs().max()))


@pytest.mark.parametrize("loss_kind", ['value', 'lyapunov'])
def test_swingup_network_gradient_matches_finite_differences(loss_kind):
    env = make_env('cartpole_swingup')
    value = ValueNetwork('fcn', [5, 128, 128, 1], seed=4, input_map=env.encode)
    grid = TimeGrid(0.5, 0.02)
    x0 = env.sample_initial(7, 2)
    _, grad = adjoint_gradient(value, env, x0, grid, loss_kind)
    indices = [int(i) for i in np.linspace(0, value.num_params - 1, 24)]
    fd = _fd_gradient(value, env, x0, grid, loss_kind, indices, h=1e-5)
    assert_allclose(grad[indices].numpy(), fd, rtol=1e-5, atol=1e-6 * float(grad.abs().max()))
