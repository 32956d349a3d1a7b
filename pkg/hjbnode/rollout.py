"""
Module for forward Euler closed loop rollouts on a fixed time grid and the exact discrete adjoint gradient
of the batch losses with respect to the value function parameters.

The gradient differentiates the discretized rollout x_{k+1} = x_k + dt (f(x_k) + g(x_k) u_k) with
u_k = u*(x_k, t_k; theta) exactly (discretize-then-optimize) by a single reverse sweep over the stored
forward trajectory.
"""
import torch

from . import hjb
from .errors import ContractError, DivergedRolloutError, NumericDomainError
from .nets import DTYPE, as_tensor

LOSS_KINDS = ('value', 'lyapunov')


class TimeGrid(object):
    """
    Uniform time grid t_k = k * dt, k = 0..K on [0, T]

    :ivar T: Horizon in seconds
    :ivar dt: Step in seconds
    :ivar K: Number of steps, round(T / dt)
    """

    def __init__(self, T, dt):
        T = float(T)
        dt = float(dt)
        if not dt > 0 or not T > 0:
            raise ContractError('Time grid needs positive T and dt, got T=%g, dt=%g' % (T, dt))
        K = int(round(T / dt))
        if K < 1 or abs(K * dt - T) > 1e-9:
            raise ContractError('Horizon T=%g is not an integer multiple of dt=%g' % (T, dt))
        self.T = T
        self.dt = dt
        self.K = K

    @classmethod
    def from_steps(cls, dt, K):
        """Grid with K steps of size dt"""
        return cls(int(K) * float(dt), dt)

    @property
    def times(self):
        return torch.arange(self.K + 1, dtype=DTYPE) * self.dt

    def time(self, k):
        return k * self.dt

    def __repr__(self):
        return 'TimeGrid(T=%g, dt=%g, K=%i)' % (self.T, self.dt, self.K)

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and (self.T, self.dt, self.K) == (other.T, other.dt, other.K)


class Trajectory(object):
    """
    Single closed loop trajectory

    :ivar states: (K+1, n) states x_0..x_K
    :ivar controls: (K, m) controls u_0..u_{K-1}
    :ivar state_costs: (K,) l(x_k)
    :ivar control_costs: (K,) u_k^T R u_k
    :ivar grid: TimeGrid
    """

    def __init__(self, states, controls, state_costs, control_costs, grid):
        self.states = as_tensor(states)
        self.controls = as_tensor(controls)
        self.state_costs = as_tensor(state_costs)
        self.control_costs = as_tensor(control_costs)
        self.grid = grid
        K = grid.K
        if self.states.shape[0] != K + 1 or self.controls.shape[0] != K or \
                self.state_costs.shape[0] != K or self.control_costs.shape[0] != K:
            raise ContractError('Trajectory arrays do not match the grid with K=%i steps' % K)

    @property
    def costs(self):
        """Full running costs l(x_k) + u_k^T R u_k"""
        return self.state_costs + self.control_costs

    def total_cost(self):
        """dt * sum_k of the full running costs"""
        return self.grid.dt * self.costs.sum(dim=0)


class TrajectoryBatch(Trajectory):
    """
    Batch of N closed loop trajectories on a shared grid. Arrays carry the batch as their second axis:
    states (K+1, N, n), controls (K, N, m), costs (K, N).
    """

    def __len__(self):
        return int(self.states.shape[1])

    def trajectory(self, i):
        """The i-th trajectory of the batch"""
        return Trajectory(self.states[:, i], self.controls[:, i], self.state_costs[:, i], self.control_costs[:, i],
                          self.grid)


class AdjointState(object):
    """
    State of the reverse sweep

    :ivar a: (N, n) adjoint, the sensitivity of the loss to the state x_k
    :ivar g_theta: (P,) parameter gradient accumulated so far
    """

    def __init__(self, a, g_theta):
        self.a = a
        self.g_theta = g_theta

    def check_finite(self, k):
        if not bool(torch.isfinite(self.a).all()) or not bool(torch.isfinite(self.g_theta).all()):
            raise NumericDomainError('Non-finite adjoint at step %i' % k,
                                     {'step': k, 'adjoint': self.a, 'gradient': self.g_theta})


def _initial_batch(env, x0):
    x0 = as_tensor(x0)
    single = x0.dim() == 1
    if single:
        x0 = x0.unsqueeze(0)
    if x0.dim() != 2 or x0.shape[0] < 1 or x0.shape[1] != env.state_dim:
        raise ContractError('Initial states must have shape (N, %i), got %s' % (env.state_dim, tuple(x0.shape)))
    if not bool(torch.isfinite(x0).all()):
        raise ContractError('Initial states must be finite')
    return x0, single


def rollout(value, env, x0, grid):
    """
    Forward Euler closed loop rollout under the HJB policy of value

    :param value: ValueFunction
    :param env: ControlAffineSystem
    :param x0: Initial state (n,) or batch (N, n)
    :param grid: TimeGrid
    :return: Trajectory for a single initial state, TrajectoryBatch otherwise
    :raises DivergedRolloutError: when a state becomes non-finite, carrying the index of that state
    """
    x, single = _initial_batch(env, x0)
    cost = hjb.CostSpec.from_env(env)
    states = [x]
    controls, state_costs, control_costs = [], [], []
    for k in range(grid.K):
        t = grid.time(k)
        u = hjb.policy(value, env, x, t)
        if not bool(torch.isfinite(u).all()):
            raise DivergedRolloutError(k + 1, {'time': t, 'state': x})
        controls.append(u)
        state_costs.append(hjb.state_cost(cost, x))
        control_costs.append(hjb.control_cost(cost, u))
        x = x + grid.dt * env.dynamics(x, u)
        if not bool(torch.isfinite(x).all()):
            bad = (~torch.isfinite(x).all(dim=1)).nonzero().reshape(-1).tolist()
            raise DivergedRolloutError(k + 1, {'time': grid.time(k + 1), 'trajectories': bad})
        states.append(x)
    batch = TrajectoryBatch(torch.stack(states), torch.stack(controls), torch.stack(state_costs),
                            torch.stack(control_costs), grid)
    return batch.trajectory(0) if single else batch


def _loss_and_seed(value, batch, loss_kind, include_control_cost):
    N = len(batch)
    if loss_kind == 'value':
        r = hjb.value_residual(value, batch)
        return (r * r).mean(), 2.0 * r / N
    inner = hjb.lyapunov_inner(value, batch, include_control_cost)
    hinged, active = hjb.hinge(inner)
    return hinged.mean(), active.to(DTYPE) / N


def adjoint_sweep(value, env, batch, seed, closed_loop=True, include_control_cost=True, record=False):
    """
    Reverse sweep for the gradient of sum_i seed_i * r_i where r_i is the residual of trajectory i

    :param batch: TrajectoryBatch from rollout with the same value and env
    :param seed: (N,) weights of the residuals
    :param closed_loop: Include the dependence of the policy on the state (the g(x) du*/dx pathway)
    :param include_control_cost: Include u^T R u in the integrand
    :param record: Also return the adjoints a_K..a_0 as a list ordered by k
    :return: AdjointState at k = 0, or a tuple (AdjointState, list of (N, n) adjoints) if record is set
    """
    grid = batch.grid
    dt = grid.dt
    cost = hjb.CostSpec.from_env(env)
    seed = as_tensor(seed).reshape(-1)
    x_end = batch.states[-1]
    v_x_end, _ = value.input_derivatives(x_end, grid.T)
    state = AdjointState(seed.unsqueeze(1) * v_x_end,
                         value.param_gradient(x_end, grid.T, weights=seed)
                         - value.param_gradient(batch.states[0], 0.0, weights=seed))
    history = [state.a]
    for k in range(grid.K - 1, -1, -1):
        x = batch.states[k]
        u = batch.controls[k]
        t = grid.time(k)
        c_x, c_u = hjb.running_cost_partials(cost, x, u, seed * dt, include_control=include_control_cost)
        f_x, f_u = env.dynamics_vjp(x, u, state.a)
        b = c_u + dt * f_u
        p_x, p_theta = hjb.policy_vjp(value, env, x, t, b)
        a = state.a + dt * f_x + c_x
        if closed_loop:
            a = a + p_x
        state = AdjointState(a, state.g_theta + p_theta)
        state.check_finite(k)
        history.append(a)
    if record:
        return state, history[::-1]
    return state


def adjoint_gradient(value, env, x0, grid, loss_kind, closed_loop=True, include_control_cost=False,
                     trajectories=None):
    """
    Batch loss and its exact gradient with respect to the parameters of value

    The value loss is the mean squared value residual, the Lyapunov loss the mean hinged Lyapunov residual.

    :param x0: (N, n) initial states
    :param loss_kind: 'value' or 'lyapunov'
    :param closed_loop: Set to False to drop the state dependence of the policy from the adjoint recursion
    :param include_control_cost: Add u^T R u to the Lyapunov integrand
    :param trajectories: Optional TrajectoryBatch already rolled out from x0 with the same value and env
    :return: Tuple (loss as 0-dim tensor, (P,) gradient)
    """
    if loss_kind not in LOSS_KINDS:
        raise ContractError('Unknown loss kind %s' % loss_kind)
    batch = trajectories if trajectories is not None else rollout(value, env, _initial_batch(env, x0)[0], grid)
    loss, seed = _loss_and_seed(value, batch, loss_kind, include_control_cost)
    include_control = True if loss_kind == 'value' else include_control_cost
    state = adjoint_sweep(value, env, batch, seed, closed_loop=closed_loop, include_control_cost=include_control)
    if not bool(torch.isfinite(state.g_theta).all()):
        raise NumericDomainError('Non-finite parameter gradient', {'loss': float(loss)})
    return loss.detach(), state.g_theta


def evaluate_cost(value, env, x0, grid):
    """Mean over the batch of the full trajectory cost dt * sum_k (l(x_k) + u_k^T R u_k)"""
    x0, _ = _initial_batch(env, x0)
    batch = rollout(value, env, x0, grid)
    return float(batch.total_cost().mean())


def lyapunov_descent_fraction(value, env, x0, grid, tol=1e-3):
    """
    Fraction of Euler steps of the closed loop that violate v(x_{k+1}, t_{k+1}) - v(x_k, t_k) <= -dt l(x_k) + tol
    """
    x0, _ = _initial_batch(env, x0)
    batch = rollout(value, env, x0, grid)
    K, N = grid.K, len(batch)
    times = grid.times.repeat_interleave(N)
    v = value.forward(batch.states.reshape((K + 1) * N, -1), times).reshape(K + 1, N)
    violated = (v[1:] - v[:-1]) > -grid.dt * batch.state_costs + tol
    return float(violated.to(DTYPE).mean())
