"""
Module with the HJB feedback policy, the quadratic running cost and the value and Lyapunov residuals that
define the training losses. Also provides linear-quadratic reference value functions.
"""
import numpy as np
import torch
from scipy.integrate import solve_ivp
from scipy.linalg import solve_continuous_are

from .errors import ContractError, NumericDomainError
from .envs import _check_cost_matrices
from .nets import DTYPE, QuadraticValue, as_tensor


class CostSpec(object):
    """
    Time-invariant quadratic cost l(x) + u^T R u with l(x) = e(x)^T Q e(x), where e is the state encoding.

    :ivar Q: (n, n) PSD matrix
    :ivar R: (m, m) PD matrix
    :ivar encode: Callable mapping physical states to the cost coordinates (identity if None)
    """

    def __init__(self, Q, R, encode=None):
        self.Q = as_tensor(Q)
        self.R = as_tensor(R)
        if self.Q.dim() != 2 or self.R.dim() != 2:
            raise ContractError('Q and R must be matrices')
        _check_cost_matrices(self.Q, self.R)
        self.encode = encode

    @classmethod
    def from_env(cls, env):
        """Cost of an environment preset. Q and R are shared with the environment."""
        cost = cls.__new__(cls)
        cost.Q = env.Q
        cost.R = env.R
        cost.encode = env.encode
        return cost

    def _encoded(self, x):
        return x if self.encode is None else self.encode(x)


def _as_batch(x, dim, what):
    x = as_tensor(x)
    single = x.dim() == 1
    if single:
        x = x.unsqueeze(0)
    if x.dim() != 2 or x.shape[1] != dim:
        raise ContractError('%s must have dimension %i, got shape %s' % (what, dim, tuple(x.shape)))
    return x, single


def _solve_R(R, rhs):
    """R^-1 rhs for a (B, m) batch of right hand sides"""
    return torch.linalg.solve(R, rhs.T).T


def policy(value, env, x, t):
    """
    HJB feedback policy u* = -1/2 R^-1 g(x)^T v_x(x, t)

    :param value: ValueFunction over the physical state of env
    :param env: ControlAffineSystem
    :param x: State (n,) or batch (B, n)
    :param t: Time, scalar or (B,)
    :return: Control (m,) or batch (B, m)
    """
    if value.state_dim != env.state_dim:
        raise ContractError('Value function has state dimension %i but %s has %i'
                            % (value.state_dim, env.name, env.state_dim))
    xb, single = _as_batch(x, env.state_dim, 'State')
    v_x, _ = value.input_derivatives(xb, t)
    g = env.input_matrix(xb)
    u = -0.5 * _solve_R(env.R, torch.einsum('bnm,bn->bm', g, v_x))
    return u[0] if single else u


def state_cost(cost, x):
    """State cost l(x) = e(x)^T Q e(x); scalar for a single state, (B,) for a batch"""
    x = as_tensor(x)
    e = cost._encoded(x)
    return torch.einsum('...i,ij,...j->...', e, cost.Q, e)


def control_cost(cost, u):
    """Control penalty u^T R u"""
    u = as_tensor(u)
    return torch.einsum('...i,ij,...j->...', u, cost.R, u)


def running_cost(cost, x, u):
    """
    Running cost l(x) + u^T R u (cost per second)

    :param cost: CostSpec
    :param x: State (n,) or batch (B, n)
    :param u: Control (m,) or batch (B, m)
    """
    x = as_tensor(x)
    u = as_tensor(u)
    if x.shape[-1] != cost.Q.shape[0]:
        raise ContractError('State dimension %i does not match Q' % x.shape[-1])
    if u.shape[-1] != cost.R.shape[0]:
        raise ContractError('Control dimension %i does not match R' % u.shape[-1])
    return state_cost(cost, x) + control_cost(cost, u)


def running_cost_partials(cost, x, u, weights, include_control=True):
    """
    Weighted partial derivatives of the running cost of a batch

    :param weights: (B,) weights w_i
    :param include_control: Include the u^T R u term
    :return: Tuple (d/dx, d/du) of sum_i w_i c(x_i, u_i) with shapes (B, n) and (B, m)
    """
    x = as_tensor(x)
    u = as_tensor(u)
    w = as_tensor(weights).reshape(-1)
    with torch.enable_grad():
        xg = x.clone().requires_grad_(True)
        total = (w * state_cost(cost, xg)).sum()
        (c_x, ) = torch.autograd.grad(total, xg, allow_unused=True)
    c_x = torch.zeros_like(x) if c_x is None else c_x.detach()
    if include_control:
        c_u = 2.0 * w.unsqueeze(1) * (u @ cost.R.T)
    else:
        c_u = torch.zeros_like(u)
    return c_x, c_u


def policy_vjp(value, env, x, t, b):
    """
    Contraction of the policy Jacobians with the control direction b

    With c = R^-1 b and w = g(x) c, b^T u* = -1/2 v_x . w, so b^T du*/dx = -1/2 (d(v_x . w)/dx + d(v_x^T g(x) c)/dx)
    and b^T du*/dtheta = -1/2 d(v_x . w)/dtheta.

    :param b: (B, m) control directions
    :return: Tuple ((B, n) state part, (P,) parameter part summed over the batch)
    """
    x, _ = _as_batch(x, env.state_dim, 'State')
    b, _ = _as_batch(b, env.control_dim, 'Direction')
    c = _solve_R(env.R, b)
    w = torch.einsum('bnm,bm->bn', env.input_matrix(x), c)
    h_x, h_theta = value.second_order_vjp(x, t, w)
    v_x, _ = value.input_derivatives(x, t)
    g_part = env.input_matrix_vjp(x, v_x, c)
    return -0.5 * (h_x + g_part), -0.5 * h_theta


def _endpoint_values(value, traj):
    grid = traj.grid
    states = traj.states
    if states.dim() == 2:
        states = states.unsqueeze(1)
    v_end = value.forward(states[-1], grid.T)
    v_start = value.forward(states[0], 0.0)
    return v_end, v_start


def _residual(value, traj, integrand):
    if traj.grid.K < 1 or traj.states.shape[0] < 2:
        raise ContractError('Residuals need a trajectory with at least one step')
    v_end, v_start = _endpoint_values(value, traj)
    integral = traj.grid.dt * integrand.sum(dim=0)
    r = v_end - v_start + integral
    if not bool(torch.isfinite(r).all()):
        raise NumericDomainError('Non-finite residual', {'residual': r})
    return r[0] if traj.states.dim() == 2 else r


def value_residual(value, traj):
    """
    Value consistency residual r = v(x_K, T) - v(x_0, 0) + dt * sum_k c_k with c_k = l(x_k) + u_k^T R u_k

    :param traj: Trajectory (returns a 0-dim tensor) or TrajectoryBatch (returns (N,))
    """
    return _residual(value, traj, traj.costs if traj.costs.dim() > 1 else traj.costs.unsqueeze(1))


def lyapunov_inner(value, traj, include_control_cost=False):
    """Inner expression of the Lyapunov residual, integrating only l(x) unless include_control_cost is set"""
    integrand = traj.costs if include_control_cost else traj.state_costs
    return _residual(value, traj, integrand if integrand.dim() > 1 else integrand.unsqueeze(1))


def hinge(inner):
    """
    Hinge max(inner, 0)

    :return: Tuple (hinge values, boolean gradient-active mask). The hinge is inactive at exactly 0.
    """
    inner = as_tensor(inner)
    active = inner > 0
    return torch.where(active, inner, torch.zeros_like(inner)), active


def lyapunov_residual(value, traj, include_control_cost=False):
    """Lyapunov residual max(v(x_K, T) - v(x_0, 0) + dt * sum_k l(x_k), 0)"""
    return hinge(lyapunov_inner(value, traj, include_control_cost))[0]


###########################################################################
#  Linear-quadratic references
###########################################################################

def linearize(env):
    """
    Linearization of the dynamics at the goal with zero control

    :return: Tuple of numpy arrays (A, B)
    """
    goal = env.goal.clone()
    zero = torch.zeros(env.control_dim, dtype=DTYPE)
    A = torch.autograd.functional.jacobian(lambda x: env.dynamics(x, zero), goal)
    B = env.input_matrix(goal)
    return A.detach().numpy(), B.detach().numpy()


def lqr_value(env):
    """Infinite horizon LQR value x^T P x of the linearized system as a time-invariant QuadraticValue"""
    A, B = linearize(env)
    P = solve_continuous_are(A, B, env.Q.numpy(), env.R.numpy())
    return QuadraticValue(0.5 * (P + P.T))


def riccati_value(env, T, num_knots=701, terminal=None):
    """
    Finite horizon value x^T P(t) x from the Riccati differential equation
    -P' = A^T P + P A - P B R^-1 B^T P + Q with P(T) = terminal (zero by default)

    :param T: Horizon in seconds
    :param num_knots: Number of evenly spaced knot times on [0, T]
    :return: QuadraticValue interpolating P(t) between the knots
    """
    if not T > 0 or int(num_knots) < 2:
        raise ContractError('Need a positive horizon and at least two knots')
    A, B = linearize(env)
    Q = env.Q.numpy()
    R_inv = np.linalg.inv(env.R.numpy())
    n = A.shape[0]
    P_T = np.zeros((n, n)) if terminal is None else np.asarray(terminal, dtype=float)

    def backward(s, p):
        P = p.reshape(n, n)
        dP = A.T @ P + P @ A - P @ B @ R_inv @ B.T @ P + Q
        return dP.reshape(-1)

    times = np.linspace(0.0, float(T), int(num_knots))
    s_eval = float(T) - times[::-1]
    sol = solve_ivp(backward, (0.0, float(T)), P_T.reshape(-1), t_eval=s_eval, rtol=1e-10, atol=1e-12)
    if not sol.success:
        raise NumericDomainError('Riccati integration failed: %s' % sol.message)
    stack = sol.y.T.reshape(-1, n, n)[::-1]
    stack = 0.5 * (stack + np.transpose(stack, (0, 2, 1)))
    return QuadraticValue(np.ascontiguousarray(stack), times)


def lqr_gain(value, env, t=0.0):
    """Feedback gain K(t) = R^-1 B^T P(t) of a QuadraticValue, so that its policy is u = -K x"""
    P = value.matrices(value.params, as_tensor([t]))[0]
    _, B = linearize(env)
    return _solve_R(env.R, (as_tensor(B).T @ P).T).T


def lqr_cost(value, x0, t=0.0):
    """Mean optimal cost x0^T P(t) x0 of a batch of initial states under a quadratic reference value"""
    x0, _ = _as_batch(x0, value.state_dim, 'State')
    return float(value.forward(x0, t).mean())
