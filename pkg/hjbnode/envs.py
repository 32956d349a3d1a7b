"""
Module with the analytic control-affine environments x' = f(x) + g(x) u.

Environments are immutable value objects. States are float64 torch tensors of shape (n,) or (B, n) in
physical coordinates; controls have shape (m,) or (B, m).
"""
from abc import ABC, abstractmethod
import math

import numpy as np
import torch

from .errors import ContractError, NumericDomainError
from .nets import DTYPE, as_tensor


def _check_cost_matrices(Q, R):
    """Check that Q is symmetric PSD and R symmetric PD"""
    if not torch.allclose(Q, Q.T, atol=1e-12) or not torch.allclose(R, R.T, atol=1e-12):
        raise ContractError('Cost matrices Q and R must be symmetric')
    if float(torch.linalg.eigvalsh(Q).min()) < -1e-12:
        raise ContractError('Q must be positive semi-definite')
    _, info = torch.linalg.cholesky_ex(R)
    if int(info) != 0:
        raise ContractError('R must be positive definite')


class ControlAffineSystem(ABC):
    """
    Base class for control-affine systems.

    Subclasses define the class attributes name, state_dim, control_dim, DEFAULT_PARAMS, DEFAULT_Q,
    DEFAULT_R, DEFAULT_INITIAL_LOW, DEFAULT_INITIAL_HIGH and DEFAULT_DT and implement drift and
    input_matrix for batched states.

    :ivar Q: (n, n) PSD state cost matrix
    :ivar R: (m, m) PD control cost matrix
    :ivar goal: (n,) goal state
    :ivar params: Dict with the physical parameters
    """
    name = None
    state_dim = None
    control_dim = None
    DEFAULT_PARAMS = {}
    DEFAULT_Q = None
    DEFAULT_R = None
    DEFAULT_INITIAL_LOW = None
    DEFAULT_INITIAL_HIGH = None
    DEFAULT_DT = 0.01
    has_encoding = False

    def __init__(self, Q=None, R=None, initial_low=None, initial_high=None, **params):
        unknown = set(params) - set(self.DEFAULT_PARAMS)
        if unknown:
            raise ContractError('Unknown parameters for %s: %s' % (self.name, ', '.join(sorted(unknown))))
        self.params = dict(self.DEFAULT_PARAMS)
        self.params.update({k: float(v) for k, v in params.items()})
        self.Q = as_tensor(self.DEFAULT_Q if Q is None else Q)
        self.R = as_tensor(self.DEFAULT_R if R is None else R)
        if self.Q.dim() == 1:
            self.Q = torch.diag(self.Q)
        if self.R.dim() < 2:
            self.R = torch.diag(self.R.reshape(-1))
        if self.Q.shape != (self.state_dim, self.state_dim) or self.R.shape != (self.control_dim, self.control_dim):
            raise ContractError('Cost matrices of %s must have shapes (%i, %i) and (%i, %i)'
                                % (self.name, self.state_dim, self.state_dim, self.control_dim, self.control_dim))
        _check_cost_matrices(self.Q, self.R)
        self.goal = torch.zeros(self.state_dim, dtype=DTYPE)
        self.initial_low = np.asarray(self.DEFAULT_INITIAL_LOW if initial_low is None else initial_low, dtype=float)
        self.initial_high = np.asarray(self.DEFAULT_INITIAL_HIGH if initial_high is None else initial_high,
                                       dtype=float)
        if self.initial_low.shape != (self.state_dim, ) or self.initial_high.shape != (self.state_dim, ) or \
                np.any(self.initial_low > self.initial_high):
            raise ContractError('Invalid initial region for %s' % self.name)

    def __repr__(self):
        return '%s(%s)' % (type(self).__name__, ', '.join('%s=%g' % kv for kv in sorted(self.params.items())))

    @abstractmethod
    def drift(self, x):
        """Drift f(x) for a (B, n) batch, returns (B, n)"""
        raise NotImplementedError()

    @abstractmethod
    def input_matrix_batch(self, x):
        """Input matrix g(x) for a (B, n) batch, returns (B, n, m)"""
        raise NotImplementedError()

    def _prepare_state(self, x):
        x = as_tensor(x)
        single = x.dim() == 1
        if single:
            x = x.unsqueeze(0)
        if x.dim() != 2 or x.shape[1] != self.state_dim:
            raise ContractError('%s expects states of dimension %i, got shape %s'
                                % (self.name, self.state_dim, tuple(x.shape)))
        if not bool(torch.isfinite(x).all()):
            raise NumericDomainError('Non-finite state passed to %s' % self.name, {'state': x})
        return x, single

    def _prepare_control(self, u, batch):
        u = as_tensor(u)
        if u.dim() == 1:
            u = u.unsqueeze(0).expand(batch, -1)
        if u.shape != (batch, self.control_dim):
            raise ContractError('%s expects controls of dimension %i, got shape %s'
                                % (self.name, self.control_dim, tuple(u.shape)))
        if not bool(torch.isfinite(u).all()):
            raise NumericDomainError('Non-finite control passed to %s' % self.name, {'control': u})
        return u

    def _prepare_direction(self, a, batch, dim):
        a = as_tensor(a)
        if a.dim() == 1:
            a = a.unsqueeze(0).expand(batch, -1)
        if a.shape != (batch, dim):
            raise ContractError('Expected a direction of dimension %i, got shape %s' % (dim, tuple(a.shape)))
        return a

    def vector_field(self, x, u):
        """f(x) + g(x) u for (B, n) states and (B, m) controls without input checks"""
        return self.drift(x) + torch.einsum('bnm,bm->bn', self.input_matrix_batch(x), u)

    def dynamics(self, x, u):
        """
        State derivative f(x) + g(x) u

        :param x: State (n,) or batch (B, n)
        :param u: Control (m,) or batch (B, m)
        :raises NumericDomainError: if x or u contain non-finite values
        """
        x, single = self._prepare_state(x)
        u = self._prepare_control(u, x.shape[0])
        out = self.vector_field(x, u)
        return out[0] if single else out

    def input_matrix(self, x):
        """Input matrix g(x) with shape (n, m) for a single state or (B, n, m) for a batch"""
        x, single = self._prepare_state(x)
        g = self.input_matrix_batch(x)
        return g[0] if single else g

    def dynamics_vjp(self, x, u, a):
        """
        Contractions of the dynamics Jacobians with the direction a, holding u fixed

        :return: Tuple (a^T d(f + g u)/dx, a^T g(x))
        """
        x, single = self._prepare_state(x)
        u = self._prepare_control(u, x.shape[0])
        a = self._prepare_direction(a, x.shape[0], self.state_dim)
        with torch.enable_grad():
            xg = x.clone().requires_grad_(True)
            out = self.vector_field(xg, u)
            (x_part, ) = torch.autograd.grad(out, xg, grad_outputs=a, allow_unused=True)
        x_part = torch.zeros_like(x) if x_part is None else x_part.detach()
        u_part = torch.einsum('bnm,bn->bm', self.input_matrix_batch(x), a)
        if single:
            return x_part[0], u_part[0]
        return x_part, u_part

    def input_matrix_vjp(self, x, p, c):
        """Gradient with respect to x of p^T g(x) c for fixed p (n-vector) and c (m-vector)"""
        x, single = self._prepare_state(x)
        p = self._prepare_direction(p, x.shape[0], self.state_dim)
        c = self._prepare_direction(c, x.shape[0], self.control_dim)
        with torch.enable_grad():
            xg = x.clone().requires_grad_(True)
            s = torch.einsum('bn,bnm,bm->', p, self.input_matrix_batch(xg), c)
            grad = torch.autograd.grad(s, xg, allow_unused=True)[0] if s.requires_grad else None
        grad = torch.zeros_like(x) if grad is None else grad.detach()
        return grad[0] if single else grad

    def encode(self, x):
        """Map physical states to the coordinates used by costs and networks (identity by default)"""
        return as_tensor(x)

    def sample_initial(self, rng, count):
        """
        Draw i.i.d. initial states from the configured box region

        :param rng: numpy Generator or integer seed
        :param count: Number of states N >= 1
        :return: Tensor of shape (N, n)
        """
        if int(count) < 1:
            raise ContractError('At least one initial condition must be sampled')
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        return as_tensor(rng.uniform(self.initial_low, self.initial_high, size=(int(count), self.state_dim)))


class DoubleIntegrator(ControlAffineSystem):
    """x1' = x2, x2' = u"""
    name = 'di'
    state_dim = 2
    control_dim = 1
    DEFAULT_Q = [1.0, 0.0]
    DEFAULT_R = [0.1]
    DEFAULT_INITIAL_LOW = [-1.0, -1.0]
    DEFAULT_INITIAL_HIGH = [1.0, 1.0]
    DEFAULT_DT = 0.01

    def drift(self, x):
        return torch.stack([x[:, 1], torch.zeros_like(x[:, 1])], dim=1)

    def input_matrix_batch(self, x):
        g = torch.zeros(x.shape[0], 2, 1, dtype=DTYPE)
        g[:, 1, 0] = 1.0
        return g


class CartPole(ControlAffineSystem):
    """
    Cart-pole with state [p, q, p', q'] where q = 0 is the upright pole and u is the horizontal force on the cart.
    Networks and costs see the encoded state [p, cos(q) - 1, p', q'].
    """
    state_dim = 4
    control_dim = 1
    has_encoding = True
    DEFAULT_PARAMS = {'m_cart': 1.0, 'm_pole': 0.1, 'length': 0.5, 'gravity': 9.81}

    def _terms(self, x):
        mc, mp = self.params['m_cart'], self.params['m_pole']
        length, grav = self.params['length'], self.params['gravity']
        sin_q, cos_q = torch.sin(x[:, 1]), torch.cos(x[:, 1])
        den = mc + mp * sin_q ** 2
        return mc, mp, length, grav, sin_q, cos_q, den

    def drift(self, x):
        mc, mp, length, grav, sin_q, cos_q, den = self._terms(x)
        qd = x[:, 3]
        p_acc = (-mp * length * qd ** 2 * sin_q + mp * grav * sin_q * cos_q) / den
        q_acc = (-mp * length * qd ** 2 * sin_q * cos_q + (mc + mp) * grav * sin_q) / (length * den)
        return torch.stack([x[:, 2], qd, p_acc, q_acc], dim=1)

    def input_matrix_batch(self, x):
        mc, mp, length, grav, sin_q, cos_q, den = self._terms(x)
        zeros = torch.zeros_like(den)
        return torch.stack([zeros, zeros, 1.0 / den, cos_q / (length * den)], dim=1).unsqueeze(2)

    def encode(self, x):
        x = as_tensor(x)
        return torch.cat([x[..., :1], torch.cos(x[..., 1:2]) - 1.0, x[..., 2:]], dim=-1)


class CartPoleBalance(CartPole):
    name = 'cartpole_balance'
    DEFAULT_Q = [0.5, 1.0, 0.01, 0.01]
    DEFAULT_R = [0.1]
    DEFAULT_INITIAL_LOW = [-0.2, -0.15, -0.1, -0.1]
    DEFAULT_INITIAL_HIGH = [0.2, 0.15, 0.1, 0.1]
    DEFAULT_DT = 0.008


class CartPoleSwingUp(CartPole):
    name = 'cartpole_swingup'
    DEFAULT_Q = [1.0, 1.0, 0.1, 0.1]
    DEFAULT_R = [0.1]
    DEFAULT_INITIAL_LOW = [0.0, math.pi - 0.05, 0.0, 0.0]
    DEFAULT_INITIAL_HIGH = [0.0, math.pi + 0.05, 0.0, 0.0]
    DEFAULT_DT = 0.08


class TwoLinkArm(ControlAffineSystem):
    """
    Planar two-link arm with joint torques, state [q1, q2, q1', q2'] and dynamics M(q) q'' + C(q, q') + B q' = u.
    Parameters follow the arm model used for iterative LQG (link masses, lengths, centre of mass distances,
    inertias and the joint friction matrix B).
    """
    name = 'twolink'
    state_dim = 4
    control_dim = 2
    DEFAULT_PARAMS = {'m1': 1.4, 'm2': 1.0, 'l1': 0.30, 'l2': 0.33, 's1': 0.11, 's2': 0.16,
                      'I1': 0.025, 'I2': 0.045, 'b11': 0.05, 'b12': 0.025, 'b21': 0.025, 'b22': 0.05}
    DEFAULT_Q = [1.0, 1.0, 0.1, 0.1]
    DEFAULT_R = [0.15, 0.15]
    DEFAULT_INITIAL_LOW = [-math.pi / 2, -math.pi / 2, 0.0, 0.0]
    DEFAULT_INITIAL_HIGH = [math.pi / 2, math.pi / 2, 0.0, 0.0]
    DEFAULT_DT = 0.01

    def _inertia_terms(self):
        prm = self.params
        a1 = prm['I1'] + prm['I2'] + prm['m2'] * prm['l1'] ** 2
        a2 = prm['m2'] * prm['l1'] * prm['s2']
        a3 = prm['I2']
        return a1, a2, a3

    def mass_matrix(self, x):
        """Mass matrix M(q) for a (B, n) batch, returns (B, 2, 2)"""
        a1, a2, a3 = self._inertia_terms()
        cos2 = torch.cos(x[:, 1])
        m11 = a1 + 2.0 * a2 * cos2
        m12 = a3 + a2 * cos2
        m22 = torch.full_like(cos2, a3)
        return torch.stack([torch.stack([m11, m12], dim=1), torch.stack([m12, m22], dim=1)], dim=1)

    def _inverse_mass(self, x):
        M = self.mass_matrix(x)
        det = M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0]
        adj = torch.stack([torch.stack([M[:, 1, 1], -M[:, 0, 1]], dim=1),
                           torch.stack([-M[:, 1, 0], M[:, 0, 0]], dim=1)], dim=1)
        return adj / det.view(-1, 1, 1)

    def drift(self, x):
        _, a2, _ = self._inertia_terms()
        prm = self.params
        qd1, qd2 = x[:, 2], x[:, 3]
        sin2 = torch.sin(x[:, 1])
        coriolis = torch.stack([-qd2 * (2.0 * qd1 + qd2), qd1 ** 2], dim=1) * (a2 * sin2).unsqueeze(1)
        friction = torch.stack([prm['b11'] * qd1 + prm['b12'] * qd2, prm['b21'] * qd1 + prm['b22'] * qd2], dim=1)
        acc = torch.einsum('bij,bj->bi', self._inverse_mass(x), -coriolis - friction)
        return torch.cat([x[:, 2:], acc], dim=1)

    def input_matrix_batch(self, x):
        return torch.cat([torch.zeros(x.shape[0], 2, 2, dtype=DTYPE), self._inverse_mass(x)], dim=1)

    def energy(self, x):
        """Kinetic energy 1/2 q'^T M(q) q' of a state (n,) or batch (B, n)"""
        x, single = self._prepare_state(x)
        qd = x[:, 2:]
        e = 0.5 * torch.einsum('bi,bij,bj->b', qd, self.mass_matrix(x), qd)
        return e[0] if single else e


ENV_PRESETS = {cls.name: cls for cls in (DoubleIntegrator, CartPoleBalance, CartPoleSwingUp, TwoLinkArm)}


def make_env(name, **overrides):
    """
    Create an environment preset by name

    :param name: One of di, cartpole_balance, cartpole_swingup, twolink
    :param overrides: Q, R, initial_low, initial_high or physical parameters of the preset
    """
    if name not in ENV_PRESETS:
        raise ContractError('Unknown environment %s. Available: %s' % (name, ', '.join(sorted(ENV_PRESETS))))
    return ENV_PRESETS[name](**overrides)


def rk4_step(env, x, u, dt):
    """Classical fourth order Runge-Kutta step of the dynamics with the control held constant"""
    k1 = env.dynamics(x, u)
    k2 = env.dynamics(x + 0.5 * dt * k1, u)
    k3 = env.dynamics(x + 0.5 * dt * k2, u)
    k4 = env.dynamics(x + dt * k3, u)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
