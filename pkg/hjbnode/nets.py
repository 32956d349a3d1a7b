"""
Module with the parameterized scalar functions v(x, t; theta) used as value and Lyapunov functions.

All functions work on batches: a state batch x has shape (B, n) and a time batch t has shape (B,).
Single points (x of shape (n,), scalar t) are accepted everywhere and return unbatched results.
Derivatives are exact and come from torch.autograd applied to the analytic network definitions.
"""
import copy
import warnings

import numpy as np
import torch

from .errors import ContractError, CheckpointParseError

DTYPE = torch.float64

NET_KINDS = ('fcn', 'icnn-pd')
ACTIVATIONS = ('softplus', )


def as_tensor(value):
    """Convert the given array-like to a float64 torch tensor"""
    return torch.as_tensor(value, dtype=DTYPE)


def softplus(z):
    """Smooth softplus log(1 + exp(z)) without the linear cut-over used by torch.nn.functional.softplus"""
    return torch.logaddexp(z, torch.zeros_like(z))


class ValueFunction(object):
    """
    Base class for scalar functions v(x, t; theta) with a flat parameter vector theta.

    Subclasses implement apply(theta, x, t) for batched inputs. All derivative operations are
    provided here on top of apply so that every subclass gets the same exact derivatives.

    :ivar state_dim: Dimension n of the state x
    :ivar params: 1D float64 tensor with the parameters theta
    """
    kind = None

    def __init__(self, state_dim, params):
        self.state_dim = int(state_dim)
        self.params = as_tensor(params).detach().reshape(-1).clone()

    @property
    def num_params(self):
        return int(self.params.numel())

    def apply(self, theta, x, t):
        """
        Evaluate v for the parameter vector theta on a batch of states x (B, n) and times t (B,)

        :return: Tensor of shape (B,)
        """
        raise NotImplementedError()

    def with_params(self, params):
        """Return a copy of this function that uses the given parameter vector"""
        if as_tensor(params).numel() != self.num_params:
            raise ContractError('Expected %i parameters but got %i' % (self.num_params, as_tensor(params).numel()))
        other = copy.copy(self)
        other.params = as_tensor(params).detach().reshape(-1).clone()
        return other

    def _prepare(self, x, t):
        x = as_tensor(x)
        single = x.dim() == 1
        if single:
            x = x.unsqueeze(0)
        if x.dim() != 2 or x.shape[1] != self.state_dim:
            raise ContractError('State has shape %s but the function expects dimension %i'
                                % (tuple(x.shape), self.state_dim))
        t = as_tensor(t)
        if t.dim() == 0:
            t = t.expand(x.shape[0])
        elif t.shape != (x.shape[0], ):
            raise ContractError('Time has shape %s but %i states were given' % (tuple(t.shape), x.shape[0]))
        if not bool(torch.isfinite(t).all()):
            raise ContractError('Time must be finite')
        return x.detach(), t.detach().clone(), single

    def forward(self, x, t):
        """
        Evaluate v(x, t; theta)

        :param x: State (n,) or batch of states (B, n)
        :param t: Time in seconds, scalar or (B,)
        :return: 0-dim tensor for a single state, otherwise tensor of shape (B,)
        """
        x, t, single = self._prepare(x, t)
        with torch.no_grad():
            v = self.apply(self.params, x, t)
        return v[0] if single else v

    def input_derivatives(self, x, t):
        """
        Exact gradient of v with respect to the state and the time

        :return: Tuple (v_x, v_t) with shapes (n,), () for a single state or (B, n), (B,) for a batch
        """
        x, t, single = self._prepare(x, t)
        with torch.enable_grad():
            xg = x.clone().requires_grad_(True)
            tg = t.clone().requires_grad_(True)
            v = self.apply(self.params, xg, tg)
            v_x, v_t = torch.autograd.grad(v.sum(), (xg, tg), allow_unused=True)
        v_x = torch.zeros_like(x) if v_x is None else v_x.detach()
        v_t = torch.zeros_like(t) if v_t is None else v_t.detach()
        if single:
            return v_x[0], v_t[0]
        return v_x, v_t

    def param_gradient(self, x, t, weights=None):
        """
        Exact gradient of v with respect to theta

        :param weights: Optional (B,) weights. For a batch the result is sum_i weights_i * dv(x_i, t_i)/dtheta
                        (unit weights if not given).
        :return: Tensor of shape (P,)
        """
        x, t, single = self._prepare(x, t)
        w = torch.ones(x.shape[0], dtype=DTYPE) if weights is None else as_tensor(weights).reshape(-1)
        with torch.enable_grad():
            theta = self.params.clone().requires_grad_(True)
            v = self.apply(theta, x, t)
            total = (v * w).sum()
            if not total.requires_grad:
                return torch.zeros_like(self.params)
            (g, ) = torch.autograd.grad(total, theta, allow_unused=True)
        return torch.zeros_like(self.params) if g is None else g.detach()

    def second_order_vjp(self, x, t, w):
        """
        Derivatives of the contraction v_x . w with respect to the state and the parameters

        :param w: Direction (n,) or batch of directions (B, n), held constant
        :return: Tuple (h_x, h_theta) where h_x = d(v_x . w)/dx has the shape of x and h_theta is the (P,)
                 parameter gradient summed over the batch
        """
        x, t, single = self._prepare(x, t)
        w = as_tensor(w)
        if w.dim() == 1:
            w = w.unsqueeze(0).expand(x.shape[0], -1)
        if w.shape != x.shape:
            raise ContractError('Direction has shape %s but states have shape %s' % (tuple(w.shape), tuple(x.shape)))
        with torch.enable_grad():
            theta = self.params.clone().requires_grad_(True)
            xg = x.clone().requires_grad_(True)
            v = self.apply(theta, xg, t)
            (v_x, ) = torch.autograd.grad(v.sum(), xg, create_graph=True)
            s = (v_x * w).sum()
            if s.requires_grad:
                h_x, h_theta = torch.autograd.grad(s, (xg, theta), allow_unused=True)
            else:
                h_x, h_theta = None, None
        h_x = torch.zeros_like(x) if h_x is None else h_x.detach()
        h_theta = torch.zeros_like(self.params) if h_theta is None else h_theta.detach()
        return (h_x[0] if single else h_x), h_theta


class ValueNetwork(ValueFunction):
    """
    Neural network value function with time appended as the last input coordinate.

    Two kinds are supported:

    * ``fcn``: fully connected softplus network without constraints
    * ``icnn-pd``: input convex network s(y) wrapped as
      v = s(x, t) - s(0, t) - s_x(0, t) x + epsilon * |x|^2, which is convex in x, zero at the origin and
      bounded below by epsilon * |x|^2. The weights on the propagated hidden path must be nonnegative
      (see project_icnn).

    :ivar kind: One of NET_KINDS
    :ivar layer_widths: List of layer widths, starting with n + 1 and ending with 1
    :ivar epsilon: Weight of the quadratic term of icnn-pd networks
    :ivar input_map: Optional callable applied to the state batch before the first layer
    """

    def __init__(self, kind, layer_widths, params=None, epsilon=0.1, activation='softplus', seed=0, input_map=None):
        if kind not in NET_KINDS:
            raise ContractError('Unknown network kind %s. Expected one of %s' % (kind, NET_KINDS))
        widths = [int(w) for w in layer_widths]
        if len(widths) < 2 or any(w < 1 for w in widths) or widths[-1] != 1 or widths[0] < 2:
            raise ContractError('Invalid layer widths %s: need n+1 >= 2 inputs and a single output' % layer_widths)
        if activation not in ACTIVATIONS:
            raise ContractError('Unsupported activation %s' % activation)
        if kind == 'icnn-pd' and not epsilon > 0:
            raise ContractError('epsilon must be positive for icnn-pd networks')
        self.kind = kind
        self.layer_widths = widths
        self.activation = activation
        self.epsilon = float(epsilon)
        self.input_map = input_map
        self._blocks = self._layout()
        num_params = sum(int(np.prod(shape)) for _, shape, _ in self._blocks)
        if params is None:
            super(ValueNetwork, self).__init__(widths[0] - 1, self._init_params(seed))
            if kind == 'icnn-pd':
                self.params = torch.where(self.nonnegative_mask, self.params.clamp(min=0), self.params)
        else:
            super(ValueNetwork, self).__init__(widths[0] - 1, params)
            if self.num_params != num_params:
                raise ContractError('Expected %i parameters for widths %s but got %i'
                                    % (num_params, widths, self.num_params))

    def _layout(self):
        """List of (name, shape, nonnegative) parameter blocks in the order they appear in theta"""
        widths = self.layer_widths
        blocks = []
        for layer in range(len(widths) - 1):
            if self.kind == 'fcn':
                blocks.append(('W%i' % layer, (widths[layer + 1], widths[layer]), False))
                blocks.append(('b%i' % layer, (widths[layer + 1], ), False))
            else:
                blocks.append(('A%i' % layer, (widths[layer + 1], widths[0]), False))
                blocks.append(('b%i' % layer, (widths[layer + 1], ), False))
                if layer > 0:
                    blocks.append(('W%i' % layer, (widths[layer + 1], widths[layer]), True))
        return blocks

    def _fan_in(self, layer):
        if self.kind == 'fcn':
            return self.layer_widths[layer]
        return self.layer_widths[0] + (self.layer_widths[layer] if layer > 0 else 0)

    def _init_params(self, seed):
        generator = torch.Generator().manual_seed(int(seed))
        chunks = []
        for name, shape, _ in self._blocks:
            bound = 1.0 / np.sqrt(self._fan_in(int(name[1:])))
            chunks.append(((torch.rand(shape, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * bound).reshape(-1))
        return torch.cat(chunks)

    @property
    def nonnegative_mask(self):
        """Boolean (P,) mask of the weights on the ICNN's nonnegative path"""
        mask = [torch.full((int(np.prod(shape)), ), nonneg, dtype=torch.bool) for _, shape, nonneg in self._blocks]
        return torch.cat(mask)

    def unflatten(self, theta):
        """Split theta into a dict of named weight views"""
        out = {}
        offset = 0
        for name, shape, _ in self._blocks:
            size = int(np.prod(shape))
            out[name] = theta[offset:offset + size].view(shape)
            offset += size
        return out

    def _mapped(self, x):
        return x if self.input_map is None else self.input_map(x)

    def apply(self, theta, x, t):
        weights = self.unflatten(theta)
        num_layers = len(self.layer_widths) - 1
        y_state = self._mapped(x)
        if self.kind == 'fcn':
            h = torch.cat([y_state, t.unsqueeze(1)], dim=1)
            for layer in range(num_layers):
                h = h @ weights['W%i' % layer].T + weights['b%i' % layer]
                if layer < num_layers - 1:
                    h = softplus(h)
            return h[:, 0]
        y = torch.cat([y_state, t.unsqueeze(1)], dim=1)
        y_origin = torch.cat([torch.zeros_like(y_state), t.unsqueeze(1)], dim=1)
        s, _ = self._icnn(weights, y)
        s_origin, slope_origin = self._icnn(weights, y_origin, state_jacobian=True)
        # subtracting the tangent plane at the origin keeps convexity and gives s - plane >= 0
        return s - s_origin - (slope_origin * y_state).sum(dim=1) + self.epsilon * (y_state * y_state).sum(dim=1)

    def _icnn(self, weights, y, state_jacobian=False):
        """
        Evaluate the input convex network on the inputs y = [x, t]

        :param state_jacobian: Also propagate the Jacobian of the output with respect to the state coordinates
        :return: Tuple with the (B,) outputs and the (B, n) state gradient (None if not requested)
        """
        num_layers = len(self.layer_widths) - 1
        n = self.state_dim
        z = None
        dz = None
        for layer in range(num_layers):
            A = weights['A%i' % layer]
            pre = y @ A.T + weights['b%i' % layer]
            dpre = A[:, :n].unsqueeze(0).expand(y.shape[0], -1, -1) if state_jacobian else None
            if layer > 0:
                W = weights['W%i' % layer]
                pre = pre + z @ W.T
                if state_jacobian:
                    dpre = dpre + torch.einsum('ij,bjk->bik', W, dz)
            if layer < num_layers - 1:
                z = softplus(pre)
                if state_jacobian:
                    dz = torch.sigmoid(pre).unsqueeze(-1) * dpre
            else:
                z = pre
                dz = dpre
        return z[:, 0], (dz[:, 0, :] if state_jacobian else None)

    def project_icnn(self):
        """
        Clamp all weights on the nonnegative path at zero

        :return: New ValueNetwork. FCN networks are returned unchanged with a warning.
        """
        if self.kind != 'icnn-pd':
            warnings.warn('project_icnn called on a %s network; nothing to project' % self.kind)
            return self
        mask = self.nonnegative_mask
        return self.with_params(torch.where(mask, self.params.clamp(min=0), self.params))

    def with_input_map(self, input_map):
        """Return a copy of the network that applies input_map to the state before the first layer"""
        other = copy.copy(self)
        other.input_map = input_map
        return other

    def to_document(self, metadata=None):
        """
        Convert the network to a plain dict for serialization

        :param metadata: Dict with env, seed and epoch information
        """
        return {'kind': self.kind,
                'layer_widths': list(self.layer_widths),
                'activation': self.activation,
                'epsilon': self.epsilon,
                'params': [float(p) for p in self.params.tolist()],
                'metadata': dict(metadata) if metadata is not None else {}}

    @classmethod
    def from_document(cls, doc):
        """
        Build a network from a dict created by to_document

        :raises CheckpointParseError: naming the first missing or malformed field
        """
        if not isinstance(doc, dict):
            raise CheckpointParseError('document', 'expected a mapping at the top level')
        for field in ('kind', 'layer_widths', 'activation', 'epsilon', 'params', 'metadata'):
            if field not in doc:
                raise CheckpointParseError(field, 'missing')
        if doc['kind'] not in NET_KINDS:
            raise CheckpointParseError('kind', 'unknown network kind %s' % doc['kind'])
        if not isinstance(doc['layer_widths'], list) or not all(isinstance(w, int) for w in doc['layer_widths']):
            raise CheckpointParseError('layer_widths', 'expected a list of integers')
        if doc['activation'] not in ACTIVATIONS:
            raise CheckpointParseError('activation', 'unsupported activation %s' % doc['activation'])
        try:
            epsilon = float(doc['epsilon'])
        except (TypeError, ValueError):
            raise CheckpointParseError('epsilon', 'not a number')
        if not isinstance(doc['params'], list):
            raise CheckpointParseError('params', 'expected a list of decimals')
        try:
            params = [float(p) for p in doc['params']]
        except (TypeError, ValueError):
            raise CheckpointParseError('params', 'contains a non-numeric entry')
        if not np.all(np.isfinite(params)):
            raise CheckpointParseError('params', 'contains non-finite values')
        if not isinstance(doc['metadata'], dict):
            raise CheckpointParseError('metadata', 'expected a mapping')
        try:
            return cls(doc['kind'], doc['layer_widths'], params=params, epsilon=epsilon,
                       activation=doc['activation'])
        except ContractError as e:
            raise CheckpointParseError('params', str(e))


class QuadraticValue(ValueFunction):
    """
    Diagnostic quadratic value function v(x, t) = x^T P(t) x.

    P(t) is piecewise linear between knot matrices P_j at increasing knot times (held constant outside
    the knot range). A single knot gives a time-invariant quadratic. The parameters are the stacked knot
    matrices, so all derivative operations of ValueFunction apply.
    """
    kind = 'quadratic'

    def __init__(self, P, times=None):
        P = as_tensor(P)
        if P.dim() == 2:
            P = P.unsqueeze(0)
        if P.dim() != 3 or P.shape[1] != P.shape[2]:
            raise ContractError('P must be a square matrix or a stack of square matrices')
        if times is None:
            if P.shape[0] != 1:
                raise ContractError('Knot times are required for more than one matrix')
            times = [0.0]
        self.times = as_tensor(times).reshape(-1)
        if self.times.numel() != P.shape[0]:
            raise ContractError('Got %i knot times for %i matrices' % (self.times.numel(), P.shape[0]))
        if self.times.numel() > 1 and not bool((self.times[1:] > self.times[:-1]).all()):
            raise ContractError('Knot times must be strictly increasing')
        super(QuadraticValue, self).__init__(P.shape[1], P.reshape(-1))

    def matrices(self, theta, t):
        """Interpolated matrices P(t) for a time batch, shape (B, n, n)"""
        n = self.state_dim
        stack = theta.view(-1, n, n)
        if stack.shape[0] == 1:
            return stack[0].expand(t.shape[0], n, n)
        idx = (torch.searchsorted(self.times, t.detach(), right=True) - 1).clamp(0, stack.shape[0] - 2)
        t0 = self.times[idx]
        t1 = self.times[idx + 1]
        alpha = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0).view(-1, 1, 1)
        return (1.0 - alpha) * stack[idx] + alpha * stack[idx + 1]

    def apply(self, theta, x, t):
        return torch.einsum('bi,bij,bj->b', x, self.matrices(theta, t), x)


def icnn_invariant_report(net, n_triples=1000, seed=0, box=5.0, horizon=1.0, tol=1e-9):
    """
    Sample the structural properties of an icnn-pd network in its input coordinates.

    Checks midpoint convexity v(lx + (1-l)y) <= l v(x) + (1-l) v(y) + tol, v(0, t) = 0 and
    v(x, t) >= epsilon |x|^2 on random points of [-box, box]^n x [0, horizon].

    :return: Dict with boolean entries convex, origin, lower_bound, nonnegative and the float max_convexity_gap
    """
    if net.kind != 'icnn-pd':
        raise ContractError('Invariant report requires an icnn-pd network')
    plain = net.with_input_map(None)
    rng = np.random.default_rng(seed)
    n = plain.state_dim
    x = as_tensor(rng.uniform(-box, box, size=(n_triples, n)))
    y = as_tensor(rng.uniform(-box, box, size=(n_triples, n)))
    lam = as_tensor(rng.uniform(0.0, 1.0, size=n_triples))
    t = as_tensor(rng.uniform(0.0, horizon, size=n_triples))
    mid = lam.unsqueeze(1) * x + (1.0 - lam.unsqueeze(1)) * y
    gap = plain.forward(mid, t) - (lam * plain.forward(x, t) + (1.0 - lam) * plain.forward(y, t))
    at_origin = plain.forward(torch.zeros_like(x), t)
    lower = plain.forward(x, t) - plain.epsilon * (x * x).sum(dim=1)
    return {'convex': bool((gap <= tol).all()),
            'origin': bool((at_origin.abs() <= 1e-12).all()),
            'lower_bound': bool((lower >= -1e-12).all()),
            'nonnegative': bool((plain.params[plain.nonnegative_mask] >= 0).all()),
            'max_convexity_gap': float(gap.max())}
