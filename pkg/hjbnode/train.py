"""
Module with the training loop for the value and Lyapunov programs: batching over initial conditions, Adam
updates, ICNN projection, seeding and metric curves.
"""
import time
import warnings

import numpy as np
import torch
from hdmf.utils import docval, getargs

from .artifacts.output import PrintHelper
from .envs import ENV_PRESETS, make_env
from .errors import ContractError, NumericDomainError, TrainingDiverged
from .hjb import hinge, lyapunov_inner, value_residual
from .nets import NET_KINDS, ValueNetwork, as_tensor, icnn_invariant_report
from .rollout import LOSS_KINDS, TimeGrid, adjoint_gradient, rollout


_TRAIN_FIELDS = (
    {'name': 'env', 'type': str, 'doc': 'Name of the environment preset', 'default': 'di'},
    {'name': 'loss_kind', 'type': str, 'doc': 'Training program, value or lyapunov', 'default': 'lyapunov'},
    {'name': 'net_kind', 'type': str, 'doc': 'Network kind, fcn or icnn-pd', 'default': 'icnn-pd'},
    {'name': 'layer_widths', 'type': (list, tuple), 'doc': 'Layer widths starting with n+1 and ending with 1',
     'default': (3, 4, 4, 1)},
    {'name': 'num_initial', 'type': int, 'doc': 'Number N of initial conditions', 'default': 20},
    {'name': 'horizon', 'type': (int, float), 'doc': 'Horizon T in seconds', 'default': 7.0},
    {'name': 'dt', 'type': (int, float), 'doc': 'Integration time step in seconds', 'default': 0.01},
    {'name': 'epochs', 'type': int, 'doc': 'Number of parameter updates', 'default': 65},
    {'name': 'lr', 'type': (int, float), 'doc': 'Adam learning rate', 'default': 1e-3},
    {'name': 'beta1', 'type': (int, float), 'doc': 'Adam first moment decay', 'default': 0.9},
    {'name': 'beta2', 'type': (int, float), 'doc': 'Adam second moment decay', 'default': 0.999},
    {'name': 'adam_eps', 'type': (int, float), 'doc': 'Adam denominator offset', 'default': 1e-8},
    {'name': 'seed', 'type': int, 'doc': 'Seed of the initialization and the initial conditions', 'default': 0},
    {'name': 'epsilon', 'type': (int, float), 'doc': 'Weight of the quadratic term of icnn-pd networks',
     'default': 0.1},
    {'name': 'resample', 'type': bool, 'doc': 'Draw a fresh batch of initial conditions every epoch',
     'default': False},
    {'name': 'closed_loop', 'type': bool, 'doc': 'Differentiate through the state dependence of the policy',
     'default': True},
    {'name': 'include_control_cost', 'type': bool, 'doc': 'Add the control penalty to the Lyapunov integrand',
     'default': False},
    {'name': 'check_icnn', 'type': bool, 'doc': 'Sample the ICNN invariants after every epoch',
     'default': False},
    {'name': 'env_params', 'type': dict, 'doc': 'Overrides of the environment parameters', 'default': None},
)


class TrainConfig(object):
    """
    Description of a training run
    """

    FIELDS = tuple(spec['name'] for spec in _TRAIN_FIELDS)

    @docval(*_TRAIN_FIELDS)
    def __init__(self, **kwargs):
        for name in self.FIELDS:
            setattr(self, name, getargs(name, kwargs))
        self.layer_widths = [int(w) for w in self.layer_widths]
        self.horizon = float(self.horizon)
        self.dt = float(self.dt)
        for name in ('lr', 'beta1', 'beta2', 'adam_eps', 'epsilon'):
            setattr(self, name, float(getattr(self, name)))
        self.env_params = dict(self.env_params) if self.env_params else {}
        self.validate()

    def validate(self):
        if self.env not in ENV_PRESETS:
            raise ContractError('Unknown environment %s' % self.env)
        if self.loss_kind not in LOSS_KINDS:
            raise ContractError('Unknown loss kind %s' % self.loss_kind)
        if self.net_kind not in NET_KINDS:
            raise ContractError('Unknown network kind %s' % self.net_kind)
        if self.num_initial < 1 or self.epochs < 1:
            raise ContractError('num_initial and epochs must be at least 1')
        if not self.lr > 0 or not self.adam_eps > 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ContractError('Invalid Adam settings')
        if self.layer_widths[0] != ENV_PRESETS[self.env].state_dim + 1:
            raise ContractError('First layer width must be %i for %s'
                                % (ENV_PRESETS[self.env].state_dim + 1, self.env))
        if len(self.layer_widths) < 2 or self.layer_widths[-1] != 1 or any(w < 1 for w in self.layer_widths):
            raise ContractError('Invalid layer widths %s: need positive widths and a single output'
                                % self.layer_widths)
        if self.net_kind == 'icnn-pd' and not self.epsilon > 0:
            raise ContractError('epsilon must be positive for icnn-pd networks')
        make_env(self.env, **self.env_params)
        self.grid()

    def grid(self):
        return TimeGrid(self.horizon, self.dt)

    def to_dict(self):
        out = {name: getattr(self, name) for name in self.FIELDS}
        out['layer_widths'] = list(self.layer_widths)
        out['env_params'] = dict(self.env_params)
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def replace(self, **overrides):
        d = self.to_dict()
        d.update(overrides)
        return self.from_dict(d)

    def __eq__(self, other):
        return isinstance(other, TrainConfig) and self.to_dict() == other.to_dict()


PRESETS = {
    'di_lyapunov': dict(env='di', loss_kind='lyapunov', net_kind='icnn-pd', layer_widths=[3, 4, 4, 1],
                        num_initial=20, horizon=7.0, dt=0.01, epochs=65, lr=3e-3),
    'cp_balance_lyapunov': dict(env='cartpole_balance', loss_kind='lyapunov', net_kind='icnn-pd',
                                layer_widths=[5, 200, 500, 1], num_initial=100, horizon=1.0, dt=0.008,
                                epochs=30, lr=1e-3),
    'cp_swingup_value': dict(env='cartpole_swingup', loss_kind='value', net_kind='fcn',
                             layer_widths=[5, 128, 128, 1], num_initial=100, horizon=3.04, dt=0.08,
                             epochs=150, lr=1e-3),
    'twolink_value': dict(env='twolink', loss_kind='value', net_kind='fcn', layer_widths=[5, 128, 128, 1],
                          num_initial=100, horizon=3.0, dt=0.01, epochs=50, lr=1e-3),
    'di_value': dict(env='di', loss_kind='value', net_kind='fcn', layer_widths=[3, 64, 64, 1],
                     num_initial=20, horizon=7.0, dt=0.01, epochs=150, lr=3e-3),
}

# Published training statistics of the presets: epochs, normalized cost and horizon in ms
PRESET_REFERENCES = {
    'di_lyapunov': {'reference_epochs': 65, 'reference_normalized_cost': 0.29, 'reference_horizon_ms': 700},
    'cp_balance_lyapunov': {'reference_epochs': 30, 'reference_normalized_cost': 0.90, 'reference_horizon_ms': 100},
    'cp_swingup_value': {'reference_epochs': 150, 'reference_normalized_cost': 0.82, 'reference_horizon_ms': 300},
    'twolink_value': {'reference_epochs': 50, 'reference_normalized_cost': 0.54, 'reference_horizon_ms': 300},
    'di_value': {'reference_epochs': None, 'reference_normalized_cost': None, 'reference_horizon_ms': None},
}


def preset_config(name, **overrides):
    """TrainConfig of a named preset with optional field overrides"""
    if name not in PRESETS:
        raise ContractError('Unknown preset %s. Available: %s' % (name, ', '.join(sorted(PRESETS))))
    d = dict(PRESETS[name])
    d.update(overrides)
    return TrainConfig(**d)


class TrainResult(object):
    """
    Curves and final state of a training run. Curves have one entry per evaluated parameter vector, i.e.
    epochs + 1 entries for a completed run (entry 0 is the initialization).

    :ivar losses: Loss per epoch
    :ivar mean_costs: Mean trajectory cost per epoch
    :ivar wall_ms: Wall clock time per epoch in milliseconds
    :ivar icnn_checks: Invariant reports per epoch (empty unless check_icnn is set)
    :ivar value: Value function with the final parameters
    :ivar failed_epoch: Epoch at which a rollout diverged, None for a completed run
    """

    def __init__(self, config):
        self.config = config
        self.seed = config.seed
        self.losses = []
        self.mean_costs = []
        self.wall_ms = []
        self.icnn_checks = []
        self.value = None
        self.failed_epoch = None

    @property
    def params(self):
        return None if self.value is None else self.value.params

    @property
    def normalized_costs(self):
        return normalized_cost(self.mean_costs) if self.mean_costs else []

    @property
    def completed(self):
        return self.failed_epoch is None and len(self.losses) == self.config.epochs + 1


###########################################################################
#  Losses
###########################################################################

def squared_loss(residuals):
    """Mean of the squared residuals"""
    r = as_tensor(residuals)
    if r.numel() == 0:
        raise ContractError('Loss of an empty batch')
    return (r * r).mean()


def hinge_loss(inner):
    """Mean of the hinged inner values max(r, 0)"""
    r = as_tensor(inner)
    if r.numel() == 0:
        raise ContractError('Loss of an empty batch')
    return hinge(r)[0].mean()


def value_loss(value, env, x0, grid):
    """Mean squared value residual over the closed loop rollouts from the initial states x0"""
    return float(squared_loss(value_residual(value, rollout(value, env, x0, grid))))


def lyapunov_loss(value, env, x0, grid, include_control_cost=False):
    """Mean hinged Lyapunov residual over the closed loop rollouts from the initial states x0"""
    return float(hinge_loss(lyapunov_inner(value, rollout(value, env, x0, grid), include_control_cost)))


###########################################################################
#  Adam
###########################################################################

class AdamState(object):
    """
    Moments and step count of the Adam recurrence

    :ivar m: First moment estimate
    :ivar v: Second moment estimate
    :ivar step: Number of steps taken
    """

    def __init__(self, m, v, step=0):
        self.m = as_tensor(m)
        self.v = as_tensor(v)
        self.step = int(step)

    @classmethod
    def zeros(cls, num_params):
        return cls(torch.zeros(num_params, dtype=torch.float64), torch.zeros(num_params, dtype=torch.float64))


def adam_step(state, params, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """
    One bias-corrected Adam update

    :return: Tuple (new AdamState, new parameters)
    :raises NumericDomainError: if the gradient has non-finite entries
    """
    params = as_tensor(params)
    grads = as_tensor(grads)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ContractError('Adam shapes disagree: params %s, grads %s, moments %s'
                            % (tuple(params.shape), tuple(grads.shape), tuple(state.m.shape)))
    if not bool(torch.isfinite(grads).all()):
        raise NumericDomainError('Non-finite gradient passed to adam_step', {'gradient': grads})
    step = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    return AdamState(m, v, step), params - lr * m_hat / (torch.sqrt(v_hat) + eps)


###########################################################################
#  Training loop
###########################################################################

def normalized_cost(curve):
    """Scale a cost curve by its epoch-0 value"""
    curve = np.asarray(curve, dtype=float)
    if curve.size == 0:
        raise ContractError('Cannot normalize an empty curve')
    if curve[0] == 0 or not np.isfinite(curve[0]):
        raise ContractError('Cannot normalize a curve whose first value is %g' % curve[0])
    return (curve / curve[0]).tolist()


def build_value(config, env):
    """Freshly initialized ValueNetwork for the config, seeing encoded states when the env has an encoding"""
    return ValueNetwork(config.net_kind, config.layer_widths, epsilon=config.epsilon, seed=config.seed,
                        input_map=env.encode if env.has_encoding else None)


def _epoch_message(epoch, epochs, loss, cost, normalized, wall_ms):
    return 'epoch %i/%i loss=%.6e cost=%.6e normalized=%.4f (%i ms)' % (epoch, epochs, loss, cost, normalized,
                                                                      wall_ms)


def train(config, print_status=False, value=None):
    """
    Run the training loop

    Every epoch rolls out the current parameters from the batch of initial conditions, records the loss and
    mean trajectory cost and (except after the last evaluation) applies one Adam step with the exact discrete
    adjoint gradient, followed by the ICNN projection for icnn-pd networks.

    :param config: TrainConfig
    :param print_status: Print one status line per epoch
    :param value: Optional initial ValueNetwork, by default one is built from the config
    :return: TrainResult
    :raises TrainingDiverged: if a rollout diverges. The exception carries the partial result.
    """
    env = make_env(config.env, **config.env_params)
    grid = config.grid()
    value = build_value(config, env) if value is None else value
    rng = np.random.default_rng(config.seed)
    x0 = env.sample_initial(rng, config.num_initial)
    adam = AdamState.zeros(value.num_params)
    result = TrainResult(config)
    result.value = value
    if print_status:
        PrintHelper.print('Training %s on %s (%s, %i parameters)' % (config.net_kind, config.env, config.loss_kind,
                                                                     value.num_params), PrintHelper.BOLD)
    for epoch in range(config.epochs + 1):
        start = time.perf_counter()
        if config.resample and epoch > 0:
            x0 = env.sample_initial(rng, config.num_initial)
        try:
            batch = rollout(value, env, x0, grid)
            if epoch < config.epochs:
                loss, grad = adjoint_gradient(value, env, x0, grid, config.loss_kind,
                                              closed_loop=config.closed_loop,
                                              include_control_cost=config.include_control_cost,
                                              trajectories=batch)
            elif config.loss_kind == 'value':
                loss = squared_loss(value_residual(value, batch))
            else:
                loss = hinge_loss(lyapunov_inner(value, batch, config.include_control_cost))
        except NumericDomainError as e:
            result.failed_epoch = epoch
            if print_status:
                PrintHelper.print('epoch %i/%i failed: %s' % (epoch, config.epochs, e), PrintHelper.FAIL)
            raise TrainingDiverged(result, e)
        result.losses.append(float(loss))
        result.mean_costs.append(float(batch.total_cost().mean()))
        if config.check_icnn and value.kind == 'icnn-pd':
            result.icnn_checks.append(icnn_invariant_report(value, seed=epoch, horizon=grid.T))
        if epoch < config.epochs:
            adam, params = adam_step(adam, value.params, grad, config.lr, config.beta1, config.beta2,
                                     config.adam_eps)
            value = value.with_params(params)
            if value.kind == 'icnn-pd':
                value = value.project_icnn()
            result.value = value
        result.wall_ms.append(1000.0 * (time.perf_counter() - start))
        if print_status:
            if result.mean_costs[0] > 0:
                normalized = result.mean_costs[-1] / result.mean_costs[0]
            else:
                normalized = float('nan')
            PrintHelper.print(_epoch_message(epoch, config.epochs, result.losses[-1], result.mean_costs[-1],
                                             normalized, result.wall_ms[-1]), PrintHelper.OKBLUE, 1)
    if result.mean_costs[0] == 0:
        warnings.warn('Initial mean trajectory cost is zero; the normalized curve is undefined')
    return result
