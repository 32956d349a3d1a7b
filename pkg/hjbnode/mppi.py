"""
Module with the MPPI model predictive controller and its warmstart from a learned value function.
"""
import numpy as np
import torch
from hdmf.utils import docval, getargs

from .artifacts.output import PrintHelper
from .envs import rk4_step
from .errors import ContractError, ControllerError, DivergedRolloutError
from .hjb import CostSpec, control_cost, running_cost, state_cost
from .nets import DTYPE, as_tensor
from .rollout import TimeGrid, rollout

INTEGRATORS = ('euler', 'rk4')

_MPPI_FIELDS = (
    {'name': 'samples', 'type': int, 'doc': 'Number K of sampled control sequences', 'default': 256},
    {'name': 'horizon', 'type': int, 'doc': 'Planning horizon H in control steps', 'default': 2},
    {'name': 'dt', 'type': (int, float), 'doc': 'Control time step in seconds, the env default if not given',
     'default': None},
    {'name': 'temperature', 'type': (int, float), 'doc': 'Temperature lambda of the importance weights',
     'default': 1.0},
    {'name': 'noise_std', 'type': (int, float, list, tuple), 'doc': 'Noise standard deviation per control dimension',
     'default': 1.0},
    {'name': 'warmstart', 'type': bool, 'doc': 'Rebuild the nominal sequence from the learned policy every step',
     'default': False},
    {'name': 'terminal_value', 'type': bool, 'doc': 'Add the learned value at the end of the horizon to the '
                                                    'sample costs', 'default': False},
    {'name': 'max_steps', 'type': int, 'doc': 'Cap on the number of environment steps', 'default': 1000},
    {'name': 'tolerance', 'type': (int, float), 'doc': 'Completion tolerance on the encoded distance to the goal',
     'default': 0.1},
    {'name': 'integrator', 'type': str, 'doc': 'Integrator used to advance the environment, euler or rk4',
     'default': 'euler'},
    {'name': 'seed', 'type': int, 'doc': 'Seed of the sampling noise', 'default': 0},
    {'name': 'initial_conditions', 'type': int, 'doc': 'Number of initial conditions per run', 'default': 20},
    {'name': 'horizon_small', 'type': int, 'doc': 'Horizon of the warmstarted arm of a comparison', 'default': 2},
    {'name': 'horizon_large', 'type': int, 'doc': 'Horizon of the vanilla arm of a comparison', 'default': 50},
)


class MppiConfig(object):
    """
    Settings of the MPPI controller
    """

    FIELDS = tuple(spec['name'] for spec in _MPPI_FIELDS)

    @docval(*_MPPI_FIELDS)
    def __init__(self, **kwargs):
        for name in self.FIELDS:
            setattr(self, name, getargs(name, kwargs))
        self.dt = None if self.dt is None else float(self.dt)
        self.temperature = float(self.temperature)
        self.tolerance = float(self.tolerance)
        if isinstance(self.noise_std, (list, tuple)):
            self.noise_std = [float(s) for s in self.noise_std]
        else:
            self.noise_std = float(self.noise_std)
        if self.samples < 1 or min(self.horizon, self.horizon_small, self.horizon_large) < 1 or self.max_steps < 0 \
                or self.initial_conditions < 1:
            raise ContractError('MPPI needs samples, horizons and initial_conditions >= 1 and max_steps >= 0')
        if not self.temperature > 0 or not np.all(np.asarray(self.noise_std) > 0):
            raise ContractError('MPPI temperature and noise std must be positive')
        if self.dt is not None and not self.dt > 0:
            raise ContractError('MPPI dt must be positive')
        if self.integrator not in INTEGRATORS:
            raise ContractError('Unknown integrator %s' % self.integrator)

    def step_dt(self, env):
        """Control time step for env"""
        return env.DEFAULT_DT if self.dt is None else self.dt

    def to_dict(self):
        return {name: getattr(self, name) for name in self.FIELDS}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def replace(self, **overrides):
        d = self.to_dict()
        d.update(overrides)
        return self.from_dict(d)

    def __eq__(self, other):
        return isinstance(other, MppiConfig) and self.to_dict() == other.to_dict()


class MpcResult(object):
    """
    Closed loop MPC run

    :ivar steps: Environment steps executed (at most the step cap)
    :ivar cost: Accumulated cost dt * sum of the running costs of the executed steps
    :ivar horizon: Planning horizon H in steps
    :ivar dt: Control time step
    :ivar completed: True if the completion tolerance was reached
    :ivar states: (steps+1, n) visited states
    :ivar controls: (steps, m) applied controls
    """

    def __init__(self, steps, cost, horizon, dt, completed, states, controls):
        self.steps = steps
        self.cost = cost
        self.horizon = horizon
        self.dt = dt
        self.completed = completed
        self.states = states
        self.controls = controls

    @property
    def horizon_ms(self):
        return 1000.0 * self.horizon * self.dt


def horizon_steps(horizon_ms, dt):
    """Number of control steps of a horizon given in milliseconds, at least 1"""
    return max(1, int(round(horizon_ms / 1000.0 / dt)))


def importance_weights(costs, temperature):
    """
    Normalized weights exp(-(S_i - min S) / lambda) of the sample costs. Non-finite costs get zero weight.

    :raises ControllerError: if no cost is finite
    """
    costs = as_tensor(costs)
    finite = torch.isfinite(costs)
    if not bool(finite.any()):
        raise ControllerError('All sampled rollouts diverged')
    shifted = torch.where(finite, costs - costs[finite].min(), torch.full_like(costs, float('inf')))
    weights = torch.exp(-shifted / temperature)
    return weights / weights.sum()


def combine_samples(weights, sequences):
    """Weighted average sum_i w_i U_i of (K, H, m) control sequences"""
    return torch.einsum('k,khm->hm', as_tensor(weights), as_tensor(sequences))


def _noise_std(cfg, env):
    std = np.broadcast_to(np.asarray(cfg.noise_std, dtype=float), (env.control_dim, ))
    return std


def _sample_costs(cfg, env, x, sequences, dt, value=None):
    """Euler rollouts of the (K, H, m) sequences from x, returns (K,) costs with inf for diverged samples"""
    cost = CostSpec.from_env(env)
    K = sequences.shape[0]
    xs = as_tensor(x).reshape(1, -1).expand(K, -1)
    total = torch.zeros(K, dtype=DTYPE)
    with torch.no_grad():
        for h in range(sequences.shape[1]):
            u = sequences[:, h]
            total = total + dt * (state_cost(cost, xs) + control_cost(cost, u))
            xs = xs + dt * env.vector_field(xs, u)
    if value is not None:
        finite = torch.isfinite(xs).all(dim=1)
        terminal = torch.full_like(total, float('inf'))
        if bool(finite.any()):
            terminal[finite] = value.forward(xs[finite], sequences.shape[1] * dt)
        total = total + terminal
    return torch.where(torch.isfinite(total), total, torch.full_like(total, float('inf')))


def mppi_sequence(cfg, env, x, nominal, rng, value=None):
    """
    Importance weighted update of the nominal control sequence

    Sample 0 is the unperturbed nominal, samples 1..K-1 add N(0, std^2) noise drawn from rng.

    :param value: Value function added as terminal cost when cfg.terminal_value is set
    :return: Tuple (updated (H, m) sequence, (K,) weights, (K,) sample costs)
    """
    nominal = as_tensor(nominal)
    if nominal.shape != (cfg.horizon, env.control_dim):
        raise ContractError('Nominal sequence must have shape (%i, %i), got %s'
                            % (cfg.horizon, env.control_dim, tuple(nominal.shape)))
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    dt = cfg.step_dt(env)
    noise = rng.normal(0.0, 1.0, size=(cfg.samples - 1, cfg.horizon, env.control_dim)) * _noise_std(cfg, env)
    sequences = torch.cat([nominal.unsqueeze(0), nominal.unsqueeze(0) + as_tensor(noise)], dim=0)
    costs = _sample_costs(cfg, env, x, sequences, dt, value if cfg.terminal_value else None)
    weights = importance_weights(costs, cfg.temperature)
    return combine_samples(weights, sequences), weights, costs


def mppi_update(cfg, env, x, nominal, rng, value=None):
    """
    One MPPI iteration

    :return: Tuple (first control of the updated sequence, updated sequence shifted by one step for the next
             iteration with a zero control appended)
    """
    updated, _, _ = mppi_sequence(cfg, env, x, nominal, rng, value)
    shifted = torch.cat([updated[1:], torch.zeros_like(updated[:1])], dim=0)
    return updated[0], shifted


def warmstart_nominal(value, env, x, horizon, dt):
    """Controls of the closed loop policy rollout of value from x over horizon steps of size dt"""
    return rollout(value, env, as_tensor(x), TimeGrid.from_steps(dt, horizon)).controls


def _goal_distance(env, x):
    return float(torch.linalg.norm(env.encode(x) - env.encode(env.goal)))


def run_mpc(env, cfg, x0, value=None, rng=None, print_status=False):
    """
    Closed loop MPC from x0 until the encoded distance to the goal drops below the tolerance or the step cap
    is reached

    :param value: Learned value function, required when warmstarting or using the terminal value
    :param rng: numpy Generator for the sampling noise, by default seeded with cfg.seed
    :return: MpcResult
    """
    if (cfg.warmstart or cfg.terminal_value) and value is None:
        raise ContractError('A value function is required for warmstarting or the terminal value')
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    dt = cfg.step_dt(env)
    cost = CostSpec.from_env(env)
    x = as_tensor(x0)
    nominal = torch.zeros(cfg.horizon, env.control_dim, dtype=DTYPE)
    states, controls = [x], []
    total = 0.0
    completed = _goal_distance(env, x) < cfg.tolerance
    while not completed and len(controls) < cfg.max_steps:
        if cfg.warmstart:
            nominal = warmstart_nominal(value, env, x, cfg.horizon, dt)
        u, nominal = mppi_update(cfg, env, x, nominal, rng, value)
        total += dt * float(running_cost(cost, x, u))
        x = rk4_step(env, x, u, dt) if cfg.integrator == 'rk4' else x + dt * env.dynamics(x, u)
        controls.append(u)
        if not bool(torch.isfinite(x).all()):
            raise DivergedRolloutError(len(controls), {'control': u})
        states.append(x)
        completed = _goal_distance(env, x) < cfg.tolerance
    result = MpcResult(len(controls), total, cfg.horizon, dt, completed, torch.stack(states),
                       torch.stack(controls) if controls else torch.zeros(0, env.control_dim, dtype=DTYPE))
    if print_status:
        PrintHelper.print('%s H=%i: %i steps, cost %.4f%s' % (env.name, cfg.horizon, result.steps, result.cost,
                                                             '' if completed else ' (step cap)'),
                          PrintHelper.OKBLUE, 2)
    return result


def run_arm(env, cfg, x0, seed, value=None, print_status=False):
    """
    Run the MPC loop from every initial state with one noise generator seeded with seed

    :param x0: (N, n) initial states
    :return: Row dict with the keys env, warmstart, horizon_ms, samples, seed, steps, cost where steps and cost
             are averaged over the initial states
    """
    rng = np.random.default_rng(seed)
    runs = [run_mpc(env, cfg, x0[i], value=value, rng=rng, print_status=print_status) for i in range(x0.shape[0])]
    return {'env': env.name,
            'warmstart': cfg.warmstart,
            'horizon_ms': runs[0].horizon_ms,
            'samples': cfg.samples,
            'seed': seed,
            'steps': float(np.mean([r.steps for r in runs])),
            'cost': float(np.mean([r.cost for r in runs]))}


def compare(env, cfg, value, seeds, initial_seed=10000, print_status=False):
    """
    Compare vanilla MPPI with the long horizon cfg.horizon_large against warmstarted MPPI with the short horizon
    cfg.horizon_small

    Both arms use the same cfg.initial_conditions initial states, sample count, temperature and noise.

    :param seeds: Noise seeds, one row per (arm, seed)
    :param initial_seed: Seed of the initial states
    :return: List of row dicts as returned by run_arm, vanilla rows first
    """
    x0 = env.sample_initial(np.random.default_rng(initial_seed), cfg.initial_conditions)
    arms = [(False, cfg.horizon_large), (True, cfg.horizon_small)]
    rows = []
    for warmstart, horizon in arms:
        arm_cfg = cfg.replace(warmstart=warmstart, horizon=horizon, terminal_value=cfg.terminal_value and warmstart)
        if print_status:
            PrintHelper.print('%s MPPI with H=%i' % ('Warmstarted' if warmstart else 'Vanilla', horizon),
                              PrintHelper.BOLD, 1)
        for seed in seeds:
            rows.append(run_arm(env, arm_cfg, x0, seed, value=value if warmstart else None,
                                print_status=print_status))
    return rows
