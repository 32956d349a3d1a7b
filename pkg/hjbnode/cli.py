#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Command line interface for training value and Lyapunov functions, evaluating checkpoints, running the MPPI
comparison and rendering curves and level sets.
"""
from concurrent.futures import ProcessPoolExecutor
import argparse
import os
import shutil
import sys
import warnings

import numpy as np
import yaml

from . import mppi as mppi_lib
from .artifacts.output import PrintHelper
from .artifacts.render import curves_table, export_levelset, render_curves
from .artifacts.table import CSVTable
from .envs import ENV_PRESETS, make_env
from .errors import (CheckpointParseError, ContractError, ControllerError, NumericDomainError, TrainingDiverged,
                     UsageError)
from .hjb import lqr_value, lyapunov_inner, value_residual
from .nets import ValueNetwork
from .rollout import evaluate_cost, lyapunov_descent_fraction, rollout
from .train import PRESETS, TrainConfig, hinge_loss, squared_loss, train

COMMANDS = ('train', 'eval', 'mpc', 'plot', 'levelset')
MODES = ('value', 'lyapunov')
EVAL_SEED_OFFSET = 10000
CURVE_FILE_COLUMNS = ['epoch', 'loss', 'mean_cost', 'normalized_cost', 'wall_ms']
MPC_COLUMNS = ['env', 'warmstart', 'horizon_ms', 'samples', 'seed', 'steps', 'cost']


#######################################
#  Define bool type for argparse
#######################################
def bool_type(argument):
    """
    Implement conversion of boolean input parameters since
    argparse (or bool, depending on the point of view), do not
    handle bool as a type in an intuitive fashion.

    :param argument: The argument to be parsed to a boolean
    :return: The converted value
    """
    try:
        return bool(int(argument))
    except ValueError:
        if argument in ('TRUE', 'true', 'True', 't', 'T'):
            return True
        elif argument in ('FALSE', 'false', 'False', 'f', 'F'):
            return False
        else:
            raise argparse.ArgumentTypeError('Parameter could not be converted to type bool')


#######################################
#  Define formatter for argparse
#######################################
class RawDescriptionDefaultHelpArgParseFormatter(argparse.ArgumentDefaultsHelpFormatter,
                                                 argparse.RawDescriptionHelpFormatter):
    """
    Simple derived formatter class for use with argparse. This formatter combines the default
    argparse.ArgumentDefaultsHelpFormatter and argparse.RawDescriptionHelpFormatter
    for formatting arguments and help descriptions.
    """
    pass


#######################################
#  Checkpoints
#######################################
class _CheckpointDumper(yaml.SafeDumper):
    """YAML dumper writing floats with 17 significant digits"""
    pass


def _represent_float(dumper, value):
    if np.isnan(value):
        text = '.nan'
    elif np.isinf(value):
        text = '.inf' if value > 0 else '-.inf'
    else:
        text = '%.17g' % value
        if '.' not in text:
            text = text.replace('e', '.0e', 1) if 'e' in text else text + '.0'
    return dumper.represent_scalar('tag:yaml.org,2002:float', text)


_CheckpointDumper.add_representer(float, _represent_float)


def save_checkpoint(value, path, metadata=None):
    """
    Write a ValueNetwork to a YAML checkpoint. The file is written to a temporary name and then moved into place.

    :param metadata: Dict with env, seed and epoch information
    """
    doc = value.to_document(metadata)
    doc['num_params'] = value.num_params
    tmp_path = path + '.tmp'
    with open(tmp_path, 'w') as f:
        yaml.dump(doc, f, Dumper=_CheckpointDumper, sort_keys=False, default_flow_style=False)
    os.replace(tmp_path, path)
    return path


def load_checkpoint(path):
    """
    Read a ValueNetwork from a YAML checkpoint. Networks of environments with a state encoding get the
    encoding re-attached as their input map.

    :raises CheckpointParseError: naming the offending field of a malformed file
    """
    try:
        with open(path, 'r') as f:
            doc = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise CheckpointParseError('document', 'not valid YAML (%s)' % e)
    if not isinstance(doc, dict):
        raise CheckpointParseError('document', 'expected a mapping at the top level')
    if 'num_params' not in doc:
        raise CheckpointParseError('num_params', 'missing (truncated file?)')
    value = ValueNetwork.from_document(doc)
    if doc['num_params'] != value.num_params:
        raise CheckpointParseError('num_params', 'expected %s parameters but found %i'
                                   % (doc['num_params'], value.num_params))
    env_name = doc['metadata'].get('env')
    if env_name is not None:
        if env_name not in ENV_PRESETS:
            raise CheckpointParseError('metadata', 'unknown env %s' % env_name)
        env = make_env(env_name, **doc['metadata'].get('env_params', {}))
        if env.state_dim != value.state_dim:
            raise CheckpointParseError('layer_widths', 'input width does not match env %s' % env_name)
        if env.has_encoding:
            value = value.with_input_map(env.encode)
    return value


#######################################
#  Experiment configuration
#######################################
def checkpoint_metadata(path):
    """Metadata block of a checkpoint, used to resolve env, mode, horizon and dt when no flag names them"""
    try:
        with open(path, 'r') as f:
            doc = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise CheckpointParseError('document', 'not valid YAML (%s)' % e)
    if not isinstance(doc, dict) or not isinstance(doc.get('metadata'), dict):
        raise CheckpointParseError('metadata', 'missing or not a mapping')
    if doc['metadata'].get('env') is not None and doc['metadata']['env'] not in ENV_PRESETS:
        raise CheckpointParseError('metadata', 'unknown env %s' % doc['metadata']['env'])
    return doc['metadata']


def _parse_scalar(text):
    """Parse the value of a --set override as a YAML scalar, accepting decimals like 1e-3"""
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError:
        raise UsageError('Override value %s cannot be parsed' % text)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def parse_overrides(assignments):
    """
    Split --set key=value assignments into TrainConfig and MppiConfig overrides

    Keys may be prefixed with train. or mppi.; unprefixed keys are looked up in TrainConfig first.

    :return: Tuple (train overrides dict, mppi overrides dict)
    """
    train_over, mppi_over = {}, {}
    for item in assignments or []:
        if '=' not in item:
            raise UsageError('Override %s is not of the form key=value' % item)
        key, text = item.split('=', 1)
        key = key.strip()
        if key.startswith('train.'):
            section, key = train_over, key[len('train.'):]
            fields = TrainConfig.FIELDS
        elif key.startswith('mppi.'):
            section, key = mppi_over, key[len('mppi.'):]
            fields = mppi_lib.MppiConfig.FIELDS
        elif key in TrainConfig.FIELDS:
            section, fields = train_over, TrainConfig.FIELDS
        elif key in mppi_lib.MppiConfig.FIELDS:
            section, fields = mppi_over, mppi_lib.MppiConfig.FIELDS
        else:
            raise UsageError('Unknown override key %s' % key)
        if key not in fields:
            raise UsageError('Unknown override key %s' % item.split('=', 1)[0])
        section[key] = _parse_scalar(text)
    return train_over, mppi_over


def default_train_settings(env_name, mode):
    """
    TrainConfig keyword arguments for an env and mode: the matching preset if there is one, otherwise a
    64-64 network over a one second horizon at the env's default step
    """
    for name in sorted(PRESETS):
        preset = PRESETS[name]
        if preset['env'] == env_name and preset['loss_kind'] == mode:
            return dict(preset)
    env_cls = ENV_PRESETS[env_name]
    dt = env_cls.DEFAULT_DT
    return dict(env=env_name, loss_kind=mode, net_kind='icnn-pd' if mode == 'lyapunov' else 'fcn',
                layer_widths=[env_cls.state_dim + 1, 64, 64, 1], horizon=max(1, int(round(1.0 / dt))) * dt, dt=dt)


class ExperimentConfig(object):
    """
    Fully resolved description of one CLI invocation

    :ivar command: One of COMMANDS
    :ivar preset: Name of the training preset or None
    :ivar env: Environment name
    :ivar mode: value or lyapunov
    :ivar checkpoint: Path of the checkpoint or None
    :ivar seeds: List of seeds
    :ivar out: Output directory
    :ivar train: TrainConfig
    :ivar mppi: MppiConfig
    """
    KEYS = ('command', 'preset', 'env', 'mode', 'checkpoint', 'seeds', 'out', 'train', 'mppi')

    def __init__(self, command, preset, env, mode, checkpoint, seeds, out, train, mppi):
        self.command = command
        self.preset = preset
        self.env = env
        self.mode = mode
        self.checkpoint = checkpoint
        self.seeds = list(seeds)
        self.out = out
        self.train = train
        self.mppi = mppi

    def to_dict(self):
        return {'command': self.command,
                'preset': self.preset,
                'env': self.env,
                'mode': self.mode,
                'checkpoint': self.checkpoint,
                'seeds': list(self.seeds),
                'out': self.out,
                'train': self.train.to_dict(),
                'mppi': self.mppi.to_dict()}

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.to_dict() == other.to_dict()

    @classmethod
    def from_dict(cls, doc, command=None, train_overrides=None, mppi_overrides=None):
        """
        Resolve a configuration document with optional overrides

        The training settings start from the preset (or the defaults for env and mode), then the train section
        of the document, then the overrides. Unknown keys raise UsageError, invalid values TypeError or
        ContractError.
        """
        doc = dict(doc or {})
        unknown = set(doc) - set(cls.KEYS)
        if unknown:
            raise UsageError('Unknown configuration keys: %s' % ', '.join(sorted(unknown)))
        for section, fields in (('train', TrainConfig.FIELDS), ('mppi', mppi_lib.MppiConfig.FIELDS)):
            if doc.get(section) is not None and not isinstance(doc[section], dict):
                raise UsageError('Configuration section %s must be a mapping' % section)
            bad = set(doc.get(section) or {}) - set(fields)
            if bad:
                raise UsageError('Unknown keys in section %s: %s' % (section, ', '.join(sorted(bad))))
        command = command or doc.get('command') or 'train'
        if command not in COMMANDS:
            raise UsageError('Unknown command %s' % command)
        preset = doc.get('preset')
        if preset is not None and preset not in PRESETS:
            raise UsageError('Unknown preset %s. Available: %s' % (preset, ', '.join(sorted(PRESETS))))
        mode = doc.get('mode')
        if mode is not None and mode not in MODES:
            raise UsageError('Unknown mode %s' % mode)
        env = doc.get('env')
        if env is not None and env not in ENV_PRESETS:
            raise UsageError('Unknown env %s. Available: %s' % (env, ', '.join(sorted(ENV_PRESETS))))
        checkpoint = doc.get('checkpoint')
        if checkpoint is not None and not os.path.isfile(checkpoint):
            raise UsageError('Checkpoint %s does not exist' % checkpoint)

        if preset is not None:
            settings = dict(PRESETS[preset])
            if env is not None and env != settings['env']:
                settings = default_train_settings(env, mode or settings['loss_kind'])
            elif mode is not None and mode != settings['loss_kind']:
                settings = default_train_settings(settings['env'], mode)
        else:
            meta = checkpoint_metadata(checkpoint) if checkpoint is not None else {}
            settings = default_train_settings(env or meta.get('env') or 'di',
                                              mode or meta.get('loss_kind') or 'lyapunov')
            if env is None or env == meta.get('env'):
                for key in ('horizon', 'dt', 'env_params'):
                    if meta.get(key) is not None:
                        settings[key] = meta[key]
        settings.update(doc.get('train') or {})
        settings.update(train_overrides or {})
        train_cfg = TrainConfig(**settings)
        mppi_settings = dict(doc.get('mppi') or {})
        mppi_settings.update(mppi_overrides or {})
        mppi_cfg = mppi_lib.MppiConfig(**mppi_settings)

        seeds = doc.get('seeds')
        if seeds is None:
            seeds = [train_cfg.seed]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise UsageError('seeds must be a non-empty list of integers')
        if len(set(seeds)) != len(seeds):
            raise UsageError('seeds must be distinct')
        train_cfg = train_cfg.replace(seed=seeds[0])
        out = doc.get('out') or os.path.join('runs', command)
        return cls(command, preset, train_cfg.env, train_cfg.loss_kind, checkpoint, seeds, out, train_cfg,
                   mppi_cfg)


def load_config_file(path):
    """Read a YAML configuration document"""
    if not os.path.isfile(path):
        raise UsageError('Config file %s does not exist' % path)
    try:
        with open(path, 'r') as f:
            doc = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise UsageError('Config file %s is not valid YAML: %s' % (path, e))
    if doc is not None and not isinstance(doc, dict):
        raise UsageError('Config file %s must contain a mapping' % path)
    return doc or {}


def write_config_echo(config, path):
    with open(path, 'w') as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=False, default_flow_style=False)
    return path


#######################################
#  Run directories
#######################################
class RunDirectory(object):
    """
    Output directory of one invocation that keeps track of every written artifact

    :ivar root: Path of the directory
    :ivar files: Paths of the written files relative to root
    """

    def __init__(self, root):
        self.root = root
        self.files = []
        os.makedirs(root, exist_ok=True)

    def path(self, *parts):
        full = os.path.join(self.root, *parts)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        return full

    def record(self, *paths):
        for path in paths:
            rel = os.path.relpath(path, self.root).replace(os.sep, '/')
            if rel not in self.files:
                self.files.append(rel)

    def write_manifest(self):
        """Write the manifest file listing every recorded artifact, one relative path per line"""
        path = os.path.join(self.root, 'manifest')
        with open(path, 'w', newline='') as f:
            for rel in sorted(self.files + ['manifest']):
                f.write(rel + '\n')
        return path


def _curves_file_table(result, record_timing):
    table = CSVTable(CURVE_FILE_COLUMNS)
    normalized = result.normalized_costs if result.mean_costs and result.mean_costs[0] != 0 \
        else [float('nan')] * len(result.mean_costs)
    for epoch in range(len(result.losses)):
        wall = result.wall_ms[epoch] if record_timing and epoch < len(result.wall_ms) else 0.0
        table.add_row([epoch, result.losses[epoch], result.mean_costs[epoch], normalized[epoch], float(wall)])
    return table


def _checkpoint_metadata(config, epoch):
    return {'env': config.env, 'seed': config.seed, 'epoch': epoch, 'loss_kind': config.loss_kind,
            'horizon': config.horizon, 'dt': config.dt, 'env_params': dict(config.env_params)}


def _write_seed_artifacts(result, seed_dir, record_timing):
    """Write curves.csv and checkpoint.yaml of one training run, returns the written paths"""
    os.makedirs(seed_dir, exist_ok=True)
    written = [_curves_file_table(result, record_timing).write(os.path.join(seed_dir, 'curves.csv'))]
    if result.value is not None:
        epoch = max(len(result.losses) - 1, 0)
        written.append(save_checkpoint(result.value, os.path.join(seed_dir, 'checkpoint.yaml'),
                                       _checkpoint_metadata(result.config, epoch)))
    return written


def _train_seed(config_dict, seed_dir, record_timing, print_status):
    """Train one seed and write its artifacts. Top level so that it can run in a worker process."""
    config = TrainConfig.from_dict(config_dict)
    try:
        result = train(config, print_status=print_status)
        error = None
    except TrainingDiverged as e:
        result = e.result
        error = str(e)
    files = _write_seed_artifacts(result, seed_dir, record_timing)
    return {'seed': config.seed, 'result': result, 'error': error, 'files': files}


#######################################
#  Commands
#######################################
def command_train(config, run_dir, parallel=False, record_timing=True, print_status=True):
    """
    Train one network per seed. A single seed writes its artifacts at the run root, several seeds write to
    seed_<s>/ subdirectories. The run root also gets curves_summary.csv and curves.svg.

    :return: Exit status
    """
    jobs = []
    for seed in config.seeds:
        seed_dir = run_dir.root if len(config.seeds) == 1 else os.path.join(run_dir.root, 'seed_%i' % seed)
        jobs.append((config.train.replace(seed=seed).to_dict(), seed_dir, record_timing))
    if parallel and len(jobs) > 1:
        with ProcessPoolExecutor() as executor:
            futures = [executor.submit(_train_seed, cfg, seed_dir, timing, False) for cfg, seed_dir, timing in jobs]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_train_seed(cfg, seed_dir, timing, print_status) for cfg, seed_dir, timing in jobs]
    status = 0
    for outcome in outcomes:
        run_dir.record(*outcome['files'])
        if outcome['error'] is not None:
            status = 3
            PrintHelper.print('seed %i: %s' % (outcome['seed'], outcome['error']), PrintHelper.FAIL)
        elif print_status:
            PrintHelper.print('seed %i: final normalized cost %.4f' % (outcome['seed'],
                                                                    outcome['result'].normalized_costs[-1]),
                              PrintHelper.OKGREEN)
    results = [o['result'] for o in outcomes if o['result'].mean_costs and o['result'].mean_costs[0] != 0]
    if results:
        summary = curves_table(results).write(run_dir.path('curves_summary.csv'))
        svg = render_curves(summary, run_dir.path('curves.svg'),
                            title='%s (%s)' % (config.train.env, config.train.loss_kind))
        run_dir.record(summary, svg)
    return status


def _value_for(config, env, purpose):
    """Checkpointed value function, or the LQR value of the linearized env with a warning"""
    if config.checkpoint is not None:
        value = load_checkpoint(config.checkpoint)
        if value.state_dim != env.state_dim:
            raise UsageError('Checkpoint state dimension %i does not match env %s' % (value.state_dim, env.name))
        return value
    warnings.warn('No checkpoint given for %s; using the LQR value of the linearized %s' % (purpose, env.name))
    return lqr_value(env)


def command_eval(config, run_dir, print_status=True):
    """Evaluate a checkpoint on held-out initial conditions and write eval.csv"""
    if config.checkpoint is None:
        raise UsageError('eval requires --checkpoint')
    env = make_env(config.train.env, **config.train.env_params)
    value = _value_for(config, env, 'eval')
    grid = config.train.grid()
    table = CSVTable(['metric', 'value'])
    for seed in config.seeds:
        x0 = env.sample_initial(np.random.default_rng(EVAL_SEED_OFFSET + seed), config.train.num_initial)
        batch = rollout(value, env, x0, grid)
        value_loss = float(squared_loss(value_residual(value, batch)))
        lyap_loss = float(hinge_loss(lyapunov_inner(value, batch, config.train.include_control_cost)))
        prefix = '' if len(config.seeds) == 1 else 'seed_%i.' % seed
        table.add_row([prefix + 'mean_cost', evaluate_cost(value, env, x0, grid)])
        table.add_row([prefix + 'value_loss', value_loss])
        table.add_row([prefix + 'lyapunov_loss', lyap_loss])
        table.add_row([prefix + 'descent_violation_fraction', lyapunov_descent_fraction(value, env, x0, grid)])
        table.add_row([prefix + 'num_initial', config.train.num_initial])
    run_dir.record(table.write(run_dir.path('eval.csv')))
    if print_status:
        for row in table.rows():
            PrintHelper.print('%s = %s' % (row['metric'], row['value']), PrintHelper.OKBLUE, 1)
    return 0


def command_mpc(config, run_dir, compare=False, print_status=True):
    """Run MPPI (or the vanilla against warmstarted comparison) and write mpc_runs.csv"""
    env = make_env(config.train.env, **config.train.env_params)
    cfg = config.mppi
    needs_value = compare or cfg.warmstart or cfg.terminal_value
    value = _value_for(config, env, 'the MPPI warmstart') if needs_value else None
    table = CSVTable(MPC_COLUMNS)
    if compare:
        rows = mppi_lib.compare(env, cfg, value, config.seeds, print_status=print_status)
    else:
        x0 = env.sample_initial(np.random.default_rng(EVAL_SEED_OFFSET), cfg.initial_conditions)
        rows = [mppi_lib.run_arm(env, cfg, x0, seed, value=value, print_status=print_status)
                for seed in config.seeds]
    for row in rows:
        table.add_row(row)
    run_dir.record(table.write(run_dir.path('mpc_runs.csv')))
    return 0


def command_plot(config, run_dir, print_status=True):
    """Re-render curves.svg from the curves_summary.csv of a training run directory"""
    summary = os.path.join(run_dir.root, 'curves_summary.csv')
    if not os.path.isfile(summary):
        raise UsageError('%s does not contain curves_summary.csv' % run_dir.root)
    run_dir.record(summary)
    run_dir.record(render_curves(summary, run_dir.path('curves.svg'),
                                 title='%s (%s)' % (config.train.env, config.train.loss_kind)))
    return 0


def command_levelset(config, run_dir, t=0.0, bounds=None, resolution=(101, 101), num_levels=10,
                     slice_dims=None, overlay=0, print_status=True):
    """Export the level sets of a checkpoint (or the LQR value) as CSV grid and SVG contours"""
    env = make_env(config.train.env, **config.train.env_params)
    value = _value_for(config, env, 'the level sets')
    if slice_dims is None and env.state_dim != 2:
        raise UsageError('%s has %i state dimensions; give --slice i j' % (env.name, env.state_dim))
    dims = tuple(slice_dims) if slice_dims is not None else (0, 1)
    if bounds is None:
        bounds = []
        for d in dims:
            width = max(abs(env.initial_low[d]), abs(env.initial_high[d]), 0.5)
            bounds.append((-2.0 * width, 2.0 * width))
    trajectories = None
    if overlay > 0:
        x0 = env.sample_initial(np.random.default_rng(EVAL_SEED_OFFSET + config.seeds[0]), overlay)
        batch = rollout(value, env, x0, config.train.grid())
        trajectories = [batch.states[:, i] for i in range(overlay)]
    files, _ = export_levelset(value=value, outdir=run_dir.root, t=float(t), bounds=[tuple(b) for b in bounds],
                               resolution=tuple(resolution), num_levels=num_levels, slice_dims=slice_dims,
                               trajectories=trajectories)
    run_dir.record(*files)
    return 0


#######################################
#  Main
#######################################
def build_parser():
    parser = argparse.ArgumentParser(description='Learn value and Lyapunov functions of control-affine systems '
                                                 'from HJB residuals and use them to warmstart MPPI.',
                                     formatter_class=RawDescriptionDefaultHelpArgParseFormatter)
    parser.add_argument('command', choices=COMMANDS, help='Command to run')
    parser.add_argument('--preset', dest='preset', action='store', type=str, default=None,
                        help='Training preset: %s' % ', '.join(sorted(PRESETS)))
    parser.add_argument('--env', dest='env', action='store', type=str, default=None,
                        help='Environment: %s' % ', '.join(sorted(ENV_PRESETS)))
    parser.add_argument('--mode', dest='mode', action='store', type=str, choices=MODES, default=None,
                        help='Learn a value or a Lyapunov function')
    parser.add_argument('--seed', dest='seeds', action='store', type=int, nargs='+', default=None,
                        help='One or more seeds')
    parser.add_argument('--out', dest='out', action='store', type=str, default=None,
                        help='Output directory (default runs/<command>)')
    parser.add_argument('--config', dest='config', action='store', type=str, default=None,
                        help='YAML configuration file. Command line flags override its values')
    parser.add_argument('--checkpoint', dest='checkpoint', action='store', type=str, default=None,
                        help='Checkpoint of a trained network')
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='Override a training (train.) or MPPI (mppi.) setting. Repeatable')
    parser.add_argument('--compare', dest='compare', action='store_true', default=False,
                        help='mpc: compare vanilla MPPI against warmstarted MPPI')
    parser.add_argument('--parallel', dest='parallel', action='store_true', default=False,
                        help='train: run the seeds in parallel worker processes')
    parser.add_argument('--record_timing', dest='record_timing', action='store', type=bool_type, default=False,
                        help='train: record wall clock times in curves.csv (zeros otherwise, which keeps reruns byte-identical)')
    parser.add_argument('--print_status', dest='print_status', action='store', type=bool_type, default=True,
                        help='Print progress and status messages')
    parser.add_argument('--time', dest='time', action='store', type=float, default=0.0,
                        help='levelset: time at which the value function is evaluated')
    parser.add_argument('--bounds', dest='bounds', action='store', type=float, nargs=4, default=None,
                        metavar=('XMIN', 'XMAX', 'YMIN', 'YMAX'), help='levelset: bounds of the slice')
    parser.add_argument('--resolution', dest='resolution', action='store', type=int, nargs=2, default=[101, 101],
                        metavar=('NX', 'NY'), help='levelset: grid points per axis')
    parser.add_argument('--levels', dest='levels', action='store', type=int, default=10,
                        help='levelset: number of contour levels')
    parser.add_argument('--slice', dest='slice_dims', action='store', type=int, nargs=2, default=None,
                        metavar=('I', 'J'), help='levelset: state coordinates spanning the slice')
    parser.add_argument('--overlay', dest='overlay', action='store', type=int, default=0,
                        help='levelset: number of closed loop trajectories to overlay')
    return parser


def resolve_config(args):
    """Build the ExperimentConfig from the config file, the flags and the --set overrides"""
    doc = load_config_file(args.config) if args.config is not None else {}
    for key in ('preset', 'env', 'mode', 'checkpoint', 'out'):
        if getattr(args, key) is not None:
            doc[key] = getattr(args, key)
    if args.seeds is not None:
        doc['seeds'] = list(args.seeds)
    train_over, mppi_over = parse_overrides(args.overrides)
    return ExperimentConfig.from_dict(doc, command=args.command, train_overrides=train_over,
                                      mppi_overrides=mppi_over)


def check_command(config, args):
    """Reject invocations that cannot succeed before the output directory is touched"""
    if config.command == 'eval' and config.checkpoint is None:
        raise UsageError('eval requires --checkpoint')
    if config.command == 'plot' and not os.path.isfile(os.path.join(config.out, 'curves_summary.csv')):
        raise UsageError('%s does not contain curves_summary.csv' % config.out)
    if config.command == 'levelset' and args.slice_dims is None and ENV_PRESETS[config.env].state_dim != 2:
        raise UsageError('%s has %i state dimensions; give --slice i j'
                         % (config.env, ENV_PRESETS[config.env].state_dim))
    if config.command == 'levelset' and (args.levels < 1 or min(args.resolution) < 3):
        raise UsageError('levelset needs at least one level and a resolution of at least 3x3')


def main(args=None):
    """
    Run the command line interface

    :param args: List of command line arguments (sys.argv[1:] if None)
    :return: Exit status: 0 on success, 2 for usage and configuration errors, 3 for numeric failures
    """
    parser = build_parser()
    args = parser.parse_args(args)
    try:
        config = resolve_config(args)
        check_command(config, args)
    except (UsageError, ContractError, CheckpointParseError, TypeError, ValueError) as e:
        PrintHelper.print('error: %s' % e, PrintHelper.FAIL)
        return 2

    created = not os.path.exists(config.out)
    run_dir = RunDirectory(config.out)
    if args.print_status:
        PrintHelper.print('%s -> %s' % (config.command, config.out), PrintHelper.BOLD)
        PrintHelper.print_mapping(config.to_dict(), depth=1)
    status = 0
    try:
        if config.command == 'train':
            status = command_train(config, run_dir, parallel=args.parallel, record_timing=args.record_timing,
                                   print_status=args.print_status)
        elif config.command == 'eval':
            status = command_eval(config, run_dir, print_status=args.print_status)
        elif config.command == 'mpc':
            status = command_mpc(config, run_dir, compare=args.compare, print_status=args.print_status)
        elif config.command == 'plot':
            status = command_plot(config, run_dir, print_status=args.print_status)
        else:
            bounds = None if args.bounds is None else [args.bounds[:2], args.bounds[2:]]
            status = command_levelset(config, run_dir, t=args.time, bounds=bounds, resolution=args.resolution,
                                      num_levels=args.levels, slice_dims=args.slice_dims, overlay=args.overlay,
                                      print_status=args.print_status)
    except (UsageError, ContractError, CheckpointParseError) as e:
        PrintHelper.print('error: %s' % e, PrintHelper.FAIL)
        status = 2
    except (NumericDomainError, ControllerError, TrainingDiverged) as e:
        PrintHelper.print('numeric failure: %s' % e, PrintHelper.FAIL)
        status = 3
    if status == 2:
        if created:
            shutil.rmtree(config.out, ignore_errors=True)
    else:
        run_dir.record(write_config_echo(config, run_dir.path('config.yaml')))
        manifest = run_dir.write_manifest()
        if args.print_status:
            for rel in run_dir.files:
                PrintHelper.print(rel, PrintHelper.OKGREEN, 1)
            PrintHelper.print(os.path.relpath(manifest), PrintHelper.OKGREEN, 1)
    return status


if __name__ == "__main__":
    sys.exit(main())
