"""
Module with functions for rendering training curves and level sets of value functions to CSV and SVG
"""
import os

import contourpy
import matplotlib
import numpy as np
import torch
from hdmf.utils import docval, getargs

from ..errors import UsageError
from ..nets import ValueFunction, as_tensor
from .table import CSVTable

# Force matplotlib to use the Agg backend so rendering works without a display
matplotlib.use('Agg')
from matplotlib import pyplot as plt  # noqa: E402

SVG_RC = {'svg.hashsalt': 'hjbnode', 'svg.fonttype': 'none'}

CURVE_COLUMNS = ['seed', 'epoch', 'loss', 'mean_cost', 'normalized_cost']


def _save_svg(fig, path):
    with matplotlib.rc_context(SVG_RC):
        fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    return path


###########################################################################
#  Training curves
###########################################################################

def curves_table(results):
    """
    Long format table with one row per seed and evaluated epoch

    :param results: List of TrainResult objects
    """
    table = CSVTable(CURVE_COLUMNS)
    for result in results:
        normalized = result.normalized_costs
        for epoch in range(len(result.losses)):
            table.add_row([int(result.seed), epoch, result.losses[epoch], result.mean_costs[epoch],
                           normalized[epoch]])
    return table


def curve_band(table):
    """
    Mean, min and max of the normalized cost over the seeds of a curves table

    :return: Tuple of numpy arrays (epochs, mean, low, high)
    """
    epochs = np.asarray(table.column('epoch', int))
    values = np.asarray(table.column('normalized_cost'))
    unique = np.unique(epochs)
    mean = np.array([values[epochs == e].mean() for e in unique])
    low = np.array([values[epochs == e].min() for e in unique])
    high = np.array([values[epochs == e].max() for e in unique])
    return unique, mean, low, high


def render_curves(csv_path, svg_path, title=None):
    """Render the SVG figure of a curves CSV file: mean normalized cost with the min/max band over seeds"""
    table = CSVTable.read(csv_path)
    if len(table) == 0:
        raise UsageError('%s contains no curves' % csv_path)
    epochs, mean, low, high = curve_band(table)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.fill_between(epochs, low, high, color='steelblue', alpha=0.3, linewidth=0, label='min/max over seeds')
    ax.plot(epochs, mean, color='steelblue', linewidth=1.5, label='mean')
    ax.set_xlabel('epoch')
    ax.set_ylabel('normalized cost')
    if title:
        ax.set_title(title)
    ax.legend(loc='upper right')
    fig.tight_layout()
    return _save_svg(fig, svg_path)


@docval({'name': 'results', 'type': (list, tuple), 'doc': 'List of TrainResult objects, one per seed'},
        {'name': 'outdir', 'type': str, 'doc': 'Directory where the files are written'},
        {'name': 'basename', 'type': str, 'doc': 'Base name of the CSV and SVG files', 'default': 'curves'},
        {'name': 'title', 'type': str, 'doc': 'Title of the figure', 'default': None},
        returns='List with the paths of the written files', rtype=list, is_method=False)
def export_curves(**kwargs):
    """
    Write the curves CSV (source of truth) and its SVG rendering
    """
    results, outdir, basename, title = getargs('results', 'outdir', 'basename', 'title', kwargs)
    if len(results) == 0:
        raise UsageError('No training results to export')
    csv_path = curves_table(results).write(os.path.join(outdir, basename + '.csv'))
    svg_path = render_curves(csv_path, os.path.join(outdir, basename + '.svg'), title)
    return [csv_path, svg_path]


###########################################################################
#  Level sets
###########################################################################

def levelset_grid(value, t, bounds, resolution, slice_dims=(0, 1), base_state=None):
    """
    Sample a value function on a regular grid of a 2D slice of the state space

    :param bounds: ((x_min, x_max), (y_min, y_max)) of the two sliced coordinates
    :param resolution: Number of grid points (nx, ny), at least 3 each
    :param slice_dims: Indices of the two state coordinates spanning the slice
    :param base_state: State whose remaining coordinates are held fixed (zeros by default)
    :return: Tuple of numpy arrays (xs (nx,), ys (ny,), values (ny, nx))
    """
    nx, ny = (int(r) for r in resolution)
    if nx < 3 or ny < 3:
        raise UsageError('Level sets need a resolution of at least 3x3, got %ix%i' % (nx, ny))
    (x_lo, x_hi), (y_lo, y_hi) = bounds
    if not x_hi > x_lo or not y_hi > y_lo:
        raise UsageError('Invalid level set bounds %s' % (bounds, ))
    i, j = slice_dims
    xs = np.linspace(x_lo, x_hi, nx)
    ys = np.linspace(y_lo, y_hi, ny)
    gx, gy = np.meshgrid(xs, ys)
    base = np.zeros(value.state_dim) if base_state is None else np.asarray(base_state, dtype=float)
    states = np.tile(base, (gx.size, 1))
    states[:, i] = gx.reshape(-1)
    states[:, j] = gy.reshape(-1)
    v = value.forward(as_tensor(states), float(t))
    return xs, ys, v.numpy().reshape(ny, nx)


def contour_levels(values, num_levels):
    """Evenly spaced levels strictly between the minimum and maximum of the sampled values"""
    return np.linspace(float(values.min()), float(values.max()), int(num_levels) + 2)[1:-1]


def contour_polylines(xs, ys, values, levels):
    """
    Marching squares contour lines

    :return: List of (level, list of (k, 2) point arrays)
    """
    generator = contourpy.contour_generator(xs, ys, values, line_type=contourpy.LineType.Separate)
    return [(float(level), [np.asarray(line) for line in generator.lines(level)]) for level in levels]


@docval({'name': 'value', 'type': ValueFunction, 'doc': 'Value function to be plotted'},
        {'name': 'outdir', 'type': str, 'doc': 'Directory where the files are written'},
        {'name': 't', 'type': (int, float), 'doc': 'Time at which the value function is evaluated', 'default': 0.0},
        {'name': 'bounds', 'type': (list, tuple), 'doc': 'Bounds ((x_min, x_max), (y_min, y_max)) of the slice',
         'default': ((-1.0, 1.0), (-1.0, 1.0))},
        {'name': 'resolution', 'type': (list, tuple), 'doc': 'Number of grid points per axis',
         'default': (101, 101)},
        {'name': 'num_levels', 'type': int, 'doc': 'Number of contour levels', 'default': 10},
        {'name': 'slice_dims', 'type': (list, tuple), 'doc': 'Indices of the two sliced state coordinates. '
                                                             'Required for states with more than two dimensions',
         'default': None},
        {'name': 'base_state', 'type': (list, tuple, np.ndarray), 'doc': 'Values of the coordinates outside '
                                                                         'the slice', 'default': None},
        {'name': 'trajectories', 'type': (list, tuple), 'doc': 'Optional list of (K+1, n) state arrays to '
                                                               'overlay', 'default': None},
        {'name': 'basename', 'type': str, 'doc': 'Base name of the CSV and SVG files', 'default': 'levelset'},
        returns='Tuple (list with the paths of the written files, list of (level, polylines))', rtype=tuple,
        is_method=False)
def export_levelset(**kwargs):
    """
    Sample the value function on a grid, write the raw grid as CSV (columns x, y, v) and render the contour
    polylines and optional closed loop trajectories as SVG
    """
    value, outdir, t, bounds, resolution, num_levels, slice_dims, base_state, trajectories, basename = getargs(
        'value', 'outdir', 't', 'bounds', 'resolution', 'num_levels', 'slice_dims', 'base_state', 'trajectories',
        'basename', kwargs)
    if slice_dims is None:
        if value.state_dim != 2:
            raise UsageError('States have %i dimensions; a 2-coordinate slice is required' % value.state_dim)
        slice_dims = (0, 1)
    if len(slice_dims) != 2 or slice_dims[0] == slice_dims[1] or \
            not all(0 <= int(d) < value.state_dim for d in slice_dims):
        raise UsageError('Invalid slice %s for a %i-dimensional state' % (slice_dims, value.state_dim))
    slice_dims = tuple(int(d) for d in slice_dims)
    xs, ys, values = levelset_grid(value, t, bounds, resolution, slice_dims, base_state)
    lines = contour_polylines(xs, ys, values, contour_levels(values, num_levels))

    table = CSVTable(['x', 'y', 'v'])
    for iy, y in enumerate(ys):
        for ix, x in enumerate(xs):
            table.add_row([float(x), float(y), float(values[iy, ix])])
    csv_path = table.write(os.path.join(outdir, basename + '.csv'))

    fig, ax = plt.subplots(figsize=(5, 5))
    cmap = matplotlib.colormaps['viridis']
    for k, (level, polylines) in enumerate(lines):
        color = cmap(k / max(len(lines) - 1, 1))
        for line in polylines:
            ax.plot(line[:, 0], line[:, 1], color=color, linewidth=1.0)
    for traj in trajectories or []:
        traj = traj.numpy() if isinstance(traj, torch.Tensor) else np.asarray(traj)
        ax.plot(traj[:, slice_dims[0]], traj[:, slice_dims[1]], color='black', linewidth=0.8)
        ax.plot(traj[:1, slice_dims[0]], traj[:1, slice_dims[1]], 'o', color='black', markersize=2)
    ax.set_xlim(bounds[0])
    ax.set_ylim(bounds[1])
    ax.set_xlabel('x%i' % (slice_dims[0] + 1))
    ax.set_ylabel('x%i' % (slice_dims[1] + 1))
    ax.set_title('level sets at t=%g' % t)
    fig.tight_layout()
    svg_path = _save_svg(fig, os.path.join(outdir, basename + '.svg'))
    return [csv_path, svg_path], lines
