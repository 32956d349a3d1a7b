import os

import numpy as np
import pytest
import torch
from numpy.testing import assert_allclose

from hjbnode.artifacts.output import PrintHelper
from hjbnode.artifacts.render import contour_levels, curve_band, curves_table, export_curves, export_levelset
from hjbnode.artifacts.table import CSVTable
from hjbnode.errors import UsageError
from hjbnode.nets import QuadraticValue
from hjbnode.train import TrainConfig, TrainResult


def _result(seed, costs):
    result = TrainResult(TrainConfig(seed=seed))
    result.mean_costs = list(costs)
    result.losses = [0.1 * c for c in costs]
    result.wall_ms = [1.0] * len(costs)
    return result


def test_table_formatting():
    table = CSVTable(['name', 'value', 'flag'])
    table.add_row(['a', 0.1, True])
    table.add_row({'name': 'b', 'value': np.float64(2.0), 'flag': False})
    table.add_row(['c', None, torch.tensor(1)], replace_none='')
    assert table.render() == 'name,value,flag\na,0.10000000000000001,true\nb,2,false\nc,,1\n'
    assert table.num_rows() == 3 and table.num_cols() == 3


def test_table_rejects_bad_cells():
    table = CSVTable(['name'])
    with pytest.raises(ValueError):
        table.add_row(['a,b'])
    with pytest.raises(ValueError):
        table.add_row(['a', 'b'])
    with pytest.raises(ValueError):
        table.add_row({'other': 1})
    with pytest.raises(ValueError):
        CSVTable([])


def test_table_write_and_read(tmpdir):
    path = os.path.join(str(tmpdir), 'table.csv')
    values = [1.0 / 3.0, 1e-17, -2.5e10]
    table = CSVTable(['i', 'x'])
    for i, v in enumerate(values):
        table.add_row([i, v])
    table.write(path)
    with open(path, 'rb') as f:
        assert b'\r' not in f.read()
    back = CSVTable.read(path)
    assert back.columns == ['i', 'x']
    assert back.column('x') == values
    assert back.column('i', int) == [0, 1, 2]


def test_curves_table_and_band():
    table = curves_table([_result(0, [2.0, 1.0, 0.5]), _result(1, [4.0, 4.0, 1.0])])
    assert len(table) == 6
    epochs, mean, low, high = curve_band(table)
    assert epochs.tolist() == [0, 1, 2]
    assert_allclose(mean, [1.0, 0.75, 0.25])
    assert_allclose(low, [1.0, 0.5, 0.25])
    assert_allclose(high, [1.0, 1.0, 0.25])


def test_export_curves_is_deterministic(tmpdir):
    results = [_result(0, [2.0, 1.0, 0.5]), _result(1, [4.0, 3.0, 1.0])]
    first = os.path.join(str(tmpdir), 'first')
    second = os.path.join(str(tmpdir), 'second')
    os.makedirs(first)
    os.makedirs(second)
    files_a = export_curves(results=results, outdir=first, title='di')
    files_b = export_curves(results=results, outdir=second, title='di')
    for a, b in zip(files_a, files_b):
        assert os.path.isfile(a)
        with open(a, 'rb') as fa, open(b, 'rb') as fb:
            assert fa.read() == fb.read()
    with open(files_a[1]) as f:
        assert '<svg' in f.read()


def test_export_curves_requires_results(tmpdir):
    with pytest.raises(UsageError):
        export_curves(results=[], outdir=str(tmpdir))
    with pytest.raises(TypeError):
        export_curves(results=[], outdir=1)


def test_export_levelset(tmpdir):
    value = QuadraticValue(np.eye(2))
    files, lines = export_levelset(value=value, outdir=str(tmpdir), bounds=((-1.0, 1.0), (-1.0, 1.0)),
                                   resolution=(41, 41), num_levels=3)
    assert [os.path.basename(p) for p in files] == ['levelset.csv', 'levelset.svg']
    table = CSVTable.read(files[0])
    assert len(table) == 41 * 41
    assert_allclose(table.column('v'), np.array(table.column('x')) ** 2 + np.array(table.column('y')) ** 2)
    assert len(lines) == 3
    for level, polylines in lines:
        assert polylines
        for line in polylines:
            assert_allclose((line ** 2).sum(axis=1), level, atol=5e-3)


def test_export_levelset_with_slice_and_overlay(tmpdir):
    value = QuadraticValue(np.diag([1.0, 2.0, 3.0, 4.0]))
    trajectory = np.linspace([0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], 10)
    files, lines = export_levelset(value=value, outdir=str(tmpdir), resolution=(11, 11), slice_dims=(2, 3),
                                   trajectories=[trajectory], basename='slice')
    assert all(os.path.isfile(p) for p in files)
    assert len(lines) == 10


@pytest.mark.parametrize("kwargs", [dict(), dict(slice_dims=(0, 0)), dict(slice_dims=(0, 4)),
                                    dict(slice_dims=(0, 1), resolution=(2, 10))])
def test_export_levelset_errors(tmpdir, kwargs):
    value = QuadraticValue(np.eye(4))
    with pytest.raises(UsageError):
        export_levelset(value=value, outdir=str(tmpdir), **kwargs)


def test_contour_levels_are_interior():
    levels = contour_levels(np.array([[0.0, 1.0], [2.0, 3.0]]), 2)
    assert_allclose(levels, [1.0, 2.0])


def test_print_helper(capsys):
    PrintHelper.print('hello', PrintHelper.OKGREEN, 2)
    out = capsys.readouterr().out
    assert 'hello' in out
    assert out.startswith(PrintHelper.OKGREEN + '      ')
