import io
import json
import os

import numpy as np
import pytest

from smokeflow import solver
from smokeflow.experiments import smoke_sequence, textured_pair
from smokeflow.fields import FlowField, gradients
from smokeflow.fracdiff import gl_weights
from smokeflow.gmm import GmmConfig
from smokeflow.imgio import ImageFrame, read_flo
from smokeflow.levelset import init_levelsets
from smokeflow.metrics import aae, aepe
from smokeflow.solver import SolverParams, energy, estimate_flow, run_pipeline
from smokeflow.utils import (
    DegenerateMixture,
    DegenerateSize,
    NonFiniteDivergence,
    PreconditionError,
    SizeMismatch,
)


@pytest.fixture(scope='module')
def default_run():
    frame1, frame2, gt = textured_pair(size=64, shift=(1, 0), seed=0)
    return estimate_flow(frame1, frame2, SolverParams()), gt


def test_zero_motion_is_stationary(texture):
    result = estimate_flow(texture, texture, SolverParams(outer_iters=10))
    assert np.max(np.abs(result.flow.stacked())) <= 1e-3
    assert result.residual_trace == [0.0] * 10


@pytest.mark.parametrize('key, value', [
    ('outer_iters', 0),
    ('alpha', 1.0),
    ('theta', 0.0),
    ('nu', -1.0),
    ('pyramid_factor', 1.0),
    ('init_scheme', 'spiral'),
    ('median_size', -1),
])
def test_invalid_parameters_name_their_key(texture, key, value):
    with pytest.raises(PreconditionError) as err:
        estimate_flow(texture, texture, SolverParams(**{key: value}))
    assert err.value.key == key


def test_frame_preconditions(texture):
    with pytest.raises(SizeMismatch):
        estimate_flow(texture, ImageFrame(np.zeros((16, 16))))
    tiny = ImageFrame(np.zeros((6, 6)))
    with pytest.raises(DegenerateSize):
        estimate_flow(tiny, tiny)


def test_default_parameters_recover_rightward_motion(default_run):
    result, gt = default_run
    assert result.stability.stable
    assert len(result.energy_trace) == 100
    assert len(result.residual_trace) == 100
    assert 0.7 <= result.flow.u.mean() <= 1.3
    assert abs(result.flow.v.mean()) <= 0.3
    assert aepe(result.flow, gt) <= 0.5
    assert aae(result.flow, gt) <= 0.35
    residual = np.array(result.residual_trace)
    assert residual[-50:].mean() < residual[:10].mean()


def test_median_step_improves_on_pointwise_estimates(default_run):
    result, gt = default_run
    frame1, frame2, _ = textured_pair(size=64, shift=(1, 0), seed=0)
    pointwise = estimate_flow(frame1, frame2, SolverParams(median_size=0))
    assert aepe(pointwise.flow, gt) > aepe(result.flow, gt)


def test_trace_frame_columns(default_run):
    result, _ = default_run
    df = result.trace_frame()
    assert list(df.columns) == ['level', 'iteration', 'data_term', 'frac_term', 'contour_term', 'total',
                                'residual']
    assert len(df) == 100
    assert df['iteration'].tolist() == list(range(100))
    np.testing.assert_allclose(df['total'], df['data_term'] + df['frac_term'] + df['contour_term'])


def test_energy_terms():
    frame1, frame2, _ = textured_pair(size=16, shift=(1, 0), seed=2)
    params = SolverParams()
    w = gl_weights(params.alpha, params.window)
    q = init_levelsets(16, 16)

    still = gradients(frame1, frame1)
    zero = energy(still, FlowField.zeros((16, 16)), q, w, params)
    assert zero.data_term == 0.0
    assert zero.frac_term == 0.0
    assert zero.contour_term > 0.0

    g = gradients(frame1, frame2)
    flow = FlowField(np.ones((16, 16)), np.zeros((16, 16)))
    e = energy(g, flow, q, w, params, iteration=3, level=1)
    assert e.frac_term == pytest.approx(0.0, abs=1e-9)
    assert e.data_term == pytest.approx(params.lam * np.abs(g.it + g.ix).sum())
    assert e.total == pytest.approx(e.data_term + e.contour_term)
    assert e.to_record()['iteration'] == 3 and e.to_record()['level'] == 1

    no_contour = energy(g, flow, q, w, SolverParams(nu=0.0))
    assert no_contour.contour_term == 0.0


def test_runs_are_deterministic(shifted_pair, quick_params):
    frame1, frame2, _ = shifted_pair
    a = estimate_flow(frame1, frame2, quick_params)
    b = estimate_flow(frame1, frame2, quick_params)
    np.testing.assert_array_equal(a.flow.u, b.flow.u)
    np.testing.assert_array_equal(a.levelsets.kv2, b.levelsets.kv2)
    assert a.residual_trace == b.residual_trace


def test_diagnostics_stream(shifted_pair, quick_params):
    frame1, frame2, _ = shifted_pair
    sink = io.StringIO()
    estimate_flow(frame1, frame2, quick_params, diagnostics=sink)
    lines = sink.getvalue().splitlines()
    assert len(lines) == quick_params.outer_iters
    record = json.loads(lines[-1])
    assert record['iteration'] == quick_params.outer_iters - 1
    assert {'data_term', 'frac_term', 'contour_term', 'total', 'residual', 'level'} <= set(record)


def test_divergence_is_reported(shifted_pair, quick_params, monkeypatch):
    def broken(p, q, eps):
        return FlowField(np.full(q.shape, np.nan), np.zeros(q.shape))

    monkeypatch.setattr(solver, 'compose_flow', broken)
    frame1, frame2, _ = shifted_pair
    with pytest.raises(NonFiniteDivergence) as err:
        estimate_flow(frame1, frame2, quick_params)
    assert err.value.iteration == 0


def test_share_levelsets_ties_components(shifted_pair):
    frame1, frame2, _ = shifted_pair
    result = estimate_flow(frame1, frame2, SolverParams(outer_iters=3, share_levelsets=True))
    np.testing.assert_array_equal(result.levelsets.ku1, result.levelsets.kv1)


def test_pyramid_traces_describe_the_finest_level(shifted_pair):
    frame1, frame2, _ = shifted_pair
    params = SolverParams(outer_iters=4, pyramid_levels=2, theta=0.25)
    sink = io.StringIO()
    result = estimate_flow(frame1, frame2, params, diagnostics=sink)
    assert result.flow.shape == (64, 64)
    assert result.levelsets.shape == (64, 64)
    df = result.trace_frame()
    assert df['level'].tolist() == [0] * 4
    assert df['iteration'].tolist() == list(range(4))
    streamed = [json.loads(line)['level'] for line in sink.getvalue().splitlines()]
    assert streamed == [1] * 4 + [0] * 4
    with pytest.raises(DegenerateSize):
        estimate_flow(frame1, frame2, SolverParams(pyramid_levels=5))


def test_pipeline_on_static_frames(texture, tmp_path):
    out = run_pipeline(texture, texture, SolverParams(outer_iters=5), out_dir=str(tmp_path), stem='still')
    assert out.mask.mean() <= 0.05
    np.testing.assert_array_equal(out.colormap.data, 1.0)
    assert out.max_mag == pytest.approx(1e-3)
    for name in ('still.flo', 'still_color.png', 'still_mask.png', 'still_fused.png'):
        assert os.path.isfile(tmp_path / name)
    np.testing.assert_array_equal(read_flo(str(tmp_path / 'still.flo')).u, out.flow.u)


def test_pipeline_rejects_single_component(texture):
    with pytest.raises(DegenerateMixture):
        run_pipeline(texture, texture, SolverParams(outer_iters=1), GmmConfig(K=1))


def test_pipeline_finds_rising_plume():
    frame1, frame2, support = smoke_sequence(size=64, seed=0, drift=2)
    out = run_pipeline(frame1, frame2, SolverParams())
    inside = out.mask[support > 0].mean()
    outside = out.mask[support == 0].mean()
    assert inside >= 0.6
    assert inside > outside
    # rising smoke moves against the image y axis
    assert out.flow.v[support > 0].mean() < 0


def _two_motion_pair():
    """Left half translated one pixel right, right half static"""
    frame1, frame2, _ = textured_pair(size=64, shift=(1, 0), seed=0)
    x = np.arange(64)[None, :, None]
    return frame1, ImageFrame(np.where(x < 32, frame2.data, frame1.data))


def test_uniform_coupling_keeps_phases_identical():
    frame1, frame2 = _two_motion_pair()
    result = estimate_flow(frame1, frame2, SolverParams(outer_iters=10))
    phases = result.phases.stacked()
    assert np.ptp(phases, axis=0).max() == 0.0


def test_region_coupling_separates_phases():
    frame1, frame2 = _two_motion_pair()
    result = estimate_flow(frame1, frame2, SolverParams(outer_iters=10, region_coupling=True))
    phases = result.phases.stacked()
    assert np.ptp(phases, axis=0).max() > 1e-6
    assert np.all(np.isfinite(result.flow.stacked()))
    assert result.flow.u[:, 4:28].mean() > result.flow.u[:, 36:60].mean() + 0.5
