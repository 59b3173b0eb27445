import numpy as np
import pytest

from dcf_stability.common import ParameterError
from dcf_stability.core import SystemParams, derive_timing, single_node_capacity
from dcf_stability.frontier import (
    CLOSED_FORM,
    AnalyticSolver,
    BoundaryPoint,
    BoundaryTrace,
    Method,
    distinct_traces,
    phase_jumps,
    shape_classify,
    sweep_solution_component,
    trace_analytic,
    trace_area,
    trace_dominates,
    trace_empirical,
    trace_region,
)
from dcf_stability.multi_channel import UnbiasedPolicy
from dcf_stability.shape import Shape
from dcf_stability.simulator import NodeSpec, SimConfig
from dcf_stability.single_channel import InitialCondition


def _trace(x, y, method=Method.ANALYTIC_SIGMA):
    points = tuple(
        BoundaryPoint(fixed=(0.0, float(a)), boundary=float(b)) for a, b in zip(x, y, strict=True)
    )
    return BoundaryTrace(sweep_axis=0, fixed_axis=1, method=method, ic_label="zero", points=points)


def test_single_node_boundary_matches_capacity(params, chan):
    solver = AnalyticSolver(Method.ANALYTIC_SIGMA, params, (chan,))
    traces = trace_analytic([[0.0]], 0, 1e5, solver)
    assert set(traces) == {"zero", "near_one"}
    capacity = single_node_capacity(params, chan)
    for trace in traces.values():
        boundary = trace.points[0].boundary
        assert boundary <= capacity
        assert boundary == pytest.approx(capacity, abs=1e5 / 16)
        assert not trace.flagged
    assert len(distinct_traces(traces, 1e5 / 16)) == 1


def test_closed_form_has_one_family(params, chan):
    solver = AnalyticSolver(Method.ANALYTIC_SIGMA_TILDE, params, (chan,))
    traces = trace_analytic([[0.0, 0.0]], 0, 1e5, solver)
    assert list(traces) == [CLOSED_FORM]
    assert traces[CLOSED_FORM].method is Method.ANALYTIC_SIGMA_TILDE


def test_large_window_region_is_convex():
    params = SystemParams(window=128)
    chan = derive_timing(params, 11e6)
    solver = AnalyticSolver(Method.ANALYTIC_SIGMA_TILDE, params, (chan,))
    trace = trace_region([0.0, 0.0], 0, 1, 11, 1e5, solver)[CLOSED_FORM]
    x, y = trace.coordinates()
    assert len(trace.points) == 11
    assert np.all(np.diff(x) > 0)
    assert np.all(np.diff(y) <= 1e5 / 16)
    assert shape_classify(trace) is Shape.CONVEX


def test_uniform_occupancy_dominates(params, chan):
    fixed = [[0.0, v] for v in np.linspace(0.0, 2e6, 5)]

    def traced(q):
        solver = AnalyticSolver(
            Method.ANALYTIC_SIGMA_G_TILDE,
            params,
            (chan, chan),
            policy=UnbiasedPolicy.of(q),
        )
        return trace_analytic(fixed, 0, 1e5, solver, fixed_axis=1)[CLOSED_FORM]

    uniform = traced([0.5, 0.5])
    skewed = traced([0.7, 0.3])
    assert trace_dominates(uniform, skewed)
    assert trace_area(uniform) >= trace_area(skewed)


def test_solver_validation(params, chan):
    with pytest.raises(ParameterError):
        AnalyticSolver(Method.EMPIRICAL_SIM, params, (chan,))
    with pytest.raises(ParameterError):
        AnalyticSolver(Method.ANALYTIC_SIGMA, params, ())
    with pytest.raises(ParameterError):
        AnalyticSolver(Method.ANALYTIC_SIGMA_G, params, (chan,))
    with pytest.raises(ParameterError):
        AnalyticSolver(
            Method.ANALYTIC_SIGMA_G, params, (chan,), policy=UnbiasedPolicy.equi_occupancy(2)
        )


def test_trace_validation(params, chan):
    solver = AnalyticSolver(Method.ANALYTIC_SIGMA, params, (chan,))
    with pytest.raises(ParameterError):
        trace_analytic([[0.0]], 0, 0.0, solver)
    with pytest.raises(ParameterError):
        trace_analytic([], 0, 1e5, solver)
    with pytest.raises(ParameterError):
        trace_region([0.0, 0.0], 0, 0, 5, 1e5, solver)


def test_step_limit_flags_point(params, chan):
    solver = AnalyticSolver(Method.ANALYTIC_SIGMA, params, (chan,))
    traces = trace_analytic([[0.0]], 0, 1e5, solver, [InitialCondition.zero(1)], max_steps=3)
    assert traces["zero"].flagged


def test_shape_classify_synthetic():
    x = np.linspace(0.0, 1.0, 11)
    assert shape_classify(_trace(x, np.sqrt(1.0 - x**2))) is Shape.CONVEX
    assert shape_classify(_trace(x, (1.0 - x) ** 2)) is Shape.CONCAVE
    assert shape_classify(_trace(x, 1.0 - x)) is Shape.NEAR_LINEAR


def test_shape_classify_needs_five_points():
    x = np.linspace(0.0, 1.0, 4)
    with pytest.raises(ParameterError):
        shape_classify(_trace(x, 1.0 - x))


def test_trace_dominates():
    x = np.linspace(0.0, 1.0, 5)
    high = _trace(x, 1.0 - x**2)
    low = _trace(x, 1.0 - x)
    assert trace_dominates(high, low)
    assert not trace_dominates(low, high)
    assert trace_area(high) > trace_area(low)


def test_trace_rows_match_header():
    trace = _trace([0.0, 1.0], [2.0, 1.0])
    assert trace.header() == ["lambda_1", "lambda_2", "boundary", "method", "ic_label", "flagged", "spread"]
    assert trace.rows()[0] == [0.0, 0.0, 2.0, "analytic_sigma", "zero", False, 0.0]


def test_solution_component_is_smooth(params, chan):
    component = sweep_solution_component(
        0.1e6, np.linspace(0.0, 0.5e6, 6), InitialCondition.zero(2), params, chan
    )
    assert np.all(np.diff(component.rho_curve) > 0)
    assert not component.has_jump
    assert not component.flagged.any()
    assert len(component.rows()) == 6


def test_solution_component_rejects_empty_range(params, chan):
    with pytest.raises(ParameterError):
        sweep_solution_component(0.1e6, [], InitialCondition.zero(2), params, chan)


def test_empirical_trace_single_node(params, chan):
    template = SimConfig(params=params, channels=(chan,), nodes=(NodeSpec(rate=0.0),), t_f=5.0)
    trace = trace_empirical([[0.0]], 0, 1e6, template, replications=2, start=4e6)
    point = trace.points[0]
    assert trace.method is Method.EMPIRICAL_SIM
    assert len(point.samples) == 2
    assert 4e6 <= point.boundary <= 7e6
    assert point.spread >= 0


def test_empirical_trace_validation(params, chan):
    template = SimConfig(params=params, channels=(chan,), nodes=(NodeSpec(rate=0.0),))
    with pytest.raises(ParameterError):
        trace_empirical([[0.0]], 0, 1e6, template, replications=0)


def _two_node_trace(window, ic):
    params = SystemParams(window=window, max_stage=5)
    solver = AnalyticSolver(Method.ANALYTIC_SIGMA, params, (derive_timing(params, 11e6),))
    return trace_region([0.0, 0.0], 0, 1, 5, 2e5, solver, [ic])[ic.label]


def test_default_window_region_is_near_linear():
    trace = _two_node_trace(32, InitialCondition.zero(2))
    assert not trace.flagged
    assert shape_classify(trace) is Shape.NEAR_LINEAR


def test_small_window_region_is_concave():
    trace = _two_node_trace(4, InitialCondition.near_one(2))
    assert shape_classify(trace) is Shape.CONCAVE


def _components(window, sweep):
    params = SystemParams(window=window, max_stage=0)
    chan = derive_timing(params, 11e6)
    return [
        sweep_solution_component(1e6, sweep, ic, params, chan)
        for ic in (InitialCondition.zero(2), InitialCondition.near_one(2))
    ]


def test_smallest_window_components_depend_on_initial_condition():
    zero, near_one = _components(2, np.arange(0.0, 4.5e6 + 1.0, 0.1e6))
    assert np.nanmax(np.abs(zero.rho_curve - near_one.rho_curve)) > 1e-3
    assert zero.has_jump or near_one.has_jump


def test_wider_window_components_coincide():
    zero, near_one = _components(16, np.arange(0.0, 4.5e6 + 1.0, 0.25e6))
    assert np.nanmax(np.abs(zero.rho_curve - near_one.rho_curve)) <= 1e-3


@pytest.mark.parametrize(
    ("rho", "expected"),
    [
        ([0.1, 0.2, 0.21], [False, True, False]),
        ([0.1, np.nan, 0.9], [False, False, True]),
        ([0.1, 0.12, np.nan], [False, False, False]),
        ([np.nan, np.nan], [False, False]),
    ],
)
def test_phase_jumps_skip_unsolved_points(rho, expected):
    assert phase_jumps(rho).tolist() == expected


def test_boundary_shrinks_as_other_rate_grows(params, chan):
    solver = AnalyticSolver(Method.ANALYTIC_SIGMA, params, (chan,))
    fixed = [[0.0, v] for v in (0.0, 1e6, 2e6, 3e6)]
    trace = trace_analytic(fixed, 0, 1e5, solver, [InitialCondition.zero(2)], fixed_axis=1)["zero"]
    x, y = trace.coordinates()
    np.testing.assert_array_equal(x, [0.0, 1e6, 2e6, 3e6])
    assert np.all(np.diff(y) <= 1e5 / 16)
    assert y[-1] < y[0]
