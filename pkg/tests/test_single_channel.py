import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcf_stability.common import InfeasibleError, NonConvergenceError, ParameterError
from dcf_stability.core import (
    MICROSECOND,
    ArrivalVector,
    CollisionModel,
    SystemParams,
    derive_timing,
    saturated_tau,
)
from dcf_stability.single_channel import (
    InitialCondition,
    RhoHatMode,
    SolverOptions,
    Verdict,
    classify,
    common_slot_cost,
    default_initial_conditions,
    lambda_tilde_contains,
    service_time,
    sigma_residuals,
    sigma_tilde_stable,
    solve_sigma,
    solve_sigma_tilde,
)


def test_single_node_utilization(params, chan):
    state = solve_sigma(ArrivalVector([1e6]), InitialCondition.zero(1), params, chan)
    assert state.rho[0] == pytest.approx(0.15482575, rel=1e-6)
    assert state.p[0] == 0.0
    assert state.stable


def test_single_node_service_time(params, chan):
    state = solve_sigma(ArrivalVector([1e6]), InitialCondition.zero(1), params, chan)
    breakdown = service_time(state, params, chan)
    assert breakdown.per_packet[0] / MICROSECOND == pytest.approx(1857.909, rel=1e-6)
    assert breakdown.x_bar[0] == pytest.approx(breakdown.per_packet[0] / 12000.0)


def test_single_node_overload_is_unstable(params, chan):
    state = solve_sigma(ArrivalVector([7e6]), InitialCondition.zero(1), params, chan)
    assert state.rho[0] == 1.0
    assert not state.stable


def test_zero_load_has_zero_attempts(params, chan):
    state = solve_sigma(ArrivalVector([0.0, 0.0]), InitialCondition.zero(2), params, chan)
    np.testing.assert_array_equal(state.tau, [0.0, 0.0])
    np.testing.assert_array_equal(state.rho, [0.0, 0.0])


def test_solution_satisfies_equations(params, chan):
    lam = ArrivalVector([1e6, 2e6, 0.5e6])
    state = solve_sigma(lam, InitialCondition.zero(3), params, chan)
    residuals = sigma_residuals(state, lam, params, chan)
    assert max(residuals.values()) < 1e-8
    assert state.iterations >= 1
    assert state.ic_label == "zero"


def test_symmetric_load_gives_symmetric_solution(params, chan):
    state = solve_sigma(ArrivalVector([1e6, 1e6]), InitialCondition.zero(2), params, chan)
    assert state.tau[0] == pytest.approx(state.tau[1], abs=1e-12)
    assert state.rho[0] == pytest.approx(state.rho[1], abs=1e-12)


def test_embedded_utilization_below_time_utilization(params, chan):
    state = solve_sigma(ArrivalVector([1e6, 1e6]), InitialCondition.zero(2), params, chan)
    assert np.all(state.rho_hat <= state.rho + 1e-12)


def test_plain_rho_mode_converges(params, chan):
    lam = ArrivalVector([1e6, 1e6])
    options = SolverOptions(rho_hat_mode=RhoHatMode.RHO)
    state = solve_sigma(lam, InitialCondition.zero(2), params, chan, options)
    np.testing.assert_allclose(state.rho_hat, state.rho)


@pytest.mark.parametrize("n", [2, 5, 10])
def test_saturated_load_reaches_saturation_point(params, chan, n):
    lam = ArrivalVector([20e6] * n)
    state = solve_sigma(lam, InitialCondition.zero(n), params, chan)
    np.testing.assert_allclose(state.tau, saturated_tau(params, n).tau, atol=1e-6)
    np.testing.assert_array_equal(state.rho, 1.0)


def test_successive_attempt_model_loads_more(params):
    lam = ArrivalVector([1e6, 1e6])
    bianchi = solve_sigma(lam, InitialCondition.zero(2), params, derive_timing(params, 11e6))
    facs_params = SystemParams(collision_model=CollisionModel.FACS)
    facs = solve_sigma(
        lam, InitialCondition.zero(2), facs_params, derive_timing(facs_params, 11e6)
    )
    assert np.all(facs.rho >= bianchi.rho)


def test_iteration_cap_raises(params, chan):
    options = SolverOptions(max_iterations=1)
    with pytest.raises(NonConvergenceError) as e:
        solve_sigma(ArrivalVector([1e6, 1e6]), InitialCondition.zero(2), params, chan, options)
    assert e.value.iterations == 1
    assert e.value.residual > options.tolerance


def test_initial_condition_shape_checked(params, chan):
    with pytest.raises(ParameterError):
        solve_sigma(ArrivalVector([1e6, 1e6]), InitialCondition.zero(3), params, chan)


@pytest.mark.parametrize(
    "kwargs", [{"damping": 0.0}, {"damping": 1.5}, {"tolerance": 0.0}, {"ic_grid": 1}]
)
def test_solver_options_validated(kwargs):
    with pytest.raises(ParameterError):
        SolverOptions(**kwargs)


def test_default_initial_conditions():
    ics = default_initial_conditions(2, ic_grid=3)
    assert [ic.label for ic in ics[:2]] == ["zero", "near_one"]
    assert len(ics) == 2 + 9
    assert ics[-1].label == "grid_2_2"


def test_classify_light_load_is_stable():
    params = SystemParams(window=128)
    verdict = classify(ArrivalVector([1e6, 1e6]), params, derive_timing(params, 11e6))
    assert verdict.verdict is Verdict.STABLE_ALL_IC
    assert verdict.contains
    assert len(verdict.distinct_solutions()) == 1


def test_classify_finds_initial_condition_dependence():
    params = SystemParams(window=2, max_stage=0)
    chan = derive_timing(params, 11e6)
    verdicts = []
    for rate in np.arange(0.0, 4.5e6 + 1.0, 0.1e6):
        try:
            verdicts.append(classify(ArrivalVector([rate, 1e6]), params, chan))
        except NonConvergenceError:
            continue
    dependent = [v for v in verdicts if v.verdict is Verdict.IC_DEPENDENT]
    assert dependent
    assert all(v.contains for v in dependent)
    assert all(len(v.distinct_solutions()) > 1 for v in dependent)


def test_classify_heavy_load_is_unstable():
    params = SystemParams(window=128)
    verdict = classify(ArrivalVector([5e6, 5e6]), params, derive_timing(params, 11e6))
    assert verdict.verdict is Verdict.UNSTABLE_ALL_IC
    assert not verdict.contains


def test_classify_raises_when_no_initial_condition_converges(params, chan):
    options = SolverOptions(max_iterations=1)
    with pytest.raises(NonConvergenceError):
        classify(ArrivalVector([1e6, 1e6]), params, chan, options)


def _tilde_residuals(solution, lam, params, t):
    w = params.window
    others = solution.tau.sum() - solution.tau
    rho = (
        lam.rates
        / params.payload_bits
        * ((w - 1) / 2 * (params.sigma + t * others) + t * (1 + others))
    )
    return np.abs(rho - solution.rho), np.abs(solution.tau - 2 * rho / (w + 1))


@given(st.lists(st.floats(0.0, 2e6), min_size=1, max_size=4))
def test_closed_form_solves_linearized_system(rates):
    params = SystemParams(window=128)
    t = derive_timing(params, 11e6).t_s
    lam = ArrivalVector(rates)
    solution = solve_sigma_tilde(lam, params, t)
    rho_err, tau_err = _tilde_residuals(solution, lam, params, t)
    assert np.all(rho_err < 1e-9)
    assert np.all(tau_err < 1e-12)


def test_closed_form_infeasible(params, chan):
    with pytest.raises(InfeasibleError):
        solve_sigma_tilde(ArrivalVector([1e10, 1e10]), params, chan.t_s)
    assert not sigma_tilde_stable(ArrivalVector([1e10, 1e10]), params, chan.t_s)


def test_closed_form_origin(params, chan):
    zero = ArrivalVector([0.0, 0.0])
    assert sigma_tilde_stable(zero, params, chan.t_s)
    # the attempt vector must be strictly positive for membership
    assert not lambda_tilde_contains(zero, params, chan.t_s)
    assert lambda_tilde_contains(ArrivalVector([1e5, 1e5]), params, chan.t_s)


def test_closed_form_rejects_bad_slot_cost(params):
    with pytest.raises(ParameterError):
        solve_sigma_tilde(ArrivalVector([1e6]), params, 0.0)


@settings(deadline=None)
@given(
    st.tuples(st.floats(0.0, 5e6), st.floats(0.0, 5e6)),
    st.floats(0.0, 1.0),
)
def test_membership_is_monotone(rates, shrink):
    params = SystemParams()
    chan = derive_timing(params, 11e6)
    outer = classify(ArrivalVector(rates), params, chan)
    inner = classify(ArrivalVector([shrink * r for r in rates]), params, chan)
    if outer.contains:
        assert inner.contains


@settings(deadline=None)
@given(st.lists(st.floats(0.0, 1.5e6), min_size=2, max_size=4), st.randoms())
def test_node_relabelling_permutes_solution(rates, rnd):
    params = SystemParams()
    chan = derive_timing(params, 11e6)
    order = list(range(len(rates)))
    rnd.shuffle(order)
    ic = InitialCondition.zero(len(rates))
    base = solve_sigma(ArrivalVector(rates), ic, params, chan)
    permuted = solve_sigma(ArrivalVector([rates[k] for k in order]), ic, params, chan)
    np.testing.assert_allclose(permuted.rho, base.rho[order], atol=1e-10)
    np.testing.assert_allclose(permuted.tau, base.tau[order], atol=1e-10)


def test_closed_form_region_inside_solved_region_up_to_one_cell():
    params = SystemParams(window=128)
    chan = derive_timing(params, 11e6)
    t = common_slot_cost(chan)
    cell = 0.5e6
    grid = np.arange(0.0, 4e6 + 1.0, cell)
    checked = 0
    for a in grid:
        for b in grid:
            if not sigma_tilde_stable(ArrivalVector([a, b]), params, t):
                continue
            inner = ArrivalVector([max(a - cell, 0.0), max(b - cell, 0.0)])
            assert classify(inner, params, chan).contains
            checked += 1
    assert checked > 10
