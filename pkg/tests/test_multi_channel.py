import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcf_stability.common import ParameterError
from dcf_stability.core import ArrivalVector, SystemParams, derive_timing
from dcf_stability.multi_channel import (
    UnbiasedPolicy,
    equi_occupancy_gap,
    occupancy_hat_from_n,
    occupancy_n_from_hat,
    occupancy_n_from_packet,
    packet_from_occupancy,
    solve_sigma_g,
    solve_sigma_g_tilde,
    unbiased_stable,
)
from dcf_stability.single_channel import InitialCondition, solve_sigma, solve_sigma_tilde


@st.composite
def distributions(draw, k=2):
    weights = draw(st.lists(st.floats(0.05, 1.0), min_size=k, max_size=k))
    total = sum(weights)
    return [w / total for w in weights]


def test_occupancy_hat_example():
    q_hat = occupancy_hat_from_n([0.5, 0.5], [1.0, 2.0], [1.0, 1.0])
    assert q_hat[0] == pytest.approx(1.0 / 3.0)


def test_occupancy_hat_round_trip():
    q = np.array([0.3, 0.7])
    present, absent = [2.0, 3.0], [1.0, 1.5]
    q_hat = occupancy_hat_from_n(q, present, absent)
    np.testing.assert_allclose(occupancy_n_from_hat(q_hat, present, absent), q, atol=1e-9)


def test_occupancy_hat_rejects_non_distribution():
    with pytest.raises(ParameterError):
        occupancy_hat_from_n([0.5, 0.6], [1.0, 1.0], [1.0, 1.0])


def test_occupancy_from_packet_assignment_example():
    q = occupancy_n_from_packet([0.5, 0.5], [10.0, 20.0], [0.0, 0.0], [1.0, 1.0])
    np.testing.assert_allclose(q, [1.0 / 3.0, 2.0 / 3.0])


@given(distributions())
def test_packet_share_inverts_occupancy(q_tilde):
    wbar, p, rho_hat = [12.0, 30.0], [0.1, 0.3], [0.4, 0.8]
    q = occupancy_n_from_packet(q_tilde, wbar, p, rho_hat)
    np.testing.assert_allclose(packet_from_occupancy(q, wbar, p, rho_hat), q_tilde, atol=1e-12)


def test_packet_share_falls_back_to_occupancy():
    q = [0.25, 0.75]
    np.testing.assert_array_equal(packet_from_occupancy(q, [1.0, 1.0], [0.0, 0.0], [0.0, 0.0]), q)


def test_policy_rejects_bad_distribution():
    with pytest.raises(ParameterError):
        UnbiasedPolicy.of([0.7, 0.7])
    with pytest.raises(ParameterError):
        UnbiasedPolicy.of([])


def test_one_channel_matches_single_channel(params, chan):
    lam = ArrivalVector([1e6, 2e6])
    single = solve_sigma(lam, InitialCondition.zero(2), params, chan)
    multi = solve_sigma_g(lam, UnbiasedPolicy.of([1.0]), params, [chan], InitialCondition.zero(2))
    np.testing.assert_allclose(multi.tau[:, 0], single.tau, atol=1e-12)
    np.testing.assert_allclose(multi.rho, single.rho, atol=1e-12)
    assert multi.iterations == single.iterations


def test_symmetric_channels_split_evenly(params, chan):
    lam = ArrivalVector([1e6, 1e6])
    state = solve_sigma_g(
        lam, UnbiasedPolicy.equi_occupancy(2), params, [chan, chan], InitialCondition.zero(2)
    )
    np.testing.assert_allclose(state.tau[:, 0], state.tau[:, 1], atol=1e-12)
    for profile in state.occupancy:
        assert profile.q_hat[0] == pytest.approx(profile.q_hat[1], abs=1e-12)
        np.testing.assert_allclose(profile.q_tilde, [0.5, 0.5], atol=1e-9)
    assert state.stable


def test_channel_count_must_match_policy(params, chan):
    with pytest.raises(ParameterError):
        solve_sigma_g(
            ArrivalVector([1e6]),
            UnbiasedPolicy.equi_occupancy(2),
            params,
            [chan],
            InitialCondition.zero(1),
        )


@given(st.lists(st.floats(0.0, 1.5e6), min_size=1, max_size=4))
def test_single_channel_closed_form_reduction(rates):
    params = SystemParams(window=128)
    t = derive_timing(params, 11e6).t_s
    lam = ArrivalVector(rates)
    unbiased = solve_sigma_g_tilde(lam, UnbiasedPolicy.of([1.0]), params, t)
    plain = solve_sigma_tilde(lam, params, t)
    np.testing.assert_allclose(unbiased.rho, plain.rho, rtol=1e-9, atol=1e-15)
    np.testing.assert_allclose(unbiased.tau[:, 0], plain.tau, rtol=1e-9, atol=1e-15)


def test_closed_form_splits_attempts_by_occupancy(params, chan):
    policy = UnbiasedPolicy.of([0.25, 0.75])
    solution = solve_sigma_g_tilde(ArrivalVector([1e6, 1e6]), policy, params, chan.t_s)
    np.testing.assert_allclose(solution.tau[:, 1], 3.0 * solution.tau[:, 0])


def test_equi_occupancy_is_most_permissive(params, chan):
    lam = ArrivalVector([3e6, 3e6])
    uniform = solve_sigma_g_tilde(lam, UnbiasedPolicy.equi_occupancy(2), params, chan.t_s)
    skewed = solve_sigma_g_tilde(lam, UnbiasedPolicy.of([0.8, 0.2]), params, chan.t_s)
    assert np.all(uniform.rho <= skewed.rho)
    assert unbiased_stable(ArrivalVector([1e6, 1e6]), UnbiasedPolicy.of([0.8, 0.2]), params, chan.t_s)


@given(
    st.integers(2, 4).flatmap(lambda k: distributions(k=k)),
    st.lists(st.floats(0.0, 2e6), min_size=2, max_size=4),
)
def test_equi_occupancy_gap_non_negative(q, rates):
    params = SystemParams()
    t = derive_timing(params, 11e6).t_s
    gap = equi_occupancy_gap(ArrivalVector(rates), q, params, t)
    assert np.all(gap.gap >= 0)
    assert gap.spread >= gap.uniform_spread - 1e-12


def test_equi_occupancy_gap_vanishes_at_uniform(params, chan):
    gap = equi_occupancy_gap(ArrivalVector([1e6, 2e6]), [0.5, 0.5], params, chan.t_s)
    np.testing.assert_allclose(gap.gap, 0.0, atol=1e-15)
    np.testing.assert_allclose(gap.rho_difference, 0.0, atol=1e-12)


@settings(max_examples=min(50, settings.default.max_examples), deadline=None)
@given(
    st.lists(st.floats(0.0, 1e6), min_size=1, max_size=3),
    st.sampled_from([16, 32, 64, 128]),
)
def test_one_channel_reduces_to_single_channel(rates, window):
    params = SystemParams(window=window)
    chan = derive_timing(params, 11e6)
    lam = ArrivalVector(rates)
    ic = InitialCondition.zero(len(rates))
    single = solve_sigma(lam, ic, params, chan)
    multi = solve_sigma_g(lam, UnbiasedPolicy.of([1.0]), params, [chan], ic)
    np.testing.assert_allclose(multi.tau[:, 0], single.tau, atol=1e-12)
    np.testing.assert_allclose(multi.rho, single.rho, atol=1e-12)


@settings(deadline=None)
@given(distributions(k=3), st.permutations([0, 1, 2]))
def test_channel_relabelling_permutes_solution(q, order):
    params = SystemParams()
    chans = [derive_timing(params, b) for b in (5.5e6, 11e6, 22e6)]
    lam = ArrivalVector([1e6, 0.5e6])
    ic = InitialCondition.zero(2)
    base = solve_sigma_g(lam, UnbiasedPolicy.of(q), params, chans, ic)
    permuted = solve_sigma_g(
        lam,
        UnbiasedPolicy.of([q[k] for k in order]),
        params,
        [chans[k] for k in order],
        ic,
    )
    np.testing.assert_allclose(permuted.tau, base.tau[:, order], atol=1e-10)
    np.testing.assert_allclose(permuted.rho, base.rho, atol=1e-10)
