"""Dynamics, integration, the peak formula, and event detection."""
from __future__ import annotations

import math
import random

import numpy as np
import pytest

from sirctl.core import (
    EpidemicParams,
    HerdImmunityNotReached,
    IntegratorConfig,
    NonFiniteDynamicsError,
    SirState,
    Trajectory,
    euler_step,
    find_herd_immunity,
    find_threshold_crossing,
    integrate,
    peak_infection,
    rhs,
)

PARAMS_52 = EpidemicParams(beta=0.16, gamma=1.0 / 30.0)
PARAMS_F1 = EpidemicParams(beta=0.16, gamma=0.063)


class TestRhs:
    def test_disease_free_state_is_equilibrium(self):
        state = SirState(t=0.0, s=0.5, i=0.0, r=0.5)
        assert rhs(state, PARAMS_52, 0.0) == (0.0, 0.0, 0.0)

    def test_hand_evaluated_derivatives(self):
        state = SirState(t=0.0, s=0.5, i=0.1, r=0.4)
        ds, di, dr = rhs(state, PARAMS_52, 0.0)
        assert ds == pytest.approx(-0.008, abs=1e-12)
        assert di == pytest.approx(0.0046667, abs=1e-7)
        assert dr == pytest.approx(0.0033333, abs=1e-7)

    def test_herd_immunity_boundary_zeroes_di(self):
        s = PARAMS_F1.gamma / PARAMS_F1.beta
        state = SirState(t=0.0, s=s, i=0.01, r=1.0 - s - 0.01)
        _, di, _ = rhs(state, PARAMS_F1, 0.0)
        assert di == pytest.approx(0.0, abs=1e-15)

    def test_rates_sum_to_zero(self):
        state = SirState(t=0.0, s=0.3, i=0.25, r=0.45)
        ds, di, dr = rhs(state, PARAMS_52, 0.07)
        assert ds + di + dr == pytest.approx(0.0, abs=1e-18)


class TestEulerStep:
    def test_no_infection_leaves_state_unchanged(self):
        state = SirState(t=2.0, s=0.7, i=0.0, r=0.3)
        out = euler_step(state, PARAMS_52, 0.1, 0.5)
        assert (out.s, out.i, out.r) == (0.7, 0.0, 0.3)
        assert out.t == 2.5

    def test_hand_evaluated_step(self):
        state = SirState(t=0.0, s=0.5, i=0.1, r=0.4)
        out = euler_step(state, PARAMS_52, 0.0, 0.01)
        assert out.s == pytest.approx(0.49992, abs=1e-12)
        assert out.i == pytest.approx(0.10004667, abs=1e-8)
        assert out.r == pytest.approx(0.40003333, abs=1e-8)

    def test_sum_preserved_exactly(self):
        state = SirState(t=0.0, s=0.61, i=0.17, r=0.22)
        out = euler_step(state, PARAMS_F1, 0.12, 0.3)
        assert out.s + out.i + out.r == pytest.approx(1.0, abs=1e-15)

    def test_rejects_nonpositive_step(self):
        state = SirState(t=0.0, s=0.5, i=0.1, r=0.4)
        with pytest.raises(ValueError):
            euler_step(state, PARAMS_52, 0.0, 0.0)


class TestIntegrate:
    def test_no_infection_freezes_dynamics(self):
        init = SirState(t=0.0, s=0.8, i=0.0, r=0.2)
        traj = integrate(PARAMS_52, 0.0, init, IntegratorConfig(step=0.1, horizon=5.0))
        assert np.all(traj.s == 0.8)
        assert np.all(traj.i == 0.0)

    def test_conservation_along_wave(self, wave_traj):
        assert wave_traj.max_conservation_error() <= 1e-9

    def test_susceptibles_monotone(self, wave_traj):
        assert np.all(np.diff(wave_traj.s) <= 0.0)

    def test_step_refinement_changes_final_state_below_tol(self):
        init = SirState(t=0.0, s=1.0 - 1e-5, i=1e-5, r=0.0)
        coarse = integrate(PARAMS_52, 0.0, init, IntegratorConfig(step=0.02, horizon=60.0))
        fine = integrate(PARAMS_52, 0.0, init, IntegratorConfig(step=0.01, horizon=60.0))
        diff = max(abs(coarse.s[-1] - fine.s[-1]), abs(coarse.i[-1] - fine.i[-1]))
        assert diff <= 1e-6

    def test_rk4_order_of_accuracy(self):
        init = SirState(t=0.0, s=0.9, i=0.1, r=0.0)
        params = EpidemicParams(beta=0.5, gamma=0.15)
        ref = integrate(params, 0.0, init, IntegratorConfig(step=0.01, horizon=20.0))

        def final_error(h):
            traj = integrate(params, 0.0, init, IntegratorConfig(step=h, horizon=20.0))
            return abs(traj.i[-1] - ref.i[-1]) + abs(traj.s[-1] - ref.s[-1])

        assert final_error(0.8) / final_error(0.4) >= 8.0

    def test_nonfinite_policy_reported(self):
        init = SirState(t=0.0, s=0.9, i=0.1, r=0.0)
        with pytest.raises(NonFiniteDynamicsError):
            integrate(PARAMS_52, lambda t, x: float("nan"), init,
                      IntegratorConfig(step=0.1, horizon=1.0))

    def test_out_of_range_policy_rejected(self):
        init = SirState(t=0.0, s=0.9, i=0.1, r=0.0)
        with pytest.raises(ValueError):
            integrate(PARAMS_52, 1.5, init, IntegratorConfig(step=0.1, horizon=1.0))

    def test_state_feedback_policy(self):
        init = SirState(t=0.0, s=0.9, i=0.1, r=0.0)
        traj = integrate(PARAMS_52, lambda t, x: min(0.1, x.i), init,
                         IntegratorConfig(step=0.05, horizon=2.0))
        assert np.all(traj.u <= 0.1 + 1e-15)

    def test_euler_method_matches_euler_step(self):
        init = SirState(t=0.0, s=0.5, i=0.1, r=0.4)
        traj = integrate(PARAMS_52, 0.0, init,
                         IntegratorConfig(method="euler", step=0.01, horizon=0.01))
        manual = euler_step(init, PARAMS_52, 0.0, 0.01)
        assert traj.s[-1] == manual.s and traj.i[-1] == manual.i


class TestPeakInfection:
    def test_start_at_peak_returns_start_infection(self):
        rho = (PARAMS_F1.gamma + 0.0) / PARAMS_F1.beta
        state = SirState(t=0.0, s=rho, i=0.05, r=1.0 - rho - 0.05)
        assert peak_infection(PARAMS_F1, state, 0.0) == pytest.approx(0.05, abs=1e-12)

    def test_below_peak_condition_returns_start_infection(self):
        state = SirState(t=0.0, s=0.2, i=0.05, r=0.75)
        assert peak_infection(PARAMS_F1, state, 0.0) == 0.05

    def test_hand_evaluated_peak(self):
        state = SirState(t=0.0, s=0.99999, i=1e-5, r=0.0)
        assert peak_infection(PARAMS_F1, state, 0.0) == pytest.approx(0.239264, abs=1e-5)

    def test_matches_fine_simulation(self):
        state = SirState(t=0.0, s=0.99999, i=1e-5, r=0.0)
        predicted = peak_infection(PARAMS_F1, state, 0.0)
        traj = integrate(PARAMS_F1, 0.0, state, IntegratorConfig(step=0.01, horizon=250.0))
        simulated = float(np.max(traj.i))
        assert abs(predicted - simulated) <= 1e-4

    def test_monotone_decreasing_in_isolation_rate(self):
        state = SirState(t=0.0, s=0.99, i=0.001, r=0.009)
        peaks = [peak_infection(PARAMS_F1, state, u) for u in (0.0, 0.02, 0.05)]
        assert peaks[0] > peaks[1] > peaks[2]

    def test_monotone_in_parameters(self):
        state = SirState(t=0.0, s=0.99, i=0.001, r=0.009)
        base = peak_infection(EpidemicParams(0.2, 0.05), state, 0.0)
        hi_beta = peak_infection(EpidemicParams(0.25, 0.05), state, 0.0)
        hi_gamma = peak_infection(EpidemicParams(0.2, 0.07), state, 0.0)
        assert hi_beta > base > hi_gamma

    def test_rejects_nonpositive_susceptibles(self):
        with pytest.raises(ValueError):
            peak_infection(PARAMS_F1, SirState(t=0.0, s=0.0, i=0.5, r=0.5), 0.0)


class TestThresholdCrossing:
    def test_never_reached_returns_none(self, wave_traj):
        assert find_threshold_crossing(wave_traj, 0.9) is None

    def test_crossing_refined_to_tolerance(self, wave_traj):
        t_b = find_threshold_crossing(wave_traj, 0.01)
        assert t_b is not None
        i_at = wave_traj.state_at(t_b)[1]
        assert abs(i_at - 0.01) <= 1e-8

    def test_inflated_series_crosses_earlier(self, wave_traj):
        t_raw = find_threshold_crossing(wave_traj, 0.01)
        t_inflated = find_threshold_crossing(wave_traj, 0.01, i_offset=0.002)
        assert t_inflated <= t_raw

    def test_already_above_at_start(self):
        init = SirState(t=0.0, s=0.8, i=0.15, r=0.05)
        traj = integrate(PARAMS_52, 0.0, init, IntegratorConfig(step=0.1, horizon=2.0))
        assert find_threshold_crossing(traj, 0.1) == 0.0

    def test_rejects_bad_threshold(self, wave_traj):
        with pytest.raises(ValueError):
            find_threshold_crossing(wave_traj, 1.5)


class TestHerdImmunity:
    def test_crossing_refined_to_tolerance(self, wave_traj):
        beta, gamma = PARAMS_52.beta, PARAMS_52.gamma
        t_h = find_herd_immunity(wave_traj, beta, gamma)
        s_at = wave_traj.state_at(t_h)[0]
        assert abs(beta * s_at - gamma) <= 1e-8

    def test_start_below_level_returns_start_time(self):
        init = SirState(t=0.0, s=0.1, i=0.05, r=0.85)
        traj = integrate(PARAMS_52, 0.0, init, IntegratorConfig(step=0.1, horizon=2.0))
        assert find_herd_immunity(traj, PARAMS_52.beta, PARAMS_52.gamma) == 0.0

    def test_overestimated_rates_cross_later(self, wave_traj):
        beta, gamma = PARAMS_52.beta, PARAMS_52.gamma
        t_h = find_herd_immunity(wave_traj, beta, gamma)
        t_hat = find_herd_immunity(wave_traj, 1.05 * beta, 0.95 * gamma)
        assert t_hat >= t_h

    def test_inflated_envelope_crosses_later(self, wave_traj):
        beta, gamma = PARAMS_52.beta, PARAMS_52.gamma
        t_h = find_herd_immunity(wave_traj, beta, gamma)
        t_env = find_herd_immunity(wave_traj, beta, gamma, s_offset=0.01)
        assert t_env >= t_h

    def test_not_reached_raises(self):
        init = SirState(t=0.0, s=1.0 - 1e-5, i=1e-5, r=0.0)
        short = integrate(PARAMS_52, 0.0, init, IntegratorConfig(step=0.01, horizon=30.0))
        with pytest.raises(HerdImmunityNotReached):
            find_herd_immunity(short, PARAMS_52.beta, PARAMS_52.gamma)


def _random_scenario(seed: int):
    rng = random.Random(seed)
    while True:
        beta = rng.uniform(0.08, 0.5)
        gamma = rng.uniform(0.01, 0.15)
        u_fix = rng.uniform(0.0, 0.1)
        i0 = rng.uniform(1e-4, 0.2)
        s0 = rng.uniform(0.5, 1.0 - i0)
        if beta * s0 > gamma + u_fix + 0.03:
            return (EpidemicParams(beta=beta, gamma=gamma),
                    SirState(t=0.0, s=s0, i=i0, r=1.0 - s0 - i0), u_fix)


def simulated_peak(params: EpidemicParams, init: SirState, u_fix: float,
                   step: float = 0.01) -> float:
    """Independent oracle: chunked fine-step simulation until the peak passes."""
    state = init
    best = init.i
    for _ in range(30):
        traj = integrate(params, u_fix, state, IntegratorConfig(step=step, horizon=100.0))
        best = max(best, float(np.max(traj.i)))
        if int(np.argmax(traj.i)) < len(traj) - 1:
            return best
        state = traj.sample(len(traj) - 1)
    raise AssertionError("peak not reached within the search window")


@pytest.mark.parametrize("seed", range(12))
def test_peak_formula_matches_simulation_on_random_scenarios(seed):
    params, init, u_fix = _random_scenario(seed)
    predicted = peak_infection(params, init, u_fix)
    assert abs(predicted - simulated_peak(params, init, u_fix)) <= 1e-4


@pytest.mark.parametrize("seed", range(8))
def test_trajectory_invariants_on_random_scenarios(seed):
    params, init, u_fix = _random_scenario(100 + seed)
    traj = integrate(params, u_fix, init, IntegratorConfig(step=0.05, horizon=80.0))
    assert traj.max_conservation_error() <= 1e-9
    assert np.all(np.diff(traj.s) <= 1e-15)
    assert np.all(traj.i >= -1e-15)


def test_trajectory_requires_increasing_times():
    with pytest.raises(ValueError):
        Trajectory(t=np.array([0.0, 0.0]), s=np.array([0.5, 0.5]),
                   i=np.array([0.1, 0.1]), r=np.array([0.4, 0.4]),
                   u=np.array([0.0, 0.0]), step=0.1, params=PARAMS_52)
