"""Policies, state bounds, feasibility, and the closed loop."""
from __future__ import annotations

import numpy as np
import pytest

from sirctl.control import (
    AssumedRates,
    ControlBounds,
    PolicyKind,
    SwitchingTimes,
    construct_state_bounds,
    feasibility_check,
    optimal_rate,
    robust_rate,
    simulate_closed_loop,
)
from sirctl.core import EpidemicParams, IntegratorConfig, SirState
from sirctl.noise import MeasuredSeries

PARAMS_F1 = EpidemicParams(beta=0.16, gamma=0.063)
BOUNDS = ControlBounds(u_max=0.2)
TIMES = SwitchingTimes(t_b=10.0, t_h=50.0)


def _state(s, i, t=0.0):
    return SirState(t=t, s=s, i=i, r=1.0 - s - i)


class TestOptimalRate:
    def test_zero_before_threshold_time(self):
        assert optimal_rate(5.0, _state(0.95, 0.005), PARAMS_F1, TIMES, BOUNDS) == 0.0

    def test_zero_when_threshold_never_fires(self):
        assert optimal_rate(30.0, _state(0.9, 0.005), PARAMS_F1,
                            SwitchingTimes(), BOUNDS) == 0.0

    def test_stage_two_hand_value(self):
        u = optimal_rate(30.0, _state(0.9, 0.01), PARAMS_F1, TIMES, BOUNDS)
        assert u == pytest.approx(0.081, abs=1e-12)

    def test_zero_at_herd_immunity_level(self):
        s = PARAMS_F1.gamma / PARAMS_F1.beta
        u = optimal_rate(30.0, _state(s, 0.01), PARAMS_F1, TIMES, BOUNDS)
        assert u == pytest.approx(0.0, abs=1e-15)

    def test_zero_after_herd_time(self):
        assert optimal_rate(60.0, _state(0.9, 0.01), PARAMS_F1, TIMES, BOUNDS) == 0.0

    def test_clamped_to_budget(self):
        small = ControlBounds(u_max=0.05)
        u = optimal_rate(30.0, _state(0.9, 0.01), PARAMS_F1, TIMES, small)
        assert u == 0.05


class TestRobustRate:
    def test_stage_one_zero(self):
        assert robust_rate(5.0, 0.98, 0.168, 0.05985, TIMES, BOUNDS) == 0.0

    def test_stage_two_hand_value(self):
        u = robust_rate(30.0, 0.98, 0.168, 0.05985, TIMES, BOUNDS)
        assert u == pytest.approx(0.10479, abs=1e-12)

    def test_collapses_to_optimal_with_exact_inputs(self):
        for s in (0.95, 0.7, 0.5, PARAMS_F1.gamma / PARAMS_F1.beta):
            u_star = optimal_rate(30.0, _state(s, 0.01), PARAMS_F1, TIMES, BOUNDS)
            u_hat = robust_rate(30.0, s, PARAMS_F1.beta, PARAMS_F1.gamma, TIMES, BOUNDS)
            assert u_hat == u_star


class TestStateBounds:
    def _series(self, s, i):
        n = len(s)
        zero = np.zeros(n)
        return MeasuredSeries(t=np.arange(n, dtype=float), s_hat=np.asarray(s),
                              i_hat=np.asarray(i), u=zero, sigma_s=zero,
                              sigma_i=zero.copy())

    def test_zero_amplitude_collapses_to_measurements(self):
        series = self._series([0.9, 0.8], [0.01, 0.02])
        sb = construct_state_bounds(series, (0.0, 0.0))
        assert np.all(sb.s_min == sb.s_max) and np.all(sb.s_max == series.s_hat)

    def test_clipping_at_physical_range(self):
        series = self._series([0.999], [0.003])
        sb = construct_state_bounds(series, (0.005, 0.005))
        assert sb.s_max[0] == 1.0
        assert sb.i_min[0] == 0.0

    def test_rejects_negative_amplitudes(self):
        with pytest.raises(ValueError):
            construct_state_bounds(self._series([0.9], [0.01]), (-0.1, 0.0))

    def test_monte_carlo_containment_of_true_state(self):
        # variance S/100 truncated at 3 sigma: amplitude 3*sigma from the true
        # state must contain the truth at (well over) 99.7% of steps
        rng = np.random.default_rng(11)
        s_true = np.linspace(0.99, 0.4, 4000)
        sigma = np.sqrt(s_true / 100.0)
        v = np.clip(rng.standard_normal(4000), -3.0, 3.0) * sigma
        s_meas = s_true + v
        delta = 3.0 * sigma
        inside = np.abs(s_true - s_meas) <= delta
        assert np.mean(inside) >= 0.997


class TestFeasibilityCheck:
    def test_hand_value_feasible(self):
        required, ok = feasibility_check(PARAMS_F1, _state(0.9, 0.01), u_max=0.2)
        assert required == pytest.approx(0.081, abs=1e-12)
        assert ok

    def test_budget_too_small(self):
        required, ok = feasibility_check(PARAMS_F1, _state(0.9, 0.01), u_max=0.05)
        assert required == pytest.approx(0.081, abs=1e-12)
        assert not ok

    def test_trivially_feasible_below_herd_level(self):
        required, ok = feasibility_check(PARAMS_F1, _state(0.3, 0.01), u_max=0.05)
        assert required <= 0.0
        assert ok


class TestClosedLoop:
    CONFIG = IntegratorConfig(step=0.01, horizon=260.0)
    INIT = SirState(t=0.0, s=1.0 - 1e-5, i=1e-5, r=0.0)

    def test_collapse_with_exact_bounds(self, fig1_collapse_artifacts):
        runs = fig1_collapse_artifacts.runs
        opt, rob = runs["optimal"].result, runs["robust"].result
        assert np.max(np.abs(rob.trajectory.i - opt.trajectory.i)) <= 1e-8
        assert np.max(np.abs(rob.trajectory.s - opt.trajectory.s)) <= 1e-8
        assert rob.trace.switching.t_b == opt.trace.switching.t_b
        assert rob.trace.switching.t_h == opt.trace.switching.t_h

    def test_no_event_when_peak_below_threshold(self):
        # uncontrolled peak ~0.24 < 0.5: best strategy never isolates
        res = simulate_closed_loop(PolicyKind.OPTIMAL, PARAMS_F1, None, self.INIT,
                                   None, self.CONFIG, i_bar=0.5,
                                   bounds=BOUNDS)
        assert np.all(res.trajectory.u == 0.0)
        assert res.trace.switching.t_b is None
        assert res.report.feasible

    def test_optimal_pins_infection_at_threshold(self, fig1_noise_free_artifacts):
        opt = fig1_noise_free_artifacts.runs["optimal"].result
        sw = opt.trace.switching
        traj = opt.trajectory
        stage2 = (traj.t >= sw.t_b) & (traj.t <= sw.t_h)
        assert np.max(np.abs(traj.i[stage2] - 0.1)) <= 1e-4

    def test_switching_time_ordering_under_inflation(self, fig1_noisy_artifacts):
        opt = fig1_noisy_artifacts.runs["optimal"].result.trace.switching
        rob = fig1_noisy_artifacts.runs["robust"].result.trace.switching
        assert rob.t_b <= opt.t_b <= opt.t_h <= rob.t_h

    def test_robust_dominates_optimal_pointwise(self, fig1_noisy_artifacts):
        opt = fig1_noisy_artifacts.runs["optimal"].result.trace
        rob = fig1_noisy_artifacts.runs["robust"].result.trace
        grid = np.union1d(opt.t, rob.t)
        gap = np.interp(grid, rob.t, rob.u) - np.interp(grid, opt.t, opt.u)
        assert np.min(gap) >= -1e-9

    def test_robust_feasible_under_bracketing_bounds(self, fig1_noisy_artifacts):
        rep = fig1_noisy_artifacts.runs["robust"].result.report
        assert rep.feasible
        assert rep.max_infection_attained <= 0.1 + 1e-6

    def test_misestimated_run_breaks_threshold(self, compare_artifacts):
        rep = compare_artifacts.runs["misestimated"].result.report
        assert not rep.feasible
        assert rep.max_infection_attained > 0.01 + 1e-3

    def test_required_rate_reported_at_crossing(self, compare_artifacts):
        rep = compare_artifacts.runs["optimal"].result.report
        # S barely declines before the crossing, so the required rate is
        # close to beta - gamma
        assert 0.1 < rep.required_rate_at_tb < 0.13
        assert rep.required_rate_at_tb <= rep.u_max

    def test_saturated_budget_recorded_and_infeasible(self):
        params = EpidemicParams(beta=0.16, gamma=1.0 / 30.0)
        res = simulate_closed_loop(
            PolicyKind.ROBUST, params,
            AssumedRates.from_multipliers(params, 1.05, 0.95), self.INIT, None,
            IntegratorConfig(step=0.01, horizon=150.0), i_bar=0.01,
            bounds=ControlBounds(u_max=0.05))
        assert res.report.clamp_events > 0
        assert not res.report.feasible

    def test_same_seed_reproduces_run(self):
        from sirctl.noise import MeasurementNoise, NoiseConfig

        params = EpidemicParams(beta=0.16, gamma=1.0 / 30.0)
        cfg = IntegratorConfig(step=0.01, horizon=120.0)
        ref = simulate_closed_loop(PolicyKind.OPTIMAL, params, None, self.INIT,
                                   None, cfg, i_bar=0.01, bounds=ControlBounds(0.15))

        def run():
            noise = MeasurementNoise.build(NoiseConfig(kind="snr_db", snr_db=55.0),
                                           cfg.n_steps + 1, seed=42,
                                           reference=ref.trajectory)
            return simulate_closed_loop(
                PolicyKind.ROBUST, params,
                AssumedRates.from_multipliers(params, 1.05, 0.95), self.INIT,
                noise, cfg, i_bar=0.01, bounds=ControlBounds(0.15))

        a, b = run(), run()
        assert np.array_equal(a.trajectory.i, b.trajectory.i)
        assert np.array_equal(a.trace.u, b.trace.u)

    def test_early_stop_truncates_after_herd(self):
        params = EpidemicParams(beta=0.3, gamma=0.05)
        init = SirState(t=0.0, s=0.9, i=0.1, r=0.0)
        res = simulate_closed_loop(PolicyKind.OPTIMAL, params, None, init, None,
                                   IntegratorConfig(step=0.01, horizon=2000.0),
                                   i_bar=0.3, bounds=BOUNDS, early_stop=True)
        assert res.trace.switching.t_h is not None
        assert len(res.trajectory) < 200001
        assert res.trajectory.i[-1] < 1e-8

    def test_infeasibility_is_recorded_not_raised(self, compare_artifacts):
        # the misestimated run exceeded the cap without aborting the run
        traj = compare_artifacts.runs["misestimated"].result.trajectory
        assert len(traj) == 120001


class TestCumulativeOrdering:
    def test_robust_keeps_more_susceptibles(self, fig1_noisy_artifacts):
        opt = fig1_noisy_artifacts.runs["optimal"].result
        rob = fig1_noisy_artifacts.runs["robust"].result
        t_h_star = opt.trace.switching.t_h
        mask = opt.trajectory.t <= t_h_star
        assert np.all(rob.trajectory.s[mask] >= opt.trajectory.s[mask] - 1e-9)
