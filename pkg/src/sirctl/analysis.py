"""Cost functionals and optimality-gap accounting for matched policy runs.

The objective is the cumulative isolation rate, the integral of u over time.
The extra cost of a robust run over the matched optimal run can be computed
three ways that must agree: directly as the integral of the rate difference,
through the state-based identity (the rate inversion u = -(1/I) dI/dt +
beta*S - gamma integrates to a susceptible-gap term plus log-infection
terms), and through the piecewise closed form built from the robust
envelope, which also yields an endpoint-only upper bound.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import EpidemicParams, Trajectory
from .control import PolicyTrace, StateBounds, SwitchingTimes

_MIN_INFECTION = 1e-12


@dataclass(frozen=True)
class CostReport:
    """Costs and cross-checked optimality gaps for a robust/optimal pair."""

    total_cost: float  # robust run
    optimal_cost: float
    gap_direct: float
    gap_from_states: float
    gap_closed_form: float
    gap_upper: float
    times_robust: SwitchingTimes
    times_optimal: SwitchingTimes


@dataclass(frozen=True)
class CumulativeCheck:
    """Worst violation of I+R <= I*+R* up to the optimal herd-immunity time."""

    max_violation: float
    ok: bool


def total_cost(trace: PolicyTrace, warn: bool = True) -> float:
    """Trapezoidal integral of the applied rate over the trace.

    Switch instants are duplicated nodes in the trace, so the piecewise
    stage boundaries integrate exactly. Warns when the rate is still
    non-zero at the end of the horizon (truncated, unconverged cost);
    internal table assembly passes warn=False because the truncation is
    visible in the switching-time columns.
    """
    if len(trace.t) == 0:
        return 0.0
    if warn and trace.u[-1] > 0.0:
        warnings.warn(
            f"isolation rate is {trace.u[-1]:.3e} at the end of the horizon; "
            "the cost integral is truncated, not converged",
            stacklevel=2,
        )
    return float(np.trapezoid(trace.u, trace.t))


def gap_direct(trace_robust: PolicyTrace, trace_optimal: PolicyTrace) -> float:
    """Integral of the pointwise rate difference over the common horizon.

    Both traces duplicate their switch nodes, so integrating each on its own
    grid and subtracting equals the integral of the difference exactly (the
    rates are piecewise linear between duplicated nodes).
    """
    for a, b, what in ((trace_robust.t[0], trace_optimal.t[0], "start"),
                       (trace_robust.t[-1], trace_optimal.t[-1], "end")):
        if abs(a - b) > 1e-9 * max(1.0, abs(float(b))):
            raise ValueError(f"trace grids disagree at the {what}: {a} vs {b}")
    return float(np.trapezoid(trace_robust.u, trace_robust.t)
                 - np.trapezoid(trace_optimal.u, trace_optimal.t))


def _segment_grid(lo: float, hi: float, step: float) -> np.ndarray:
    if hi < lo:
        raise ValueError(f"inverted integration segment [{lo}, {hi}]")
    inner = np.arange(math.ceil(lo / step) * step, hi, step)
    inner = inner[(inner > lo) & (inner < hi)]
    return np.concatenate(([lo], inner, [hi]))


def _s_on(traj: Trajectory, grid: np.ndarray) -> np.ndarray:
    return np.array([traj.state_at(float(tq))[0] for tq in grid])


def gap_from_states(traj_robust: Trajectory, traj_optimal: Trajectory,
               beta: float, times: SwitchingTimes) -> float:
    """State-based gap over [t_b, t_h] of the robust run:

        beta * integral(S - S*) - log I(t_h) + log I*(t_h).

    Uses true states of both runs and the bisection-refined switch times.
    """
    if not times.complete:
        raise ValueError("gap_from_states needs both switching times of the robust run")
    t_lo, t_hi = times.t_b, times.t_h
    grid = _segment_grid(t_lo, t_hi, traj_robust.step)
    s_gap = _s_on(traj_robust, grid) - _s_on(traj_optimal, grid)
    i_rob = traj_robust.state_at(t_hi)[1]
    i_opt = traj_optimal.state_at(t_hi)[1]
    if i_rob < _MIN_INFECTION or i_opt < _MIN_INFECTION:
        raise ValueError(
            f"infection at t_h too small for the log terms ({i_rob:.3e}, {i_opt:.3e})"
        )
    return float(beta * np.trapezoid(s_gap, grid) - math.log(i_rob) + math.log(i_opt))


def gap_closed_form(bounds: StateBounds, beta_max: float, gamma_min: float,
             beta: float, gamma: float, s_star: Trajectory,
             times_robust: SwitchingTimes, times_optimal: SwitchingTimes
             ) -> tuple[float, float]:
    """Closed-form gap C and its endpoint upper bound C_bar.

    C integrates the robust envelope rate beta_max*S_max - gamma_min over
    the three segments [t_b, t*_b], [t*_b, t*_h], [t*_h, t_h], subtracting
    the optimal rate on the middle one. C_bar freezes S_max at t_b and S*
    at t*_h. Requires t_b <= t*_b <= t*_h <= t_h.
    """
    if not (times_robust.complete and times_optimal.complete):
        raise ValueError("gap_closed_form needs all four switching times")
    tb_h, th_h = times_robust.t_b, times_robust.t_h
    tb_s, th_s = times_optimal.t_b, times_optimal.t_h
    if not (tb_h <= tb_s + 1e-9 and tb_s <= th_s and th_s <= th_h + 1e-9):
        raise ValueError(
            f"switching times out of order: {tb_h}, {tb_s}, {th_s}, {th_h}"
        )
    step = s_star.step

    g1 = _segment_grid(tb_h, tb_s, step)
    g2 = _segment_grid(tb_s, th_s, step)
    g3 = _segment_grid(th_s, min(th_h, float(s_star.t[-1])), step)

    smax_1 = bounds.s_max_at(g1)
    smax_2 = bounds.s_max_at(g2)
    smax_3 = bounds.s_max_at(g3)
    sstar_2 = _s_on(s_star, g2)

    c = (-gamma_min * (tb_s - tb_h + th_h - th_s)
         + (gamma - gamma_min) * (th_s - tb_s)
         + beta_max * (float(np.trapezoid(smax_1, g1)) + float(np.trapezoid(smax_3, g3)))
         + float(np.trapezoid(smax_2 * beta_max - sstar_2 * beta, g2)))

    smax_tb = float(bounds.s_max_at(tb_h))
    sstar_th = float(_s_on(s_star, np.array([th_s]))[0])
    c_bar = ((smax_tb * beta_max - gamma_min) * (tb_s - tb_h + th_h - th_s)
             + (smax_tb * beta_max - gamma_min - sstar_th * beta + gamma)
             * (th_s - tb_s))
    return c, c_bar


def cumulative_infected_check(traj_robust: Trajectory, traj_optimal: Trajectory,
                              t_h_star: float, tol: float = 1e-6) -> CumulativeCheck:
    """Verify I+R <= I*+R* (equivalently S >= S*) for all t up to t*_h."""
    n = min(len(traj_robust), len(traj_optimal))
    mask = traj_robust.t[:n] <= t_h_star + 1e-12
    cum_robust = traj_robust.i[:n][mask] + traj_robust.r[:n][mask]
    cum_optimal = traj_optimal.i[:n][mask] + traj_optimal.r[:n][mask]
    worst = float(np.max(cum_robust - cum_optimal, initial=-math.inf))
    return CumulativeCheck(max_violation=worst, ok=bool(worst <= tol))


def build_cost_report(robust_trace: PolicyTrace, robust_traj: Trajectory,
                      robust_bounds: StateBounds, optimal_trace: PolicyTrace,
                      optimal_traj: Trajectory, true_params: EpidemicParams,
                      beta_max: float, gamma_min: float) -> CostReport:
    """Assemble the full cost/gap report for one matched pair of runs.

    Gap formulas need both robust switching times; when the robust herd
    condition never fired within the horizon the gaps are reported as NaN
    and only the (truncated) total costs are meaningful.
    """
    cost_r = total_cost(robust_trace, warn=False)
    cost_o = total_cost(optimal_trace, warn=False)
    nan = float("nan")
    direct = l4 = c = c_bar = nan
    if robust_trace.switching.complete and optimal_trace.switching.complete:
        direct = gap_direct(robust_trace, optimal_trace)
        l4 = gap_from_states(robust_traj, optimal_traj, true_params.beta,
                        robust_trace.switching)
        c, c_bar = gap_closed_form(robust_bounds, beta_max, gamma_min,
                            true_params.beta, true_params.gamma, optimal_traj,
                            robust_trace.switching, optimal_trace.switching)
    return CostReport(total_cost=cost_r, optimal_cost=cost_o, gap_direct=direct,
                      gap_from_states=l4, gap_closed_form=c, gap_upper=c_bar,
                      times_robust=robust_trace.switching,
                      times_optimal=optimal_trace.switching)
