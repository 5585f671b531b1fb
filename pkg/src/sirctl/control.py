"""Isolation policies and closed-loop simulation with stage switching.

Both the optimal and the robust policy run in three stages: no isolation
while the (possibly overestimated) infection signal is below the threshold
i_bar, then the rate that pins the infection derivative at zero for the
assumed worst case, then zero again once the assumed herd-immunity condition
fires. The optimal policy consumes true states and true parameters; the
robust policy consumes upper envelopes of measured states together with an
upper transmission-rate / lower removal-rate pair; the misestimated variant
feeds arbitrary point estimates and raw measurements into the optimal form,
which is how underestimation is shown to break feasibility.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from .core import (
    EVENT_TOL,
    ControlBounds,
    EpidemicParams,
    IntegratorConfig,
    NonFiniteDynamicsError,
    SirState,
    Trajectory,
    _rk4_step,
)
from .estimation import ParamIntervals
from .noise import MeasurementNoise

FEASIBILITY_SLACK = 1e-6
_EVENT_ITERS = 80


class PolicyKind(str, Enum):
    OPTIMAL = "optimal"
    ROBUST = "robust"
    MISESTIMATED = "misestimated"


@dataclass(frozen=True)
class AssumedRates:
    """The (beta, gamma) pair a policy plans with.

    For the robust policy this is (beta_max, gamma_min) from estimation
    intervals or inflation multipliers; for the misestimated policy it is
    whatever wrong point estimate is being studied.
    """

    beta: float
    gamma: float

    @classmethod
    def from_intervals(cls, intervals: ParamIntervals) -> "AssumedRates":
        return cls(beta=intervals.beta_max, gamma=intervals.gamma_min)

    @classmethod
    def from_multipliers(cls, params: EpidemicParams, beta_mult: float,
                         gamma_mult: float) -> "AssumedRates":
        return cls(beta=params.beta * beta_mult, gamma=params.gamma * gamma_mult)


@dataclass(frozen=True)
class SwitchingTimes:
    """Threshold-reach time t_b and herd-immunity time t_h (None if not fired)."""

    t_b: Optional[float] = None
    t_h: Optional[float] = None

    def __post_init__(self) -> None:
        if self.t_b is not None and self.t_h is not None and self.t_h < self.t_b:
            raise ValueError(f"t_h={self.t_h} precedes t_b={self.t_b}")

    @property
    def complete(self) -> bool:
        return self.t_b is not None and self.t_h is not None


@dataclass(frozen=True)
class StateBounds:
    """Envelope series around measured states; contains the true state
    whenever the configured amplitude bounds are valid."""

    t: np.ndarray
    s_min: np.ndarray
    s_max: np.ndarray
    i_min: np.ndarray
    i_max: np.ndarray

    def s_max_at(self, time) -> np.ndarray:
        return np.interp(time, self.t, self.s_max)

    def i_max_at(self, time) -> np.ndarray:
        return np.interp(time, self.t, self.i_max)


@dataclass(frozen=True)
class FeasibilityReport:
    """Outcome of one closed-loop run against the infection cap."""

    feasible: bool
    required_rate_at_tb: float  # beta*S(t_b) - gamma from true states; nan if no t_b
    u_max: float
    max_infection_attained: float
    clamp_events: int
    i_bar: float


@dataclass(frozen=True)
class PolicyTrace:
    """Applied rate, stage label and consumed state signal over time.

    Switch instants appear as duplicated time nodes (pre- and post-switch
    values) so piecewise integration of the rate is exact.
    """

    t: np.ndarray
    u: np.ndarray
    stage: np.ndarray
    s_seen: np.ndarray
    i_seen: np.ndarray
    switching: SwitchingTimes
    clamp_events: int
    kind: PolicyKind


@dataclass(frozen=True)
class ClosedLoopResult:
    trajectory: Trajectory
    trace: PolicyTrace
    report: FeasibilityReport
    node_stage: np.ndarray


def optimal_rate(t: float, state: SirState, params: EpidemicParams,
                 times: SwitchingTimes, bounds: ControlBounds) -> float:
    """Three-stage optimal rate: 0, then beta*S - gamma, then 0.

    Stage membership is decided from the precomputed switching times; the
    returned value is clamped to [0, u_max].
    """
    if times.t_b is None or t < times.t_b:
        return 0.0
    if times.t_h is not None and t >= times.t_h:
        return 0.0
    return bounds.clamp(params.beta * state.s - params.gamma)


def robust_rate(t: float, s_max_at_t: float, beta_max: float, gamma_min: float,
                times: SwitchingTimes, bounds: ControlBounds) -> float:
    """Three-stage robust rate beta_max * S_max(t) - gamma_min, clamped."""
    if times.t_b is None or t < times.t_b:
        return 0.0
    if times.t_h is not None and t >= times.t_h:
        return 0.0
    return bounds.clamp(beta_max * s_max_at_t - gamma_min)


def construct_state_bounds(measured: MeasuredSeries,
                           noise_amp: tuple[float, float]) -> StateBounds:
    """Envelopes s_hat +/- delta_s and i_hat +/- delta_i, clipped to [0, 1]."""
    d_s, d_i = noise_amp
    if d_s < 0.0 or d_i < 0.0:
        raise ValueError("noise amplitudes must be non-negative")
    return StateBounds(
        t=measured.t.copy(),
        s_min=np.clip(measured.s_hat - d_s, 0.0, 1.0),
        s_max=np.clip(measured.s_hat + d_s, 0.0, 1.0),
        i_min=np.clip(measured.i_hat - d_i, 0.0, 1.0),
        i_max=np.clip(measured.i_hat + d_i, 0.0, 1.0),
    )


def feasibility_check(params: EpidemicParams, state_at_tb: SirState,
                      u_max: float) -> tuple[float, bool]:
    """Required rate beta*S(t_b) - gamma and whether it fits under u_max.

    A non-positive required rate means the infection is already
    non-increasing at the crossing, which is trivially feasible.
    """
    required = params.beta * state_at_tb.s - params.gamma
    return required, required <= u_max


class _Controller:
    """Stage machine shared by the three policy kinds."""

    def __init__(self, kind: PolicyKind, true_params: EpidemicParams,
                 assumed: Optional[AssumedRates], bounds: ControlBounds,
                 i_bar: float):
        self.kind = kind
        self.bounds = bounds
        self.i_bar = i_bar
        if kind is PolicyKind.OPTIMAL:
            self.beta_eff = true_params.beta
            self.gamma_eff = true_params.gamma
        else:
            if assumed is None:
                raise ValueError(f"{kind.value} policy needs assumed rates")
            self.beta_eff = assumed.beta
            self.gamma_eff = assumed.gamma
        self.stage = 1
        self.clamp_events = 0
        # frozen measurement offsets for the current epoch
        self.off_s = 0.0
        self.off_i = 0.0

    def read(self, noise: Optional[MeasurementNoise], k: int, s: float, i: float) -> None:
        """Refresh the frozen measurement offsets from the epoch-k draw."""
        if self.kind is PolicyKind.OPTIMAL or noise is None:
            self.off_s = 0.0
            self.off_i = 0.0
            return
        s_hat, i_hat, d_s, d_i = noise.measure(k, s, i)
        if self.kind is PolicyKind.ROBUST:
            self.off_s = (s_hat - s) + d_s
            self.off_i = (i_hat - i) + d_i
        else:
            self.off_s = s_hat - s
            self.off_i = i_hat - i

    def s_signal(self, s: float) -> float:
        return min(s + self.off_s, 1.0)

    def i_signal(self, i: float) -> float:
        return min(i + self.off_i, 1.0)

    def rate(self, s: float) -> float:
        if self.stage != 2:
            return 0.0
        raw = self.beta_eff * self.s_signal(s) - self.gamma_eff
        u = self.bounds.clamp(raw)
        if raw > self.bounds.u_max:
            self.clamp_events += 1
        return u

    def threshold_gap(self, i: float) -> float:
        """Positive once the infection signal has reached i_bar (stage-1 event)."""
        return self.i_signal(i) - self.i_bar

    def herd_gap(self, s: float) -> float:
        """Positive once the assumed herd-immunity condition fires (stage-2 event)."""
        return self.gamma_eff - self.beta_eff * self.s_signal(s)


def simulate_closed_loop(kind: PolicyKind, true_params: EpidemicParams,
                         assumed: Union[AssumedRates, ParamIntervals, None],
                         init: SirState, noise: Optional[MeasurementNoise],
                         config: IntegratorConfig, i_bar: float,
                         bounds: ControlBounds,
                         measurement_interval: Optional[float] = None,
                         early_stop: bool = False) -> ClosedLoopResult:
    """Drive the true dynamics with a policy that sees only its own signals.

    The trajectory advances on the uniform grid; measurements are read every
    ``measurement_interval`` (default: every step) and held between reads.
    Stage switches are located by bisection inside the bracketing step, the
    state is advanced exactly to the switch instant, and integration lands
    back on the grid, so switching times are resolved to the event tolerance
    while the output grid stays uniform. Infeasibility is recorded in the
    report, never raised.
    """
    if not (0.0 < i_bar < 1.0):
        raise ValueError("i_bar must lie in (0, 1)")
    if config.method != "rk4":
        raise ValueError("closed-loop simulation uses the rk4 ground-truth integrator")
    if isinstance(assumed, ParamIntervals):
        assumed = AssumedRates.from_intervals(assumed)

    h = config.step
    n = config.n_steps
    cadence = 1 if measurement_interval is None else max(1, round(measurement_interval / h))
    beta, gamma = true_params.beta, true_params.gamma
    ctrl = _Controller(kind, true_params, assumed, bounds, i_bar)

    s, i, r = init.s, init.i, init.r
    t0 = init.t
    ts = np.empty(n + 1)
    ss = np.empty(n + 1)
    ii = np.empty(n + 1)
    rr = np.empty(n + 1)
    uu = np.empty(n + 1)
    node_stage = np.empty(n + 1, dtype=np.int64)

    tr_t: list[float] = []
    tr_u: list[float] = []
    tr_stage: list[int] = []
    tr_s: list[float] = []
    tr_i: list[float] = []

    t_b: Optional[float] = None
    t_h: Optional[float] = None
    state_at_tb: Optional[SirState] = None
    max_i = i
    n_recorded = n + 1

    def record_trace(tt: float, u: float) -> None:
        tr_t.append(tt)
        tr_u.append(u)
        tr_stage.append(ctrl.stage)
        tr_s.append(ctrl.s_signal(s))
        tr_i.append(ctrl.i_signal(i))

    def bisect_event(gap_at, s0, i0, r0, u, t_base, hi):
        """First time in (t_base, hi] where the crossing gap turns >= 0."""
        lo = t_base
        for _ in range(_EVENT_ITERS):
            mid = 0.5 * (lo + hi)
            sm, im, _ = _rk4_step(s0, i0, r0, beta, gamma, u, mid - t_base)
            g = gap_at(sm, im)
            if g >= 0.0:
                hi = mid
            else:
                lo = mid
            if abs(g) <= EVENT_TOL:
                return mid
        return hi

    k = 0
    while k <= n:
        t_node = t0 + k * h
        if k % cadence == 0:
            ctrl.read(noise, k, s, i)

        # an event can fire exactly at a node (including k == 0)
        if ctrl.stage == 1 and ctrl.threshold_gap(i) >= 0.0:
            t_b = t_node
            state_at_tb = SirState(t=t_node, s=s, i=i, r=r)
            record_trace(t_node, 0.0)
            ctrl.stage = 2
        if ctrl.stage == 2 and ctrl.herd_gap(s) >= 0.0 and t_b is not None and t_b < t_node:
            t_h = t_node
            record_trace(t_node, ctrl.rate(s))
            ctrl.stage = 3

        u = ctrl.rate(s)
        ts[k], ss[k], ii[k], rr[k], uu[k] = t_node, s, i, r, u
        node_stage[k] = ctrl.stage
        record_trace(t_node, u)
        if i > max_i:
            max_i = i
        if k == n:
            break
        if early_stop and ctrl.stage == 3 and i < 1e-8:
            n_recorded = k + 1
            break

        # advance one grid step, splitting at stage switches
        sub_t = t_node
        t_next = t0 + (k + 1) * h
        while sub_t < t_next - 1e-15:
            span = t_next - sub_t
            s2, i2, r2 = _rk4_step(s, i, r, beta, gamma, u, span)
            if not (math.isfinite(s2) and math.isfinite(i2) and math.isfinite(r2)):
                raise NonFiniteDynamicsError(f"state became non-finite near t={sub_t}")
            if ctrl.stage == 1 and ctrl.threshold_gap(i2) >= 0.0:
                def gap_at(sm, im):
                    return ctrl.threshold_gap(im)
            elif ctrl.stage == 2 and ctrl.herd_gap(s2) >= 0.0:
                def gap_at(sm, im):
                    return ctrl.herd_gap(sm)
            else:
                s, i, r = s2, i2, r2
                sub_t = t_next
                break

            tau = bisect_event(gap_at, s, i, r, u, sub_t, t_next)
            s, i, r = _rk4_step(s, i, r, beta, gamma, u, tau - sub_t)
            sub_t = tau
            record_trace(tau, u)
            if ctrl.stage == 1:
                t_b = tau
                state_at_tb = SirState(t=tau, s=s, i=i, r=r)
                ctrl.stage = 2
                if i > max_i:
                    max_i = i
            else:
                t_h = tau
                ctrl.stage = 3
            u = ctrl.rate(s)
            record_trace(tau, u)
        k += 1

    times = SwitchingTimes(t_b=t_b, t_h=t_h)
    traj = Trajectory(t=ts[:n_recorded], s=ss[:n_recorded], i=ii[:n_recorded],
                      r=rr[:n_recorded], u=uu[:n_recorded], step=h, params=true_params)
    trace = PolicyTrace(t=np.array(tr_t), u=np.array(tr_u),
                        stage=np.array(tr_stage, dtype=np.int64),
                        s_seen=np.array(tr_s), i_seen=np.array(tr_i),
                        switching=times, clamp_events=ctrl.clamp_events, kind=kind)
    if state_at_tb is not None:
        required, _ = feasibility_check(true_params, state_at_tb, bounds.u_max)
    else:
        required = float("nan")
    report = FeasibilityReport(
        feasible=bool(max_i <= i_bar + FEASIBILITY_SLACK),
        required_rate_at_tb=required, u_max=bounds.u_max,
        max_infection_attained=max_i, clamp_events=ctrl.clamp_events, i_bar=i_bar,
    )
    return ClosedLoopResult(trajectory=traj, trace=trace, report=report,
                            node_stage=node_stage[:n_recorded])


def envelope_from_trace(trace: PolicyTrace) -> StateBounds:
    """State bounds as the robust controller actually consumed them."""
    return StateBounds(t=trace.t.copy(), s_min=trace.s_seen.copy(),
                       s_max=trace.s_seen.copy(), i_min=trace.i_seen.copy(),
                       i_max=trace.i_seen.copy())
