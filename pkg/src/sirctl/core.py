"""Continuous-time SIR dynamics with an isolation control input.

The model tracks population fractions (S, I, R) with transmission rate beta,
removal rate gamma, and an isolation rate u acting on the infected group:

    dS/dt = -beta*S*I
    dI/dt =  beta*S*I - (gamma + u)*I
    dR/dt =  (gamma + u)*I

This module provides the right-hand side, a fixed-step integrator (RK4 or
forward Euler), the one-step Euler map used by the sampled-data estimator,
the closed-form peak-infection value, and bisection-refined event detection
for threshold crossings and herd immunity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

CONSERVATION_TOL = 1e-9
EVENT_TOL = 1e-8
_EVENT_MAX_ITERS = 80


class NonFiniteDynamicsError(RuntimeError):
    """The state or the policy output became NaN/inf during integration."""


class HerdImmunityNotReached(RuntimeError):
    """The susceptible series never crossed the herd-immunity level."""


@dataclass(frozen=True)
class EpidemicParams:
    """Transmission rate beta and removal rate gamma, both per unit time."""

    beta: float
    gamma: float

    def __post_init__(self) -> None:
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")
        if not (self.gamma > 0.0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma}")


@dataclass(frozen=True)
class SirState:
    """Population fractions at time t; s + i + r must equal 1."""

    t: float
    s: float
    i: float
    r: float

    def __post_init__(self) -> None:
        for name, v in (("s", self.s), ("i", self.i), ("r", self.r)):
            if not math.isfinite(v):
                raise NonFiniteDynamicsError(f"{name} is not finite at t={self.t}")
            if v < -1e-12 or v > 1.0 + 1e-12:
                raise ValueError(f"{name}={v} outside [0, 1] at t={self.t}")
        if abs(self.s + self.i + self.r - 1.0) > CONSERVATION_TOL:
            raise ValueError(
                f"fractions sum to {self.s + self.i + self.r} at t={self.t}"
            )


@dataclass(frozen=True)
class ControlBounds:
    """Admissible isolation rates [0, u_max]."""

    u_max: float

    def __post_init__(self) -> None:
        if not (0.0 < self.u_max <= 1.0):
            raise ValueError(f"u_max must lie in (0, 1], got {self.u_max}")

    def clamp(self, u: float) -> float:
        return min(max(u, 0.0), self.u_max)


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step integration settings."""

    method: str = "rk4"  # "rk4" | "euler"
    step: float = 0.01
    horizon: float = 1200.0

    def __post_init__(self) -> None:
        if self.method not in ("rk4", "euler"):
            raise ValueError(f"unknown method {self.method!r}")
        if not self.step > 0.0:
            raise ValueError("step must be positive")
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.step)


def rhs(state: SirState, params: EpidemicParams, u: float) -> tuple[float, float, float]:
    """Time derivatives (dS, dI, dR) at a state under isolation rate u."""
    return _rhs(state.s, state.i, params.beta, params.gamma, u)


def _rhs(s: float, i: float, beta: float, gamma: float, u: float):
    new_inf = beta * s * i
    removal = (gamma + u) * i
    return -new_inf, new_inf - removal, removal


def _rk4_step(s, i, r, beta, gamma, u, h):
    k1 = _rhs(s, i, beta, gamma, u)
    k2 = _rhs(s + 0.5 * h * k1[0], i + 0.5 * h * k1[1], beta, gamma, u)
    k3 = _rhs(s + 0.5 * h * k2[0], i + 0.5 * h * k2[1], beta, gamma, u)
    k4 = _rhs(s + h * k3[0], i + h * k3[1], beta, gamma, u)
    return (
        s + (h / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        i + (h / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        r + (h / 6.0) * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    )


def _euler_step(s, i, r, beta, gamma, u, h):
    d = _rhs(s, i, beta, gamma, u)
    return s + h * d[0], i + h * d[1], r + h * d[2]


_STEPPERS = {"rk4": _rk4_step, "euler": _euler_step}


def euler_step(state: SirState, params: EpidemicParams, u: float, h: float) -> SirState:
    """One forward-Euler step of size h; the exact model class of the estimator.

    S(t+h) = S - h*beta*S*I
    I(t+h) = I + h*beta*S*I - h*(gamma+u)*I
    R(t+h) = R + h*(gamma+u)*I
    """
    if not h > 0.0:
        raise ValueError("step h must be positive")
    s, i, r = _euler_step(state.s, state.i, state.r, params.beta, params.gamma, u, h)
    return SirState(t=state.t + h, s=s, i=i, r=r)


@dataclass(frozen=True)
class Trajectory:
    """An integrated path on a uniform time grid.

    ``u[k]`` is the isolation rate applied on [t[k], t[k+1]) (zero-order
    hold); the last entry repeats the rate in effect at the final node.
    Immutable once produced; carries the parameters it was integrated with
    so events can be refined by local re-integration.
    """

    t: np.ndarray
    s: np.ndarray
    i: np.ndarray
    r: np.ndarray
    u: np.ndarray
    step: float
    params: EpidemicParams = field(repr=False)

    def __post_init__(self) -> None:
        if len(self.t) == 0:
            return
        if np.any(np.diff(self.t) <= 0.0):
            raise ValueError("time stamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    def sample(self, k: int) -> SirState:
        return SirState(t=float(self.t[k]), s=float(self.s[k]), i=float(self.i[k]),
                        r=float(self.r[k]))

    def index_at(self, time: float) -> int:
        """Index of the last grid node with t[k] <= time."""
        k = int(np.searchsorted(self.t, time + 1e-12, side="right") - 1)
        if k < 0 or time > self.t[-1] + 1e-9:
            raise ValueError(f"time {time} outside trajectory range")
        return k

    def state_at(self, time: float) -> tuple[float, float, float]:
        """(S, I, R) at an off-grid time via one local RK4 sub-step."""
        k = self.index_at(time)
        dt = time - float(self.t[k])
        if dt <= 0.0:
            return float(self.s[k]), float(self.i[k]), float(self.r[k])
        return _rk4_step(float(self.s[k]), float(self.i[k]), float(self.r[k]),
                         self.params.beta, self.params.gamma, float(self.u[k]), dt)

    def max_conservation_error(self) -> float:
        return float(np.max(np.abs(self.s + self.i + self.r - 1.0)))


Policy = Union[float, Callable[[float, SirState], float]]


def integrate(params: EpidemicParams, policy: Policy, init: SirState,
              config: IntegratorConfig) -> Trajectory:
    """Integrate the controlled SIR dynamics on a fixed grid.

    ``policy`` is either a constant rate or a callable (t, state) -> rate,
    sampled at each grid node and held over the step. Raises
    NonFiniteDynamicsError if the policy returns NaN/inf.
    """
    h = config.step
    n = config.n_steps
    stepper = _STEPPERS[config.method]
    beta, gamma = params.beta, params.gamma

    constant = not callable(policy)
    u_const = float(policy) if constant else 0.0
    if constant:
        _check_rate(u_const, 0.0)

    s, i, r = init.s, init.i, init.r
    t = init.t
    ts = np.empty(n + 1)
    ss = np.empty(n + 1)
    ii = np.empty(n + 1)
    rr = np.empty(n + 1)
    uu = np.empty(n + 1)
    ts[0], ss[0], ii[0], rr[0] = t, s, i, r

    for k in range(n):
        if constant:
            u = u_const
        else:
            u = float(policy(t, SirState(t=t, s=s, i=i, r=r)))
            _check_rate(u, t)
        uu[k] = u
        s, i, r = stepper(s, i, r, beta, gamma, u, h)
        if not (math.isfinite(s) and math.isfinite(i) and math.isfinite(r)):
            raise NonFiniteDynamicsError(f"state became non-finite at t={t + h}")
        t = init.t + (k + 1) * h
        ts[k + 1], ss[k + 1], ii[k + 1], rr[k + 1] = t, s, i, r
    uu[n] = uu[n - 1] if n > 0 else u_const

    return Trajectory(t=ts, s=ss, i=ii, r=rr, u=uu, step=h, params=params)


def _check_rate(u: float, t: float) -> None:
    if not math.isfinite(u):
        raise NonFiniteDynamicsError(f"policy returned non-finite rate at t={t}")
    if u < 0.0 or u > 1.0:
        raise ValueError(f"policy rate {u} outside [0, 1] at t={t}")


def peak_infection(params: EpidemicParams, start: SirState, u_fix: float) -> float:
    """Peak infected fraction under the constant rate u_fix, in closed form.

    I(t_p) = rho*(ln(rho) - 1 - ln(S_a)) + S_a + I_a  with
    rho = (gamma + u_fix)/beta. If beta*S_a <= gamma + u_fix the infection is
    already non-increasing and the peak is the starting value.
    """
    if start.s <= 0.0:
        raise ValueError("peak_infection requires S > 0 (log undefined)")
    if u_fix < 0.0 or u_fix > 1.0:
        raise ValueError(f"u_fix {u_fix} outside [0, 1]")
    rho = (params.gamma + u_fix) / params.beta
    if params.beta * start.s <= params.gamma + u_fix:
        return start.i
    return rho * (math.log(rho) - 1.0 - math.log(start.s)) + start.s + start.i


def _bisect_time(value_of: Callable[[float], float], lo: float, hi: float,
                 tol: float = EVENT_TOL) -> float:
    """First root of a sign change of value_of on [lo, hi]; value_of(hi) >= 0."""
    v_lo = value_of(lo)
    if v_lo >= 0.0:
        return lo
    for _ in range(_EVENT_MAX_ITERS):
        mid = 0.5 * (lo + hi)
        v = value_of(mid)
        if v >= 0.0:
            hi = mid
        else:
            lo = mid
        if abs(v) <= tol:
            return mid
    return hi


def find_threshold_crossing(traj: Trajectory, threshold: float,
                            i_offset: float = 0.0) -> Optional[float]:
    """First time the (possibly inflated) infection series reaches a threshold.

    The series I(t) + i_offset is scanned on the grid and the crossing is
    refined by bisection inside the bracketing step to |I + offset -
    threshold| <= 1e-8. Returns None if the threshold is never reached.
    """
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must lie in (0, 1)")
    series = traj.i + i_offset
    above = np.nonzero(series >= threshold)[0]
    if len(above) == 0:
        return None
    k = int(above[0])
    if k == 0:
        return float(traj.t[0])

    s0, i0, r0 = float(traj.s[k - 1]), float(traj.i[k - 1]), float(traj.r[k - 1])
    u0 = float(traj.u[k - 1])
    t0 = float(traj.t[k - 1])
    beta, gamma = traj.params.beta, traj.params.gamma

    def val(tq: float) -> float:
        _, iq, _ = _rk4_step(s0, i0, r0, beta, gamma, u0, tq - t0)
        return iq + i_offset - threshold

    return _bisect_time(val, t0, float(traj.t[k]))


def find_herd_immunity(traj: Trajectory, beta_eff: float, gamma_eff: float,
                       s_offset: float = 0.0) -> float:
    """First time beta_eff * S(t) reaches gamma_eff, bisection-refined.

    ``s_offset`` inflates the susceptible series (clipped at 1) so the same
    event test serves overestimated envelopes. Raises HerdImmunityNotReached
    if beta_eff * S stays above gamma_eff over the whole trajectory.
    """
    if not (beta_eff > 0.0 and gamma_eff > 0.0):
        raise ValueError("effective rates must be positive")
    series = beta_eff * np.minimum(traj.s + s_offset, 1.0) - gamma_eff
    below = np.nonzero(series <= 0.0)[0]
    if len(below) == 0:
        raise HerdImmunityNotReached(
            f"beta_eff*S never reached gamma_eff={gamma_eff} within the horizon"
        )
    k = int(below[0])
    if k == 0:
        return float(traj.t[0])

    s0, i0, r0 = float(traj.s[k - 1]), float(traj.i[k - 1]), float(traj.r[k - 1])
    u0 = float(traj.u[k - 1])
    t0 = float(traj.t[k - 1])
    beta, gamma = traj.params.beta, traj.params.gamma

    def val(tq: float) -> float:
        sq, _, _ = _rk4_step(s0, i0, r0, beta, gamma, u0, tq - t0)
        return gamma_eff - beta_eff * min(sq + s_offset, 1.0)

    return _bisect_time(val, t0, float(traj.t[k]))
