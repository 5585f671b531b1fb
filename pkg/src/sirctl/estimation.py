"""Least-squares estimation of (beta, gamma) from two sampled state pairs.

The infected-state difference equation is linear in the parameters: with
l(t) = I^(t+h) - I^(t) + h*u(t)*I^(t) and regressor z(t) = [S^(t)*I^(t),
-I^(t)]', two base times i != j give the 1x2 / 2x2 batch L = Theta*Z*h + E +
W, where E collects discretization errors and W the aggregated measurement
errors. The estimator is the unregularized least-squares solution

    Theta_hat = L Z' (Z Z')^{-1} / h,

and the error-bound machinery turns a Lipschitz constant, a dynamics norm,
and a measurement-error amplitude into a half-width b with
|beta_hat - beta| <= b and |gamma_hat - gamma| <= b.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EpidemicParams

_SINGULAR_RTOL = 1e-12


class SingularRegressorsError(ValueError):
    """Z Z' is numerically singular; the two samples carry no information."""


@dataclass(frozen=True)
class MeasuredSample:
    """A noisy (S, I) measurement at time t with the applied rate u."""

    t: float
    s_hat: float
    i_hat: float
    u: float

    def __post_init__(self) -> None:
        if not (-0.1 <= self.s_hat <= 1.1 and -0.1 <= self.i_hat <= 1.1):
            raise ValueError(
                f"measured fractions ({self.s_hat}, {self.i_hat}) too far outside [0, 1]"
            )
        if not (0.0 <= self.u <= 1.0):
            raise ValueError(f"u={self.u} outside [0, 1]")


@dataclass(frozen=True)
class RegressionBatch:
    """Batch matrices L (1x2) and Z (2x2) built from two sample pairs."""

    L: np.ndarray
    Z: np.ndarray
    h: float
    indices: tuple[float, float]  # the two base times (i, j)

    def zzt(self) -> np.ndarray:
        return self.Z @ self.Z.T

    def lambda_min(self) -> float:
        return float(np.linalg.eigvalsh(self.zzt())[0])


@dataclass(frozen=True)
class ParamEstimate:
    """The least-squares row Theta_hat = [beta_hat, gamma_hat].

    Negative entries are possible under noise; they are flagged rather than
    clamped so error-decomposition identities stay exact.
    """

    beta_hat: float
    gamma_hat: float

    @property
    def negative_flagged(self) -> bool:
        return self.beta_hat < 0.0 or self.gamma_hat < 0.0

    def as_row(self) -> np.ndarray:
        return np.array([self.beta_hat, self.gamma_hat])


@dataclass(frozen=True)
class ErrorBound:
    """Estimation-error bound with its three reportable terms.

    term_sampling grows with the step h (discretization), term_noise_fast
    decays like 1/h (differencing amplifies noise), term_noise_slow is the
    h-independent noise contribution.
    """

    value: float
    term_sampling: float
    term_noise_fast: float
    term_noise_slow: float


@dataclass(frozen=True)
class BoundInputs:
    """Everything the error bound consumes.

    zeta must be a valid Lipschitz constant of the dynamics over balls of
    radius r around the two sample states, f_max an upper bound on the
    dynamics norm there, and v_max an amplitude bound on all eight
    measurement errors entering the batch.
    """

    h: float
    zeta: float
    f_max: float
    v_max: float
    u_max_local: float
    x_max: float
    r: float
    c: float
    lambda_min: float

    def __post_init__(self) -> None:
        for name in ("h", "zeta", "f_max", "v_max", "u_max_local", "x_max", "r", "c"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        if self.zeta * self.h >= 1.0:
            raise ValueError(
                f"zeta*h = {self.zeta * self.h} >= 1: outside the validity "
                "threshold of the discretization error bound"
            )
        if self.lambda_min <= 0.0:
            raise ValueError("lambda_min must be positive")


@dataclass(frozen=True)
class ParamIntervals:
    """Intervals [estimate - b, estimate + b] for both parameters."""

    half_width: float
    beta_lo: float
    beta_hi: float
    gamma_lo: float
    gamma_hi: float

    @property
    def beta_max(self) -> float:
        """Upper parameter bound fed to the robust policy."""
        return self.beta_hi

    @property
    def gamma_min(self) -> float:
        """Lower parameter bound fed to the robust policy."""
        return self.gamma_lo


def build_regressor_batch(sample_i: MeasuredSample, sample_i_plus_h: MeasuredSample,
                          sample_j: MeasuredSample, sample_j_plus_h: MeasuredSample,
                          h: float) -> RegressionBatch:
    """Assemble L and Z from two measured sample pairs a step h apart."""
    if not h > 0.0:
        raise ValueError("h must be positive")
    for base, ahead in ((sample_i, sample_i_plus_h), (sample_j, sample_j_plus_h)):
        if abs(ahead.t - (base.t + h)) > 1e-9 * max(1.0, abs(base.t)):
            raise ValueError(
                f"sample at t={ahead.t} is not h={h} ahead of base t={base.t}"
            )
    if abs(sample_i.t - sample_j.t) < 1e-12:
        raise ValueError("the two base times must differ")

    def l_of(base: MeasuredSample, ahead: MeasuredSample) -> float:
        return ahead.i_hat - base.i_hat + h * base.u * base.i_hat

    def z_of(base: MeasuredSample) -> tuple[float, float]:
        return base.s_hat * base.i_hat, -base.i_hat

    zi, zj = z_of(sample_i), z_of(sample_j)
    L = np.array([[l_of(sample_i, sample_i_plus_h), l_of(sample_j, sample_j_plus_h)]])
    Z = np.array([[zi[0], zj[0]], [zi[1], zj[1]]])
    return RegressionBatch(L=L, Z=Z, h=h, indices=(sample_i.t, sample_j.t))


def estimate_params(batch: RegressionBatch) -> ParamEstimate:
    """Closed-form least squares Theta_hat = L Z' (Z Z')^{-1} / h.

    Raises SingularRegressorsError when the smallest eigenvalue of Z Z' is
    below 1e-12 of the largest (e.g. both infected measurements are zero).
    """
    zzt = batch.zzt()
    lam = np.linalg.eigvalsh(zzt)
    if lam[0] <= _SINGULAR_RTOL * max(lam[1], 1e-300):
        raise SingularRegressorsError(
            f"regressor Gram matrix is singular (eigenvalues {lam[0]:.3e}, {lam[1]:.3e})"
        )
    theta = np.linalg.solve(zzt, (batch.L @ batch.Z.T).T).T / batch.h
    return ParamEstimate(beta_hat=float(theta[0, 0]), gamma_hat=float(theta[0, 1]))


def lipschitz_constant(params_guess: EpidemicParams, x_max: float, r: float,
                       u_max_local: float) -> float:
    """Jacobian-norm bound 4*beta*(x_max + r) + 2*u_max + 2*gamma."""
    if x_max < 0.0 or r < 0.0 or u_max_local < 0.0:
        raise ValueError("x_max, r, u_max_local must be non-negative")
    return 4.0 * params_guess.beta * (x_max + r) + 2.0 * u_max_local + 2.0 * params_guess.gamma


def discretization_error_bound(h: float, zeta: float, f_norm: float) -> float:
    """One-step Euler error bound h^2 * zeta * ||f|| / (1 - zeta*h).

    Valid for zeta*h < 1 (zero-order-hold input, locally Lipschitz dynamics);
    rejects steps outside that threshold.
    """
    if h <= 0.0:
        raise ValueError("h must be positive")
    if zeta < 0.0 or f_norm < 0.0:
        raise ValueError("zeta and f_norm must be non-negative")
    if zeta * h >= 1.0:
        raise ValueError(f"zeta*h = {zeta * h} >= 1: bound not valid at this step")
    return h * h * zeta * f_norm / (1.0 - zeta * h)


def composite_constant(params_guess: EpidemicParams, s_hat_i: float, s_hat_j: float,
                       i_hat_i: float, i_hat_j: float, v_max: float,
                       u_max_local: float) -> float:
    """The measurement-error multiplier c entering the slow noise term."""
    return (2.0 * u_max_local + 2.0 * params_guess.gamma
            + params_guess.beta * (s_hat_i + s_hat_j + 2.0 * v_max + i_hat_i + i_hat_j))


def estimation_error_bound(inputs: BoundInputs) -> ErrorBound:
    """Three-term estimation error bound; ||Theta_hat - Theta|| <= b.

    b = 2*h*zeta*f_max / (sqrt(lam_min)*(1 - zeta*h))
      + 4*v_max / (h*sqrt(lam_min))
      + v_max*c / sqrt(lam_min)
    """
    sq = math.sqrt(inputs.lambda_min)
    term1 = 2.0 * inputs.h * inputs.zeta * inputs.f_max / (sq * (1.0 - inputs.zeta * inputs.h))
    term2 = 4.0 * inputs.v_max / (inputs.h * sq)
    term3 = inputs.v_max * inputs.c / sq
    return ErrorBound(value=term1 + term2 + term3, term_sampling=term1,
                      term_noise_fast=term2, term_noise_slow=term3)


def param_intervals(est: ParamEstimate, b: float) -> ParamIntervals:
    """Center intervals of half-width b on the point estimates."""
    if b < 0.0:
        raise ValueError("b must be non-negative")
    return ParamIntervals(half_width=b, beta_lo=est.beta_hat - b,
                          beta_hi=est.beta_hat + b,
                          gamma_lo=est.gamma_hat - b, gamma_hi=est.gamma_hat + b)


def measurement_error_term(params: EpidemicParams, s_hat: float, i_hat: float,
                           u: float, h: float, v_s: float, v_i: float,
                           v_i_plus_h: float) -> float:
    """Exact aggregated measurement error w(t) for one regression row.

    Substituting S = S^ - v_S, I = I^ - v_I into l(t) = Theta z(t) h + e_I(t)
    + w(t) gives

        w(t) = v_I(t+h) - v_I(t) + h*u*v_I(t)
             + h*[beta, gamma] . [-S^ v_I - v_S I^ + v_S v_I,  v_I].

    (The sign of the second-order v_S*v_I term follows from the expansion;
    its magnitude is bounded by v_max^2 either way, so the error bound is
    unaffected.)
    """
    bracket_top = -s_hat * v_i - v_s * i_hat + v_s * v_i
    return (v_i_plus_h - v_i + h * u * v_i
            + h * (params.beta * bracket_top + params.gamma * v_i))
