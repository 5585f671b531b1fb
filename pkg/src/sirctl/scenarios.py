"""Scenario configuration and experiment orchestration.

A scenario bundles the true epidemic, the infection cap and rate budget, the
measurement-noise model, and how the policies' assumed parameter bounds are
obtained (fixed inflation multipliers or an estimation run). ``run_scenario``
drives the optimal, robust, and optionally misestimated policies on the same
true dynamics and the same noise draws, then assembles feasibility and cost
artifacts. ``sweep_h`` reproduces the sample-step study: one estimate plus
error bound per step multiple alpha.

Determinism: every scenario derives its RNG stream from (seed, scenario
name), so fixed configs give byte-identical CSV artifacts, sequentially or
in parallel.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .analysis import CostReport, CumulativeCheck, build_cost_report, cumulative_infected_check
from .control import (
    AssumedRates,
    ClosedLoopResult,
    ControlBounds,
    PolicyKind,
    envelope_from_trace,
    simulate_closed_loop,
)
from .core import EpidemicParams, IntegratorConfig, SirState, Trajectory, integrate, rhs
from .estimation import (
    BoundInputs,
    MeasuredSample,
    SingularRegressorsError,
    build_regressor_batch,
    composite_constant,
    estimation_error_bound,
    estimate_params,
    lipschitz_constant,
    param_intervals,
)
from .noise import (
    MeasuredSeries,
    MeasurementNoise,
    NoiseConfig,
    derive_seed,
    inject_noise,
    measured_series_for,
)

DEFAULT_SEED = 20260810


class ConfigError(ValueError):
    """A scenario configuration is inconsistent or malformed."""


@dataclass(frozen=True)
class EstimationWindow:
    """Two-sample estimation settings: base times, unit step, step multiples."""

    i: float = 80.0
    j: float = 90.0
    h_unit: float = 0.01
    alphas: tuple[int, ...] = tuple(range(1, 201))
    zeta: float = 0.055  # working Lipschitz constant for the error bound
    r: float = 0.1

    def __post_init__(self) -> None:
        if self.i == self.j:
            raise ConfigError("estimation base times must differ")
        if self.h_unit <= 0.0 or not self.alphas:
            raise ConfigError("estimation needs a positive h_unit and alphas")
        if any(a < 1 for a in self.alphas):
            raise ConfigError("alphas must be positive integers")


@dataclass(frozen=True)
class InflationConfig:
    """How a policy's assumed (beta, gamma) depart from the truth.

    mode "multipliers" scales the true parameters directly; mode "estimated"
    runs the two-sample estimator on noisy early samples and uses the
    resulting interval endpoints (beta_hat + b, gamma_hat - b).
    """

    mode: str = "multipliers"
    beta_mult: float = 1.05
    gamma_mult: float = 0.95

    def __post_init__(self) -> None:
        if self.mode not in ("multipliers", "estimated"):
            raise ConfigError(f"unknown inflation mode {self.mode!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    params: EpidemicParams
    init: SirState
    i_bar: float
    u_max: float
    noise: NoiseConfig = NoiseConfig()
    inflation: InflationConfig = InflationConfig()
    misestimation: InflationConfig = InflationConfig(beta_mult=0.95, gamma_mult=1.05)
    integrator: IntegratorConfig = IntegratorConfig()
    seed: int = DEFAULT_SEED
    policies: tuple[str, ...] = ("optimal", "robust", "misestimated")
    estimation: Optional[EstimationWindow] = None
    measurement_interval: Optional[float] = None
    early_stop: bool = False

    def __post_init__(self) -> None:
        if not (0.0 < self.i_bar < 1.0):
            raise ConfigError("i_bar must lie in (0, 1)")
        if not (0.0 < self.u_max <= 1.0):
            raise ConfigError("u_max must lie in (0, 1]")
        bad = [p for p in self.policies if p not in PolicyKind._value2member_map_]
        if bad:
            raise ConfigError(f"unknown policies {bad}")

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        try:
            return cls(
                name=raw["name"],
                params=EpidemicParams(**raw["params"]),
                init=SirState(t=raw.get("init", {}).get("t", 0.0),
                              s=raw["init"]["s"], i=raw["init"]["i"],
                              r=raw["init"]["r"]),
                i_bar=raw["i_bar"],
                u_max=raw["u_max"],
                noise=NoiseConfig(**raw.get("noise", {})),
                inflation=InflationConfig(**raw.get("inflation", {})),
                misestimation=InflationConfig(**raw.get(
                    "misestimation", {"beta_mult": 0.95, "gamma_mult": 1.05})),
                integrator=IntegratorConfig(**raw.get("integrator", {})),
                seed=raw.get("seed", DEFAULT_SEED),
                policies=tuple(raw.get("policies",
                                       ("optimal", "robust", "misestimated"))),
                estimation=(EstimationWindow(**{
                    **raw["estimation"],
                    "alphas": tuple(raw["estimation"].get(
                        "alphas", tuple(range(1, 201)))),
                }) if "estimation" in raw else None),
                measurement_interval=raw.get("measurement_interval"),
                early_stop=raw.get("early_stop", False),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad scenario config: {exc}") from exc

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "params": {"beta": self.params.beta, "gamma": self.params.gamma},
            "init": {"t": self.init.t, "s": self.init.s, "i": self.init.i,
                     "r": self.init.r},
            "i_bar": self.i_bar,
            "u_max": self.u_max,
            "noise": {k: v for k, v in vars(self.noise).items() if v is not None},
            "inflation": vars(self.inflation),
            "misestimation": vars(self.misestimation),
            "integrator": {"method": self.integrator.method,
                           "step": self.integrator.step,
                           "horizon": self.integrator.horizon},
            "seed": self.seed,
            "policies": list(self.policies),
            "early_stop": self.early_stop,
        }
        if self.estimation is not None:
            out["estimation"] = {**vars(self.estimation),
                                 "alphas": list(self.estimation.alphas)}
        if self.measurement_interval is not None:
            out["measurement_interval"] = self.measurement_interval
        return out


@dataclass(frozen=True)
class PolicyRun:
    kind: PolicyKind
    result: ClosedLoopResult
    measured: MeasuredSeries
    assumed: Optional[AssumedRates]


@dataclass(frozen=True)
class CostRow:
    """One costs.csv row."""

    policy: str
    total_cost: float
    gap_direct: float
    gap_lemma4: float
    gap_thm4: float
    gap_upper: float
    t_b: float
    t_h: float
    feasible: bool


@dataclass(frozen=True)
class EstimateRow:
    """One estimates.csv row of the sample-step sweep."""

    alpha: int
    h: float
    beta_hat: float
    gamma_hat: float
    err_norm: float
    bound_b: float
    contained: bool


@dataclass(frozen=True)
class RunArtifacts:
    config: ScenarioConfig
    runs: dict[str, PolicyRun]
    cost_report: Optional[CostReport]
    cumulative: Optional[CumulativeCheck]
    cost_rows: tuple[CostRow, ...]

    @property
    def robust_feasible(self) -> Optional[bool]:
        run = self.runs.get("robust")
        return None if run is None else run.result.report.feasible


def _assumed_rates(config: ScenarioConfig, inflation: InflationConfig,
                   reference: Trajectory) -> AssumedRates:
    if inflation.mode == "multipliers":
        return AssumedRates.from_multipliers(config.params, inflation.beta_mult,
                                             inflation.gamma_mult)
    if config.estimation is None:
        raise ConfigError("inflation mode 'estimated' needs an estimation block")
    rows, extras = _sweep_rows(config, reference,
                               alphas=(config.estimation.alphas[0],))
    row = rows[0]
    if math.isnan(row.beta_hat):
        raise ConfigError("estimation-derived bounds failed: singular regressors")
    est = extras[0]
    return AssumedRates.from_intervals(param_intervals(est, row.bound_b))


def run_scenario(config: ScenarioConfig) -> RunArtifacts:
    """Run the configured policies on one true epidemic and assemble artifacts.

    The optimal policy ignores measurements, so its run doubles as the
    noise-free reference from which SNR-mode noise power is resolved. All
    policies share the same per-epoch noise draws, making the comparison
    matched and the artifacts deterministic under a fixed seed.
    """
    bounds = ControlBounds(config.u_max)
    n_epochs = config.integrator.n_steps + 1
    optimal = simulate_closed_loop(
        PolicyKind.OPTIMAL, config.params, None, config.init, None,
        config.integrator, config.i_bar, bounds,
        measurement_interval=config.measurement_interval,
        early_stop=config.early_stop)
    noise = MeasurementNoise.build(config.noise, n_epochs,
                                   derive_seed(config.seed, config.name),
                                   reference=optimal.trajectory)

    runs: dict[str, PolicyRun] = {}
    if "optimal" in config.policies:
        runs["optimal"] = PolicyRun(PolicyKind.OPTIMAL, optimal,
                                    measured_series_for(noise, optimal.trajectory),
                                    assumed=None)
    if "robust" in config.policies:
        assumed = _assumed_rates(config, config.inflation, optimal.trajectory)
        res = simulate_closed_loop(
            PolicyKind.ROBUST, config.params, assumed, config.init, noise,
            config.integrator, config.i_bar, bounds,
            measurement_interval=config.measurement_interval,
            early_stop=config.early_stop)
        runs["robust"] = PolicyRun(PolicyKind.ROBUST, res,
                                   measured_series_for(noise, res.trajectory),
                                   assumed)
    if "misestimated" in config.policies:
        assumed = _assumed_rates(config, config.misestimation, optimal.trajectory)
        res = simulate_closed_loop(
            PolicyKind.MISESTIMATED, config.params, assumed, config.init, noise,
            config.integrator, config.i_bar, bounds,
            measurement_interval=config.measurement_interval,
            early_stop=config.early_stop)
        runs["misestimated"] = PolicyRun(PolicyKind.MISESTIMATED, res,
                                         measured_series_for(noise, res.trajectory),
                                         assumed)

    report, cumulative = None, None
    if "robust" in runs and "optimal" in runs:
        rob, opt = runs["robust"], runs["optimal"]
        report = build_cost_report(
            rob.result.trace, rob.result.trajectory,
            envelope_from_trace(rob.result.trace), opt.result.trace,
            opt.result.trajectory, config.params,
            rob.assumed.beta, rob.assumed.gamma)
        if opt.result.trace.switching.t_h is not None:
            cumulative = cumulative_infected_check(
                rob.result.trajectory, opt.result.trajectory,
                opt.result.trace.switching.t_h)
    return RunArtifacts(config=config, runs=runs, cost_report=report,
                        cumulative=cumulative,
                        cost_rows=tuple(_cost_rows(runs, report, config)))


def _cost_rows(runs: dict[str, PolicyRun], report: Optional[CostReport],
               config: ScenarioConfig) -> list[CostRow]:
    from .analysis import gap_direct as _gap_direct
    from .analysis import total_cost as _total_cost

    nan = float("nan")
    rows = []
    opt = runs.get("optimal")
    for name in ("optimal", "robust", "misestimated"):
        run = runs.get(name)
        if run is None:
            continue
        cost = _total_cost(run.result.trace, warn=False)
        direct = 0.0 if name == "optimal" else nan
        if name != "optimal" and opt is not None:
            direct = _gap_direct(run.result.trace, opt.result.trace)
        l4 = c = c_bar = nan
        if name == "robust" and report is not None:
            l4, c, c_bar = report.gap_from_states, report.gap_closed_form, report.gap_upper
        sw = run.result.trace.switching
        rows.append(CostRow(
            policy=name, total_cost=cost, gap_direct=direct, gap_lemma4=l4,
            gap_thm4=c, gap_upper=c_bar,
            t_b=nan if sw.t_b is None else sw.t_b,
            t_h=nan if sw.t_h is None else sw.t_h,
            feasible=run.result.report.feasible))
    return rows


def run_scenarios(configs: list[ScenarioConfig],
                  max_workers: Optional[int] = None) -> list[RunArtifacts]:
    """Run independent scenarios, optionally in parallel; output order and
    content match the sequential run (each scenario owns its RNG stream)."""
    if max_workers is None or max_workers <= 1:
        return [run_scenario(c) for c in configs]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(run_scenario, configs))


def _fnorm(traj: Trajectory, k: int) -> float:
    d = rhs(traj.sample(k), traj.params, float(traj.u[k]))
    return math.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2)


def _xnorm(traj: Trajectory, k: int) -> float:
    return math.sqrt(float(traj.s[k]) ** 2 + float(traj.i[k]) ** 2
                     + float(traj.r[k]) ** 2)


def _grid_index(traj: Trajectory, time: float) -> int:
    k = traj.index_at(time)
    if abs(float(traj.t[k]) - time) > 1e-9 * max(1.0, abs(time)):
        raise ConfigError(f"estimation time {time} is not on the trajectory grid")
    return k


def _sample(meas: MeasuredSeries, k: int) -> MeasuredSample:
    return MeasuredSample(t=float(meas.t[k]), s_hat=float(meas.s_hat[k]),
                          i_hat=float(meas.i_hat[k]), u=float(meas.u[k]))


def _sweep_rows(config: ScenarioConfig, traj: Trajectory,
                alphas: Optional[tuple[int, ...]] = None):
    est = config.estimation
    if est is None:
        raise ConfigError("sweep_h needs an estimation block in the config")
    alphas = est.alphas if alphas is None else alphas
    if abs(traj.step - est.h_unit) > 1e-12:
        raise ConfigError("trajectory step must equal the estimation h_unit")
    needed = max(est.i, est.j) + max(alphas) * est.h_unit
    if float(traj.t[-1]) + 1e-9 < needed:
        raise ConfigError(
            f"horizon {traj.t[-1]} too short for the sweep (needs {needed})")

    meas = inject_noise(traj, config.noise,
                        derive_seed(config.seed, config.name + ":sweep"))
    v_max = meas.v_max_bound
    ki, kj = _grid_index(traj, est.i), _grid_index(traj, est.j)
    theta = np.array([config.params.beta, config.params.gamma])
    f_max = max(_fnorm(traj, ki), _fnorm(traj, kj))
    x_max = max(_xnorm(traj, ki), _xnorm(traj, kj))
    u_loc = max(abs(float(traj.u[ki])), abs(float(traj.u[kj])))
    nan = float("nan")

    rows: list[EstimateRow] = []
    estimates = []
    for a in alphas:
        h = a * est.h_unit
        batch = build_regressor_batch(_sample(meas, ki), _sample(meas, ki + a),
                                      _sample(meas, kj), _sample(meas, kj + a), h)
        c = composite_constant(config.params, float(meas.s_hat[ki]),
                               float(meas.s_hat[kj]), float(meas.i_hat[ki]),
                               float(meas.i_hat[kj]), v_max, u_loc)
        try:
            point = estimate_params(batch)
        except SingularRegressorsError:
            rows.append(EstimateRow(alpha=a, h=h, beta_hat=nan, gamma_hat=nan,
                                    err_norm=nan, bound_b=nan, contained=False))
            estimates.append(None)
            continue
        bound = estimation_error_bound(BoundInputs(
            h=h, zeta=est.zeta, f_max=f_max, v_max=v_max, u_max_local=u_loc,
            x_max=x_max, r=est.r, c=c, lambda_min=batch.lambda_min()))
        err = float(np.linalg.norm(point.as_row() - theta))
        rows.append(EstimateRow(alpha=a, h=h, beta_hat=point.beta_hat,
                                gamma_hat=point.gamma_hat, err_norm=err,
                                bound_b=bound.value, contained=bool(err <= bound.value)))
        estimates.append(point)
    return rows, estimates


def sweep_h(config: ScenarioConfig) -> list[EstimateRow]:
    """Estimate (beta, gamma) and the error bound for every step multiple.

    Simulates the uncontrolled epidemic once at the unit step, injects the
    configured noise, then builds the two-sample batch per alpha. Singular
    batches produce NaN rows flagged as not contained.
    """
    if config.estimation is None:
        raise ConfigError("sweep_h needs an estimation block in the config")
    traj = integrate(config.params, 0.0, config.init,
                     replace(config.integrator, step=config.estimation.h_unit))
    rows, _ = _sweep_rows(config, traj)
    return rows


def gap_table(config: ScenarioConfig,
              inflations: list[tuple[float, float]]) -> list[CostRow]:
    """Cost-gap rows for a grid of (beta, gamma) inflation multipliers.

    The optimal run is shared; one robust run per multiplier pair.
    """
    rows: list[CostRow] = []
    first = True
    for bm, gm in inflations:
        cfg = replace(config,
                      inflation=InflationConfig(beta_mult=bm, gamma_mult=gm),
                      policies=("optimal", "robust"))
        art = run_scenario(cfg)
        for row in art.cost_rows:
            if row.policy == "optimal" and not first:
                continue
            label = row.policy if row.policy == "optimal" else \
                f"robust_bx{bm:g}_gx{gm:g}"
            rows.append(CostRow(**{**vars(row), "policy": label}))
        first = False
    return rows


# ---------------------------------------------------------------------------
# Presets reproducing the simulation studies at desk scale.

def preset(name: str, seed: Optional[int] = None) -> ScenarioConfig:
    """Named scenario presets; see PRESETS for the list."""
    try:
        cfg = PRESETS[name]()
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        ) from None
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def _wave_config() -> ScenarioConfig:
    # i_bar above the uncontrolled peak (~0.465), so the optimal policy stays
    # at zero and the run is the plain epidemic wave
    return ScenarioConfig(
        name="sir-wave",
        params=EpidemicParams(beta=0.16, gamma=1.0 / 30.0),
        init=SirState(t=0.0, s=1.0 - 1e-5, i=1e-5, r=0.0),
        i_bar=0.99, u_max=0.15, noise=NoiseConfig(kind="none"),
        integrator=IntegratorConfig(step=0.01, horizon=110.0),
        policies=("optimal",),
        estimation=EstimationWindow(),
    )


def _param_est_config() -> ScenarioConfig:
    return replace(_wave_config(), name="param-est")


def _bound_sweep_config() -> ScenarioConfig:
    return replace(_wave_config(), name="bound-sweep")


def bound_sweep_noisy_config() -> ScenarioConfig:
    return replace(_wave_config(), name="bound-sweep-100db",
                   noise=NoiseConfig(kind="snr_db", snr_db=100.0))


def _policy_compare_config() -> ScenarioConfig:
    return ScenarioConfig(
        name="policy-compare",
        params=EpidemicParams(beta=0.16, gamma=1.0 / 30.0),
        init=SirState(t=0.0, s=1.0 - 1e-5, i=1e-5, r=0.0),
        i_bar=0.01, u_max=0.15,
        noise=NoiseConfig(kind="snr_db", snr_db=55.0),
        inflation=InflationConfig(beta_mult=1.05, gamma_mult=0.95),
        misestimation=InflationConfig(beta_mult=0.95, gamma_mult=1.05),
        integrator=IntegratorConfig(step=0.01, horizon=1200.0),
    )


def _fig1_config() -> ScenarioConfig:
    return ScenarioConfig(
        name="fig1",
        params=EpidemicParams(beta=0.16, gamma=0.063),
        init=SirState(t=0.0, s=1.0 - 1e-5, i=1e-5, r=0.0),
        i_bar=0.1, u_max=0.2,
        noise=NoiseConfig(kind="scaled_variance", divisor=1e4),
        inflation=InflationConfig(beta_mult=1.05, gamma_mult=0.95),
        integrator=IntegratorConfig(step=0.01, horizon=300.0),
        policies=("optimal", "robust"),
    )


PRESETS = {
    "sir-wave": _wave_config,
    "param-est": _param_est_config,
    "bound-sweep": _bound_sweep_config,  # the 100 dB half is derived from it
    "policy-compare": _policy_compare_config,
    "fig1": _fig1_config,
}
