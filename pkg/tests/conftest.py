"""Shared fixtures: the headline scenarios are expensive enough to run once."""
from __future__ import annotations

from dataclasses import replace

import pytest

from sirctl.core import EpidemicParams, IntegratorConfig, SirState, integrate
from sirctl.scenarios import InflationConfig, NoiseConfig, preset, run_scenario


@pytest.fixture(scope="session")
def wave_traj():
    """Uncontrolled epidemic wave: beta=0.16, gamma=1/30, horizon 110."""
    params = EpidemicParams(beta=0.16, gamma=1.0 / 30.0)
    init = SirState(t=0.0, s=1.0 - 1e-5, i=1e-5, r=0.0)
    return integrate(params, 0.0, init, IntegratorConfig(step=0.01, horizon=110.0))


@pytest.fixture(scope="session")
def compare_artifacts():
    """The three-policy comparison: beta=0.16, gamma=1/30, i_bar=0.01,
    u_max=0.15, I(0)=1e-5, 55 dB measurement noise."""
    return run_scenario(preset("policy-compare"))


@pytest.fixture(scope="session")
def fig1_noise_free_artifacts():
    """Robust-vs-optimal setup (beta=0.16, gamma=0.063, i_bar=0.1, u_max=0.2,
    5% parameter inflation) without measurement noise."""
    cfg = replace(preset("fig1"), name="fig1-noise-free",
                  noise=NoiseConfig(kind="none"))
    return run_scenario(cfg)


@pytest.fixture(scope="session")
def fig1_noisy_artifacts():
    """The same setup with state-scaled measurement noise."""
    return run_scenario(preset("fig1"))


@pytest.fixture(scope="session")
def fig1_collapse_artifacts():
    """Exact parameters and exact states: the robust policy must reduce to
    the optimal one."""
    cfg = replace(preset("fig1"), name="fig1-collapse",
                  noise=NoiseConfig(kind="none"),
                  inflation=InflationConfig(beta_mult=1.0, gamma_mult=1.0))
    return run_scenario(cfg)
