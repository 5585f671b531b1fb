"""CSV emission and parsing for scenario artifacts.

Schemas:

* trajectory: ``t,S_true,I_true,R_true,S_meas,I_meas,u_applied,stage``
* estimates:  ``alpha,h,beta_hat,gamma_hat,err_norm,bound_b,contained``
* costs:      ``policy,total_cost,gap_direct,gap_lemma4,gap_thm4,gap_upper,t_b,t_h,feasible``

Numbers are written with 12 significant digits, which keeps the
cross-formula consistency checks meaningful after a round trip. Writers are
deterministic (fixed line terminator, fixed formatting), so a fixed seed
yields byte-identical files.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .scenarios import CostRow, EstimateRow, PolicyRun, RunArtifacts

TRAJECTORY_HEADER = ["t", "S_true", "I_true", "R_true", "S_meas", "I_meas",
                     "u_applied", "stage"]
ESTIMATES_HEADER = ["alpha", "h", "beta_hat", "gamma_hat", "err_norm",
                    "bound_b", "contained"]
COSTS_HEADER = ["policy", "total_cost", "gap_direct", "gap_lemma4", "gap_thm4",
                "gap_upper", "t_b", "t_h", "feasible"]
TRACE_HEADER = ["t", "u", "stage", "s_seen", "i_seen"]


def fmt(value: Union[float, int, bool, str]) -> str:
    if isinstance(value, bool) or isinstance(value, np.bool_):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    v = float(value)
    return "nan" if math.isnan(v) else f"{v:.12g}"


def _parse_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"not a boolean field: {text!r}")


def _write(path: Path, header: list[str], rows: Iterable[Iterable]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_trajectory_csv(path: Path, run: PolicyRun) -> None:
    traj = run.result.trajectory
    meas = run.measured
    stage = run.result.node_stage
    rows = zip(traj.t, traj.s, traj.i, traj.r, meas.s_hat, meas.i_hat, traj.u,
               stage)
    _write(path, TRAJECTORY_HEADER, rows)


def write_trace_csv(path: Path, run: PolicyRun) -> None:
    tr = run.result.trace
    _write(path, TRACE_HEADER, zip(tr.t, tr.u, tr.stage, tr.s_seen, tr.i_seen))


def write_estimates_csv(path: Path, rows: Iterable[EstimateRow]) -> None:
    _write(path, ESTIMATES_HEADER,
           ((r.alpha, r.h, r.beta_hat, r.gamma_hat, r.err_norm, r.bound_b,
             r.contained) for r in rows))


def write_costs_csv(path: Path, rows: Iterable[CostRow]) -> None:
    _write(path, COSTS_HEADER,
           ((r.policy, r.total_cost, r.gap_direct, r.gap_lemma4, r.gap_thm4,
             r.gap_upper, r.t_b, r.t_h, r.feasible) for r in rows))


def emit_csv(artifacts: RunArtifacts, out_dir: Union[str, Path]) -> list[Path]:
    """Write all artifacts of one scenario run; overwrites idempotently."""
    out = Path(out_dir)
    written: list[Path] = []
    for name, run in artifacts.runs.items():
        p = out / f"trajectory_{name}.csv"
        write_trajectory_csv(p, run)
        written.append(p)
        p = out / f"policy_trace_{name}.csv"
        write_trace_csv(p, run)
        written.append(p)
    if artifacts.cost_rows:
        p = out / "costs.csv"
        write_costs_csv(p, artifacts.cost_rows)
        written.append(p)
    return written


def _read(path: Path, expected_header: list[str]) -> list[list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != expected_header:
            raise ValueError(f"{path}: unexpected header {header}")
        return [row for row in reader]


def read_trajectory_csv(path: Path) -> dict[str, np.ndarray]:
    rows = _read(Path(path), TRAJECTORY_HEADER)
    cols = np.array([[float(v) for v in row] for row in rows]).reshape(
        len(rows), len(TRAJECTORY_HEADER))
    out = {name: cols[:, k] for k, name in enumerate(TRAJECTORY_HEADER)}
    out["stage"] = out["stage"].astype(np.int64)
    return out


def read_estimates_csv(path: Path) -> list[EstimateRow]:
    rows = _read(Path(path), ESTIMATES_HEADER)
    return [EstimateRow(alpha=int(r[0]), h=float(r[1]), beta_hat=float(r[2]),
                        gamma_hat=float(r[3]), err_norm=float(r[4]),
                        bound_b=float(r[5]), contained=_parse_bool(r[6]))
            for r in rows]


def read_costs_csv(path: Path) -> list[CostRow]:
    rows = _read(Path(path), COSTS_HEADER)
    return [CostRow(policy=r[0], total_cost=float(r[1]), gap_direct=float(r[2]),
                    gap_lemma4=float(r[3]), gap_thm4=float(r[4]),
                    gap_upper=float(r[5]), t_b=float(r[6]), t_h=float(r[7]),
                    feasible=_parse_bool(r[8]))
            for r in rows]
