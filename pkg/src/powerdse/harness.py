"""End-to-end experiments: case -> power flow -> truth -> measurements -> estimates.

An experiment is described by an ExperimentConfig (buildable from a YAML
mapping), runs every configured filter over one fault scenario, writes CSVs
plus a text report into the output directory, and returns the error metrics.
All outputs are deterministic for a fixed seed; wall-clock time is reported
in memory only, never written to disk.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from .cases import load_case
from .dynamics import (
    FaultScenario,
    MachineParams,
    Trajectory,
    scenario_networks,
    simulate,
)
from .filters import FilterConfig, GaussianBelief, init_belief, run_filter
from .measurement import (
    MeasurementFrame,
    NoiseSpec,
    measurement_variances,
    process_variances,
    synthesize,
)
from .powerflow import solve_power_flow
from .reduction import machine_init


class ExperimentError(RuntimeError):
    """Failure in one pipeline stage, tagged with the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``case`` is a file path or a bundled case name.  ``seed`` overrides the
    noise seed when set.  The prior belief is the equilibrium with
    ``prior_angle_shift`` added to the first machine's angle and covariance
    ``prior_cov`` times the identity.
    """

    case: str
    scenario: FaultScenario
    noise: NoiseSpec = NoiseSpec()
    filters: tuple[str, ...] = ("ekf", "ukf")
    out_dir: str = "out"
    seed: int | None = None
    substeps: int = 10
    prior_angle_shift: float = 0.05
    prior_cov: float = 1e-2
    jitter: float = 1e-9
    jacobian_mode: str = "analytic"
    sigma_scheme: str = "symmetric"


PRESETS: dict[str, ExperimentConfig] = {
    "wecc9-fault8": ExperimentConfig(
        case="wecc9",
        scenario=FaultScenario(fault_bus=8, t_fault=1.0, clearing_cycles=2.0,
                               cleared_line=(8, 9), t_end=10.0, dt=0.01),
        out_dir="out/wecc9-fault8",
    ),
    "ne39-fault4": ExperimentConfig(
        case="ne39",
        scenario=FaultScenario(fault_bus=4, t_fault=1.0, clearing_cycles=2.0,
                               cleared_line=(4, 14), t_end=10.0, dt=0.01),
        out_dir="out/ne39-fault4",
    ),
}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]
    except KeyError:
        known = ", ".join(sorted(PRESETS))
        raise ValueError(f"unknown preset {name!r} (known: {known})") from None


@dataclass(frozen=True)
class FilterMetrics:
    """Per-machine estimation errors for one filter, full window and
    restricted to samples at or after the clearing instant."""

    rmse_delta: np.ndarray
    rmse_omega: np.ndarray
    post_rmse_delta: np.ndarray
    post_rmse_omega: np.ndarray
    post_max_delta: float
    post_max_omega: float


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    case_name: str
    n_samples: int
    metrics: dict[str, FilterMetrics]
    out_dir: Path
    wall_seconds: float


def rmse(reference: Trajectory, estimate: Trajectory,
         t_min: float | None = None) -> dict[str, np.ndarray]:
    """Per-machine root-mean-square angle and speed errors.

    With ``t_min`` the average runs over samples at times >= t_min only.
    """
    if len(reference) != len(estimate):
        raise ValueError(
            f"trajectory lengths differ: {len(reference)} vs {len(estimate)}")
    if not np.allclose(reference.times, estimate.times):
        raise ValueError("trajectory sample times differ")
    mask = np.ones(len(reference), dtype=bool)
    if t_min is not None:
        mask = reference.times >= t_min
    if not mask.any():
        raise ValueError(f"no samples at or after t={t_min}")
    d_err = reference.delta_matrix()[mask] - estimate.delta_matrix()[mask]
    o_err = reference.omega_matrix()[mask] - estimate.omega_matrix()[mask]
    return {
        "delta": np.sqrt(np.mean(d_err ** 2, axis=0)),
        "omega": np.sqrt(np.mean(o_err ** 2, axis=0)),
    }


def _metrics(truth: Trajectory, estimate: Trajectory, t_clear: float) -> FilterMetrics:
    full = rmse(truth, estimate)
    post = rmse(truth, estimate, t_min=t_clear)
    mask = truth.times >= t_clear
    d_err = np.abs(truth.delta_matrix()[mask] - estimate.delta_matrix()[mask])
    o_err = np.abs(truth.omega_matrix()[mask] - estimate.omega_matrix()[mask])
    return FilterMetrics(
        rmse_delta=full["delta"], rmse_omega=full["omega"],
        post_rmse_delta=post["delta"], post_rmse_omega=post["omega"],
        post_max_delta=float(d_err.max()), post_max_omega=float(o_err.max()),
    )


def default_prior(init_delta: np.ndarray, angle_shift: float,
                  cov_scale: float) -> GaussianBelief:
    """Equilibrium-anchored prior with a deliberate first-machine angle offset."""
    x0 = np.concatenate([init_delta, np.ones_like(init_delta)])
    x0[0] += angle_shift
    return init_belief(x0, cov_scale * np.eye(x0.size))


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ExperimentError:
        raise
    except Exception as exc:
        raise ExperimentError(name, str(exc)) from exc


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run the full pipeline and write all artifacts under ``cfg.out_dir``."""
    t0 = time.perf_counter()
    noise = cfg.noise if cfg.seed is None else replace(cfg.noise, seed=cfg.seed)

    case = _stage("load-case", load_case, cfg.case)
    clear_time = cfg.scenario.t_clear(case.frequency)
    if clear_time >= cfg.scenario.t_end:
        raise ExperimentError(
            "scenario",
            f"window ends at t={cfg.scenario.t_end:g}s but the fault clears "
            f"at t={clear_time:.4f}s; nothing to score after clearing")
    pf = _stage("power-flow", solve_power_flow, case)
    nets = _stage("reduction", scenario_networks, case, pf, cfg.scenario)
    init = _stage("reduction", machine_init, case, pf, nets.pre)
    params = MachineParams.from_case(case, init)
    truth = _stage("simulate", simulate, case, pf, cfg.scenario, cfg.substeps)
    frames = _stage("synthesize", synthesize, truth, nets, params, noise)

    nm = params.n_machines
    all_bus_ids = tuple(b.id for b in case.buses)
    t_clear = cfg.scenario.t_clear(case.frequency)
    prior = default_prior(init.delta0, cfg.prior_angle_shift, cfg.prior_cov)
    # Floor at a tiny variance so all-zero noise settings stay invertible.
    q = np.diag(np.maximum(process_variances(noise, nm), 1e-12))
    r = np.diag(np.maximum(
        measurement_variances(noise, nm, len(all_bus_ids)), 1e-12))

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(truth, out_dir / "truth.csv")
    write_measurements_csv(frames, all_bus_ids, out_dir / "measurements.csv")

    metrics: dict[str, FilterMetrics] = {}
    for kind in cfg.filters:
        fc = _stage(f"filter-{kind}", FilterConfig,
                    kind=kind, q=q, r=r, jitter=cfg.jitter,
                    jacobian_mode=cfg.jacobian_mode,
                    sigma_scheme=cfg.sigma_scheme)
        estimate, beliefs = _stage(f"filter-{kind}", run_filter,
                                   fc, case, pf, cfg.scenario, frames, prior)
        metrics[kind] = _metrics(truth, estimate, t_clear)
        write_estimates_csv(truth, estimate, beliefs,
                            out_dir / f"estimate_{kind}.csv")

    report = ExperimentReport(
        config=cfg, case_name=case.name, n_samples=len(truth),
        metrics=metrics, out_dir=out_dir,
        wall_seconds=time.perf_counter() - t0,
    )
    (out_dir / "report.txt").write_text(format_report(report))
    return report


def format_report(report: ExperimentReport) -> str:
    """Human-readable metrics summary.  Contains no timing, so repeated runs
    with the same seed produce identical bytes."""
    cfg = report.config
    s = cfg.scenario
    lines = [
        f"case: {report.case_name}",
        f"scenario: fault at bus {s.fault_bus} at t={s.t_fault:g}s, "
        f"cleared after {s.clearing_cycles:g} cycles by opening line "
        f"{s.cleared_line[0]}-{s.cleared_line[1]}",
        f"window: {s.t_end:g}s at dt={s.dt:g}s ({report.n_samples} samples)",
        f"noise seed: {cfg.seed if cfg.seed is not None else cfg.noise.seed}",
        "",
    ]
    for kind, m in report.metrics.items():
        lines.append(f"filter {kind}:")
        lines.append("  full-window rmse, angle (rad):    "
                     + " ".join(f"{v:.6e}" for v in m.rmse_delta))
        lines.append("  full-window rmse, speed (pu):     "
                     + " ".join(f"{v:.6e}" for v in m.rmse_omega))
        lines.append("  post-clearing rmse, angle (rad):  "
                     + " ".join(f"{v:.6e}" for v in m.post_rmse_delta))
        lines.append("  post-clearing rmse, speed (pu):   "
                     + " ".join(f"{v:.6e}" for v in m.post_rmse_omega))
        lines.append(f"  post-clearing max abs error: "
                     f"angle {m.post_max_delta:.6e} rad, "
                     f"speed {m.post_max_omega:.6e} pu")
        lines.append("")
    return "\n".join(lines)


def _fmt(value: float) -> str:
    return repr(float(value))


def write_trajectory_csv(traj: Trajectory, path: Path) -> None:
    """Columns: t, per-machine angles, per-machine speeds, regime."""
    nm = traj.states[0].delta.size
    header = (["t"]
              + [f"delta_{i + 1}" for i in range(nm)]
              + [f"omega_{i + 1}" for i in range(nm)]
              + ["regime"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t, state, regime in zip(traj.times, traj.states, traj.regime):
            writer.writerow([_fmt(t)]
                            + [_fmt(v) for v in state.delta]
                            + [_fmt(v) for v in state.omega]
                            + [regime.value])


def write_measurements_csv(frames: list[MeasurementFrame],
                           all_bus_ids: tuple[int, ...], path: Path) -> None:
    """Columns: t, machine powers, then voltage magnitude/angle per bus id.

    Buses absent from a frame's layout leave their cells empty.
    """
    nm = frames[0].p_g.size
    header = (["t"]
              + [f"p_g_{i + 1}" for i in range(nm)]
              + [f"q_g_{i + 1}" for i in range(nm)]
              + [f"v_mag_{b}" for b in all_bus_ids]
              + [f"v_ang_{b}" for b in all_bus_ids])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for fr in frames:
            pos = {b: i for i, b in enumerate(fr.bus_ids)}
            vm = ["" if b not in pos else _fmt(fr.v_mag[pos[b]]) for b in all_bus_ids]
            va = ["" if b not in pos else _fmt(fr.v_ang[pos[b]]) for b in all_bus_ids]
            writer.writerow([_fmt(fr.t)]
                            + [_fmt(v) for v in fr.p_g]
                            + [_fmt(v) for v in fr.q_g] + vm + va)


def write_estimates_csv(truth: Trajectory, estimate: Trajectory,
                        beliefs: list[GaussianBelief], path: Path) -> None:
    """Columns: t, per-machine true and estimated angles, true and estimated
    speeds, then the belief covariance diagonal (angle block, speed block)."""
    nm = estimate.states[0].delta.size
    header = (["t"]
              + [f"delta_true_{i + 1}" for i in range(nm)]
              + [f"delta_est_{i + 1}" for i in range(nm)]
              + [f"omega_true_{i + 1}" for i in range(nm)]
              + [f"omega_est_{i + 1}" for i in range(nm)]
              + [f"p_delta_{i + 1}" for i in range(nm)]
              + [f"p_omega_{i + 1}" for i in range(nm)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        rows = zip(truth.states, estimate.times, estimate.states, beliefs)
        for ref, t, state, belief in rows:
            var = np.diag(belief.p)
            writer.writerow([_fmt(t)]
                            + [_fmt(v) for v in ref.delta]
                            + [_fmt(v) for v in state.delta]
                            + [_fmt(v) for v in ref.omega]
                            + [_fmt(v) for v in state.omega]
                            + [_fmt(v) for v in var])


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a config from a parsed YAML mapping, rejecting unknown keys."""
    known = {"case", "scenario", "noise", "filters", "out_dir", "seed",
             "substeps", "prior_angle_shift", "prior_cov", "jitter",
             "jacobian_mode", "sigma_scheme"}
    extra = set(data) - known
    if extra:
        raise ValueError(f"unknown config keys: {sorted(extra)}")
    if "case" not in data or "scenario" not in data:
        raise ValueError("config needs at least 'case' and 'scenario'")

    scen = dict(data["scenario"])
    scen_known = {"fault_bus", "t_fault", "clearing_cycles", "cleared_line",
                  "t_end", "dt"}
    extra = set(scen) - scen_known
    if extra:
        raise ValueError(f"unknown scenario keys: {sorted(extra)}")
    line = scen["cleared_line"]
    scenario = FaultScenario(
        fault_bus=int(scen["fault_bus"]),
        t_fault=float(scen.get("t_fault", 1.0)),
        clearing_cycles=float(scen.get("clearing_cycles", 2.0)),
        cleared_line=(int(line[0]), int(line[1])),
        t_end=float(scen.get("t_end", 10.0)),
        dt=float(scen.get("dt", 0.01)),
    )

    noise_data = dict(data.get("noise", {}))
    noise_known = {"sigma_p", "sigma_q", "sigma_vmag", "sigma_vang",
                   "q_delta", "q_omega", "seed"}
    extra = set(noise_data) - noise_known
    if extra:
        raise ValueError(f"unknown noise keys: {sorted(extra)}")
    defaults = NoiseSpec()
    noise = NoiseSpec(**{
        key: (int(v) if key == "seed" else float(v))
        for key, v in noise_data.items()
    }) if noise_data else defaults

    seed = data.get("seed")
    return ExperimentConfig(
        case=str(data["case"]),
        scenario=scenario,
        noise=noise,
        filters=tuple(data.get("filters", ("ekf", "ukf"))),
        out_dir=str(data.get("out_dir", "out")),
        seed=None if seed is None else int(seed),
        substeps=int(data.get("substeps", 10)),
        prior_angle_shift=float(data.get("prior_angle_shift", 0.05)),
        prior_cov=float(data.get("prior_cov", 1e-2)),
        jitter=float(data.get("jitter", 1e-9)),
        jacobian_mode=str(data.get("jacobian_mode", "analytic")),
        sigma_scheme=str(data.get("sigma_scheme", "symmetric")),
    )


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    """Parse a YAML experiment config file."""
    data = yaml.safe_load(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    return config_from_dict(data)
