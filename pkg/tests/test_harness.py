import csv
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import yaml

from powerdse import (
    DynamicState,
    ExperimentConfig,
    ExperimentError,
    FaultScenario,
    NoiseSpec,
    Regime,
    Trajectory,
    config_from_dict,
    format_report,
    load_experiment_config,
    preset,
    rmse,
    run_experiment,
)


def toy_trajectory(deltas, omegas=None, dt=0.01):
    n = len(deltas)
    states = []
    for k in range(n):
        d = np.atleast_1d(np.asarray(deltas[k], dtype=float))
        w = (np.ones_like(d) if omegas is None
             else np.atleast_1d(np.asarray(omegas[k], dtype=float)))
        states.append(DynamicState(delta=d, omega=w))
    return Trajectory(times=np.arange(n) * dt, states=states,
                      regime=[Regime.PreFault] * n)


def quick_config(out_dir, **overrides):
    scenario = FaultScenario(fault_bus=8, t_fault=1.0, clearing_cycles=2.0,
                             cleared_line=(8, 9), t_end=2.0, dt=0.01)
    base = dict(case="wecc9", scenario=scenario, out_dir=str(out_dir),
                seed=123)
    base.update(overrides)
    return ExperimentConfig(**base)


# --- error metric ------------------------------------------------------------


def test_rmse_identical_is_zero():
    traj = toy_trajectory([[0.1, 0.2], [0.3, 0.4]])
    out = rmse(traj, traj)
    assert np.array_equal(out["delta"], np.zeros(2))
    assert np.array_equal(out["omega"], np.zeros(2))


def test_rmse_constant_offset():
    truth = toy_trajectory([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]])
    shifted = toy_trajectory([[0.1, 0.2 - 0.25], [0.3, 0.4 - 0.25],
                              [0.5, 0.6 - 0.25]])
    out = rmse(truth, shifted)
    assert out["delta"][0] == 0.0
    assert out["delta"][1] == pytest.approx(0.25, abs=1e-15)


def test_rmse_hand_value():
    truth = toy_trajectory([[0.0], [0.0]])
    estimate = toy_trajectory([[3.0], [4.0]])
    out = rmse(truth, estimate)
    assert out["delta"][0] == pytest.approx(np.sqrt(12.5), abs=1e-12)


def test_rmse_window_restriction():
    truth = toy_trajectory([[0.0], [0.0], [0.0], [0.0]])
    estimate = toy_trajectory([[10.0], [10.0], [1.0], [1.0]])
    out = rmse(truth, estimate, t_min=0.02)
    assert out["delta"][0] == pytest.approx(1.0, abs=1e-12)


def test_rmse_speed_channel():
    truth = toy_trajectory([[0.0]], omegas=[[1.0]])
    estimate = toy_trajectory([[0.0]], omegas=[[1.002]])
    out = rmse(truth, estimate)
    assert out["omega"][0] == pytest.approx(0.002, abs=1e-15)


def test_rmse_rejects_length_mismatch():
    with pytest.raises(ValueError, match="lengths differ"):
        rmse(toy_trajectory([[0.0]]), toy_trajectory([[0.0], [0.0]]))


def test_rmse_rejects_time_mismatch():
    a = toy_trajectory([[0.0], [0.0]], dt=0.01)
    b = toy_trajectory([[0.0], [0.0]], dt=0.02)
    with pytest.raises(ValueError, match="times differ"):
        rmse(a, b)


def test_rmse_rejects_empty_window():
    traj = toy_trajectory([[0.0], [0.0]])
    with pytest.raises(ValueError, match="no samples"):
        rmse(traj, traj, t_min=5.0)


# --- configuration -----------------------------------------------------------


def test_preset_lookup():
    cfg = preset("wecc9-fault8")
    assert cfg.case == "wecc9"
    assert cfg.scenario.fault_bus == 8
    assert cfg.scenario.cleared_line == (8, 9)
    cfg = preset("ne39-fault4")
    assert cfg.case == "ne39"
    assert cfg.scenario.cleared_line == (4, 14)


def test_preset_unknown_name():
    with pytest.raises(ValueError, match="unknown preset"):
        preset("wecc3-fault1")


def test_config_from_dict_defaults():
    cfg = config_from_dict({
        "case": "wecc9",
        "scenario": {"fault_bus": 8, "cleared_line": [8, 9]},
    })
    assert cfg.scenario.t_fault == 1.0
    assert cfg.scenario.clearing_cycles == 2.0
    assert cfg.scenario.t_end == 10.0
    assert cfg.scenario.dt == 0.01
    assert cfg.filters == ("ekf", "ukf")
    assert cfg.noise == NoiseSpec()
    assert cfg.seed is None
    assert cfg.prior_angle_shift == 0.05


def test_config_from_dict_full():
    cfg = config_from_dict({
        "case": "cases/mine.case",
        "scenario": {"fault_bus": 4, "cleared_line": [4, 14], "t_fault": 0.5,
                     "clearing_cycles": 3, "t_end": 5.0, "dt": 0.02},
        "noise": {"sigma_p": 0.02, "seed": 77},
        "filters": ["ukf"],
        "seed": 9,
        "sigma_scheme": "scaled",
    })
    assert cfg.case == "cases/mine.case"
    assert cfg.scenario.clearing_cycles == 3.0
    assert cfg.noise.sigma_p == 0.02
    assert cfg.noise.sigma_q == NoiseSpec().sigma_q
    assert cfg.filters == ("ukf",)
    assert cfg.seed == 9
    assert cfg.sigma_scheme == "scaled"


def test_config_from_dict_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown config keys.*speed"):
        config_from_dict({"case": "wecc9", "scenario": {}, "speed": 1})
    with pytest.raises(ValueError, match="unknown scenario keys.*bus"):
        config_from_dict({"case": "wecc9",
                          "scenario": {"fault_bus": 8, "cleared_line": [8, 9],
                                       "bus": 8}})
    with pytest.raises(ValueError, match="unknown noise keys.*sigma_v"):
        config_from_dict({"case": "wecc9",
                          "scenario": {"fault_bus": 8, "cleared_line": [8, 9]},
                          "noise": {"sigma_v": 0.01}})


def test_config_from_dict_requires_case_and_scenario():
    with pytest.raises(ValueError, match="case"):
        config_from_dict({"scenario": {"fault_bus": 8,
                                       "cleared_line": [8, 9]}})


def test_load_experiment_config(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(
        "case: wecc9\n"
        "scenario:\n"
        "  fault_bus: 8\n"
        "  cleared_line: [8, 9]\n"
        "  t_end: 4.0\n"
        "noise:\n"
        "  sigma_vmag: 0.002\n"
        "seed: 42\n"
    )
    cfg = load_experiment_config(path)
    assert cfg.case == "wecc9"
    assert cfg.scenario.t_end == 4.0
    assert cfg.noise.sigma_vmag == 0.002
    assert cfg.seed == 42


def test_example_configs_mirror_presets():
    configs = Path(__file__).resolve().parent.parent / "configs"
    assert load_experiment_config(configs / "wecc9-fault8.yaml") == \
        preset("wecc9-fault8")
    assert load_experiment_config(configs / "ne39-fault4.yaml") == \
        preset("ne39-fault4")


def test_load_experiment_config_rejects_non_mapping(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("- just\n- a\n- list\n")
    with pytest.raises(ValueError, match="mapping"):
        load_experiment_config(path)


# --- end-to-end runs ---------------------------------------------------------


def test_zero_noise_experiment_recovers_truth(tmp_path):
    silent = NoiseSpec(sigma_p=0.0, sigma_q=0.0, sigma_vmag=0.0,
                       sigma_vang=0.0, q_delta=0.0, q_omega=0.0)
    cfg = quick_config(tmp_path / "quiet", noise=silent, seed=None,
                       prior_angle_shift=0.0, prior_cov=1e-6)
    report = run_experiment(cfg)
    for kind in ("ekf", "ukf"):
        m = report.metrics[kind]
        assert np.max(m.rmse_delta) < 1e-3
        assert np.max(m.rmse_omega) < 1e-3


def test_shifted_prior_converges_by_clearing(tmp_path):
    # the deliberate 0.05 rad prior offset must be absorbed well before the
    # post-clearing window under zero measurement noise
    silent = NoiseSpec(sigma_p=0.0, sigma_q=0.0, sigma_vmag=0.0,
                       sigma_vang=0.0, q_delta=0.0, q_omega=0.0)
    cfg = quick_config(tmp_path / "shifted", noise=silent, seed=None,
                       filters=("ekf",))
    report = run_experiment(cfg)
    m = report.metrics["ekf"]
    assert np.max(m.post_rmse_delta) < 1e-3
    assert np.max(m.rmse_delta) > np.max(m.post_rmse_delta)


def test_seeded_rerun_byte_identical(tmp_path):
    first = run_experiment(quick_config(tmp_path / "a"))
    second = run_experiment(quick_config(tmp_path / "b"))
    names = ["truth.csv", "measurements.csv", "estimate_ekf.csv",
             "estimate_ukf.csv", "report.txt"]
    for name in names:
        assert (first.out_dir / name).read_bytes() == \
            (second.out_dir / name).read_bytes(), name


def test_report_file_matches_in_memory_report(wecc9_run):
    text = (wecc9_run.report.out_dir / "report.txt").read_text()
    assert text == format_report(wecc9_run.report)
    assert wecc9_run.report.wall_seconds > 0.0
    assert "second" not in text  # timing never lands on disk
    assert f"{wecc9_run.report.n_samples} samples" in text


def test_metrics_recomputable_from_estimates_csv(wecc9_run):
    t_clear = wecc9_run.cfg.scenario.t_clear(wecc9_run.case.frequency)
    for kind in ("ekf", "ukf"):
        with open(wecc9_run.report.out_dir / f"estimate_{kind}.csv") as fh:
            rows = list(csv.DictReader(fh))
        nm = 3
        t = np.array([float(r["t"]) for r in rows])
        d_err = np.array([[float(r[f"delta_true_{i+1}"])
                           - float(r[f"delta_est_{i+1}"]) for i in range(nm)]
                          for r in rows])
        o_err = np.array([[float(r[f"omega_true_{i+1}"])
                           - float(r[f"omega_est_{i+1}"]) for i in range(nm)]
                          for r in rows])
        m = wecc9_run.report.metrics[kind]
        assert np.max(np.abs(np.sqrt(np.mean(d_err ** 2, axis=0))
                             - m.rmse_delta)) < 1e-12
        mask = t >= t_clear
        assert np.max(np.abs(np.sqrt(np.mean(o_err[mask] ** 2, axis=0))
                             - m.post_rmse_omega)) < 1e-12
        assert np.abs(d_err[mask]).max() == pytest.approx(
            m.post_max_delta, abs=1e-12)


def test_truth_csv_layout(wecc9_run):
    with open(wecc9_run.report.out_dir / "truth.csv") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    assert header == ["t", "delta_1", "delta_2", "delta_3",
                      "omega_1", "omega_2", "omega_3", "regime"]
    assert len(rows) == wecc9_run.report.n_samples
    labels = {r[-1] for r in rows}
    assert labels == {"pre_fault", "fault_on", "post_fault"}
    # full-precision floats round-trip exactly
    assert float(rows[5][1]) == wecc9_run.truth.states[5].delta[0]


def test_measurements_csv_blank_cells_track_fault(wecc9_run):
    out = wecc9_run.report.out_dir
    with open(out / "truth.csv") as fh:
        regimes = [r["regime"] for r in csv.DictReader(fh)]
    with open(out / "measurements.csv") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        rows = list(reader)
    assert header[:7] == ["t", "p_g_1", "p_g_2", "p_g_3",
                          "q_g_1", "q_g_2", "q_g_3"]
    assert "v_mag_8" in header and "v_ang_8" in header
    for regime, row in zip(regimes, rows):
        if regime == "fault_on":
            assert row["v_mag_8"] == "" and row["v_ang_8"] == ""
        else:
            assert row["v_mag_8"] != "" and row["v_ang_8"] != ""
        assert row["v_mag_5"] != ""  # untouched buses never go blank


def test_estimates_csv_layout(wecc9_run):
    with open(wecc9_run.report.out_dir / "estimate_ekf.csv") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        rows = list(reader)
    assert len(header) == 1 + 6 * 3
    assert header[-1] == "p_omega_3"
    variances = np.array([[float(r[f"p_delta_{i+1}"]) for i in range(3)]
                          for r in rows])
    assert np.all(variances > 0.0)


def test_filter_subset_skips_artifacts(tmp_path):
    cfg = quick_config(tmp_path / "only-ekf", filters=("ekf",))
    report = run_experiment(cfg)
    assert set(report.metrics) == {"ekf"}
    assert (report.out_dir / "estimate_ekf.csv").exists()
    assert not (report.out_dir / "estimate_ukf.csv").exists()


def test_stage_tag_load_case(tmp_path):
    cfg = quick_config(tmp_path / "x", case="no-such-file.case")
    with pytest.raises(ExperimentError, match=r"\[load-case\]") as info:
        run_experiment(cfg)
    assert info.value.stage == "load-case"


def test_stage_tag_bad_scenario(tmp_path):
    scenario = FaultScenario(fault_bus=77, t_fault=1.0, clearing_cycles=2.0,
                             cleared_line=(8, 9), t_end=2.0, dt=0.01)
    cfg = quick_config(tmp_path / "x", scenario=scenario)
    with pytest.raises(ExperimentError, match=r"\[reduction\] .*77"):
        run_experiment(cfg)


def test_window_must_outlast_clearing(tmp_path):
    scenario = FaultScenario(fault_bus=8, t_fault=1.0, clearing_cycles=2.0,
                             cleared_line=(8, 9), t_end=1.0, dt=0.01)
    cfg = quick_config(tmp_path / "x", scenario=scenario)
    with pytest.raises(ExperimentError, match=r"\[scenario\].*clears"):
        run_experiment(cfg)


def test_stage_tag_unknown_filter(tmp_path):
    cfg = quick_config(tmp_path / "x", filters=("emf",))
    with pytest.raises(ExperimentError, match=r"\[filter-emf\]"):
        run_experiment(cfg)


def test_seed_field_overrides_noise_seed(tmp_path):
    base = NoiseSpec(seed=5)
    a = run_experiment(quick_config(tmp_path / "a", noise=base, seed=5,
                                    filters=("ekf",)))
    b = run_experiment(quick_config(tmp_path / "b", noise=replace(base, seed=99),
                                    seed=5, filters=("ekf",)))
    assert (a.out_dir / "measurements.csv").read_bytes() == \
        (b.out_dir / "measurements.csv").read_bytes()
