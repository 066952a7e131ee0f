import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

import popmf
from popmf import BuiltinModel, KernelError
from popmf.cli import main
from popmf.models import BUILTINS, register_builtin
from popmf.reports import read_csv


@pytest.fixture
def toy_models():
    """Register deterministic / constant-kernel toys for the duration of a test."""
    cycle = popmf.constant_kernel_model(np.roll(np.eye(3), 1, axis=1),
                                        ("x", "y", "z"))
    p = np.array([[0.5, 0.3, 0.2], [0.1, 0.6, 0.3], [0.2, 0.2, 0.6]])
    constk = popmf.constant_kernel_model(p, ("x", "y", "z"))
    register_builtin(BuiltinModel("cycle3", None, lambda: cycle,
                                  (0.5, 0.25, 0.25), {}))
    register_builtin(BuiltinModel("constk", None, lambda: constk,
                                  (1 / 3, 1 / 3, 1 / 3), {}))
    yield
    del BUILTINS["cycle3"]
    del BUILTINS["constk"]


def column(header, rows, name):
    i = header.index(name)
    return [row[i] for row in rows]


# ---------------------------------------------------------------------------
# list-models
# ---------------------------------------------------------------------------

def test_list_models_text(capsys):
    assert main(["list-models"]) == 0
    out = capsys.readouterr().out
    assert "seir" in out
    assert "wsn" in out
    for greek in ("alpha", "beta", "lam", "gamma", "eta"):
        assert greek in out


def test_list_models_json(capsys):
    assert main(["list-models", "--json"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert set(schema) >= {"seir", "wsn", "mrdl", "two_state"}
    assert set(schema["wsn"]["parameters"]) == \
        {"alpha", "beta", "lam", "gamma", "eta", "clamp"}
    assert schema["seir"]["states"] == ["S", "E", "I", "R"]


# ---------------------------------------------------------------------------
# transient
# ---------------------------------------------------------------------------

def test_transient_deterministic_toy_all_columns_identical(tmp_path, toy_models):
    # dyadic fractions and a power-of-two run count keep every average exact,
    # so the three families agree bit for bit
    code = main(["transient", "--model", "cycle3", "--n", "8", "--tmax", "30",
                 "--runs", "16", "--seed", "3", "--out", str(tmp_path)])
    assert code == 0
    header, rows = read_csv(tmp_path / "transient_cycle3_N8.csv")
    mu = column(header, rows, "mu")
    assert mu == column(header, rows, "refined_mean")
    assert mu == column(header, rows, "sim_mean")
    assert all(float(s) == 0.0 for s in column(header, rows, "sim_stderr"))
    # svg exists, is valid xml, and was rendered from this csv
    ET.parse(tmp_path / "transient_cycle3_N8.svg")


def test_transient_csv_deterministic_and_rows_sum_to_one(tmp_path):
    args = ["transient", "--model", "seir", "--n", "10", "--tmax", "15",
            "--runs", "200", "--seed", "11", "--format", "csv"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "transient_seir_N10.csv").read_bytes()
    b = (tmp_path / "b" / "transient_seir_N10.csv").read_bytes()
    assert a == b
    header, rows = read_csv(tmp_path / "a" / "transient_seir_N10.csv")
    by_t = {}
    for row in rows:
        by_t.setdefault(row[header.index("t")], []).append(row)
    for t, group in by_t.items():
        for name in ("mu", "refined_mean", "sim_mean"):
            total = sum(float(r[header.index(name)]) for r in group)
            assert total == pytest.approx(1.0, abs=1e-6)


def test_transient_error_mode(tmp_path):
    assert main(["transient", "--model", "seir", "--n", "10", "--tmax", "10",
                 "--runs", "100", "--seed", "5", "--errors",
                 "--out", str(tmp_path)]) == 0
    header, rows = read_csv(tmp_path / "transient_seir_N10.csv")
    assert "err_mean_field" in header
    assert "err_refined" in header
    ET.parse(tmp_path / "transient_seir_N10.svg")


def test_transient_multiple_n_files(tmp_path):
    assert main(["transient", "--model", "two_state", "--n", "10", "--n", "20",
                 "--tmax", "5", "--runs", "50", "--out", str(tmp_path),
                 "--format", "csv"]) == 0
    assert (tmp_path / "transient_two_state_N10.csv").exists()
    assert (tmp_path / "transient_two_state_N20.csv").exists()


# ---------------------------------------------------------------------------
# steady
# ---------------------------------------------------------------------------

def test_steady_constant_kernel_columns_agree(tmp_path, toy_models):
    assert main(["steady", "--model", "constk", "--n", "30", "--tmax", "200",
                 "--runs", "4000", "--seed", "9", "--out", str(tmp_path)]) == 0
    header, rows = read_csv(tmp_path / "steady_constk_N30.csv")
    for row in rows:
        sim = float(row[header.index("simulation")])
        ref = float(row[header.index("refined_mean_field")])
        mf = float(row[header.index("mean_field")])
        assert sim == pytest.approx(mf, abs=0.02)
        assert ref == pytest.approx(mf, abs=1e-9)  # constant kernel: V = 0
    assert rows[0][header.index("classification")] == "ExponentiallyStable"


def test_steady_marginal_two_state_marks_unavailable(tmp_path):
    assert main(["steady", "--model", "two_state", "--params", "alpha=0.75",
                 "--n", "10", "--tmax", "50", "--runs", "300", "--seed", "2",
                 "--out", str(tmp_path), "--format", "csv"]) == 0
    header, rows = read_csv(tmp_path / "steady_two_state_N10.csv")
    assert all(r[header.index("refined_mean_field")] == "unavailable" for r in rows)
    assert rows[0][header.index("classification")] == "MarginallyStable"
    assert float(rows[0][header.index("mean_field")]) == pytest.approx(2 / 3,
                                                                       abs=1e-9)


def test_steady_seir_matches_library(tmp_path):
    assert main(["steady", "--model", "seir", "--n", "10", "--tmax", "100",
                 "--runs", "500", "--seed", "4", "--out", str(tmp_path),
                 "--format", "csv"]) == 0
    header, rows = read_csv(tmp_path / "steady_seir_N10.csv")
    steady = popmf.solve_steady(popmf.seir(), [0.2, 0.2, 0.2, 0.4])
    refined = steady.mu_inf + steady.v_inf / 10
    got = [float(v) for v in column(header, rows, "refined_mean_field")]
    np.testing.assert_allclose(got, refined, atol=1e-12)
    for name in ("simulation", "refined_mean_field", "mean_field"):
        total = sum(float(v) for v in column(header, rows, name))
        assert total == pytest.approx(1.0, abs=1e-6)


# ---------------------------------------------------------------------------
# response-time
# ---------------------------------------------------------------------------

def test_response_time_paper_defaults_run_clean(tmp_path):
    # the mean-field trajectory keeps m_e well away from zero, so the strict
    # denominator guard must never fire
    assert main(["response-time", "--n", "15", "--tmax", "120", "--runs", "300",
                 "--seed", "8", "--out", str(tmp_path)]) == 0
    header, rows = read_csv(tmp_path / "response_time_wsn_N15.csv")
    assert header == ["t", "h_mean_field", "h_simulation", "h_refined_functional",
                      "h_of_refined_mean", "h_of_simulation_mean"]
    assert len(rows) == 121
    ET.parse(tmp_path / "response_time_wsn_N15.svg")


def test_response_time_large_population_curves_collapse(tmp_path):
    # N=1500: every approximation agrees with simulation to well under 5%
    assert main(["response-time", "--n", "1500", "--tmax", "400",
                 "--runs", "1000", "--seed", "6", "--out", str(tmp_path),
                 "--format", "csv"]) == 0
    header, rows = read_csv(tmp_path / "response_time_wsn_N1500.csv")
    last = rows[-1]
    assert last[header.index("t")] == "400"
    values = [float(last[header.index(c)]) for c in header[1:]]
    assert (max(values) - min(values)) / np.mean(values) < 0.05


def test_response_time_unknown_functional(tmp_path):
    assert main(["response-time", "--functional", "nope",
                 "--out", str(tmp_path)]) == 1


# ---------------------------------------------------------------------------
# sqrt-fit
# ---------------------------------------------------------------------------

def test_sqrt_fit_stable_case_has_vanishing_constant(tmp_path, capsys):
    # alpha = 0.6 converges at rate 1/N, so the sqrt(N)-scaled constant must
    # be statistically indistinguishable from zero
    assert main(["sqrt-fit", "--model", "two_state", "--params", "alpha=0.6",
                 "--out", str(tmp_path), "--format", "csv"]) == 0
    header, rows = read_csv(tmp_path / "sqrt_fit_two_state.csv")
    a = float(rows[0][header.index("fit_a")])
    assert abs(a) < 0.005
    assert "fit" in capsys.readouterr().out


def test_sqrt_fit_single_point_grid_is_underdetermined(tmp_path):
    assert main(["sqrt-fit", "--n", "50", "--out", str(tmp_path)]) == 1


# ---------------------------------------------------------------------------
# config handling, errors, cleanup
# ---------------------------------------------------------------------------

def test_config_file_equals_flags(tmp_path):
    config = tmp_path / "exp.cfg"
    config.write_text(
        "# transient experiment\n"
        "model = two_state\n"
        "params = alpha=0.6\n"
        "n = 10\n"
        "tmax = 8\n"
        "runs = 40\n"
        "seed = 21\n"
        "format = csv\n")
    assert main(["transient", "--config", str(config),
                 "--out", str(tmp_path / "a")]) == 0
    assert main(["transient", "--model", "two_state", "--params", "alpha=0.6",
                 "--n", "10", "--tmax", "8", "--runs", "40", "--seed", "21",
                 "--format", "csv", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "transient_two_state_N10.csv").read_bytes() == \
        (tmp_path / "b" / "transient_two_state_N10.csv").read_bytes()


def test_config_file_flag_override(tmp_path):
    config = tmp_path / "exp.cfg"
    config.write_text("model = two_state\nn = 10\ntmax = 4\nruns = 30\n"
                      "format = csv\n")
    assert main(["transient", "--config", str(config), "--tmax", "6",
                 "--out", str(tmp_path)]) == 0
    header, rows = read_csv(tmp_path / "transient_two_state_N10.csv")
    assert max(int(r[header.index("t")]) for r in rows) == 6


def test_init_counts_fix_population_size(tmp_path):
    assert main(["transient", "--model", "two_state", "--init", "7,3",
                 "--tmax", "4", "--runs", "30", "--out", str(tmp_path),
                 "--format", "csv"]) == 0
    assert (tmp_path / "transient_two_state_N10.csv").exists()
    assert main(["transient", "--model", "two_state", "--init", "7,3",
                 "--n", "12", "--tmax", "4", "--runs", "30",
                 "--out", str(tmp_path)]) == 1


def test_usage_errors_exit_one(tmp_path):
    assert main(["transient", "--model", "nope", "--out", str(tmp_path)]) == 1
    assert main(["transient", "--model", "seir", "--params", "bogus=1",
                 "--out", str(tmp_path)]) == 1
    assert main(["transient", "--model", "seir", "--format", "pdf",
                 "--out", str(tmp_path)]) == 1
    config = tmp_path / "bad.cfg"
    config.write_text("mystery = 1\n")
    assert main(["transient", "--config", str(config),
                 "--out", str(tmp_path)]) == 1


def test_invalid_parameter_value_exits_two(tmp_path):
    assert main(["transient", "--model", "seir", "--params", "alpha_e=0.9",
                 "--params", "alpha_i=0.9", "--n", "10", "--tmax", "2",
                 "--runs", "10", "--out", str(tmp_path)]) == 2


def test_partial_files_removed_on_numeric_error(tmp_path):
    # kernel only valid on occupancies with denominator 4: N=4 succeeds,
    # N=5 raises mid-command, and the N=4 outputs must be cleaned up
    def quartered_kernel():
        def kfunc(m):
            m = np.asarray(m, dtype=float)
            if m.ndim == 1 and np.max(np.abs(m * 4 - np.round(m * 4))) > 1e-9:
                raise KernelError("occupancy not on the quarter grid")
            eye = np.eye(2)
            if m.ndim == 1:
                return eye
            return np.broadcast_to(eye, m.shape[:-1] + (2, 2))
        return popmf.PopulationModel(popmf.TransitionKernel(2, kfunc), ("u", "v"))

    register_builtin(BuiltinModel("quartered", None, quartered_kernel,
                                  (0.5, 0.5), {}))
    try:
        code = main(["transient", "--model", "quartered", "--n", "4", "--n", "5",
                     "--tmax", "3", "--runs", "10", "--out", str(tmp_path),
                     "--format", "csv"])
    finally:
        del BUILTINS["quartered"]
    assert code == 2
    assert list(tmp_path.glob("*.csv")) == []


def test_outdir_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("POPMF_OUTDIR", str(tmp_path / "envout"))
    assert main(["transient", "--model", "two_state", "--n", "10", "--tmax", "3",
                 "--runs", "20", "--format", "csv"]) == 0
    assert (tmp_path / "envout" / "transient_two_state_N10.csv").exists()
