import json
from pathlib import Path

import pytest

from mfglab.cli import main
from mfglab.reports import ResultTable, RunReport, emit_report

SMALL_GRID = "grid: {nx: [17], nt: 17}\n"


def run_cli(args):
    return main(args)


def test_verify_weights_smoke(tmp_path):
    cfg = tmp_path / "w.yaml"
    cfg.write_text("experiment: verify-weights\n" + SMALL_GRID, encoding="utf-8")
    out = tmp_path / "out"
    assert run_cli(["verify-weights", "--config", str(cfg), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["experiment"] == "verify-weights"
    assert report["summary"]["all_passed"] is True
    assert (out / "weights.csv").exists() and (out / "weights.dat").exists()
    # config echo carries filled-in defaults
    assert report["config"]["weights"]["lambdas"] == [1.0, 2.0]


def test_byte_identical_reruns(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(
        "experiment: verify-carleman\n" + SMALL_GRID +
        "ensemble: {seed: 3, n: 2}\n"
        "weights: {lambdas: [1.0], s_values: [8.0]}\n"
        "estimates: {refine: false}\n",
        encoding="utf-8",
    )
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert run_cli(["verify-carleman", "--config", str(cfg), "--out", str(out1)]) == 0
    assert run_cli(["verify-carleman", "--config", str(cfg), "--out", str(out2)]) == 0
    for name in ("carleman.csv", "carleman.dat", "constants.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    h1 = json.loads((out1 / "report.json").read_text())["output_hash"]
    h2 = json.loads((out2 / "report.json").read_text())["output_hash"]
    assert h1 == h2


def test_csv_headers_pinned(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(
        "experiment: verify-carleman\n" + SMALL_GRID +
        "ensemble: {seed: 3, n: 1}\n"
        "weights: {lambdas: [1.0], s_values: [8.0]}\n"
        "estimates: {refine: false}\n",
        encoding="utf-8",
    )
    out = tmp_path / "out"
    assert run_cli(["verify-carleman", "--config", str(cfg), "--out", str(out)]) == 0
    head = (out / "carleman.csv").read_text().splitlines()[0]
    assert head == "kind,lambda,s,member,lhs,rhs,ratio"

    cfg2 = tmp_path / "sd.yaml"
    cfg2.write_text(
        "experiment: state-det\n" + SMALL_GRID +
        "ensemble: {seed: 3, n: 1}\nstatedet: {refine: false}\n",
        encoding="utf-8",
    )
    out2 = tmp_path / "out2"
    assert run_cli(["state-det", "--config", str(cfg2), "--out", str(out2)]) == 0
    head2 = (out2 / "ceps.csv").read_text().splitlines()[0]
    assert head2 == "epsilon,member,lhs,rhs,ratio"


def test_sweep_outputs(tmp_path):
    cfg = tmp_path / "s.yaml"
    cfg.write_text(
        "experiment: stability-sweep\n"
        "grid: {nx: [17], nt: 17, gamma: [x-, x+]}\n"
        "ensemble: {seed: 3, n: 1, max_modes: 2, t_degree: 2}\n"
        "sources: {q_min: 0.02}\n"
        "inverse: {deltas: [1.0e-3, 1.0e-2, 3.0e-2, 1.0e-1], seeds: [0, 1, 2],"
        " maxiter: 20, omega_bc: 1000.0, omega_slice: 1000.0, omega_gamma: 1.0,"
        " omega_pde: 10.0}\n",
        encoding="utf-8",
    )
    out = tmp_path / "out"
    assert run_cli(["stability-sweep", "--config", str(cfg), "--out", str(out)]) == 0
    head = (out / "sweep.csv").read_text().splitlines()[0]
    assert head == "delta,seed,err_f,err_g,err_total,beta,converged"
    slope = json.loads((out / "slope.json").read_text())
    assert set(slope) == {"slope", "intercept", "r2", "seeds"}


def test_even_nt_config_fails_with_code_2(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("experiment: verify-weights\ngrid: {nt: 16}\n",
                   encoding="utf-8")
    assert run_cli(["verify-weights", "--config", str(cfg)]) == 2
    assert "nt" in capsys.readouterr().err


def test_unknown_keys_fail(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("experiment: verify-weights\nnot_a_key: 1\n",
                   encoding="utf-8")
    assert run_cli(["verify-weights", "--config", str(cfg)]) == 2


def test_seed_override_changes_outputs(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(
        "experiment: state-det\n" + SMALL_GRID +
        "ensemble: {seed: 3, n: 1}\nstatedet: {refine: false}\n",
        encoding="utf-8",
    )
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_cli(["state-det", "--config", str(cfg), "--out", str(out1)]) == 0
    assert run_cli(["state-det", "--config", str(cfg), "--out", str(out2),
                    "--seed", "4"]) == 0
    assert (out1 / "ceps.csv").read_bytes() != (out2 / "ceps.csv").read_bytes()


def test_emit_report_refuses_empty():
    with pytest.raises(ValueError, match="tables"):
        emit_report(RunReport("x", {}, []), "/tmp/whatever")


def test_emit_report_unwritable_dir(tmp_path):
    table = ResultTable("t", ("a",), ((1.0,),))
    report = RunReport("x", {}, [table])
    target = tmp_path / "file_not_dir"
    target.write_text("occupied", encoding="utf-8")
    with pytest.raises(OSError):
        emit_report(report, str(target))


def test_float_formatting_round_trip():
    from mfglab.reports import fmt_value

    assert fmt_value(0.1) == "0.1"
    assert fmt_value(True) == "true"
    assert float(fmt_value(1 / 3)) == 1 / 3
    assert fmt_value(1e-07) == "1e-07"
