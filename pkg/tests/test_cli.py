import json
import subprocess
import sys
import time

import numpy as np
import pytest

from vpinn2d.checks import run_checks
from vpinn2d.cli import main
from vpinn2d.config import load_config, parse_config_text
from vpinn2d.errors import CheckFailedError, ConfigError
from vpinn2d.network import load_checkpoint
from vpinn2d.reporting import read_csv, read_ppm
from vpinn2d.runner import run


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    return json.loads(err.strip().splitlines()[-1])


def test_smoke_subprocess(configs, tmp_path):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "vpinn2d", "solve", "--config", configs / "smoke.yaml",
                           "--out", tmp_path], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert time.perf_counter() - t0 < 10
    summary = json.loads(proc.stdout)
    assert summary["steps_run"] == 1 and {"mae", "rel_l2", "max_err"} <= summary.keys()
    names = {p.name for p in tmp_path.iterdir()}
    assert {"report.json", "loss_history.csv", "solution_grid.csv", "effective_config.yaml",
            "u_pred.ppm", "abs_err.ppm", "network.ckpt"} <= names


def test_report_contents(configs, tmp_path, capsys):
    code, _, _ = run_cli(capsys, "solve", "--config", configs / "smoke.yaml", "--out", tmp_path, "--seed", 3)
    assert code == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["config"]["training"]["seed"] == 3 and doc["command"] == "solve"
    assert doc["network"]["n_params"] == 2 * 10 + 10 + 10 * 10 + 10 + 10 + 1
    assert load_config(tmp_path / "effective_config.yaml").model_dump(mode="json") == doc["config"]
    header, rows = read_csv(tmp_path / "solution_grid.csv")
    assert header == ["x", "y", "u_pred", "u_exact", "abs_err"] and len(rows) == 400
    assert read_ppm(tmp_path / "u_pred.ppm").shape == (20, 20, 3)
    net = load_checkpoint(tmp_path / "network.ckpt")
    u = net.evaluate(np.array([[float(rows[7][0]), float(rows[7][1])]]), 0).u[0]
    assert u == float(rows[7][2])


def test_misspelled_key_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("problem:\n  forcing: {name: sin_forcing}\ndiscretization:\n  n_qaud: 10\n")
    code, _, err = run_cli(capsys, "solve", "--config", bad, "--out", tmp_path / "o")
    assert code == 2
    assert error_of(err) == {"error": "config", "message": f"{bad}:4: unknown key 'discretization.n_qaud'"}


def test_inverse_without_sensors(configs, tmp_path, capsys):
    text = (configs / "inverse_constant.yaml").read_text()
    cfg_path = tmp_path / "c.yaml"
    cfg_path.write_text("\n".join(l for l in text.splitlines() if "sensors" not in l) + "\n")
    code, _, err = run_cli(capsys, "inverse", "--config", cfg_path, "--out", tmp_path / "o")
    assert code == 2 and "sensors" in error_of(err)["message"]


def test_solve_rejects_inverse_section(configs, tmp_path):
    with pytest.raises(ConfigError, match="inverse command"):
        run(load_config(configs / "inverse_constant.yaml"), tmp_path)


def test_numeric_blowup_exit_code(configs, tmp_path, capsys):
    cfg_path = tmp_path / "c.yaml"
    cfg_path.write_text((configs / "smoke.yaml").read_text().replace(
        "training: {iterations: 1}", "training: {iterations: 5, learning_rate: 1.0e+300}"))
    code, _, err = run_cli(capsys, "solve", "--config", cfg_path, "--out", tmp_path / "o")
    assert code == 4 and error_of(err)["error"] == "numeric"


def test_unwritable_output_exit_code(configs, tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, err = run_cli(capsys, "solve", "--config", configs / "smoke.yaml", "--out", blocker / "sub")
    assert code == 5 and error_of(err)["error"] == "io"


def test_missing_mesh_file(tmp_path, capsys):
    cfg_path = tmp_path / "c.yaml"
    cfg_path.write_text("problem:\n  forcing: {name: gear_forcing}\n  domain: {kind: gmsh, path: nowhere.msh}\n")
    code, _, err = run_cli(capsys, "solve", "--config", cfg_path, "--out", tmp_path / "o")
    assert code == 2 and "nowhere.msh" in error_of(err)["message"]


def test_mesh_info(tmp_path, capsys, fixtures):
    code, out, _ = run_cli(capsys, "mesh-info", "--mesh", "bundled:gear.msh", "--out", tmp_path)
    info = json.loads(out)
    assert code == 0 and info["n_elem"] == 480 and info["ok"] and not info["axis_aligned"]
    assert (tmp_path / "nodes.csv").exists() and (tmp_path / "elements.csv").exists()
    code, out, _ = run_cli(capsys, "mesh-info", "--mesh", fixtures / "skewed_v41.msh")
    assert code == 0 and json.loads(out)["n_elem"] == 3


def test_mesh_info_bad_meshes(tmp_path, capsys):
    tri = tmp_path / "tri.msh"
    tri.write_text("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n3\n1 0 0 0\n2 1 0 0\n3 0 1 0\n$EndNodes\n"
                   "$Elements\n1\n1 2 2 1 1 1 2 3\n$EndElements\n")
    code, _, err = run_cli(capsys, "mesh-info", "--mesh", tri)
    assert code == 3 and error_of(err)["error"] == "mesh"
    flipped = tmp_path / "flip.msh"
    # non-convex quad (bow tie): reordering cannot fix it, determinant changes sign
    flipped.write_text("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n4\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 1 1 0\n"
                       "$EndNodes\n$Elements\n1\n1 3 2 1 1 1 2 3 4\n$EndElements\n")
    code, out, _ = run_cli(capsys, "mesh-info", "--mesh", flipped)
    assert code == 3 and json.loads(out)["degenerate"] == [0]
    code, _, _ = run_cli(capsys, "mesh-info")
    assert code == 2


def test_check_command(configs, capsys):
    code, out, _ = run_cli(capsys, "check", "--config", configs / "skewed_check.yaml")
    assert code == 0 and "skipped (inadmissible)" in out and "all checks passed" in out


def test_check_detects_corruption(configs):
    lines = []
    with pytest.raises(CheckFailedError):
        run_checks(load_config(configs / "smoke.yaml"), corrupt_tensor=True, log=lines.append)
    assert any(l.startswith("FAIL") and "tensor vs loop" in l for l in lines)


def test_spatial_smoke_writes_eps(configs, tmp_path):
    cfg = load_config(configs / "inverse_spatial_smoke.yaml").model_dump()
    cfg["training"]["iterations"] = 3
    cfg["metrics"]["grid"] = 10
    from vpinn2d.config import RunConfig

    rep = run(RunConfig.model_validate(cfg), tmp_path, inverse=True)
    header, _ = read_csv(tmp_path / "solution_grid.csv")
    assert header[-1] == "eps_pred" and (tmp_path / "eps_pred.ppm").exists()
    assert "eps" in rep.metrics and rep.history["epsilon"][0] is not None


def test_gear_end_to_end(configs, tmp_path):
    cfg = load_config(configs / "gear_cd2d.yaml").model_dump()
    cfg["training"]["iterations"] = 3
    from vpinn2d.config import RunConfig

    run(RunConfig.model_validate(cfg), tmp_path)
    header, rows = read_csv(tmp_path / "solution_nodes.csv")
    assert header == ["x", "y", "u_pred"] and len(rows) == 576
    assert not (tmp_path / "u_pred.ppm").exists()


def test_benchmark_command(tmp_path, capsys):
    spec = tmp_path / "b.yaml"
    spec.write_text("kernels: [loop, matrix, tensor]\nmesh: skewed\nlayers: [2, 5, 1]\nrepetitions: 10\nwarmup: 1\n"
                    "sweeps:\n  - {kind: grid, n_elem: [4], n_test: [2], n_quad: [3]}\n")
    code, out, _ = run_cli(capsys, "benchmark", "--config", spec, "--out", tmp_path / "o", "--precision", "single")
    assert code == 0
    header, rows = read_csv(tmp_path / "o" / "benchmark.csv")
    assert header == "kernel,n_elem,n_test,n_quad,median_s,p10_s,p90_s,threads,precision".split(",")
    matrix = [r for r in rows if r[0] == "matrix"][0]
    assert matrix[4] == "unsupported" and matrix[8] == "single"
    doc = json.loads((tmp_path / "o" / "benchmark.json").read_text())
    assert doc["hardware"]["threads"] == 1 and len(doc["samples"]["tensor/4/2/9"]) == 10


def test_empty_benchmark_sweep(tmp_path, capsys):
    spec = tmp_path / "b.yaml"
    spec.write_text("kernels: [tensor]\nsweeps: []\n")
    code, _, err = run_cli(capsys, "benchmark", "--config", spec, "--out", tmp_path / "o")
    assert code == 2 and "empty" in error_of(err)["message"]


def test_parse_config_errors_have_no_traceback(tmp_path, capsys):
    code, _, err = run_cli(capsys, "check", "--config", tmp_path / "none.yaml")
    assert code == 2 and "Traceback" not in err
