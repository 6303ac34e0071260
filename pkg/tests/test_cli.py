import re
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from stokes_pod import io, pod
from stokes_pod.cli import main

GOLDEN = Path(__file__).parent / "golden" / "report_n4.txt"
NUMBER = re.compile(r"[-+]?\d+\.\d+(?:e[-+]\d+)?|[-+]?\d+e[-+]\d+")


def write_cfg(path, text):
    path.write_text(text)
    return str(path)


def run_all(cfg, out, threads=1):
    codes = [main([cmd, "--config", cfg, "--output", str(out), "--quiet"]
                  + (["--threads", str(threads)] if cmd == "fom" else []))
             for cmd in ("fom", "pod", "rom", "report")]
    return codes


@pytest.fixture(scope="module")
def n4_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("n4")
    cfg = write_cfg(base / "run.cfg", "mesh_sizes = 4\nsnapshot_mesh = 4\ntiming = false\n")
    out = base / "out"
    assert run_all(cfg, out) == [0, 0, 0, 0]
    return cfg, out


def same_report(text, golden, rtol=1e-3):
    a, b = text.splitlines(), golden.splitlines()
    assert len(a) == len(b)
    for la, lb in zip(a, b):
        assert NUMBER.sub("#", la) == NUMBER.sub("#", lb), (la, lb)
        na = [float(x) for x in NUMBER.findall(la)]
        nb = [float(x) for x in NUMBER.findall(lb)]
        assert np.allclose(na, nb, rtol=rtol, atol=0), (la, lb)


def test_golden_report(n4_run):
    _, out = n4_run
    text = (out / "report.txt").read_text()
    # locate any drift in the numbers first, then require identical bytes
    same_report(text, GOLDEN.read_text())
    assert (out / "report.txt").read_bytes() == GOLDEN.read_bytes()
    for block in ("Velocity convergence", "Pressure convergence", "Reduced vs full model"):
        assert block in text


def test_output_tree(n4_run):
    _, out = n4_run
    for rel in ("fom/N4/errors.csv", "fom/N4/checkpoints.csv", "fom/N4/summary.csv",
                "fom/N4/trajectory_velocity.sppd", "fom/N4/trajectory_pressure.sppd",
                "fom/rates.csv", "pod/basis_velocity.sppd", "pod/basis_pressure.sppd",
                "pod/eigenvalues_velocity.csv", "pod/identity.csv", "pod/summary.csv",
                "rom/r4/errors.csv", "rom/r16/errors.csv", "rom/comparison.csv",
                "rom/trend.csv", "spectrum.csv", "relative_errors.csv"):
        assert (out / rel).exists(), rel
    header, rows = io.read_csv(out / "fom/N4/errors.csv")
    assert header[:7] == ["n", "t", "eu_tilde_l2", "eu_l2", "ep_l2", "ep_h1semi", "eu_h1semi"]
    assert len(rows) == 161
    header, _ = io.read_csv(out / "rom/r4/errors.csv")
    assert header == ["n", "t", "eu_exact_l2", "ep_exact_l2", "eu_rel_fom", "ep_rel_fom"]
    header, rows = io.read_csv(out / "pod/eigenvalues_pressure.csv")
    assert header == ["i", "lambda", "cumulative_energy_fraction"]
    assert float(rows[-1][2]) == 1.0
    # no wall-clock values when timing is off
    _, rows = io.read_csv(out / "fom/N4/checkpoints.csv")
    assert all(r[5] == "" for r in rows)


def test_report_is_deterministic(n4_run, tmp_path):
    cfg, out = n4_run
    again = tmp_path / "again"
    assert run_all(cfg, again) == [0, 0, 0, 0]
    for rel in ("report.txt", "fom/N4/errors.csv", "rom/trend.csv", "pod/basis_velocity.sppd",
                "relative_errors.csv"):
        assert (out / rel).read_bytes() == (again / rel).read_bytes(), rel


def test_threads_give_identical_results(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", "mesh_sizes = 4, 8\ntiming = false\n")
    assert main(["fom", "--config", cfg, "--output", str(tmp_path / "a"), "--quiet"]) == 0
    assert main(["fom", "--config", cfg, "--output", str(tmp_path / "b"), "--quiet",
                 "--threads", "2"]) == 0
    for rel in ("fom/N4/errors.csv", "fom/N8/errors.csv", "fom/rates.csv",
                "fom/N8/trajectory_pressure.sppd"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    header, rows = io.read_csv(tmp_path / "a" / "fom/rates.csv")
    assert header == ["norm", "1/h", "error", "rate"]
    assert rows[0][3] == "" and 1.6 < float(rows[1][3]) < 1.8


def test_partial_report(n4_run, tmp_path, capsys):
    _, out = n4_run
    import shutil
    cfg = write_cfg(tmp_path / "c.cfg", "mesh_sizes = 4, 8\nsnapshot_mesh = 4\n")
    part = tmp_path / "o"
    shutil.copytree(out / "fom", part / "fom")
    assert main(["report", "--config", cfg, "--output", str(part)]) == 0
    text = (part / "report.txt").read_text()
    assert "missing: fom/N8/summary.csv" in text and "missing: fom/N4" not in text
    assert "missing: pod/summary.csv" in text and "missing: rom/comparison.csv" in text
    assert "report written" in capsys.readouterr().out


def test_report_without_inputs_exit_3(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", "mesh_sizes = 4\n")
    assert main(["report", "--config", cfg, "--output", str(tmp_path / "none")]) == 3


def test_config_errors_exit_2(tmp_path, capsys):
    bad = write_cfg(tmp_path / "bad.cfg", "mesh_size = 4\n")
    assert main(["fom", "--config", bad, "--output", str(tmp_path)]) == 2
    assert "configuration error" in capsys.readouterr().err
    assert main(["fom", "--config", str(tmp_path / "nope.cfg")]) == 2
    ok = write_cfg(tmp_path / "ok.cfg", "mesh_sizes = 4\n")
    assert main(["fom", "--config", ok, "--threads", "0", "--output", str(tmp_path)]) == 2
    empty = write_cfg(tmp_path / "empty.cfg", "mesh_sizes =\n")
    assert main(["fom", "--config", empty, "--output", str(tmp_path)]) == 2
    tiny = write_cfg(tmp_path / "tiny.cfg", "mesh_sizes = 1\n")
    assert main(["fom", "--config", tiny, "--output", str(tmp_path)]) == 2


def test_missing_inputs_exit_3(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.cfg", "mesh_sizes = 4\nsnapshot_mesh = 4\n")
    assert main(["pod", "--config", cfg, "--output", str(tmp_path / "empty")]) == 3
    assert "missing input" in capsys.readouterr().err
    assert main(["rom", "--config", cfg, "--output", str(tmp_path / "empty")]) == 3


def test_corrupt_input_exit_3(n4_run, tmp_path):
    cfg, out = n4_run
    import shutil
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    p = copy / "fom/N4/trajectory_velocity.sppd"
    p.write_bytes(p.read_bytes()[:-7])
    assert main(["pod", "--config", cfg, "--output", str(copy), "--quiet"]) == 3


def test_numerical_failure_exit_4(n4_run, tmp_path, capsys):
    cfg, out = n4_run
    import shutil
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    # a constant pressure mode makes the reduced pressure stiffness singular
    from stokes_pod.fem import discretize
    Mp = discretize(4).ops.M_p
    const = np.ones(Mp.shape[0]) / np.sqrt(Mp.sum())
    bad = pod.PodBasis("pressure", const[:, None], np.ones(1), np.ones(1), np.ones((1, 1)),
                       0.0, 0.0)
    io.write_basis(copy / "pod/basis_pressure.sppd", bad, 4, 0.1 / 16, (6, 20))
    assert main(["rom", "--config", cfg, "--output", str(copy), "--quiet"]) == 4
    assert "numerical failure" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "stokes_pod", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "report" in res.stdout
    res = subprocess.run([sys.executable, "-m", "stokes_pod", "frobnicate"],
                         capture_output=True, text=True)
    assert res.returncode == 2
