import textwrap

import numpy as np
import pytest

from netform.cli import EXIT_BLOWUP, EXIT_CONFIG, EXIT_OK, TRAJECTORY_DIR, main
from netform.snapshots import read_trajectory

BASE = """
[grid]
dim = 1
n = 33

[params]
source = gaussian(center=0.5, width=0.1, amplitude=1.0)
m0 = bump_vector(center=0.5, width=0.3, amplitude=0.2)

[stepping]
dt = 0.01
t_end = 0.1
"""


@pytest.fixture
def write_config(tmp_path):
    def write(text, name="exp.cfg"):
        path = tmp_path / name
        path.write_text(textwrap.dedent(text))
        return str(path)

    return write


def _lines(path):
    return path.read_text().splitlines()


def test_zero_data_run(tmp_path, write_config):
    cfg = write_config("[grid]\ndim = 1\nn = 17\n[stepping]\ndt = 0.01\nt_end = 0.1\n")
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == EXIT_OK
    traj = read_trajectory(out / TRAJECTORY_DIR)
    assert len(traj) == 11
    assert not np.any(traj.final.m.array())
    assert (out / "energy.csv").exists()


def test_runs_are_deterministic(tmp_path, write_config):
    cfg = write_config(BASE)
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(first)]) == EXIT_OK
    assert main(["run", "--config", cfg, "--out", str(second)]) == EXIT_OK
    files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (first / rel).read_bytes() == (second / rel).read_bytes(), rel


def test_lemma_check_ynb(capsys):
    assert main(["lemma-check", "ynb", "--c", "1", "--b", "2", "--alpha", "1", "--y0", "0.5", "--n-max", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "threshold 0.5"
    assert lines[1:3] == ["0 0.5", "1 0.25"]


def test_lemma_check_small(capsys):
    assert main(["lemma-check", "small", "--b0", "0.1", "--lam", "1", "--alpha", "1", "--k-max", "5"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "applies true"
    assert out[1].startswith("bound 0.12")


def test_lemma_check_plap(capsys):
    assert main(["lemma-check", "plap", "--samples", "2000", "--seed", "3"]) == 0
    assert "violations 0" in capsys.readouterr().out.splitlines()


def test_invalid_recursion_parameters(capsys):
    assert main(["lemma-check", "ynb", "--c", "1", "--b", "0.5", "--alpha", "1", "--y0", "0.1"]) == EXIT_CONFIG
    assert "invalid input" in capsys.readouterr().err


def test_malformed_config(tmp_path, write_config, capsys):
    cfg = write_config("[grid]\ndim = 1\nn = 17\ngarbage line\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "out")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_gamma_out_of_range(tmp_path, write_config, capsys):
    cfg = write_config("[grid]\ndim = 1\nn = 17\n[params]\ngamma = 0.4\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "out")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "config error" in err and "params.gamma" in err


def test_blow_up_exit_code(tmp_path, write_config):
    cfg = write_config(BASE + "blowup_threshold = 0.001\n")
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == EXIT_BLOWUP
    assert _lines(out / TRAJECTORY_DIR / "status.csv")[1].startswith("blew_up")


def test_diagnose_stored_trajectory(tmp_path, write_config):
    cfg = write_config(BASE + "[diagnostics]\nprobes = [(0.5, 0.05)]\n")
    run_out, diag_out = tmp_path / "run", tmp_path / "diag"
    assert main(["run", "--config", cfg, "--out", str(run_out)]) == EXIT_OK
    code = main(["diagnose", "--config", cfg, "--traj", str(run_out / TRAJECTORY_DIR), "--out", str(diag_out)])
    assert code == EXIT_OK
    assert len(_lines(diag_out / "regularity.csv")) == 2
    assert len(_lines(diag_out / "excess.csv")) == 1 + 4
    assert len(_lines(diag_out / "levels.csv")) == 1 + 31
    assert not (diag_out / TRAJECTORY_DIR).exists()


def test_diagnose_solves_when_no_trajectory_given(tmp_path, write_config):
    cfg = write_config(BASE)
    out = tmp_path / "out"
    assert main(["diagnose", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert (out / TRAJECTORY_DIR / "status.csv").exists()
    assert len(_lines(out / "regularity.csv")) == 2


def test_diagnose_grid_mismatch(tmp_path, write_config):
    cfg = write_config(BASE)
    run_out = tmp_path / "run"
    assert main(["run", "--config", cfg, "--out", str(run_out)]) == EXIT_OK
    other = write_config(BASE.replace("n = 33", "n = 17"), name="other.cfg")
    code = main(["diagnose", "--config", other, "--traj", str(run_out / TRAJECTORY_DIR), "--out", str(tmp_path / "d")])
    assert code == EXIT_CONFIG


def test_sweep(tmp_path, write_config):
    cfg = write_config(BASE + "[experiment]\nmode = sweep\nscales = [1.0, 0.5, 0.0]\n")
    out = tmp_path / "out"
    assert main(["sweep", "--config", cfg, "--out", str(out), "--workers", "1"]) == EXIT_OK
    rows = _lines(out / "sweep.csv")
    assert len(rows) == 4
    assert [r.split(",")[0] for r in rows[1:]] == ["1", "0.5", "0"]


def test_picard(tmp_path, write_config):
    cfg = write_config(BASE + "[experiment]\nk_max = 3\npicard_tol = 0\n")
    out = tmp_path / "out"
    assert main(["picard", "--config", cfg, "--out", str(out)]) == EXIT_OK
    rows = _lines(out / "picard_trace.csv")
    assert rows[0] == "k,a_k,b_k,d_k,eta_k,ratio"
    assert len(rows) == 1 + 4


def test_run_dispatches_on_mode(tmp_path, write_config):
    cfg = write_config(BASE + "[experiment]\nmode = picard\nk_max = 2\n")
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert len(_lines(out / "picard_trace.csv")) > 1
