import subprocess
import sys

import numpy as np
import pytest

from fmm import files
from fmm.cli import main, read_config_file


def _run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert _run("simulate", "--out", out, "--n-obs", 100, "--seed", 3) == 0
    return out


def test_simulate_defaults(tmp_path):
    assert _run("simulate", "--out", tmp_path) == 0
    _, header, rows = files.read_rows(tmp_path / "track.csv")
    assert header == ["time", "x", "y"] and len(rows) == 300
    assert (tmp_path / "truth_path.csv").exists() and (tmp_path / "truth_params.csv").exists()


def test_simulate_missing(tmp_path):
    assert _run("simulate", "--out", tmp_path, "--missing", 0.3) == 0
    assert len(files.read_rows(tmp_path / "track.csv")[2]) == 210


def test_bad_flag_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        _run("simulate", "--out", tmp_path, "--bogus")
    assert exc.value.code == 2


def test_console_script_exit_codes(tmp_path):
    ok = subprocess.run([sys.executable, "-m", "fmm.cli", "simulate", "--out", str(tmp_path), "--n-obs", "20"],
                        capture_output=True, text=True)
    assert ok.returncode == 0, ok.stderr
    bad = subprocess.run([sys.executable, "-m", "fmm.cli", "fit", str(tmp_path / "track.csv"), "--out",
                          str(tmp_path), "--kernel", "NOPE"], capture_output=True, text=True)
    assert bad.returncode == 2
    missing = subprocess.run([sys.executable, "-m", "fmm.cli", "fit", str(tmp_path / "absent.csv"), "--out",
                              str(tmp_path), "--kernel", "G"], capture_output=True, text=True)
    assert missing.returncode == 1 and "error" in missing.stderr


def test_warps_small_and_reproducible(tmp_path):
    assert _run("warps", "--out", tmp_path / "a", "--per-combo", 1, "--seed", 5) == 0
    assert _run("warps", "--out", tmp_path / "b", "--per-combo", 1, "--seed", 5) == 0
    warp_files = list((tmp_path / "a").glob("warp_*.csv"))
    assert len(warp_files) <= 101
    assert (tmp_path / "a" / "index.csv").read_bytes() == (tmp_path / "b" / "index.csv").read_bytes()


def test_fit_g_and_bm(tmp_path, sim_dir):
    track = sim_dir / "track.csv"
    assert _run("fit", track, "--out", tmp_path, "--kernel", "G", "--iters", 1500, "--knots", 100) == 0
    g = files.read_fit(tmp_path / "fit_G_identity.csv")
    assert g.n_draws == 1000
    assert _run("fit", track, "--out", tmp_path, "--kernel", "bm", "--iters", 1000, "--knots", 100,
                "--dump-basis", tmp_path / "basis.csv") == 0
    bm = files.read_fit(tmp_path / "fit_BM_identity.csv")
    assert np.all(bm.draws[:, 0] == 0.0)
    meta, _, rows = files.read_rows(tmp_path / "basis.csv")
    assert meta["family"] == "BM" and len(rows) == 100


def test_fit_unknown_warp_id(tmp_path, sim_dir):
    assert _run("fit", sim_dir / "track.csv", "--out", tmp_path, "--kernel", "G", "--warp-id", "w9") == 2


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nn-obs = 40\nseed=2\nmissing=0.5\n")
    assert read_config_file(cfg) == {"n_obs": "40", "seed": "2", "missing": "0.5"}
    assert _run("simulate", "--config", cfg, "--out", tmp_path, "--n-obs", 60) == 0
    assert len(files.read_rows(tmp_path / "track.csv")[2]) == 30
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour=blue\n")
    with pytest.raises(SystemExit) as exc:
        _run("simulate", "--config", bad, "--out", tmp_path)
    assert exc.value.code == 2


@pytest.fixture(scope="module")
def bma_dirs(tmp_path_factory, sim_dir):
    root = tmp_path_factory.mktemp("bma")
    assert _run("warps", "--out", root / "all", "--per-combo", 1, "--seed", 1) == 0
    files.write_warp_set(root / "w3", files.read_warp_set(root / "all")[:3])
    for workers in (1, 2):
        assert _run("bma", sim_dir / "track.csv", "--out", root / f"out{workers}", "--warp-dir", root / "w3",
                    "--iters", 1000, "--knots", 100, "--workers", workers) == 0
    return root


def test_bma_outputs(bma_dirs):
    out = bma_dirs / "out1"
    assert len(list((out / "fits").glob("fit_*.csv"))) == 15
    _, header, rows = files.read_rows(out / "model_probs.csv")
    assert len(rows) == 15
    assert abs(sum(float(r[-1]) for r in rows) - 1.0) <= 1e-9
    _, _, krows = files.read_rows(out / "kernel_probs.csv")
    assert abs(sum(float(r[1]) for r in krows) - 1.0) <= 1e-9
    listed = {line.split()[1] for line in (out / "manifest.txt").read_text().splitlines() if line.startswith("file ")}
    on_disk = {p.relative_to(out).as_posix() for p in out.rglob("*.csv")}
    assert listed == on_disk


def test_bma_is_worker_count_independent(bma_dirs):
    a, b = bma_dirs / "out1", bma_dirs / "out2"
    names = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    assert names == sorted(p.relative_to(b) for p in b.rglob("*.csv"))
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_predict_and_diagnose(tmp_path, bma_dirs, sim_dir):
    track = sim_dir / "track.csv"
    assert _run("predict", track, "--out", tmp_path, "--fits-dir", bma_dirs / "out1", "--warp-dir",
                bma_dirs / "w3", "--knots", 100, "--paths", 30, "--query-points", 11) == 0
    t, draws = files.read_paths(tmp_path / "paths.csv")
    assert draws.shape[0] == 30
    assert _run("diagnose", track, "--out", tmp_path, "--paths-file", tmp_path / "obs_paths.csv") == 0
    meta, header, rows = files.read_rows(tmp_path / "variogram_residuals.csv")
    assert len(rows) == 15 and meta["estimator"] == "matheron"
    assert (tmp_path / "variogram_data.csv").exists()
