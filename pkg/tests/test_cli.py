import csv
import subprocess
import sys

import numpy as np
import pytest

from pbir.cli import main
from pbir.io import read_image
from pbir.simulate import EllipsePhantom, rasterize
from pbir.geometry import ImageGrid

TINY = """\
output_dir: {out}
geometry: {{nx: 32, ny: 32, dx: 12.0, dy: 12.0, n_views: 45}}
solver: {{algorithm: sqs, n_iters: 20, n_subsets: 3}}
path: {{engine: dog, beta1: 0.001, beta2: 0.004, n_frames: 6, n_subsets_ps: 1, n_subsets_opt: 1}}
metrics: {{n_references: 3}}
nps: {{n_seeds: 3, n_levels: 2}}
export: {{pgm: true}}
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(TINY.format(out=tmp_path / "out"))
    return p


def run(cfg, *args):
    return main([args[0], "--config", str(cfg), *args[1:]])


def pipeline(cfg):
    for c in ("phantom", "simulate", "recon", "path", "metrics", "nps"):
        assert run(cfg, c) == 0, c


def test_full_pipeline(cfg, tmp_path):
    pipeline(cfg)
    out = tmp_path / "out"
    img, hdr = read_image(out / "phantom.pbir")
    assert hdr.unit == "HU" and hdr.meta["command"] == "phantom" and img.shape == (32, 32)
    sino, sh = read_image(out / "sinogram.pbir")
    assert sino.shape == (3, 45, 48) and sh.meta["planes"] == ["counts", "l", "w"]
    rows = list(csv.DictReader(open(out / "path_dog" / "manifest.csv")))
    assert len(rows) == len(list((out / "path_dog").glob("frame_*.pbir")))
    closest = list(csv.DictReader(open(out / "metrics_dog" / "closest.csv")))
    assert len(closest) == 3 and float(closest[0]["rmsd_hu"]) < 1e-3
    summary = list(csv.DictReader(open(out / "nps" / "summary.csv")))
    assert len(summary) == 2 and int(summary[0]["n_realizations"]) == 3
    assert (out / "phantom.pgm").read_bytes().startswith(b"P5")


def test_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        d.mkdir()
        (d / "c.yaml").write_text(TINY.format(out=d / "out"))
        pipeline(d / "c.yaml")
    files_a = sorted(p.relative_to(a / "out") for p in (a / "out").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b / "out") for p in (b / "out").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) > 20
    for f in files_a:
        assert (a / "out" / f).read_bytes() == (b / "out" / f).read_bytes(), f


def test_no_overwrite_without_force(cfg, tmp_path, capsys):
    assert run(cfg, "phantom") == 0
    before = (tmp_path / "out" / "phantom.pbir").read_bytes()
    assert run(cfg, "phantom", "--override", "phantom.radius=100") == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "exists" in err[0]
    assert (tmp_path / "out" / "phantom.pbir").read_bytes() == before
    assert run(cfg, "phantom", "--override", "phantom.radius=100", "--force") == 0
    assert (tmp_path / "out" / "phantom.pbir").read_bytes() != before


def test_path_force_replaces_frames(cfg, tmp_path):
    assert run(cfg, "path") == 0
    assert run(cfg, "path", "--override", "path.n_frames=3", "--force") == 0
    d = tmp_path / "out" / "path_dog"
    rows = list(csv.DictReader(open(d / "manifest.csv")))
    assert len(rows) == 3 == len(list(d.glob("frame_*.pbir")))


def test_rog_degenerate_range(cfg, tmp_path):
    assert run(cfg, "path", "--override", "path.engine=rog", "--override", "path.beta2=0.001") == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "path_rog" / "manifest.csv")))
    assert len(rows) == 1


def test_metrics_strict_hash(cfg, tmp_path, capsys):
    assert run(cfg, "path") == 0
    assert run(cfg, "metrics", "--override", "penalty.delta=4.0") == 1
    assert "config hash" in capsys.readouterr().err
    assert run(cfg, "metrics", "--override", "penalty.delta=4.0", "--override", "metrics.strict=false") == 0


def test_metrics_needs_manifest(cfg, capsys):
    assert run(cfg, "metrics") == 1
    assert "run 'pbir path' first" in capsys.readouterr().err


def test_recon_variants(cfg, tmp_path):
    assert run(cfg, "recon", "--override", "solver.algorithm=fbp") == 0
    assert run(cfg, "recon", "--override", "solver.algorithm=lbfgs", "--override", "solver.n_iters=10") == 0
    lines = (tmp_path / "out" / "recon_lbfgs_iterations.csv").read_text().splitlines()
    assert lines[0] == "iteration,objective,rmsd_truth_hu" and len(lines) > 2


def test_recon_beta0_noiseless(tmp_path):
    p = tmp_path / "r.yaml"
    p.write_text(f"output_dir: {tmp_path / 'r'}\n"
                 "geometry: {nx: 64, ny: 64, dx: 6.0, dy: 6.0, n_views: 90}\n"
                 "simulation: {noiseless: true}\n"
                 "solver: {algorithm: admm, beta: 0.0, n_iters: 200, n_subsets: 20}\n")
    assert main(["recon", "--config", str(p)]) == 0
    img, hdr = read_image(tmp_path / "r" / "recon_admm.pbir")
    truth = rasterize(EllipsePhantom.water_cylinder(), ImageGrid(64, 64, 6.0, 6.0)).values
    support = truth > -500
    assert np.sqrt(np.mean((img - truth)[support] ** 2)) < 20
    assert hdr.meta["beta"] == 0.0 and hdr.meta["algorithm"] == "admm"


def test_bad_config_one_line(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("solver: {beta: -3}\n")
    assert main(["recon", "--config", str(p)]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("pbir recon: error: solver.beta")


def test_console_script(cfg):
    r = subprocess.run([sys.executable, "-m", "pbir.cli", "phantom", "--config", str(cfg)],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip().endswith("phantom.pbir")
    r = subprocess.run([sys.executable, "-m", "pbir.cli", "unknown", "--config", str(cfg)],
                       capture_output=True, text=True)
    assert r.returncode != 0
