import csv
import json
from pathlib import Path

import numpy as np
import pytest

from msct import ConfigurationError, io
from msct.cli import main
from msct.config import from_dict, load_config
from msct.errors import PipelineError
from msct.metrics import ssim
from msct.pipeline import LOCK_NAME, THREADS_ENV, alpha_tag, run_pipeline, select_side_information
from msct.tomo import XRayTransform

PRESETS = Path(__file__).resolve().parents[1] / "presets"


def _cfg(tmp_path, name="run", **sections):
    raw = load_config(PRESETS / "minimal.toml").raw
    raw["output_dir"] = str(tmp_path / name)
    raw.update(sections)
    return from_dict(raw, PRESETS)


def _payload(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.suffix in (".raw", ".pgm")}


def test_smoke_run_writes_declared_files(tmp_path):
    cfg = _cfg(tmp_path)
    manifest = run_pipeline(cfg)
    root = cfg.output_dir
    assert manifest["complete"] and json.loads((root / "MANIFEST.json").read_text())["complete"]
    for rel, digest in manifest["outputs"].items():
        assert io.sha256_file(root / rel) == digest
    for name in ("sinograms/fused.raw", "side_info/v.raw", "side_info/xi_magnitude.raw", "metrics.json"):
        assert (root / name).is_file()
    assert len(manifest["runs"]) == 3 * 4
    for run in manifest["runs"]:
        run_dir = root / run["path"]
        for name in ("u.raw", "u.pgm", "trace.csv", "metrics.json"):
            assert (run_dir / name).is_file()
        with open(run_dir / "trace.csv", newline="") as fh:
            assert len(list(csv.reader(fh))) - 1 == run["iterations"] == 2
    assert not (root / LOCK_NAME).exists()


def test_rerun_is_bitwise_identical(tmp_path):
    a, b = _cfg(tmp_path, "a"), _cfg(tmp_path, "b")
    run_pipeline(a)
    run_pipeline(b)
    pa, pb = _payload(a.output_dir), _payload(b.output_dir)
    assert pa.keys() == pb.keys() and len(pa) > 50
    assert all(pa[k] == pb[k] for k in pa)
    assert (a.output_dir / "metrics.json").read_bytes() == (b.output_dir / "metrics.json").read_bytes()


def test_threaded_run_matches_serial(tmp_path, monkeypatch):
    serial = _cfg(tmp_path, "serial")
    run_pipeline(serial)
    monkeypatch.setenv(THREADS_ENV, "3")
    threaded = _cfg(tmp_path, "threaded")
    run_pipeline(threaded)
    assert _payload(serial.output_dir) == _payload(threaded.output_dir)


def test_seed_changes_noise(tmp_path):
    a = _cfg(tmp_path, "a")
    b = _cfg(tmp_path, "b", seed=1)
    run_pipeline(a)
    run_pipeline(b)
    assert (a.output_dir / "sinograms/E0.raw").read_bytes() != (b.output_dir / "sinograms/E0.raw").read_bytes()


def test_alpha_sweep_reports_best_run(tmp_path):
    recs = [{"method": "fbs", "regularizer": ["tv", "dtv"], "alpha": [1e-4, 1e-3, 1e-2], "max_iters": 15},
            {"method": "bregman", "regularizer": "tv", "alpha": [0.1, 1.0], "max_iters": 15}]
    cfg = _cfg(tmp_path, reconstruction=recs)
    manifest = run_pipeline(cfg)
    root = cfg.output_dir
    for label in ("E0", "E1", "E2"):
        truth = io.read_image(root / "truth" / f"{label}.raw").values
        scores = {}
        for alpha in (1e-4, 1e-3, 1e-2):
            for reg in ("tv", "dtv"):
                d = root / "recon" / label / f"fbs_{reg}" / alpha_tag(alpha)
                u = io.read_image(d / "u.raw").values
                scores[str(d.relative_to(root))] = ssim(u, truth)
        for alpha in (0.1, 1.0):
            d = root / "recon" / label / "bregman_tv" / alpha_tag(alpha)
            with open(d / "trace.csv", newline="") as fh:
                scores[str(d.relative_to(root))] = max(float(r["ssim"]) for r in csv.DictReader(fh))
        best_path = max(scores, key=scores.get)
        assert manifest["best"][label]["path"] == best_path
        assert manifest["best"][label]["score"] == pytest.approx(scores[best_path], rel=1e-12)


def test_noiseless_simulation_is_exact(tmp_path):
    cfg = _cfg(tmp_path, phantom={"size": 16, "noise": "none"})
    run_pipeline(cfg)
    root = cfg.output_dir
    op = XRayTransform(cfg.scan_geometry(), cfg.image_size(), cfg.pixel_size())
    for label in ("E0", "E1", "E2"):
        b = io.read_sinogram(root / "sinograms" / f"{label}.raw").values
        u = io.read_image(root / "truth" / f"{label}.raw").values
        assert np.max(np.abs(b - op.forward(u))) <= 1e-12


def test_side_information_selection_rules():
    ref = np.outer(np.arange(8.0), np.ones(8))
    candidates = [np.zeros((8, 8)), ref + 0.01, ref + 1.0]
    assert select_side_information(candidates, ref, "first") == 0
    assert select_side_information(candidates, ref, "ssim") == 1
    assert select_side_information(candidates, ref, "psnr") == 1
    assert select_side_information(candidates, None, "ssim") == 0


def _data_mode(tmp_path, sim_root, name, references):
    raw = {
        "output_dir": str(tmp_path / name),
        "data": {"size": 16, "pixel_size": 1.0 / 16,
                 "sinograms": {lab: str(sim_root / f"{lab}.sino.raw") for lab in ("E0", "E1", "E2")}},
        "side_information": {"alpha": [1e-3, 1e-2], "max_iters": 5},
        "reconstruction": [{"method": "fbs", "regularizer": "dtv", "alpha": 1e-3, "max_iters": 5}],
    }
    if references:
        raw["metrics"] = {"references": {lab: str(sim_root / f"{lab}.truth.raw") for lab in ("E0", "E1", "E2")}}
    return from_dict(raw, tmp_path)


def test_reconstructions_ignore_references(tmp_path):
    sim_root = tmp_path / "sim"
    assert main(["simulate", str(PRESETS / "minimal.toml"), "--output-dir", str(sim_root)]) == 0
    with_ref = _data_mode(tmp_path, sim_root, "with", True)
    without = _data_mode(tmp_path, sim_root, "without", False)
    m1, m2 = run_pipeline(with_ref), run_pipeline(without)
    assert m1["best"] and not m2["best"]
    for label in ("E0", "E1", "E2"):
        rel = f"recon/{label}/fbs_dtv/{alpha_tag(1e-3)}/u.raw"
        assert (with_ref.output_dir / rel).read_bytes() == (without.output_dir / rel).read_bytes()
    assert (with_ref.output_dir / "side_info/v.raw").read_bytes() == (without.output_dir / "side_info/v.raw").read_bytes()


def test_lock_prevents_concurrent_use(tmp_path):
    cfg = _cfg(tmp_path)
    cfg.output_dir.mkdir()
    (cfg.output_dir / LOCK_NAME).write_text("1\n")
    with pytest.raises(ConfigurationError):
        run_pipeline(cfg)
    assert (cfg.output_dir / LOCK_NAME).exists()


def test_failed_stage_leaves_incomplete_manifest(tmp_path):
    cfg = _cfg(tmp_path, backtracking={"sigma0": 1e9, "max_backtracks": 0})
    with pytest.raises(PipelineError) as info:
        run_pipeline(cfg)
    assert info.value.stage == "side_info" and info.value.exit_code == 3
    manifest = json.loads((cfg.output_dir / "MANIFEST.json").read_text())
    assert manifest["complete"] is False and manifest["stage"] == "side_info" and "error" in manifest
    assert "sinograms/fused.raw" in manifest["outputs"]
    assert (cfg.output_dir / "sinograms/fused.raw").is_file()
    assert not (cfg.output_dir / LOCK_NAME).exists()
