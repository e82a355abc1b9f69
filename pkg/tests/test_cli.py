import json
import time

import numpy as np

from tobesim.cli import main

WIRE_CFG = {
    "array": {"n": 8, "center_freq_hz": 5e6},
    "sequence": {"kind": "forces", "focal_depth_m": 0.008},
    "phantom": {"preset": "wires", "positions_xz": [[0.0, 0.008]]},
    "grid": {"x": [-0.002, 0.002], "nx": 41, "z": [0.006, 0.010], "nz": 81},
}

CYST_CFG = {
    "array": {"n": 8, "center_freq_hz": 5e6},
    "sequence": {"kind": "forces", "focal_depth_m": 0.008},
    "phantom": {
        "preset": "cyst",
        "center": [0.0, 0.0, 0.007],
        "radius_m": 0.0008,
        "speckle": {
            "x": [-0.002, 0.002], "y": [-0.0004, 0.0004], "z": [0.005, 0.009],
            "density_per_lambda3": 1.0, "seed": 77,
        },
    },
    "grid": {"x": [-0.0018, 0.0018], "nx": 37, "z": [0.0055, 0.0085], "nz": 61},
}


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_minimal_run_emits_artifacts(tmp_path):
    cfg = _write(tmp_path, WIRE_CFG)
    start = time.perf_counter()
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"minimal run took {elapsed:.1f} s"
    out = tmp_path / "out"
    pgms = list(out.glob("*.pgm"))
    csvs = list(out.glob("*.csv"))
    assert len(pgms) == 1 and len(csvs) == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["incomplete"] is False
    assert {a["path"] for a in manifest["artifacts"]} >= {
        "bmode.pgm", "channel_data.rccd", "decoded.rccd", "image_rf.f32",
        "image_env.f32", "image_db.f32", "metrics.csv",
    }


def test_repeat_run_byte_identical_manifest(tmp_path):
    cfg = _write(tmp_path, WIRE_CFG)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    ma = (tmp_path / "a" / "manifest.json").read_bytes()
    mb = (tmp_path / "b" / "manifest.json").read_bytes()
    assert ma == mb


def test_power_of_two_rejection_names_field(tmp_path, capsys):
    bad = json.loads(json.dumps(WIRE_CFG))
    bad["array"]["n"] = 6
    cfg = _write(tmp_path, bad)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "out")]) == 2
    err = capsys.readouterr().err
    assert "array" in err and "power of 2" in err


def test_unknown_key_rejected(tmp_path, capsys):
    bad = json.loads(json.dumps(WIRE_CFG))
    bad["beamform"] = {"f_numbre": 1.5}
    cfg = _write(tmp_path, bad)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "out")]) == 2
    assert "beamform.f_numbre: unknown key" in capsys.readouterr().err


def test_json_syntax_error_is_line_anchored(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "array": {,}\n}\n')
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "out")]) == 2
    err = capsys.readouterr().err
    assert ":2:" in err  # line number of the offending token


def test_seed_override_changes_speckle(tmp_path):
    cfg = _write(tmp_path, CYST_CFG)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "s1"),
                 "--seed", "1"]) == 0
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "s2"),
                 "--seed", "2"]) == 0
    d1 = (tmp_path / "s1" / "channel_data.rccd").read_bytes()
    d2 = (tmp_path / "s2" / "channel_data.rccd").read_bytes()
    assert d1 != d2
    m = json.loads((tmp_path / "s1" / "manifest.json").read_text())
    assert m["seed_override"] == 1


def test_stage_composability_bitwise(tmp_path):
    cfg = _write(tmp_path, WIRE_CFG)
    full = tmp_path / "full"
    assert main(["run", "--config", cfg, "--out", str(full)]) == 0
    staged = tmp_path / "staged"
    staged.mkdir()
    # re-run downstream stages from the saved channel data only
    (staged / "channel_data.rccd").write_bytes(
        (full / "channel_data.rccd").read_bytes()
    )
    for stage in ("decode", "beamform", "postproc", "metrics"):
        assert main([stage, "--config", cfg, "--out", str(staged)]) == 0
    for name in ("decoded.rccd", "image_rf.f32", "image_env.f32", "image_db.f32",
                 "bmode.pgm", "metrics.csv"):
        assert (staged / name).read_bytes() == (full / name).read_bytes(), name


def _compare_cfg(n_tpw=8):
    return {
        "array": {"n": 8, "center_freq_hz": 5e6},
        "sequences": {
            "forces": {"kind": "forces", "focal_depth_m": 0.008},
            "tpw": {"kind": "tpw", "n_angles": n_tpw},
            "vls": {"kind": "vls", "n_virtual": 8},
        },
        "phantom": {"preset": "wires", "positions_xz": [[0.0, 0.008]]},
        "grid": {"x": [-0.002, 0.002], "nx": 41, "z": [0.006, 0.010], "nz": 81},
    }


def test_compare_rows_and_strip(tmp_path):
    cfg = _write(tmp_path, _compare_cfg())
    out = tmp_path / "cmp"
    assert main(["compare", "--config", cfg, "--out", str(out)]) == 0
    import csv

    rows = list(csv.DictReader(open(out / "metrics.csv")))
    method_rows = [r for r in rows if r["method"] in ("forces", "tpw", "vls")]
    assert len(method_rows) == 3  # one target, one row per method
    assert (out / "compare_strip.pgm").exists()
    assert json.loads((out / "manifest.json").read_text())["tx_events"] == {
        "forces": 8, "tpw": 8, "vls": 8,
    }


def test_compare_fairness_enforced(tmp_path, capsys):
    cfg = _write(tmp_path, _compare_cfg(n_tpw=4))
    out = tmp_path / "cmp"
    assert main(["compare", "--config", cfg, "--out", str(out)]) == 2
    assert "transmit-event counts differ" in capsys.readouterr().err
    out2 = tmp_path / "cmp2"
    assert main(["compare", "--config", cfg, "--out", str(out2),
                 "--override-fairness"]) == 0
    m = json.loads((out2 / "manifest.json").read_text())
    assert m["fairness_override"] is True
    assert any("fairness override" in w for w in m["warnings"])


def test_volume_single_plane_matches_single_run(tmp_path):
    vol_cfg = json.loads(json.dumps(WIRE_CFG))
    vol_cfg["volume"] = {"m": 1, "plane_spacing_m": 0.0003}
    cfg = _write(tmp_path, vol_cfg, "vol.json")
    out = tmp_path / "vol"
    assert main(["volume", "--config", cfg, "--out", str(out)]) == 0
    single_cfg = _write(tmp_path, WIRE_CFG, "single.json")
    single = tmp_path / "single"
    assert main(["run", "--config", single_cfg, "--out", str(single)]) == 0
    assert (out / "plane_000" / "image_db.f32").read_bytes() == (
        single / "image_db.f32"
    ).read_bytes()
    vol = np.frombuffer((out / "volume.f32").read_bytes(), dtype="<f4")
    plane = np.frombuffer((single / "image_db.f32").read_bytes(), dtype="<f4")
    assert (vol == plane).all()


def test_volume_paper_scale_flagged_long(tmp_path):
    # 64 planes is accepted but flagged as a long acquisition
    cfg = {
        "array": {"n": 2, "center_freq_hz": 5e6},
        "sequence": {"kind": "forces", "focal_depth_m": 0.006},
        "phantom": {"preset": "wires", "positions_xz": [[0.0, 0.006]]},
        "grid": {"x": [-0.0005, 0.0005], "nx": 7, "z": [0.0055, 0.0065], "nz": 9},
        "volume": {"m": 64, "plane_spacing_m": 0.0003},
    }
    path = tmp_path / "vol64.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "vol64"
    assert main(["volume", "--config", str(path), "--out", str(out)]) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert any("long acquisition" in w for w in m["warnings"])
    assert m["tx_events_total"] == 2 * 64


def test_csv_phantom_preset_matches_wires(tmp_path):
    # a scatterer CSV with wire ROI annotations behaves like the preset
    from tobesim import save_scatterers_csv, wire_phantom

    ph = wire_phantom([[0.0, 0.008]])
    save_scatterers_csv(tmp_path / "scat.csv", ph)
    csv_cfg = json.loads(json.dumps(WIRE_CFG))
    csv_cfg["phantom"] = {"preset": "csv", "path": "scat.csv",
                          "wire_rois": [[0.0, 0.008]]}
    cfg = _write(tmp_path, csv_cfg, "csv_cfg.json")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "csv_out")]) == 0
    wire_cfg = _write(tmp_path, WIRE_CFG, "wire_cfg.json")
    assert main(["run", "--config", wire_cfg, "--out", str(tmp_path / "wire_out")]) == 0
    assert (tmp_path / "csv_out" / "image_db.f32").read_bytes() == (
        tmp_path / "wire_out" / "image_db.f32"
    ).read_bytes()
    assert (tmp_path / "csv_out" / "metrics.csv").read_bytes() == (
        tmp_path / "wire_out" / "metrics.csv"
    ).read_bytes()


def test_partial_failure_keeps_artifacts_and_marks_incomplete(tmp_path):
    # a gCNR region entirely outside the grid makes the metrics stage
    # fail; earlier artifacts must survive and the manifest must say so
    from tobesim import save_scatterers_csv, wire_phantom

    save_scatterers_csv(tmp_path / "scat.csv", wire_phantom([[0.0, 0.008]]))
    cfg = json.loads(json.dumps(WIRE_CFG))
    cfg["phantom"] = {
        "preset": "csv", "path": "scat.csv",
        "cyst_roi": {"center_xz": [0.05, 0.008], "radius_m": 0.001},
    }
    path = _write(tmp_path, cfg, "badroi.json")
    out = tmp_path / "badroi_out"
    assert main(["run", "--config", path, "--out", str(out)]) == 1
    m = json.loads((out / "manifest.json").read_text())
    assert m["incomplete"] is True
    assert m["failed_stage"] == "metrics"
    assert "error" in m
    assert (out / "channel_data.rccd").exists()
    assert (out / "image_rf.f32").exists()
    assert (out / "bmode.pgm").exists()
    assert not (out / "metrics.csv").exists()
    assert {a["path"] for a in m["artifacts"]} >= {"channel_data.rccd", "image_rf.f32"}


def test_threads_env_var_sets_default(monkeypatch):
    import numba

    from tobesim.cli import THREADS_ENV, _apply_threads

    before = numba.get_num_threads()
    try:
        monkeypatch.setenv(THREADS_ENV, "1")
        _apply_threads(None)
        assert numba.get_num_threads() == 1
    finally:
        numba.set_num_threads(before)


def test_missing_config_file(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "o")]) == 2
