"""Experiment runner: strict config parsing and the staged pipeline.

Every stage communicates through on-disk artifacts (RCCD channel data,
raw float32 grids with text sidecars, PGM images, CSV metrics), so a
stage re-run from saved intermediates is byte-identical to the same
stage inside an end-to-end run. Artifacts carry no timestamps and all
kernels are thread-count independent, which makes manifests (content
hashes of every artifact) reproducible byte-for-byte.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import artifacts
from .arraymodel import ArrayConfig, wavelength
from .beamform import (
    BeamformParams,
    ImageGrid,
    das_forces,
    das_tpw,
    das_vls,
    required_samples,
)
from .errors import ConfigError, DomainError
from .metrics import CSV_FIELDS, MetricReport, RoiPair, gcnr, wire_fwhm
from .phantoms import SpeckleSpec, cyst_phantom, load_scatterers_csv, wire_phantom
from .postproc import DEFAULT_DYNAMIC_RANGE_DB, VolumeSpec, envelope, log_compress
from .sequences import (
    default_tpw_angles,
    forces_decode,
    forces_polarity_correct,
    hadamard,
    make_forces_sequence,
    make_tpw_sequence,
    make_vls_sequence,
)
from .simulator import Phantom, Pulse, add_noise, load_rccd, save_rccd, simulate

THREADS_ENV = "TOBESIM_THREADS"
_LONG_ACQUISITION_PLANES = 64


# ---------------------------------------------------------------------------
# strict config parsing


def _check_keys(section: dict, path: str, allowed: dict[str, bool]) -> None:
    """Reject unknown keys; require the ones flagged True."""
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: expected an object")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key")
    for key, required in allowed.items():
        if required and key not in section:
            raise ConfigError(f"{path}.{key}: missing required key")


def _num(section, path, key, default=None):
    if key not in section:
        return default
    value = section[key]
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{path}.{key}: expected a number")
    return float(value)


def _int(section, path, key, default=None):
    if key not in section:
        return default
    value = section[key]
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"{path}.{key}: expected an integer")
    return value


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return raw


class Experiment:
    """Validated experiment description; builders are deterministic."""

    _TOP_KEYS = {
        "array": True, "sequence": False, "sequences": False, "phantom": True,
        "grid": True, "beamform": False, "noise": False, "metrics": False,
        "outputs": False, "volume": False,
    }

    def __init__(self, raw: dict, seed_override: int | None = None,
                 base_dir: Path | None = None):
        _check_keys(raw, "config", self._TOP_KEYS)
        self.raw = raw
        self.seed_override = seed_override
        self.base_dir = Path(base_dir) if base_dir else Path.cwd()
        self.array = self._parse_array(raw["array"])
        self.pulse = Pulse.from_config(self.array)
        self.params = self._parse_beamform(raw.get("beamform", {}))
        self._parse_misc(raw)
        # validate eagerly so bad configs fail before any stage runs
        self.grid()
        self.phantom()
        if "sequence" in raw:
            self.sequence()

    @staticmethod
    def _parse_array(section) -> ArrayConfig:
        _check_keys(section, "array", {
            "n": True, "center_freq_hz": True, "pitch_m": False,
            "frac_bandwidth": False, "sound_speed_m_s": False,
            "sampling_freq_hz": False,
        })
        try:
            return ArrayConfig(
                n=_int(section, "array", "n"),
                center_freq_hz=_num(section, "array", "center_freq_hz"),
                pitch_m=_num(section, "array", "pitch_m", 0.0),
                frac_bandwidth=_num(section, "array", "frac_bandwidth", 0.6),
                sound_speed_m_s=_num(section, "array", "sound_speed_m_s", 1540.0),
                sampling_freq_hz=_num(section, "array", "sampling_freq_hz", 0.0),
            )
        except DomainError as exc:
            raise ConfigError(f"array: {exc}") from exc

    @staticmethod
    def _parse_beamform(section) -> BeamformParams:
        _check_keys(section, "beamform", {
            "f_number": False, "tx_f_number": False, "apod_window": False,
        })
        try:
            return BeamformParams(
                f_number=_num(section, "beamform", "f_number", 1.5),
                tx_f_number=_num(section, "beamform", "tx_f_number", 1.5),
                apod_window=section.get("apod_window", "hann"),
            )
        except DomainError as exc:
            raise ConfigError(f"beamform: {exc}") from exc

    def _parse_misc(self, raw) -> None:
        noise = raw.get("noise", {})
        _check_keys(noise, "noise", {"snr_db": False, "seed": False})
        self.snr_db = _num(noise, "noise", "snr_db", None)
        self.noise_seed = _int(noise, "noise", "seed", 0)
        metrics = raw.get("metrics", {})
        _check_keys(metrics, "metrics", {"n_bins": False, "search_radius_m": False})
        self.n_bins = _int(metrics, "metrics", "n_bins", 100)
        self.search_radius_m = _num(metrics, "metrics", "search_radius_m", 1.5e-3)
        outputs = raw.get("outputs", {})
        _check_keys(outputs, "outputs", {"dynamic_range_db": False})
        self.dynamic_range_db = _num(
            outputs, "outputs", "dynamic_range_db", DEFAULT_DYNAMIC_RANGE_DB
        )
        if self.seed_override is not None:
            self.noise_seed = self.seed_override

    def sequence(self, section: dict | None = None, steer_y_m: float | None = None):
        if section is None:
            if "sequence" not in self.raw:
                raise ConfigError("sequence: missing required section")
            section = self.raw["sequence"]
        _check_keys(section, "sequence", {
            "kind": True, "focal_depth_m": False, "steer_y_m": False,
            "n_angles": False, "span_deg": False, "angles_deg": False,
            "n_virtual": False, "virtual_depth_m": False, "subaperture_rows": False,
        })
        kind = section.get("kind")
        try:
            if kind == "forces":
                focal = _num(section, "sequence", "focal_depth_m")
                if focal is None:
                    raise ConfigError("sequence.focal_depth_m: missing required key")
                steer = steer_y_m if steer_y_m is not None else _num(
                    section, "sequence", "steer_y_m", 0.0
                )
                return make_forces_sequence(self.array, focal, steer)
            if kind == "tpw":
                if "angles_deg" in section:
                    angles = np.deg2rad(np.asarray(section["angles_deg"], dtype=float))
                else:
                    angles = default_tpw_angles(
                        self.array,
                        _int(section, "sequence", "n_angles", self.array.n),
                        np.deg2rad(_num(section, "sequence", "span_deg", 15.0)),
                    )
                return make_tpw_sequence(self.array, angles)
            if kind == "vls":
                return make_vls_sequence(
                    self.array,
                    n_virtual=_int(section, "sequence", "n_virtual", None),
                    virtual_depth_m=_num(section, "sequence", "virtual_depth_m", None),
                    subaperture_rows=_int(section, "sequence", "subaperture_rows", None),
                )
        except DomainError as exc:
            raise ConfigError(f"sequence: {exc}") from exc
        raise ConfigError(f"sequence.kind: unknown kind {kind!r}")

    def phantom(self):
        section = self.raw["phantom"]
        preset = section.get("preset")
        if preset == "wires":
            _check_keys(section, "phantom", {
                "preset": True, "positions_xz": True, "amplitude": False,
            })
            try:
                return wire_phantom(
                    np.asarray(section["positions_xz"], dtype=float),
                    _num(section, "phantom", "amplitude", 1.0),
                )
            except DomainError as exc:
                raise ConfigError(f"phantom: {exc}") from exc
        if preset == "cyst":
            _check_keys(section, "phantom", {
                "preset": True, "center": True, "radius_m": True, "speckle": True,
            })
            sp = section["speckle"]
            _check_keys(sp, "phantom.speckle", {
                "x": True, "y": True, "z": True,
                "density_per_lambda3": True, "seed": True,
            })
            seed = _int(sp, "phantom.speckle", "seed")
            if self.seed_override is not None:
                seed = self.seed_override
            try:
                spec = SpeckleSpec(
                    x_min=float(sp["x"][0]), x_max=float(sp["x"][1]),
                    y_min=float(sp["y"][0]), y_max=float(sp["y"][1]),
                    z_min=float(sp["z"][0]), z_max=float(sp["z"][1]),
                    density_per_lambda3=_num(sp, "phantom.speckle", "density_per_lambda3"),
                    wavelength_m=wavelength(self.array),
                    rng_seed=seed,
                )
                return cyst_phantom(
                    tuple(float(v) for v in section["center"]),
                    _num(section, "phantom", "radius_m"),
                    spec,
                )
            except (DomainError, TypeError, IndexError) as exc:
                raise ConfigError(f"phantom: {exc}") from exc
        if preset == "csv":
            _check_keys(section, "phantom", {
                "preset": True, "path": True, "wire_rois": False, "cyst_roi": False,
            })
            try:
                scat = load_scatterers_csv(self.base_dir / section["path"])
                ph = Phantom(scat)
            except (DomainError, OSError) as exc:
                raise ConfigError(f"phantom.path: {exc}") from exc
            for i, pos in enumerate(section.get("wire_rois", [])):
                ph.rois[f"wire_{i}"] = (float(pos[0]), float(pos[1]))
            if "cyst_roi" in section:
                c = section["cyst_roi"]
                _check_keys(c, "phantom.cyst_roi", {"center_xz": True, "radius_m": True})
                ph.rois["cyst"] = RoiPair.for_cyst(
                    float(c["center_xz"][0]), float(c["center_xz"][1]),
                    _num(c, "phantom.cyst_roi", "radius_m"),
                )
            return ph
        raise ConfigError(f"phantom.preset: unknown preset {preset!r}")

    def grid(self, y_plane: float | None = None) -> ImageGrid:
        section = self.raw["grid"]
        _check_keys(section, "grid", {
            "x": True, "z": True, "nx": True, "nz": True,
            "y_plane": False, "y": False, "ny": False,
        })
        try:
            kwargs = dict(
                x_min=float(section["x"][0]), x_max=float(section["x"][1]),
                nx=_int(section, "grid", "nx"),
                z_min=float(section["z"][0]), z_max=float(section["z"][1]),
                nz=_int(section, "grid", "nz"),
                y_plane=y_plane if y_plane is not None
                else _num(section, "grid", "y_plane", 0.0),
            )
            if "ny" in section or "y" in section:
                kwargs.update(
                    y_min=float(section["y"][0]), y_max=float(section["y"][1]),
                    ny=_int(section, "grid", "ny"),
                )
            return ImageGrid(**kwargs)
        except (DomainError, TypeError, IndexError, KeyError) as exc:
            raise ConfigError(f"grid: {exc}") from exc

    def volume_spec(self) -> VolumeSpec:
        section = self.raw.get("volume")
        if section is None:
            raise ConfigError("volume: missing required section")
        _check_keys(section, "volume", {"m": True, "plane_spacing_m": True})
        seq_section = self.raw.get("sequence", {})
        if seq_section.get("kind") != "forces":
            raise ConfigError("volume: requires a forces sequence")
        try:
            return VolumeSpec(
                m=_int(section, "volume", "m"),
                plane_spacing_m=_num(section, "volume", "plane_spacing_m"),
                focal_depth_m=_num(seq_section, "sequence", "focal_depth_m"),
            )
        except DomainError as exc:
            raise ConfigError(f"volume: {exc}") from exc


# ---------------------------------------------------------------------------
# pipeline stages (file to file; each is bitwise-stable standalone)


def _grid_meta(grid: ImageGrid) -> dict:
    meta = {
        "x_min": grid.x_min, "x_max": grid.x_max, "nx": grid.nx,
        "z_min": grid.z_min, "z_max": grid.z_max, "nz": grid.nz,
        "y_plane": grid.y_plane,
    }
    if grid.is_volumetric:
        meta.update(y_min=grid.y_min, y_max=grid.y_max, ny=grid.ny)
    return meta


def stage_simulate(exp: Experiment, out: Path) -> None:
    seq = exp.sequence()
    grid = exp.grid(y_plane=seq.steer_y_m if seq.kind == "forces" else None)
    cd = simulate(exp.array, seq, exp.phantom(), exp.pulse,
                  n_samples=required_samples(exp.array, seq, exp.phantom(),
                                             exp.pulse, grid))
    if exp.snr_db is not None:
        cd = add_noise(cd, exp.snr_db, exp.noise_seed)
    save_rccd(out / "channel_data.rccd", cd)


def stage_decode(exp: Experiment, out: Path) -> None:
    seq = exp.sequence()
    if seq.kind != "forces":
        return  # conventional sequences beamform straight from channel data
    cd = load_rccd(out / "channel_data.rccd")
    decoded = forces_decode(forces_polarity_correct(cd, seq), hadamard(exp.array.n))
    save_rccd(out / "decoded.rccd", decoded)


def stage_beamform(exp: Experiment, out: Path) -> None:
    seq = exp.sequence()
    grid = exp.grid(y_plane=seq.steer_y_m if seq.kind == "forces" else None)
    if seq.kind == "forces":
        cd = load_rccd(out / "decoded.rccd")
        rf = das_forces(cd, exp.array, seq, grid, exp.params)
    elif seq.kind == "tpw":
        cd = load_rccd(out / "channel_data.rccd")
        rf = das_tpw(cd, exp.array, seq, grid, exp.params)
    else:
        cd = load_rccd(out / "channel_data.rccd")
        rf = das_vls(cd, exp.array, seq, grid, exp.params)
    artifacts.save_raw_f32(out / "image_rf.f32", rf, _grid_meta(grid))


def stage_postproc(exp: Experiment, out: Path) -> None:
    rf, meta = artifacts.load_raw_f32(out / "image_rf.f32")
    if rf.ndim == 3:
        env = np.stack([envelope(plane) for plane in rf])
    else:
        env = envelope(rf)
    db = log_compress(env, exp.dynamic_range_db)
    artifacts.save_raw_f32(out / "image_env.f32", env, meta)
    artifacts.save_raw_f32(out / "image_db.f32", db, meta)
    if db.ndim == 2:
        artifacts.save_pgm(out / "bmode.pgm", db, exp.dynamic_range_db)


def stage_metrics(exp: Experiment, out: Path) -> None:
    env, _ = artifacts.load_raw_f32(out / "image_env.f32")
    seq = exp.sequence()
    grid = exp.grid(y_plane=seq.steer_y_m if seq.kind == "forces" else None)
    report = MetricReport(method=seq.kind)
    phantom = exp.phantom()
    # volumetric reconstructions are measured on their central plane
    img = env if env.ndim == 2 else env[env.shape[0] // 2]
    for name in sorted(phantom.rois):
        target = phantom.rois[name]
        if isinstance(target, RoiPair):
            report.add_gcnr(
                name, target.inside.cz, gcnr(img, target, grid, exp.n_bins)
            )
        else:
            x, z = target
            lat, ax = wire_fwhm(img, grid, (x, z), exp.search_radius_m)
            report.add_fwhm(name, z, lat, ax)
    artifacts.write_csv(out / "metrics.csv", report.rows, CSV_FIELDS)


_RUN_STAGES = [
    ("simulate", stage_simulate),
    ("decode", stage_decode),
    ("beamform", stage_beamform),
    ("postproc", stage_postproc),
    ("metrics", stage_metrics),
]


def run_pipeline(exp: Experiment, out: Path, manifest_extra: dict | None = None) -> int:
    """All stages in order, then a manifest; partial failures keep artifacts."""
    out.mkdir(parents=True, exist_ok=True)
    entries = {
        "tool": "tobesim",
        "config": exp.raw,
        "seed_override": exp.seed_override,
        "tx_events_total": exp.sequence().n_events,
        "incomplete": False,
        "warnings": [],
    }
    if manifest_extra:
        entries.update(manifest_extra)
    with warnings.catch_warnings(record=True) as caught_warnings:
        warnings.simplefilter("always")
        for name, stage in _RUN_STAGES:
            try:
                stage(exp, out)
            except Exception as exc:  # keep artifacts up to the failure
                entries["incomplete"] = True
                entries["failed_stage"] = name
                entries["error"] = f"{type(exc).__name__}: {exc}"
                break
    # only warnings from this package belong in the manifest; library or
    # environment chatter would break byte-reproducibility across hosts
    entries["warnings"] = sorted({
        str(w.message) for w in caught_warnings
        if "tobesim" in str(getattr(w, "filename", ""))
    })
    artifacts.write_manifest(out, entries)
    return 1 if entries["incomplete"] else 0


def run_compare(exp: Experiment, out: Path, override_fairness: bool = False) -> int:
    """Three-method comparison sharing one phantom and grid."""
    sections = exp.raw.get("sequences")
    if not isinstance(sections, dict) or set(sections) != {"forces", "tpw", "vls"}:
        raise ConfigError("sequences: compare needs exactly forces, tpw and vls")
    seqs = {kind: exp.sequence(section) for kind, section in sections.items()}
    counts = {kind: seq.n_events for kind, seq in seqs.items()}
    fairness_note = None
    if len(set(counts.values())) != 1:
        if not override_fairness:
            raise ConfigError(
                "sequences: transmit-event counts differ "
                f"({counts}); pass --override-fairness to proceed"
            )
        fairness_note = f"fairness override: unequal transmit counts {counts}"
    out.mkdir(parents=True, exist_ok=True)
    combined: list[dict] = []
    per_method: dict[str, list[dict]] = {}
    for kind in ("forces", "tpw", "vls"):
        sub_raw = copy.deepcopy(exp.raw)
        sub_raw["sequence"] = sections[kind]
        sub_raw.pop("sequences")
        sub = Experiment(sub_raw, exp.seed_override, base_dir=exp.base_dir)
        status = run_pipeline(sub, out / kind)
        if status:
            return status
        with open(out / kind / "metrics.csv") as fh:
            rows = list(csv.DictReader(fh))
        per_method[kind] = rows
        combined.extend(rows)
    for other in ("tpw", "vls"):
        for row_f, row_o in zip(per_method["forces"], per_method[other]):
            delta = {
                "method": f"forces_minus_{other}", "target": row_f["target"],
                "depth_mm": row_f["depth_mm"], "gcnr": "", "fwhm_lat_um": "",
                "fwhm_ax_um": "",
            }
            for col in ("gcnr", "fwhm_lat_um", "fwhm_ax_um"):
                try:
                    delta[col] = repr(float(row_f[col]) - float(row_o[col]))
                except ValueError:
                    pass
            combined.append(delta)
    artifacts.write_csv(out / "metrics.csv", combined, CSV_FIELDS)
    _write_strip(out)
    entries = {
        "tool": "tobesim",
        "config": exp.raw,
        "seed_override": exp.seed_override,
        "tx_events": counts,
        "incomplete": False,
        "warnings": [fairness_note] if fairness_note else [],
        "fairness_override": bool(fairness_note),
    }
    artifacts.write_manifest(out, entries)
    return 0


def _write_strip(out: Path) -> None:
    panes = []
    for kind in ("forces", "tpw", "vls"):
        panes.append(artifacts.load_pgm(out / kind / "bmode.pgm"))
    height = max(p.shape[0] for p in panes)
    padded = []
    for p in panes:
        if p.shape[0] < height:
            p = np.pad(p, ((0, height - p.shape[0]), (0, 0)))
        padded.append(p)
        padded.append(np.zeros((height, 2), dtype=np.uint8))
    strip = np.hstack(padded[:-1])
    header = f"P5\n{strip.shape[1]} {strip.shape[0]}\n255\n".encode("ascii")
    (out / "compare_strip.pgm").write_bytes(header + strip.tobytes())


def run_volume(exp: Experiment, out: Path) -> int:
    """Walking-aperture volume: m plane pipelines plus a stitched stack."""
    spec = exp.volume_spec()
    out.mkdir(parents=True, exist_ok=True)
    offsets = spec.plane_offsets()
    plane_hashes = []
    db_planes = []
    grid_meta = None
    for k, y_k in enumerate(offsets):
        sub_raw = copy.deepcopy(exp.raw)
        sub_raw.pop("volume")
        sub_raw["sequence"]["steer_y_m"] = float(y_k)
        sub_raw["grid"]["y_plane"] = float(y_k)
        sub = Experiment(sub_raw, exp.seed_override, base_dir=exp.base_dir)
        plane_dir = out / f"plane_{k:03d}"
        status = run_pipeline(sub, plane_dir)
        if status:
            return status
        db, grid_meta = artifacts.load_raw_f32(plane_dir / "image_db.f32")
        db_planes.append(db)
        plane_hashes.append(artifacts.sha256_file(plane_dir / "image_db.f32"))
    volume = np.stack(db_planes)
    meta = dict(grid_meta)
    meta.pop("y_plane", None)  # planes carry their own elevation; keep stack meta
    meta.update(
        m=spec.m, plane_spacing_m=spec.plane_spacing_m,
        y_extent_m=float(offsets[-1] - offsets[0]),
        focal_depth_m=spec.focal_depth_m,
    )
    artifacts.save_raw_f32(out / "volume.f32", volume, meta)
    warnings_list = []
    if spec.m >= _LONG_ACQUISITION_PLANES:
        warnings_list.append(
            f"long acquisition: {spec.m} planes x "
            f"{exp.sequence().n_events} transmits per plane"
        )
    entries = {
        "tool": "tobesim",
        "config": exp.raw,
        "seed_override": exp.seed_override,
        "plane_hashes": plane_hashes,
        "tx_events_per_plane": exp.sequence().n_events,
        "tx_events_total": exp.sequence().n_events * spec.m,
        "incomplete": False,
        "warnings": warnings_list,
    }
    artifacts.write_manifest(out, entries)
    return 0


# ---------------------------------------------------------------------------
# entry point


def _apply_threads(threads: int | None) -> None:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else None
    if threads is not None:
        import numba

        numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment config (JSON)")
    parser.add_argument("--out", required=True, help="artifact directory")
    parser.add_argument("--seed", type=int, default=None, help="override phantom/noise seed")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${THREADS_ENV} or all cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tobesim",
        description="Row-column array imaging experiments: simulate, decode, "
        "beamform, post-process and measure.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    stage_names = [name for name, _ in _RUN_STAGES]
    for name in stage_names + ["run", "volume"]:
        p = sub.add_parser(name)
        _add_common(p)
    p = sub.add_parser("compare")
    _add_common(p)
    p.add_argument("--override-fairness", action="store_true",
                   help="proceed despite unequal transmit-event counts")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _apply_threads(args.threads)
    try:
        exp = Experiment(load_config(args.config), seed_override=args.seed,
                         base_dir=Path(args.config).resolve().parent)
        out = Path(args.out)
        if args.command == "run":
            return run_pipeline(exp, out)
        if args.command == "compare":
            return run_compare(exp, out, args.override_fairness)
        if args.command == "volume":
            return run_volume(exp, out)
        out.mkdir(parents=True, exist_ok=True)
        stage = dict(_RUN_STAGES)[args.command]
        stage(exp, out)
        return 0
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
