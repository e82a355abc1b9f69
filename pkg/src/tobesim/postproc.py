"""Envelope detection, log compression and scan-plane assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import hilbert

from .arraymodel import ArrayConfig
from .beamform import BeamformParams, ImageGrid, das_forces, required_samples
from .errors import DomainError
from .sequences import forces_decode, forces_polarity_correct, hadamard, make_forces_sequence
from .simulator import Phantom, Pulse, simulate

DEFAULT_DYNAMIC_RANGE_DB = 60.0


def envelope(rf_image: np.ndarray) -> np.ndarray:
    """Analytic-signal magnitude along the depth axis (axis 0).

    Uses frequency-domain one-sided spectrum doubling per depth column,
    i.e. the discrete Hilbert transform. Needs at least 4 depth samples.
    """
    rf_image = np.asarray(rf_image, dtype=np.float64)
    if rf_image.ndim < 2 or rf_image.shape[0] < 4:
        raise DomainError("envelope needs a (nz >= 4, ...) depth-major image")
    return np.abs(hilbert(rf_image, axis=0))


def log_compress(env: np.ndarray, dynamic_range_db: float = DEFAULT_DYNAMIC_RANGE_DB) -> np.ndarray:
    """20*log10(env / max), clamped to [-dynamic_range, 0] dB."""
    env = np.asarray(env, dtype=np.float64)
    if (env < 0).any():
        raise DomainError("envelope values must be non-negative")
    peak = env.max() if env.size else 0.0
    if peak <= 0:
        raise DomainError("cannot log-compress an all-zero image (no reference)")
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(env / peak)
    return np.clip(db, -dynamic_range_db, 0.0)


@dataclass
class BModeImage:
    """One beamformed scan plane: RF, envelope and display stages."""

    grid: ImageGrid
    rf: np.ndarray
    env: np.ndarray
    db: np.ndarray
    dynamic_range_db: float = DEFAULT_DYNAMIC_RANGE_DB

    @classmethod
    def from_rf(cls, grid: ImageGrid, rf: np.ndarray,
                dynamic_range_db: float = DEFAULT_DYNAMIC_RANGE_DB) -> "BModeImage":
        env = envelope(rf)
        return cls(grid, rf, env, log_compress(env, dynamic_range_db), dynamic_range_db)


@dataclass(frozen=True)
class VolumeSpec:
    """Stack layout for walking-aperture volumes.

    ``m`` discrete scan planes separated by ``plane_spacing_m`` in
    elevation, all sharing one transmit focal depth.
    """

    m: int
    plane_spacing_m: float
    focal_depth_m: float

    def __post_init__(self):
        if self.m < 1:
            raise DomainError("volume needs m >= 1 planes")
        if self.plane_spacing_m <= 0:
            raise DomainError("plane spacing must be positive")

    def plane_offsets(self) -> np.ndarray:
        """Elevation coordinate of each plane, centered on y = 0."""
        return (np.arange(self.m) - (self.m - 1) / 2.0) * self.plane_spacing_m


@dataclass
class VolumeImage:
    """Discrete stack of scan planes; no inter-plane interpolation."""

    grid: ImageGrid
    y_m: np.ndarray
    env: np.ndarray  # (m, nz, nx)
    db: np.ndarray   # (m, nz, nx)
    dynamic_range_db: float = DEFAULT_DYNAMIC_RANGE_DB

    @property
    def extent_y_m(self) -> float:
        """Elevation span (m - 1) * spacing covered by the stack."""
        return float(self.y_m.max() - self.y_m.min()) if self.y_m.size > 1 else 0.0

    def plane(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (env, db) of plane k exactly as stored."""
        return self.env[k], self.db[k]


def stitch_volume(planes: list[BModeImage], spec: VolumeSpec) -> VolumeImage:
    """Stack per-plane images into a volume on a centered elevation axis.

    Plane contents are preserved bit-exactly; the volume is a rectilinear
    lattice of discrete scan planes.
    """
    if len(planes) != spec.m:
        raise DomainError(f"expected {spec.m} planes, got {len(planes)}")
    g0 = planes[0].grid
    for p in planes[1:]:
        base = (g0.x_min, g0.x_max, g0.nx, g0.z_min, g0.z_max, g0.nz)
        other = (p.grid.x_min, p.grid.x_max, p.grid.nx, p.grid.z_min, p.grid.z_max, p.grid.nz)
        if base != other:
            raise DomainError("all planes must share one in-plane grid")
    return VolumeImage(
        grid=g0,
        y_m=spec.plane_offsets(),
        env=np.stack([p.env for p in planes]),
        db=np.stack([p.db for p in planes]),
        dynamic_range_db=planes[0].dynamic_range_db,
    )


def _swap_xy(phantom: Phantom) -> Phantom:
    swapped = phantom.scatterers[:, [1, 0, 2, 3]].copy()
    return Phantom(swapped, rois=phantom.rois, rng_seed=phantom.rng_seed)


def forces_bscan(cfg: ArrayConfig, phantom: Phantom, focus_depth_m: float,
                 grid: ImageGrid, params: BeamformParams | None = None,
                 pulse: Pulse | None = None, steer_y_m: float = 0.0,
                 dynamic_range_db: float = DEFAULT_DYNAMIC_RANGE_DB) -> BModeImage:
    """Convenience pipeline: encode, acquire, correct, decode, beamform."""
    seq = make_forces_sequence(cfg, focus_depth_m, steer_y_m)
    pulse = pulse or Pulse.from_config(cfg)
    raw = simulate(cfg, seq, phantom, pulse,
                   n_samples=required_samples(cfg, seq, phantom, pulse, grid))
    decoded = forces_decode(forces_polarity_correct(raw, seq), hadamard(cfg.n))
    rf = das_forces(decoded, cfg, seq, grid, params)
    return BModeImage.from_rf(grid, rf, dynamic_range_db)


def cross_plane(cfg: ArrayConfig, phantom: Phantom, focus_depth_m: float,
                grid: ImageGrid, params: BeamformParams | None = None,
                pulse: Pulse | None = None,
                dynamic_range_db: float = DEFAULT_DYNAMIC_RANGE_DB) -> tuple[BModeImage, BModeImage]:
    """Orthogonal B-scan pair from role-swapped acquisitions.

    The first plane images (x, z) at y = 0 with rows transmitting and
    columns biased/receiving; the second interchanges the electrical
    roles of rows and columns, imaging (y, z) at x = 0. Because the
    centered square aperture maps onto itself under the x <-> y mirror,
    the swapped acquisition is simulated exactly by mirroring the phantom
    coordinates; the second image's lateral axis is elevation.

    A phantom symmetric under (x <-> y) yields identical images up to
    floating-point summation order.
    """
    if grid.y_plane != 0.0 or grid.is_volumetric:
        raise DomainError("cross-plane pairs are defined on the two y=0 / x=0 planes")
    plane1 = forces_bscan(cfg, phantom, focus_depth_m, grid, params, pulse,
                          dynamic_range_db=dynamic_range_db)
    plane2 = forces_bscan(cfg, _swap_xy(phantom), focus_depth_m, grid, params,
                          pulse, dynamic_range_db=dynamic_range_db)
    return plane1, plane2
