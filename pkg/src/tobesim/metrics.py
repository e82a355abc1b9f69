"""Image-quality metrics: histogram-overlap contrast and peak widths.

gCNR is computed on linear envelope samples (not dB): one minus the
overlap of the probability-normalized histograms of the inside and
outside regions over shared bin edges. It is bounded to [0, 1] and
invariant under any strictly monotonic rescaling applied to both regions
(up to binning error).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .beamform import ImageGrid
from .errors import DomainError

_MIN_ROI_PIXELS = 100


@dataclass(frozen=True)
class DiskRoi:
    """Disk in the scan plane: center (x, z) and radius, meters."""

    cx: float
    cz: float
    radius: float

    def mask(self, grid: ImageGrid) -> np.ndarray:
        xx = grid.x()[None, :] - self.cx
        zz = grid.z()[:, None] - self.cz
        return xx**2 + zz**2 <= self.radius**2


@dataclass(frozen=True)
class AnnulusRoi:
    """Annulus in the scan plane at matched depth."""

    cx: float
    cz: float
    r_inner: float
    r_outer: float

    def mask(self, grid: ImageGrid) -> np.ndarray:
        xx = grid.x()[None, :] - self.cx
        zz = grid.z()[:, None] - self.cz
        r2 = xx**2 + zz**2
        return (r2 >= self.r_inner**2) & (r2 <= self.r_outer**2)


@dataclass(frozen=True)
class RoiPair:
    """Inside/outside region pair for contrast metrics."""

    inside: DiskRoi
    outside: AnnulusRoi

    @classmethod
    def for_cyst(cls, cx: float, cz: float, radius: float) -> "RoiPair":
        """Default geometry: inside disk at 0.8 r, annulus 1.25 r - 1.75 r.

        Keeps both regions clear of boundary partial-volume pixels.
        """
        return cls(
            DiskRoi(cx, cz, 0.8 * radius),
            AnnulusRoi(cx, cz, 1.25 * radius, 1.75 * radius),
        )


def gcnr(env_image: np.ndarray, roi: RoiPair, grid: ImageGrid, n_bins: int = 100) -> float:
    """Generalized contrast-to-noise ratio between two regions.

    1 - sum_b min(h_in[b], h_out[b]) over shared bin edges spanning the
    combined sample range. 0 for identical distributions, 1 for fully
    disjoint supports.
    """
    env_image = np.asarray(env_image)
    inside = env_image[roi.inside.mask(grid)]
    outside = env_image[roi.outside.mask(grid)]
    if inside.size == 0 or outside.size == 0:
        raise DomainError("both regions of a gCNR pair must contain pixels")
    if inside.size < _MIN_ROI_PIXELS or outside.size < _MIN_ROI_PIXELS:
        warnings.warn(
            f"gCNR regions have {inside.size}/{outside.size} pixels; "
            f"fewer than {_MIN_ROI_PIXELS} makes the histogram overlap noisy",
            stacklevel=2,
        )
    lo = min(inside.min(), outside.min())
    hi = max(inside.max(), outside.max())
    if hi <= lo:
        return 0.0  # all samples identical: full overlap
    edges = np.linspace(lo, hi, n_bins + 1)
    h_in, _ = np.histogram(inside, bins=edges)
    h_out, _ = np.histogram(outside, bins=edges)
    overlap = np.minimum(h_in / inside.size, h_out / outside.size).sum()
    return float(1.0 - overlap)


def fwhm(profile: np.ndarray, spacing_m: float) -> float:
    """Full width at half maximum of a 1-D envelope profile, in meters.

    The two half-maximum crossings nearest the (unique, interior) global
    peak are located by linear interpolation between samples. Returns NaN
    if the peak touches the boundary or a crossing is missing; callers
    report NaN as a failed measurement rather than raising.
    """
    profile = np.asarray(profile, dtype=np.float64)
    if profile.ndim != 1 or profile.size < 3:
        return math.nan
    peak = int(np.argmax(profile))
    if peak == 0 or peak == profile.size - 1:
        return math.nan
    half = profile[peak] / 2.0

    left = math.nan
    for i in range(peak, 0, -1):
        if profile[i - 1] <= half < profile[i]:
            frac = (profile[i] - half) / (profile[i] - profile[i - 1])
            left = i - frac
            break
    right = math.nan
    for i in range(peak, profile.size - 1):
        if profile[i + 1] <= half < profile[i]:
            frac = (profile[i] - half) / (profile[i] - profile[i + 1])
            right = i + frac
            break
    if math.isnan(left) or math.isnan(right):
        return math.nan
    return (right - left) * spacing_m


def wire_fwhm(env_image: np.ndarray, grid: ImageGrid,
              expected_xz: tuple[float, float],
              search_radius_m: float) -> tuple[float, float]:
    """(lateral, axial) FWHM of the wire peak near an expected position.

    Locates the envelope maximum within ``search_radius_m`` of the
    expected (x, z) position and measures the lateral and axial profiles
    through it. Either width is NaN when the measurement fails.
    """
    env_image = np.asarray(env_image)
    region = DiskRoi(expected_xz[0], expected_xz[1], search_radius_m).mask(grid)
    if not region.any():
        return math.nan, math.nan
    masked = np.where(region, env_image, -np.inf)
    iz, ix = np.unravel_index(int(np.argmax(masked)), env_image.shape)
    if not np.isfinite(masked[iz, ix]) or masked[iz, ix] <= 0:
        return math.nan, math.nan
    dx, dz = grid.spacing()
    lateral = fwhm(env_image[iz, :], dx)
    axial = fwhm(env_image[:, ix], dz)
    return lateral, axial


@dataclass
class MetricReport:
    """Per-method measurement rows, exportable as CSV."""

    method: str
    rows: list[dict] = field(default_factory=list)
    runtime_s: float = 0.0

    def add_gcnr(self, target: str, depth_m: float, value: float) -> None:
        if not (0.0 <= value <= 1.0 + 1e-12):
            raise DomainError(f"gCNR {value} outside [0, 1]")
        self.rows.append({
            "method": self.method, "target": target,
            "depth_mm": depth_m * 1e3, "gcnr": value,
            "fwhm_lat_um": "", "fwhm_ax_um": "",
        })

    def add_fwhm(self, target: str, depth_m: float,
                 lateral_m: float, axial_m: float) -> None:
        self.rows.append({
            "method": self.method, "target": target,
            "depth_mm": depth_m * 1e3, "gcnr": "",
            "fwhm_lat_um": lateral_m * 1e6 if not math.isnan(lateral_m) else "nan",
            "fwhm_ax_um": axial_m * 1e6 if not math.isnan(axial_m) else "nan",
        })


CSV_FIELDS = ["method", "target", "depth_mm", "gcnr", "fwhm_lat_um", "fwhm_ax_um"]
