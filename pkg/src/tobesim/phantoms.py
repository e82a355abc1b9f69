"""Deterministic phantom generators: wires, speckle and anechoic cysts.

Wires are single point scatterers in the scan plane (a 100 um physical
wire is sub-resolution at the frequencies of interest). Speckle is a
Poisson-count uniform cloud with standard-normal amplitudes, fully
determined by (parameters, seed).

Scatterer lists round-trip through CSV (columns x_m, y_m, z_m,
amplitude); region-of-interest annotations travel in the experiment
config, not in the CSV.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .metrics import RoiPair
from .simulator import Phantom

DEFAULT_WIRE_AMPLITUDE = 1.0

_CSV_COLUMNS = ["x_m", "y_m", "z_m", "amplitude"]


@dataclass(frozen=True)
class SpeckleSpec:
    """Uniform scatterer cloud inside an axis-aligned box.

    ``density_per_lambda3`` counts scatterers per cubic wavelength
    (``wavelength_m`` supplies the scale); amplitudes are zero-mean unit
    Gaussian. The expected count is density * volume / lambda^3 and the
    realized count is Poisson with that mean.
    """

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float
    density_per_lambda3: float
    wavelength_m: float
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min and self.z_max > self.z_min):
            raise DomainError("speckle box must have positive extent on every axis")
        if self.z_min <= 0:
            raise DomainError("speckle region must sit at z > 0")
        if self.density_per_lambda3 <= 0 or self.wavelength_m <= 0:
            raise DomainError("density and wavelength must be positive")

    @property
    def volume_m3(self) -> float:
        return (
            (self.x_max - self.x_min)
            * (self.y_max - self.y_min)
            * (self.z_max - self.z_min)
        )

    @property
    def expected_count(self) -> float:
        return self.density_per_lambda3 * self.volume_m3 / self.wavelength_m**3


def seeded_speckle(spec: SpeckleSpec) -> np.ndarray:
    """Scatterer array (N, 4) of (x, y, z, amplitude), seed-deterministic."""
    rng = np.random.default_rng(spec.rng_seed)
    count = int(rng.poisson(spec.expected_count))
    lows = np.array([spec.x_min, spec.y_min, spec.z_min])
    highs = np.array([spec.x_max, spec.y_max, spec.z_max])
    pos = rng.uniform(lows, highs, size=(count, 3))
    amp = rng.standard_normal(count)
    return np.column_stack([pos, amp])


def wire_phantom(positions_xz, amplitude: float = DEFAULT_WIRE_AMPLITUDE) -> Phantom:
    """Point wires in the y = 0 scan plane, one ROI annotation per wire."""
    positions = np.atleast_2d(np.asarray(positions_xz, dtype=np.float64))
    if positions.shape[1] != 2:
        raise DomainError("wire positions must be (x, z) pairs")
    if (positions[:, 1] <= 0).any():
        raise DomainError("wire depths must satisfy z > 0")
    scat = np.column_stack([
        positions[:, 0],
        np.zeros(len(positions)),
        positions[:, 1],
        np.full(len(positions), amplitude),
    ])
    rois = {f"wire_{i}": (float(x), float(z)) for i, (x, z) in enumerate(positions)}
    return Phantom(scat, rois=rois)


def save_scatterers_csv(path, phantom: Phantom) -> None:
    """Write the scatterer list as CSV with columns x_m, y_m, z_m, amplitude."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for row in phantom.scatterers:
            writer.writerow([repr(float(v)) for v in row])


def load_scatterers_csv(path) -> np.ndarray:
    """Read a scatterer CSV written by ``save_scatterers_csv``; (N, 4) array."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _CSV_COLUMNS:
            raise DomainError(f"{path}: expected header {','.join(_CSV_COLUMNS)}")
        try:
            rows = [[float(v) for v in row] for row in reader if row]
        except ValueError as exc:
            raise DomainError(f"{path}: {exc}") from exc
    return np.asarray(rows, dtype=np.float64).reshape(-1, 4)


def cyst_phantom(cyst_center, cyst_radius_m: float, speckle: SpeckleSpec) -> Phantom:
    """Anechoic sphere in speckle with an attached in/out ROI pair.

    Speckle scatterers are generated over the whole region, then every
    scatterer strictly within the cyst radius is removed; the exclusion
    is exact by construction.
    """
    cx, cy, cz = (float(v) for v in cyst_center)
    if cyst_radius_m < 0:
        raise DomainError("cyst radius must be non-negative")
    inside_box = (
        speckle.x_min <= cx <= speckle.x_max
        and speckle.y_min <= cy <= speckle.y_max
        and speckle.z_min <= cz <= speckle.z_max
    )
    if not inside_box:
        raise DomainError("cyst center must lie inside the speckle region")
    scat = seeded_speckle(speckle)
    if cyst_radius_m > 0 and scat.size:
        d2 = ((scat[:, :3] - np.array([cx, cy, cz])) ** 2).sum(axis=1)
        scat = scat[d2 >= cyst_radius_m**2]
    cell_estimate = speckle.density_per_lambda3 * 10.0  # ~10 lambda^3 per cell
    if cell_estimate < 10.0:
        warnings.warn(
            "speckle density is low for fully developed speckle statistics",
            stacklevel=2,
        )
    phantom = Phantom(scat, rng_seed=speckle.rng_seed)
    if cyst_radius_m > 0:
        phantom.rois["cyst"] = RoiPair.for_cyst(cx, cz, cyst_radius_m)
    return phantom
