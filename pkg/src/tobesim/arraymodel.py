"""Row-column aperture geometry and derived acoustic quantities.

Coordinate convention used throughout the package:

- ``x`` is azimuth: columns are enumerated along x and are long in y.
- ``y`` is elevation: rows are enumerated along y and are long in x.
- ``z`` is depth, positive into the medium.
- The aperture is centered at the origin in the ``z = 0`` plane, so
  sub-element ``(row i, col j)`` sits at
  ``((j - (n-1)/2) * pitch, (i - (n-1)/2) * pitch, 0)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

DEFAULT_SOUND_SPEED_M_S = 1540.0


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class ArrayConfig:
    """Geometry and acoustics of an n x n row-column aperture.

    Parameters
    ----------
    n : int
        Element count per side. Must be a power of two (required by the
        Sylvester construction used for bias encoding).
    center_freq_hz : float
        Transmit center frequency in Hz.
    pitch_m : float, optional
        Element pitch in meters. Defaults to one wavelength
        (``sound_speed / center_freq``).
    frac_bandwidth : float
        Fractional -6 dB bandwidth of the transmit pulse, in (0, 1].
    sound_speed_m_s : float
        Medium sound speed in m/s.
    sampling_freq_hz : float, optional
        RF sampling rate in Hz. Defaults to ``4 * center_freq_hz`` and must
        be at least that.
    """

    n: int
    center_freq_hz: float
    pitch_m: float = 0.0
    frac_bandwidth: float = 0.6
    sound_speed_m_s: float = DEFAULT_SOUND_SPEED_M_S
    sampling_freq_hz: float = 0.0

    def __post_init__(self):
        if not _is_power_of_two(self.n):
            raise DomainError(f"n must be a power of 2, got n={self.n}")
        if self.center_freq_hz <= 0:
            raise DomainError("center_freq_hz must be positive")
        if self.sound_speed_m_s <= 0:
            raise DomainError("sound_speed_m_s must be positive")
        if not 0 < self.frac_bandwidth <= 1:
            raise DomainError(
                f"frac_bandwidth must be in (0, 1], got {self.frac_bandwidth}"
            )
        if self.pitch_m == 0.0:
            object.__setattr__(
                self, "pitch_m", self.sound_speed_m_s / self.center_freq_hz
            )
        if self.pitch_m <= 0:
            raise DomainError("pitch_m must be positive")
        if self.sampling_freq_hz == 0.0:
            object.__setattr__(self, "sampling_freq_hz", 4.0 * self.center_freq_hz)
        if self.sampling_freq_hz < 4.0 * self.center_freq_hz:
            raise DomainError(
                "sampling_freq_hz must be at least 4 x center_freq_hz "
                f"({4.0 * self.center_freq_hz:.6g} Hz), got "
                f"{self.sampling_freq_hz:.6g} Hz"
            )

    @property
    def aperture_m(self) -> float:
        """Full aperture width ``n * pitch`` (same in x and y)."""
        return self.n * self.pitch_m

    def column_x(self) -> np.ndarray:
        """Azimuth center coordinate of every column, shape (n,)."""
        return (np.arange(self.n) - (self.n - 1) / 2.0) * self.pitch_m

    def row_y(self) -> np.ndarray:
        """Elevation center coordinate of every row, shape (n,)."""
        return (np.arange(self.n) - (self.n - 1) / 2.0) * self.pitch_m


def wavelength(cfg: ArrayConfig) -> float:
    """Acoustic wavelength ``sound_speed / center_freq`` in meters."""
    return cfg.sound_speed_m_s / cfg.center_freq_hz


def subelement_position(cfg: ArrayConfig, row: int, col: int) -> tuple[float, float, float]:
    """Center of sub-element (row, col) as ``(x, y, z)`` in meters, z = 0.

    Raises
    ------
    DomainError
        If either index is outside ``[0, cfg.n)``.
    """
    if not (0 <= row < cfg.n and 0 <= col < cfg.n):
        raise DomainError(
            f"sub-element index ({row}, {col}) out of range for n={cfg.n}"
        )
    half = (cfg.n - 1) / 2.0
    return ((col - half) * cfg.pitch_m, (row - half) * cfg.pitch_m, 0.0)
