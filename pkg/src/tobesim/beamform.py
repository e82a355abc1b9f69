"""Delay-and-sum reconstruction for the three acquisition schemes.

- ``das_forces``: full synthetic transmit-receive focusing in azimuth on
  decoded single-column data (B-scan in the sequence's elevation plane).
- ``das_tpw``: coherent plane-wave compounding, optionally volumetric.
- ``das_vls``: virtual-line-source synthetic aperture, optionally
  volumetric.

Receive delays treat a column as a line element: the relevant distance is
``sqrt((x - x_r)^2 + z^2)`` regardless of the voxel's position along the
element. RF lookups interpolate linearly between samples; lookups outside
the recorded window contribute zero and raise a coverage warning.

One-way delay tables over the (element, depth row, lateral column)
lattice are precomputed per image so the summation loops stay
branch-light; every parallel iteration owns its output pixels, making
results independent of the worker-thread count.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .arraymodel import ArrayConfig, wavelength
from .errors import DomainError
from .sequences import Sequence
from .simulator import ChannelData, Phantom, Pulse, default_n_samples

_WINDOWS = {"rect": 0, "hann": 1}


@dataclass(frozen=True)
class ImageGrid:
    """Rectilinear pixel/voxel lattice in physical coordinates.

    ``y_plane`` selects the elevation of a 2-D scan plane; setting
    ``ny`` (with ``y_min``/``y_max``) makes the grid volumetric and
    ``y_plane`` is ignored.
    """

    x_min: float
    x_max: float
    nx: int
    z_min: float
    z_max: float
    nz: int
    y_plane: float = 0.0
    y_min: float | None = None
    y_max: float | None = None
    ny: int | None = None

    def __post_init__(self):
        if self.nx < 1 or self.nz < 1:
            raise DomainError("grid must have nx >= 1 and nz >= 1")
        if self.z_min <= 0:
            raise DomainError("grid depths must satisfy z_min > 0")
        if self.ny is not None and (self.y_min is None or self.y_max is None or self.ny < 1):
            raise DomainError("volumetric grid needs y_min, y_max and ny >= 1")

    @property
    def is_volumetric(self) -> bool:
        return self.ny is not None

    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    def z(self) -> np.ndarray:
        return np.linspace(self.z_min, self.z_max, self.nz)

    def y(self) -> np.ndarray:
        if not self.is_volumetric:
            return np.array([self.y_plane])
        return np.linspace(self.y_min, self.y_max, self.ny)

    def spacing(self) -> tuple[float, float]:
        dx = (self.x_max - self.x_min) / max(self.nx - 1, 1)
        dz = (self.z_max - self.z_min) / max(self.nz - 1, 1)
        return dx, dz


@dataclass(frozen=True)
class BeamformParams:
    """Aperture-growth and apodization settings.

    ``f_number`` gates the receive aperture (window full width is
    ``depth / f_number``); ``tx_f_number`` gates synthetic-transmit
    apertures where applicable.
    """

    f_number: float = 1.5
    tx_f_number: float = 1.5
    apod_window: str = "hann"

    def __post_init__(self):
        if self.f_number <= 0 or self.tx_f_number <= 0:
            raise DomainError("f-numbers must be positive")
        if self.apod_window not in _WINDOWS:
            raise DomainError(
                f"unknown apodization window {self.apod_window!r}; "
                f"choose one of {sorted(_WINDOWS)}"
            )


def apodization_weight(params: BeamformParams, pixel_lateral_m: float,
                       element_coord_m, depth_m: float):
    """f-number-gated window weight for one element/pixel pairing.

    The normalized offset ``u = (element - pixel) / (depth / f_number)``
    is supported on [-1/2, 1/2]; outside the weight is 0. ``rect``
    returns 1 inside, ``hann`` returns ``0.5 * (1 + cos(2 pi u))``.
    """
    u = (np.asarray(element_coord_m) - pixel_lateral_m) / (depth_m / params.f_number)
    inside = np.abs(u) <= 0.5
    if params.apod_window == "rect":
        w = np.where(inside, 1.0, 0.0)
    else:
        w = np.where(inside, 0.5 * (1.0 + np.cos(2.0 * np.pi * u)), 0.0)
    return w if w.ndim else float(w)


def _rx_delay_table(col_x, grid_x, grid_z, inv_c):
    # (element, depth row, lateral column) one-way delays in seconds
    dx = grid_x[None, None, :] - col_x[:, None, None]
    return np.sqrt(dx**2 + grid_z[None, :, None] ** 2) * inv_c


def required_samples(cfg: ArrayConfig, seq: Sequence, phantom: Phantom,
                     pulse: Pulse, grid: ImageGrid) -> int:
    """Record length covering both the phantom's echoes and every grid lookup."""
    reach_x = max(abs(grid.x_min), abs(grid.x_max)) + cfg.aperture_m / 2
    t_two_way = 2.0 * math.hypot(reach_x, grid.z_max) / cfg.sound_speed_m_s
    t_ref = max(max(ev.t_ref_s for ev in seq.events), 0.0)
    tail = 8.0 * pulse.sigma_t
    needed = int(math.ceil((t_two_way + t_ref + 2 * tail) * cfg.sampling_freq_hz)) + 1
    return max(default_n_samples(cfg, seq, phantom, pulse), needed)


@njit(inline="always")
def _window(u, win):
    if u < -0.5 or u > 0.5:
        return 0.0
    if win == 0:
        return 1.0
    return 0.5 * (1.0 + math.cos(2.0 * math.pi * u))


@njit(inline="always")
def _sample(trace, ti, nt):
    if ti < 0.0 or ti > nt - 1.000001:
        return 0.0, 1
    k = int(ti)
    if k >= nt - 1:
        k = nt - 2
    w = ti - k
    return (1.0 - w) * trace[k] + w * trace[k + 1], 0


@njit(parallel=True, fastmath=True, cache=True)
def _das_forces_kernel(data, delay_tab, col_x, grid_x, grid_z, t_ref,
                       fs, t0, fnum_rx, fnum_tx, win, img, missed):
    ne, nr, nt = data.shape
    nz = grid_z.shape[0]
    nx = grid_x.shape[0]
    for iz in prange(nz):
        z = grid_z[iz]
        aper_rx = z / fnum_rx
        aper_tx = z / fnum_tx
        miss = 0
        for ix in range(nx):
            x = grid_x[ix]
            acc = 0.0
            for c in range(ne):
                wt = _window((col_x[c] - x) / aper_tx, win)
                if wt == 0.0:
                    continue
                d_tx = delay_tab[c, iz, ix]
                for r in range(nr):
                    wr = _window((col_x[r] - x) / aper_rx, win)
                    if wr == 0.0:
                        continue
                    ti = (d_tx + delay_tab[r, iz, ix] + t_ref - t0) * fs
                    v, m = _sample(data[c, r], ti, nt)
                    miss += m
                    acc += wt * wr * v
            img[iz, ix] = acc
        missed[iz] = miss


@njit(parallel=True, fastmath=True, cache=True)
def _das_tpw_kernel(data, delay_tab, angles, t_refs, col_x, grid_x, grid_y,
                    grid_z, fs, t0, inv_c, fnum_rx, win, img, missed):
    ne, nr, nt = data.shape
    ny = grid_y.shape[0]
    nz = grid_z.shape[0]
    nx = grid_x.shape[0]
    for t in prange(ny * nz):
        iy = t // nz
        iz = t - iy * nz
        y = grid_y[iy]
        z = grid_z[iz]
        aper_rx = z / fnum_rx
        miss = 0
        for ix in range(nx):
            x = grid_x[ix]
            acc = 0.0
            for e in range(ne):
                t_tx = (z * math.cos(angles[e]) + y * math.sin(angles[e])) * inv_c
                t_tx += t_refs[e] - t0
                for r in range(nr):
                    wr = _window((col_x[r] - x) / aper_rx, win)
                    if wr == 0.0:
                        continue
                    ti = (t_tx + delay_tab[r, iz, ix]) * fs
                    v, m = _sample(data[e, r], ti, nt)
                    miss += m
                    acc += wr * v
            img[t, ix] = acc
        missed[t] = miss


@njit(parallel=True, fastmath=True, cache=True)
def _das_vls_kernel(data, delay_tab, vs_y, vs_z, t_refs, col_x, grid_x,
                    grid_y, grid_z, fs, t0, inv_c, fnum_rx, fnum_tx,
                    win, img, missed):
    ne, nr, nt = data.shape
    ny = grid_y.shape[0]
    nz = grid_z.shape[0]
    nx = grid_x.shape[0]
    for t in prange(ny * nz):
        iy = t // nz
        iz = t - iy * nz
        y = grid_y[iy]
        z = grid_z[iz]
        aper_rx = z / fnum_rx
        aper_tx = z / fnum_tx
        miss = 0
        for ix in range(nx):
            x = grid_x[ix]
            acc = 0.0
            for e in range(ne):
                wt = _window((vs_y[e] - y) / aper_tx, win)
                if wt == 0.0:
                    continue
                dy = y - vs_y[e]
                dz = z - vs_z[e]
                # diverging wave referenced to its aperture-plane crossing:
                # vs_z is negative so adding it subtracts |z_v|
                t_tx = (math.sqrt(dy * dy + dz * dz) + vs_z[e]) * inv_c
                t_tx += t_refs[e] - t0
                for r in range(nr):
                    wr = _window((col_x[r] - x) / aper_rx, win)
                    if wr == 0.0:
                        continue
                    ti = (t_tx + delay_tab[r, iz, ix]) * fs
                    v, m = _sample(data[e, r], ti, nt)
                    miss += m
                    acc += wt * wr * v
            img[t, ix] = acc
        missed[t] = miss


def _check_grid(cfg: ArrayConfig, grid: ImageGrid) -> None:
    lam = wavelength(cfg)
    dx, dz = grid.spacing()
    if (grid.nx > 1 and dx > lam / 2) or (grid.nz > 1 and dz > lam / 2):
        warnings.warn(
            f"grid spacing ({dx:.3e}, {dz:.3e}) m exceeds lambda/2 = "
            f"{lam / 2:.3e} m; the image may alias",
            stacklevel=3,
        )


def _warn_coverage(missed: np.ndarray, label: str) -> None:
    total = int(missed.sum())
    if total:
        warnings.warn(
            f"{label}: {total} delay lookups fell outside the recorded time "
            "window and contributed zero",
            stacklevel=3,
        )


def das_forces(decoded: ChannelData, cfg: ArrayConfig, seq: Sequence,
               grid: ImageGrid, params: BeamformParams | None = None) -> np.ndarray:
    """Synthetic transmit-receive azimuthal focusing of decoded data.

    The event axis of ``decoded`` must index synthetic transmit columns.
    The grid plane must coincide with the sequence's elevation focus
    plane; no elevational refocusing is attempted.
    """
    params = params or BeamformParams()
    if grid.is_volumetric:
        raise DomainError("decoded-column beamforming produces a single scan plane")
    if abs(grid.y_plane - seq.steer_y_m) > 1e-12:
        raise DomainError(
            f"grid y_plane={grid.y_plane} must equal the sequence elevation "
            f"plane {seq.steer_y_m}"
        )
    if decoded.n_rx != cfg.n or decoded.n_events != cfg.n:
        raise DomainError("decoded data shape does not match the array")
    _check_grid(cfg, grid)
    gx, gz = grid.x(), grid.z()
    delay_tab = _rx_delay_table(cfg.column_x(), gx, gz, 1.0 / cfg.sound_speed_m_s)
    img = np.zeros((grid.nz, grid.nx))
    missed = np.zeros(grid.nz, dtype=np.int64)
    _das_forces_kernel(
        decoded.data, delay_tab, cfg.column_x(), gx, gz,
        seq.events[0].t_ref_s, decoded.fs_hz, decoded.t0_s,
        params.f_number, params.tx_f_number,
        _WINDOWS[params.apod_window], img, missed,
    )
    _warn_coverage(missed, "das_forces")
    return img


def das_tpw(data: ChannelData, cfg: ArrayConfig, seq: Sequence,
            grid: ImageGrid, params: BeamformParams | None = None) -> np.ndarray:
    """Plane-wave compounding with line-element receive focusing.

    Returns a (nz, nx) image for a scan-plane grid or a (ny, nz, nx)
    volume for a volumetric grid.
    """
    params = params or BeamformParams()
    if seq.kind != "tpw":
        raise DomainError(f"das_tpw expects a tpw sequence, got {seq.kind!r}")
    if data.n_events != seq.n_events:
        raise DomainError("one data event per emission angle is required")
    _check_grid(cfg, grid)
    gx, gy, gz = grid.x(), grid.y(), grid.z()
    inv_c = 1.0 / cfg.sound_speed_m_s
    delay_tab = _rx_delay_table(cfg.column_x(), gx, gz, inv_c)
    t_refs = np.array([ev.t_ref_s for ev in seq.events])
    img = np.zeros((gy.size * gz.size, gx.size))
    missed = np.zeros(gy.size * gz.size, dtype=np.int64)
    _das_tpw_kernel(
        data.data, delay_tab, np.asarray(seq.angles_rad, dtype=np.float64),
        t_refs, cfg.column_x(), gx, gy, gz, data.fs_hz, data.t0_s, inv_c,
        params.f_number, _WINDOWS[params.apod_window], img, missed,
    )
    _warn_coverage(missed, "das_tpw")
    shaped = img.reshape(gy.size, gz.size, gx.size)
    return shaped if grid.is_volumetric else shaped[0]


def das_vls(data: ChannelData, cfg: ArrayConfig, seq: Sequence,
            grid: ImageGrid, params: BeamformParams | None = None) -> np.ndarray:
    """Virtual-line-source synthetic aperture reconstruction.

    Transmit delays reference each diverging wavefront to its crossing of
    the aperture plane; elevation focusing is synthetic over the walked
    sources, azimuth focusing is dynamic on receive.
    """
    params = params or BeamformParams()
    if seq.kind != "vls":
        raise DomainError(f"das_vls expects a vls sequence, got {seq.kind!r}")
    if data.n_events != seq.n_events:
        raise DomainError("one data event per virtual source is required")
    _check_grid(cfg, grid)
    gx, gy, gz = grid.x(), grid.y(), grid.z()
    inv_c = 1.0 / cfg.sound_speed_m_s
    delay_tab = _rx_delay_table(cfg.column_x(), gx, gz, inv_c)
    t_refs = np.array([ev.t_ref_s for ev in seq.events])
    vs = np.asarray(seq.virtual_sources, dtype=np.float64)
    img = np.zeros((gy.size * gz.size, gx.size))
    missed = np.zeros(gy.size * gz.size, dtype=np.int64)
    _das_vls_kernel(
        data.data, delay_tab, np.ascontiguousarray(vs[:, 0]),
        np.ascontiguousarray(vs[:, 1]), t_refs, cfg.column_x(), gx, gy, gz,
        data.fs_hz, data.t0_s, inv_c, params.f_number, params.tx_f_number,
        _WINDOWS[params.apod_window], img, missed,
    )
    _warn_coverage(missed, "das_vls")
    shaped = img.reshape(gy.size, gz.size, gx.size)
    return shaped if grid.is_volumetric else shaped[0]
