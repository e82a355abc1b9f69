"""Transmit sequence generation and bias-encoding algebra.

A sequence is a list of transmit events. Every event carries per-row
transmit delays and apodization (rows are driven along elevation) plus a
per-column bias polarity in {+1, -1, 0} that sets the effective polarity
of every sub-element in that column, on transmit and on receive alike.

Three acquisition schemes are provided:

- ``make_forces_sequence``: one elevationally focused row-transmit per
  bias pattern, the patterns being columns of a Sylvester matrix. After
  polarity correction and decoding, the data is equivalent to n
  single-column transmits (see ``forces_decode``).
- ``make_tpw_sequence``: tilted plane waves in elevation, all biases +1.
- ``make_vls_sequence``: diverging waves from virtual line sources behind
  the aperture, walked across elevation, all biases +1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .arraymodel import ArrayConfig
from .errors import DomainError

_DELAY_ZERO_TOL = 1e-15


def hadamard(n: int) -> np.ndarray:
    """Sylvester bias matrix of order n (entries +/-1, exact integers).

    Satisfies ``H @ H.T == n * I`` and has an all-ones first row and
    column. ``n`` must be a power of two (n >= 1).
    """
    if n < 1 or (n & (n - 1)) != 0:
        raise DomainError(f"Sylvester construction requires a power of 2, got {n}")
    h = np.array([[1]], dtype=np.int64)
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h


@dataclass
class TransmitEvent:
    """One transmit: per-row delays/weights and per-column bias polarity.

    ``row_delays_s`` are zero-referenced (min = 0); ``t_ref_s`` is the
    time-origin correction a beamformer must add to its ideal transmit
    model to account for the reference shift of this event.
    ``rx_col_bias`` defaults to ``col_bias`` (the physical case: the bias
    is a DC state shared by transmit and receive within an event); it can
    be overridden to synthesize receive-only polarity patterns.
    """

    row_delays_s: np.ndarray
    row_apod: np.ndarray
    col_bias: np.ndarray
    rx_col_bias: np.ndarray | None = None
    t_ref_s: float = 0.0
    label: str = ""

    def __post_init__(self):
        self.row_delays_s = np.asarray(self.row_delays_s, dtype=np.float64)
        self.row_apod = np.asarray(self.row_apod, dtype=np.float64)
        self.col_bias = np.asarray(self.col_bias, dtype=np.int8)
        if self.rx_col_bias is not None:
            self.rx_col_bias = np.asarray(self.rx_col_bias, dtype=np.int8)
        if self.row_delays_s.size and self.row_delays_s.min() < -_DELAY_ZERO_TOL:
            raise DomainError("row delays must be non-negative (zero-referenced)")
        active = self.row_apod > 0
        if active.any() and self.row_delays_s[active].min() > 1e-12:
            raise DomainError("row delays must be zero-referenced (min delay 0)")
        if not np.isin(self.col_bias, (-1, 0, 1)).all():
            raise DomainError("col_bias entries must be in {+1, -1, 0}")

    @property
    def rx_bias(self) -> np.ndarray:
        """Effective receive-side column polarity for this event."""
        return self.col_bias if self.rx_col_bias is None else self.rx_col_bias


@dataclass
class Sequence:
    """An ordered list of transmit events plus the generating parameters."""

    kind: str
    events: list[TransmitEvent] = field(default_factory=list)
    focal_depth_m: float | None = None
    steer_y_m: float = 0.0
    angles_rad: np.ndarray | None = None
    virtual_sources: np.ndarray | None = None  # (m, 2) rows of (y_v, z_v)
    subaperture_rows: int | None = None

    @property
    def n_events(self) -> int:
        return len(self.events)


def elevational_focus_delays(
    cfg: ArrayConfig, focus_depth_m: float, steer_y_m: float = 0.0
) -> np.ndarray:
    """Per-row delays focusing the elevation aperture at depth F.

    tau_i = (max_k r_k - r_i) / c with r_i = sqrt((y_i - steer)^2 + F^2):
    outer rows fire first, the row nearest the steering point last, and
    the minimum delay is exactly 0.
    """
    if focus_depth_m <= 0:
        raise DomainError(f"focus depth must be positive, got {focus_depth_m}")
    y = cfg.row_y() - steer_y_m
    r = np.hypot(y, focus_depth_m)
    return (r.max() - r) / cfg.sound_speed_m_s


def _focus_t_ref(cfg: ArrayConfig, focus_depth_m: float, steer_y_m: float) -> float:
    # Rows co-fire at the focus at t = max_k r_k / c; an ideal in-plane line
    # source would arrive there at F / c. Beamformers add the difference.
    y = cfg.row_y() - steer_y_m
    r = np.hypot(y, focus_depth_m)
    return (r.max() - focus_depth_m) / cfg.sound_speed_m_s


def make_forces_sequence(
    cfg: ArrayConfig, focus_depth_m: float, steer_y_m: float = 0.0
) -> Sequence:
    """Aperture-encoded sequence: n events sharing one elevational focus.

    Event k applies column k of the order-n Sylvester matrix as the
    per-column bias pattern; all rows transmit with unit apodization and
    the shared focusing delay profile.
    """
    delays = elevational_focus_delays(cfg, focus_depth_m, steer_y_m)
    t_ref = _focus_t_ref(cfg, focus_depth_m, steer_y_m)
    h = hadamard(cfg.n)
    apod = np.ones(cfg.n)
    events = [
        TransmitEvent(delays, apod, h[:, k], t_ref_s=t_ref, label=f"forces_{k}")
        for k in range(cfg.n)
    ]
    return Sequence(
        "forces", events, focal_depth_m=focus_depth_m, steer_y_m=steer_y_m
    )


def make_single_column_sequence(
    cfg: ArrayConfig, focus_depth_m: float, steer_y_m: float = 0.0
) -> Sequence:
    """Direct single-column transmits: the decoding target of FORCES.

    Event k transmits with bias +1 on column k only (0 elsewhere) while
    every column receives with +1. Shares the focal delay profile of
    ``make_forces_sequence`` so records are sample-aligned with decoded
    aperture-encoded data.
    """
    delays = elevational_focus_delays(cfg, focus_depth_m, steer_y_m)
    t_ref = _focus_t_ref(cfg, focus_depth_m, steer_y_m)
    apod = np.ones(cfg.n)
    rx_all = np.ones(cfg.n, dtype=np.int8)
    events = []
    for k in range(cfg.n):
        bias = np.zeros(cfg.n, dtype=np.int8)
        bias[k] = 1
        events.append(
            TransmitEvent(
                delays, apod, bias, rx_col_bias=rx_all, t_ref_s=t_ref,
                label=f"single_col_{k}",
            )
        )
    return Sequence(
        "single_column", events, focal_depth_m=focus_depth_m, steer_y_m=steer_y_m
    )


def make_tpw_sequence(cfg: ArrayConfig, angles_rad) -> Sequence:
    """Tilted plane waves in elevation, one event per angle, biases all +1."""
    angles = np.atleast_1d(np.asarray(angles_rad, dtype=np.float64))
    if angles.size == 0:
        raise DomainError("TPW needs at least one emission angle")
    if np.abs(angles).max() > np.pi / 4:
        warnings.warn(
            "TPW angle beyond +/-45 deg: the linear delay model still holds "
            "but the geometry is unusual",
            stacklevel=2,
        )
    y = cfg.row_y()
    bias = np.ones(cfg.n, dtype=np.int8)
    apod = np.ones(cfg.n)
    events = []
    for k, theta in enumerate(angles):
        raw = y * np.sin(theta) / cfg.sound_speed_m_s
        shift = raw.min()
        events.append(
            TransmitEvent(
                raw - shift, apod, bias, t_ref_s=-shift, label=f"tpw_{k}"
            )
        )
    return Sequence("tpw", events, angles_rad=angles)


def default_tpw_angles(cfg: ArrayConfig, count: int | None = None, span_rad: float = np.deg2rad(15.0)) -> np.ndarray:
    """Uniform elevation angles over +/-span (defaults: count = n, 15 deg)."""
    if count is None:
        count = cfg.n
    return np.linspace(-span_rad, span_rad, count)


def default_virtual_sources(
    cfg: ArrayConfig, n_virtual: int | None = None, virtual_depth_m: float | None = None
) -> np.ndarray:
    """Virtual line sources walked across the elevation extent.

    Centers are laid out like the element centers of an ``n_virtual``
    element grid spanning the aperture; the default depth is half the
    elevation aperture behind the array.
    """
    if n_virtual is None:
        n_virtual = cfg.n
    if virtual_depth_m is None:
        virtual_depth_m = -0.5 * cfg.aperture_m
    y_v = (np.arange(n_virtual) - (n_virtual - 1) / 2.0) * (cfg.aperture_m / n_virtual)
    return np.column_stack([y_v, np.full(n_virtual, virtual_depth_m)])


def make_vls_sequence(
    cfg: ArrayConfig,
    n_virtual: int | None = None,
    virtual_depth_m: float | None = None,
    subaperture_rows: int | None = None,
) -> Sequence:
    """Diverging waves from virtual line sources behind the aperture.

    Each event drives a row subaperture centered on its source position
    (clipped at the array edge) with delays

        tau_i = (sqrt((y_i - y_v)^2 + z_v^2) - |z_v|) / c,

    zero-referenced over the active rows. Rows outside the subaperture get
    zero apodization; all column biases are +1.
    """
    vs = default_virtual_sources(cfg, n_virtual, virtual_depth_m)
    if (vs[:, 1] >= 0).any():
        raise DomainError("virtual source depth must be negative (behind aperture)")
    if subaperture_rows is None:
        subaperture_rows = max(1, cfg.n // 2)
    if subaperture_rows > cfg.n:
        raise DomainError(
            f"subaperture_rows={subaperture_rows} exceeds array size n={cfg.n}"
        )
    y = cfg.row_y()
    bias = np.ones(cfg.n, dtype=np.int8)
    events = []
    for k, (y_v, z_v) in enumerate(vs):
        centre = int(np.clip(round((y_v - y[0]) / cfg.pitch_m), 0, cfg.n - 1))
        start = int(np.clip(centre - (subaperture_rows - 1) // 2, 0, cfg.n - subaperture_rows))
        apod = np.zeros(cfg.n)
        apod[start : start + subaperture_rows] = 1.0
        raw = (np.hypot(y - y_v, z_v) - abs(z_v)) / cfg.sound_speed_m_s
        shift = raw[start : start + subaperture_rows].min()
        delays = np.where(apod > 0, raw - shift, 0.0)
        events.append(
            TransmitEvent(delays, apod, bias, t_ref_s=-shift, label=f"vls_{k}")
        )
    return Sequence(
        "vls",
        events,
        virtual_sources=vs,
        subaperture_rows=subaperture_rows,
    )


def forces_polarity_correct(raw, seq: Sequence):
    """Invert the sign of traces recorded on negatively biased columns.

    Trace (event k, receive column r) is multiplied by
    ``sign(col_bias_k[r])``: within an event the receive columns carry the
    same bias state as transmit, so this restores an all-positive receive
    convention ahead of decoding. The operation is an involution.
    """
    if seq.kind != "forces":
        raise DomainError(f"polarity correction applies to forces data, got {seq.kind!r}")
    if raw.n_events != seq.n_events:
        raise DomainError(
            f"event count mismatch: data has {raw.n_events}, sequence has {seq.n_events}"
        )
    signs = np.stack([np.sign(ev.col_bias).astype(np.float64) for ev in seq.events])
    if signs.shape[1] != raw.n_rx:
        raise DomainError(
            f"receive channel count mismatch: data has {raw.n_rx} columns, "
            f"bias patterns have {signs.shape[1]}"
        )
    return replace(raw, data=raw.data * signs[:, :, None])


def forces_decode(corrected, h: np.ndarray):
    """Decode polarity-corrected aperture-encoded data.

    Output event c holds ``(1/n) * sum_k H[c, k] * S_k(r, t)``, the
    synthetic record of transmitting with column c alone and receiving on
    all columns. Encoding followed by decoding is the identity because
    ``H^-1 = H.T / n``.
    """
    h = np.asarray(h)
    n = h.shape[0]
    if h.shape != (n, n):
        raise DomainError(f"bias matrix must be square, got {h.shape}")
    if corrected.n_events != n:
        raise DomainError(
            f"decode order mismatch: {corrected.n_events} events vs order-{n} matrix"
        )
    decoded = np.einsum("ck,krt->crt", h.astype(np.float64) / n, corrected.data)
    return replace(corrected, data=decoded)
