"""Simulation and reconstruction toolkit for bias-switchable row-column arrays."""

from .arraymodel import ArrayConfig, subelement_position, wavelength
from .beamform import (
    BeamformParams,
    ImageGrid,
    apodization_weight,
    das_forces,
    das_tpw,
    das_vls,
    required_samples,
)
from .errors import ConfigError, DomainError
from .metrics import AnnulusRoi, DiskRoi, MetricReport, RoiPair, fwhm, gcnr, wire_fwhm
from .phantoms import (
    SpeckleSpec,
    cyst_phantom,
    load_scatterers_csv,
    save_scatterers_csv,
    seeded_speckle,
    wire_phantom,
)
from .postproc import (
    BModeImage,
    VolumeImage,
    VolumeSpec,
    cross_plane,
    envelope,
    forces_bscan,
    log_compress,
    stitch_volume,
)
from .sequences import (
    Sequence,
    TransmitEvent,
    elevational_focus_delays,
    forces_decode,
    forces_polarity_correct,
    hadamard,
    make_forces_sequence,
    make_single_column_sequence,
    make_tpw_sequence,
    make_vls_sequence,
)
from .simulator import (
    ChannelData,
    Phantom,
    Pulse,
    add_noise,
    excitation,
    load_rccd,
    save_rccd,
    simulate,
    simulate_reference,
)

__version__ = "0.1.0"
