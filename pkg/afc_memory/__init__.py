"""Spin-wave atomic frequency comb memory simulator.

Frequencies are in MHz (not angular), times in microseconds and powers in mW
throughout the package.
"""

__version__ = "0.1.0"

from .errors import AfcMemoryError
from .models import CombSpec, FieldTrace, OpticalDepthProfile, Pulse, SpectralGrid, TimeGrid
from .spectral import afc_echo_efficiency, build_comb_profile, infer_comb_params, optimize_finesse, plan_multimode
from .spinwave import MaterialParams, StorageSequence, run_storage_sequence

__all__ = [
    "AfcMemoryError",
    "CombSpec",
    "FieldTrace",
    "MaterialParams",
    "OpticalDepthProfile",
    "Pulse",
    "SpectralGrid",
    "StorageSequence",
    "TimeGrid",
    "afc_echo_efficiency",
    "build_comb_profile",
    "infer_comb_params",
    "optimize_finesse",
    "plan_multimode",
    "run_storage_sequence",
    "__version__",
]
