"""Phase-coherent Doppler-velocimetry force detection with trapped-ion crystals."""

__version__ = "0.1.0"

from .analysis import (
    ArrivalHistogram,
    SensitivityReport,
    SpectrumResult,
    amplitude_proxy,
    build_histogram,
    fit_exponential_background,
    frequency_sweep,
    power_spectrum,
    sensitivity_report,
)
from .photons import CycleTrace, DetectionConfig, generate_cycle, run_experiment, scatter_rate
from .physics import (
    DriveConfig,
    FieldCalibration,
    OscillationState,
    TrapConfig,
    calibrate_force,
    com_displacement,
    com_trajectory,
    steady_state_response,
    thermal_extent,
)
