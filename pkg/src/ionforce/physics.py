"""Driven center-of-mass motion of a trapped-ion crystal.

The crystal is reduced to its axial COM coordinate: ``ion_count`` ions of
mass ``ion_mass`` oscillating together at ``omega_z``.  All quantities are SI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import constants

BE9_ION_MASS = 9.012183 * constants.atomic_mass - constants.m_e
ELEMENTARY_CHARGE = constants.e
K_B = constants.k

# below this |omega_z - omega_d| * t_d the on-resonance limit is used
RESONANCE_EPS = 1e-6
MAX_FRACTIONAL_DETUNING = 0.1
MIN_DRIVE_CYCLES = 10


def fold_phase(phi: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    return math.pi - (math.pi - phi) % (2.0 * math.pi)


@dataclass(frozen=True)
class TrapConfig:
    ion_count: int = 130
    omega_z: float = 2.0 * math.pi * 867e3
    temperature: float = 0.5e-3
    ion_mass: float = BE9_ION_MASS
    charge: float = ELEMENTARY_CHARGE
    # std-dev of the per-cycle random-walk step on omega_z (rad/s); 0 disables drift
    omega_z_drift: float = 0.0

    def __post_init__(self):
        if int(self.ion_count) != self.ion_count or self.ion_count < 1:
            raise ValueError(f"ion_count must be a positive integer, got {self.ion_count}")
        if not self.omega_z > 0:
            raise ValueError(f"omega_z must be positive, got {self.omega_z}")
        if not self.temperature >= 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if not self.ion_mass > 0:
            raise ValueError(f"ion_mass must be positive, got {self.ion_mass}")
        if not self.omega_z_drift >= 0:
            raise ValueError("omega_z_drift must be >= 0")

    @property
    def total_mass(self) -> float:
        return self.ion_count * self.ion_mass


@dataclass(frozen=True)
class DriveConfig:
    force_per_ion: float
    omega_d: float
    drive_duration: float

    def __post_init__(self):
        if not self.force_per_ion >= 0:
            raise ValueError(f"force_per_ion must be >= 0, got {self.force_per_ion}")
        if not self.omega_d > 0:
            raise ValueError(f"omega_d must be positive, got {self.omega_d}")
        if self.drive_duration < MIN_DRIVE_CYCLES * 2.0 * math.pi / self.omega_d:
            raise ValueError(
                f"drive_duration {self.drive_duration:g} s is shorter than "
                f"{MIN_DRIVE_CYCLES} drive periods"
            )

    def total_force(self, trap: TrapConfig) -> float:
        return self.force_per_ion * trap.ion_count

    @property
    def n_drive_cycles(self) -> int:
        return max(1, round(self.drive_duration * self.omega_d / (2.0 * math.pi)))

    def gated(self) -> "DriveConfig":
        """Same drive with its duration rounded to a whole number of drive periods.

        The excitation pulse is gated on zero crossings of the drive, so the
        last start pulse coincides with the end of the pulse.
        """
        duration = self.n_drive_cycles * 2.0 * math.pi / self.omega_d
        return DriveConfig(self.force_per_ion, self.omega_d, duration)


@dataclass(frozen=True)
class OscillationState:
    velocity_amplitude: float
    phase: float
    displacement_amplitude: float

    def __post_init__(self):
        if self.velocity_amplitude < 0:
            raise ValueError("velocity_amplitude must be >= 0")


@dataclass(frozen=True)
class FieldCalibration:
    field_at_ions: float
    force_per_ion: float
    applied_voltage: float | None = None
    geometry_factor: float | None = None  # field / voltage, 1/m


def steady_state_response(trap: TrapConfig, drive: DriveConfig) -> OscillationState:
    """Free COM oscillation left behind by a sinusoidal drive pulse.

    The crystal starts at rest, is driven by ``F sin(omega_d t)`` for the
    drive duration and then oscillates as ``v sin(omega_z t + phase)``, with
    ``t`` measured from the start of the drive.  A negative closed-form
    amplitude is stored as its magnitude with ``pi`` added to the phase.
    """
    wz, wd, td = trap.omega_z, drive.omega_d, drive.drive_duration
    if abs(wz - wd) / wz >= MAX_FRACTIONAL_DETUNING:
        raise ValueError(
            f"drive detuning |omega_z - omega_d|/omega_z = {abs(wz - wd) / wz:.3g} "
            f"exceeds {MAX_FRACTIONAL_DETUNING}"
        )
    # depends on the force only through the per-ion value
    f = drive.force_per_ion / trap.ion_mass
    delta = wz - wd
    if abs(delta) * td < RESONANCE_EPS:
        v = 0.5 * f * td
    else:
        v = 2.0 * f * wd / ((wz - wd) * (wz + wd)) * math.sin(0.5 * delta * td)
    phase = 0.5 * (wd - wz) * td
    if v < 0:
        v, phase = -v, phase + math.pi
    return OscillationState(v, fold_phase(phase), v / wz)


def com_displacement(trap: TrapConfig, total_force: float, drive_duration: float) -> float:
    """On-resonance COM amplitude ``F t_d / (2 n m omega_z)``."""
    return total_force * drive_duration / (2.0 * trap.ion_count * trap.ion_mass * trap.omega_z)


def thermal_extent(trap: TrapConfig, mode: str = "com") -> float:
    """RMS axial thermal extent of the COM mode or of a single ion."""
    if mode == "com":
        mass = trap.total_mass
    elif mode == "single_ion":
        mass = trap.ion_mass
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return math.sqrt(K_B * trap.temperature / (mass * trap.omega_z**2))


def thermal_velocity_rms(trap: TrapConfig) -> float:
    return math.sqrt(K_B * trap.temperature / trap.total_mass)


def calibrate_force(
    field_at_ions: float | None = None,
    applied_voltage: float | None = None,
    geometry_factor: float | None = None,
    charge: float = ELEMENTARY_CHARGE,
) -> FieldCalibration:
    """Complete a field calibration from either a field or a voltage.

    Supply ``field_at_ions`` alone, or ``applied_voltage`` together with the
    electrode ``geometry_factor`` (field per volt).  Supplying a field and a
    voltage without a geometry factor fixes the factor from their ratio.
    """
    have_field = field_at_ions is not None
    have_voltage = applied_voltage is not None
    have_geom = geometry_factor is not None
    if have_field and have_voltage and have_geom:
        raise ValueError("over-determined calibration: give a field or a voltage, not both")
    if have_field and have_voltage:
        if applied_voltage == 0:
            raise ValueError("cannot fix geometry factor from zero voltage")
        geometry_factor = field_at_ions / applied_voltage
    elif have_voltage:
        if not have_geom:
            raise ValueError("under-determined calibration: voltage needs a geometry factor")
        field_at_ions = applied_voltage * geometry_factor
    elif have_field:
        if have_geom:
            applied_voltage = field_at_ions / geometry_factor
    else:
        raise ValueError("under-determined calibration: no field or voltage given")
    return FieldCalibration(
        field_at_ions=field_at_ions,
        force_per_ion=charge * field_at_ions,
        applied_voltage=applied_voltage,
        geometry_factor=geometry_factor,
    )


@dataclass(frozen=True)
class ComTrajectory:
    """COM velocity during detection; ``t`` is measured from the start pulse.

    The driven part decays with ``damping_time`` once the detection light
    arrives at ``damping_onset``; the thermal part is a free oscillation.
    """

    omega: float
    driven_amplitude: float
    driven_phase: float
    damping_time: float = math.inf
    damping_onset: float = 0.0
    thermal_amplitude: float = 0.0
    thermal_phase: float = 0.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        arg = self.omega * t
        v = self.driven_amplitude * np.sin(arg + self.driven_phase)
        if math.isfinite(self.damping_time):
            v = v * np.exp(-np.maximum(t - self.damping_onset, 0.0) / self.damping_time)
        if self.thermal_amplitude:
            v = v + self.thermal_amplitude * np.sin(arg + self.thermal_phase)
        return v

    @property
    def max_speed(self) -> float:
        return self.driven_amplitude + self.thermal_amplitude


def com_trajectory(
    trap: TrapConfig,
    drive: DriveConfig,
    detect_window: float,
    damping_time: float = math.inf,
    thermal_seed=None,
    damping_onset: float = 0.0,
    state: OscillationState | None = None,
) -> ComTrajectory:
    """Velocity trajectory of one cycle, starting at the end of the drive.

    The thermal component has a Boltzmann-distributed energy and a uniform
    phase drawn from ``thermal_seed``; its ensemble RMS velocity is
    ``sqrt(k_B T / (n m))``.
    """
    if not damping_time > 0:
        raise ValueError("damping_time must be positive (or inf)")
    if not detect_window > 0:
        raise ValueError("detect_window must be positive")
    if state is None:
        state = steady_state_response(trap, drive)
    # carry the oscillation phase from the drive onset to the start pulse
    phase0 = fold_phase(state.phase + trap.omega_z * drive.drive_duration)
    thermal_amp = thermal_phase = 0.0
    if trap.temperature > 0:
        rng = np.random.default_rng(thermal_seed)
        energy = rng.exponential(K_B * trap.temperature)
        thermal_amp = math.sqrt(2.0 * energy / trap.total_mass)
        thermal_phase = rng.uniform(-math.pi, math.pi)
    return ComTrajectory(
        omega=trap.omega_z,
        driven_amplitude=state.velocity_amplitude,
        driven_phase=phase0,
        damping_time=damping_time,
        damping_onset=damping_onset,
        thermal_amplitude=thermal_amp,
        thermal_phase=thermal_phase,
    )
