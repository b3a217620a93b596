"""Shot-noise-limited sensitivity projections (no Monte Carlo).

The expected histogram of a phase-locked run is known in closed form, so the
expected spectral peak and the Poisson noise floor follow directly.  The
force sensitivity ``F sqrt(tau_M) / SNR`` does not depend on the number of
cycles or on the force itself in the linear regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import i0e, i1e

from .photons import DetectionConfig
from .physics import DriveConfig, TrapConfig, steady_state_response


def expected_counts(trap, drive, det: DetectionConfig, n_cycles: float = 1.0):
    """Bin centers and expected counts per bin (MCS mode, no thermal motion)."""
    n_bins = int(round(det.detect_window / det.bin_width))
    edges = np.arange(n_bins + 1) * det.bin_width
    t = 0.5 * (edges[1:] + edges[:-1])
    gated = drive.gated()
    st = steady_state_response(trap, gated)
    phase0 = st.phase + trap.omega_z * gated.drive_duration
    v = st.velocity_amplitude * np.sin(trap.omega_z * t + phase0)
    if math.isfinite(det.damping_time):
        v = v * np.exp(-np.maximum(t - det.hardware_delay, 0.0) / det.damping_time)
    depth = 2.0 * det.wavevector / det.gamma * v
    lam = n_cycles * det.base_rate * det.bin_width * np.maximum(1.0 + depth, 0.0)
    lam[t < det.hardware_delay] = 0.0
    return t, lam


def rice_mean_ratio(snr_ideal: float) -> float:
    """Mean magnitude of signal+noise over mean noise magnitude.

    ``snr_ideal`` is the noise-free peak magnitude over the mean noise
    magnitude; the result is what the estimator in ``power_spectrum`` returns
    on average.
    """
    # nu^2 / (2 sigma^2) with mean noise magnitude sigma sqrt(pi/2)
    x = -(snr_ideal**2) * math.pi / 4.0
    # Laguerre L_{1/2}(x) with exponentially scaled Bessel functions
    return float((1.0 - x) * i0e(-x / 2.0) - x * i1e(-x / 2.0))


def expected_snr(
    trap: TrapConfig,
    drive: DriveConfig,
    det: DetectionConfig,
    n_cycles: float,
    exclude_before: float | None = None,
    target_hz: float | None = None,
    rice: bool = False,
) -> float:
    """Expected spectral SNR of an MCS run with a rectangular window."""
    if det.base_rate == 0:
        return 0.0
    start = det.hardware_delay if exclude_before is None else exclude_before
    t, lam = expected_counts(trap, drive, det, n_cycles)
    keep = t >= start
    lam = lam[keep]
    y = lam - lam.mean()
    spec = np.fft.rfft(y)
    freqs = np.fft.rfftfreq(y.size, det.bin_width)
    target = trap.omega_z / (2.0 * math.pi) if target_hz is None else target_hz
    k = int(np.argmin(np.abs(freqs - target)))
    signal = abs(spec[k])
    # mean Rayleigh magnitude of Poisson noise
    noise = math.sqrt(math.pi / 4.0 * lam.sum())
    ideal = signal / noise
    return rice_mean_ratio(ideal) if rice else ideal


def cycle_time(drive: DriveConfig, det: DetectionConfig, overhead: float) -> float:
    return overhead + drive.gated().drive_duration + det.detect_window


def projected_force_sensitivity(
    trap: TrapConfig,
    drive_duration: float,
    det: DetectionConfig,
    cycle_overhead: float,
    exclude_before: float | None = None,
) -> float:
    """Force sensitivity (N/sqrt(Hz)) for an on-resonance, shot-noise-limited run.

    Returns ``inf`` when no photons are detected.
    """
    # small reference force keeps the linear rate model unclamped
    ref = DriveConfig(1e-26, trap.omega_z, drive_duration)
    snr1 = expected_snr(trap, ref, det, 1.0, exclude_before)
    if snr1 == 0:
        return math.inf
    return ref.total_force(trap) * math.sqrt(cycle_time(ref, det, cycle_overhead)) / snr1


@dataclass(frozen=True)
class BudgetRow:
    label: str
    ion_count: int
    drive_duration: float
    base_rate: float
    cycle_time: float
    force_sensitivity: float  # N/sqrt(Hz)
    field_sensitivity: float  # V/m/sqrt(Hz)

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        for key in ("force_sensitivity", "field_sensitivity"):
            if not math.isfinite(d[key]):
                d[key] = "unbounded"
        return d


def _row(label, trap, td, det, overhead, exclude_before):
    fs = projected_force_sensitivity(trap, td, det, overhead, exclude_before)
    ref = DriveConfig(0.0, trap.omega_z, td)
    return BudgetRow(
        label=label,
        ion_count=trap.ion_count,
        drive_duration=td,
        base_rate=det.base_rate,
        cycle_time=cycle_time(ref, det, overhead),
        force_sensitivity=fs,
        field_sensitivity=fs / (trap.ion_count * trap.charge),
    )


def sensitivity_budget(
    trap: TrapConfig,
    det: DetectionConfig,
    drive_duration: float = 1e-3,
    cycle_overhead: float = 385e-6,
    long_drive_ion_count: int = 60,
    long_drive_duration: float = 10e-3,
    collection_gain: float = 100.0,
    field_mode_ion_count: int = 1_000_000,
    exclude_before: float | None = None,
) -> list[BudgetRow]:
    """Improvement chain from the measured configuration to a single ion.

    Rows, each building on the previous one: the measured configuration;
    fewer ions with a longer drive; ``collection_gain`` times more detected
    light; no dead time between cycles; a single ion.  A last row projects
    the electric-field sensitivity of a large crystal under the measured
    conditions.  The per-ion detected rate ``base_rate / ion_count`` is held
    fixed whenever the ion number changes.
    """
    rho = det.base_rate / trap.ion_count

    def with_ions(n, det_, gain=1.0):
        return replace(trap, ion_count=n), replace(det_, base_rate=rho * gain * n)

    rows = [_row("measured", trap, drive_duration, det, cycle_overhead, exclude_before)]
    t2, d2 = with_ions(long_drive_ion_count, det)
    rows.append(_row("long drive, fewer ions", t2, long_drive_duration, d2, cycle_overhead, exclude_before))
    t3, d3 = with_ions(long_drive_ion_count, det, collection_gain)
    rows.append(_row(f"collection x{collection_gain:g}", t3, long_drive_duration, d3, cycle_overhead, exclude_before))
    rows.append(_row("no dead time", t3, long_drive_duration, d3, 0.0, exclude_before))
    t5, d5 = with_ions(1, det, collection_gain)
    rows.append(_row("single ion", t5, long_drive_duration, d5, 0.0, exclude_before))
    t6, d6 = with_ions(field_mode_ion_count, det)
    rows.append(_row("field mode, large crystal", t6, drive_duration, d6, cycle_overhead, exclude_before))
    return rows
