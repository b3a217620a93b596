"""Histograms, background fits, spectra and sensitivity figures."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from .photons import CycleTrace, DetectionConfig, run_experiment
from .physics import (
    DriveConfig,
    TrapConfig,
    com_displacement,
    steady_state_response,
)

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ArrivalHistogram:
    bin_edges: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    n_cycles: int
    acquisition_mode: str = "mcs_multi_photon"

    def __post_init__(self):
        if len(self.bin_edges) != len(self.counts) + 1:
            raise ValueError("bin_edges must have one more entry than counts")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def build_histogram(
    traces: list[CycleTrace],
    bin_width: float,
    window: float | None = None,
    acquisition_mode: str = "mcs_multi_photon",
) -> ArrivalHistogram:
    """Count events from all cycles in uniform bins starting at t = 0.

    ``window`` fixes the histogram span; without it the span is the last
    event rounded up to a whole bin.
    """
    if not traces:
        raise ValueError("no traces to histogram")
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    times = np.concatenate([np.asarray(tr.arrival_times, dtype=float) for tr in traces])
    if window is None:
        window = times.max() if times.size else bin_width
    n_bins = max(1, int(math.ceil(window / bin_width - 1e-9)))
    edges = np.arange(n_bins + 1) * bin_width
    idx = np.floor(times / bin_width).astype(np.int64)
    idx = idx[(idx >= 0) & (times <= window)]
    counts = np.bincount(np.minimum(idx, n_bins - 1), minlength=n_bins)
    return ArrivalHistogram(edges, counts, len(traces), acquisition_mode)


@dataclass(frozen=True)
class ExponentialFit:
    amplitude: float  # value of the fit at t = 0
    decay_time: float
    times: np.ndarray = field(repr=False)
    fitted: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)
    first_bin: int = 0


def _first_populated_bin(hist: ArrivalHistogram) -> int:
    nz = np.flatnonzero(hist.counts)
    return int(nz[0]) if nz.size else 0


def _usable_slice(hist: ArrivalHistogram, start: float | None) -> int:
    if start is None:
        return _first_populated_bin(hist)
    return int(np.searchsorted(hist.bin_edges[:-1], start - 1e-6 * hist.bin_width))


def fit_exponential_background(hist: ArrivalHistogram, start: float | None = None) -> ExponentialFit:
    """Weighted least-squares fit of ``A exp(-t/tau)`` to the histogram.

    Only bins whose left edge is at or after ``start`` are used (default: the
    first populated bin).  Weights are ``1/sqrt(max(count, 1))``.
    """
    i0 = _usable_slice(hist, start)
    y = hist.counts[i0:].astype(float)
    t = hist.centers[i0:]
    if y.size < 5:
        raise ValueError(f"need at least 5 bins for the exponential fit, got {y.size}")
    if not np.any(y > 0):
        raise ValueError("no counts to fit")
    t0 = t[0]
    x = t - t0

    pos = y > 0
    if pos.sum() >= 2 and np.ptp(x[pos]) > 0:
        slope, icpt = np.polyfit(x[pos], np.log(y[pos]), 1, w=np.sqrt(y[pos]))
    else:
        slope, icpt = 0.0, math.log(y.max())
    # a flat or rising histogram has no finite decay time; start from a long one
    rate0 = max(-slope, 1.0 / (100.0 * max(x[-1], hist.bin_width)))
    p0 = (math.exp(icpt), rate0)

    def model(x, a, r):
        return a * np.exp(-r * x)

    try:
        (a, r), _ = curve_fit(
            model, x, y, p0=p0, sigma=np.sqrt(np.maximum(y, 1.0)), maxfev=10000
        )
    except RuntimeError as exc:
        raise RuntimeError(f"exponential fit did not converge: {exc}") from exc
    if not (np.isfinite(a) and np.isfinite(r)):
        raise RuntimeError("exponential fit did not converge")
    fitted = model(x, a, r)
    tau = 1.0 / r if r != 0 else math.inf
    return ExponentialFit(
        amplitude=float(a * math.exp(r * t0)),
        decay_time=float(tau),
        times=t,
        fitted=fitted,
        residuals=y - fitted,
        first_bin=i0,
    )


def background_residuals(hist: ArrivalHistogram, start: float | None = None):
    """Counts minus the smooth background, and the background itself.

    TAC histograms carry the first-photon exponential; MCS histograms a flat
    level, estimated by the mean.
    """
    if hist.acquisition_mode == "tac_first_photon":
        fit = fit_exponential_background(hist, start)
        return fit.times, fit.residuals, fit.fitted
    i0 = _usable_slice(hist, start)
    y = hist.counts[i0:].astype(float)
    if y.size == 0:
        raise ValueError("no bins after start")
    bg = np.full_like(y, y.mean())
    return hist.centers[i0:], y - bg, bg


def amplitude_proxy(data) -> float:
    """Spread used as an oscillation-amplitude proxy.

    For an :class:`ArrivalHistogram`, the count-weighted standard deviation
    of arrival times.  For an array of background residuals (one slice of a
    response map), the standard deviation of the residual values.
    """
    if isinstance(data, ArrivalHistogram):
        w = data.counts.astype(float)
        if w.sum() == 0:
            raise ValueError("histogram has no counts")
        c = data.centers
        mean = np.average(c, weights=w)
        return float(math.sqrt(np.average((c - mean) ** 2, weights=w)))
    r = np.asarray(data, dtype=float)
    if r.size == 0:
        raise ValueError("empty residual slice")
    return float(r.std())


@dataclass(frozen=True)
class SweepResult:
    omegas: np.ndarray
    times: np.ndarray
    response_map: np.ndarray  # rows: drive frequency, columns: time bin
    proxy: np.ndarray
    noise_floor: np.ndarray  # shot-noise std of a residual slice
    theory_velocity: np.ndarray
    theory_map: np.ndarray
    omega_z: float
    drive_duration: float

    @property
    def detuning_hz(self) -> np.ndarray:
        return (self.omegas - self.omega_z) / (2.0 * math.pi)

    @property
    def signal_proxy(self) -> np.ndarray:
        """Proxy with the shot-noise floor removed in quadrature."""
        return np.sqrt(np.maximum(self.proxy**2 - self.noise_floor**2, 0.0))


def _sweep_point(trap, drive, cfg, omega, n_cycles, seed, start, workers):
    d = DriveConfig(drive.force_per_ion, omega, drive.drive_duration)
    traces = run_experiment(trap, d, cfg, n_cycles, seed, workers=workers)
    hist = build_histogram(traces, cfg.bin_width, cfg.detect_window, cfg.acquisition_mode)
    times, resid, bg = background_residuals(hist, start)
    return times, resid, float(math.sqrt(max(bg.mean(), 0.0)))


def sweep_point_seed(base_seed: int, index: int) -> int:
    # cycle indices stay below 2**32, so seeds never collide between points
    return int(base_seed) + (int(index) << 32)


def frequency_sweep(
    trap: TrapConfig,
    drive: DriveConfig,
    cfg: DetectionConfig,
    omegas,
    n_cycles: int,
    base_seed: int = 0,
    exclude_before: float | None = None,
    workers: int = 1,
) -> SweepResult:
    """Residual histograms and amplitude proxy for each drive frequency.

    ``drive`` provides the force and drive duration; its frequency is
    replaced by each entry of ``omegas`` (rad/s).
    """
    omegas = np.asarray(omegas, dtype=float)
    if omegas.size == 0:
        raise ValueError("empty frequency grid")
    start = cfg.hardware_delay if exclude_before is None else exclude_before
    args = [
        (trap, drive, cfg, w, n_cycles, sweep_point_seed(base_seed, i), start, 1)
        for i, w in enumerate(omegas)
    ]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(lambda a: _sweep_point(*a), args))
    else:
        points = [_sweep_point(*a) for a in args]
    width = min(len(p[1]) for p in points)
    times = points[0][0][:width]
    rmap = np.vstack([p[1][:width] for p in points])
    proxy = np.array([amplitude_proxy(row) for row in rmap])
    floor = np.array([p[2] for p in points])
    theory_v, theory_map = sweep_theory(trap, drive, cfg, omegas, times, n_cycles)
    return SweepResult(
        omegas=omegas,
        times=times,
        response_map=rmap,
        proxy=proxy,
        noise_floor=floor,
        theory_velocity=theory_v,
        theory_map=theory_map,
        omega_z=trap.omega_z,
        drive_duration=drive.drive_duration,
    )


def sweep_theory(trap, drive, cfg, omegas, times, n_cycles):
    """Closed-form velocity amplitude and expected modulation counts per bin.

    Undamped and background-free, like an idealized response map.
    """
    vel = np.empty(len(omegas))
    tmap = np.empty((len(omegas), len(times)))
    scale = n_cycles * cfg.base_rate * cfg.bin_width * 2.0 * cfg.wavevector / cfg.gamma
    for i, w in enumerate(omegas):
        d = DriveConfig(drive.force_per_ion, w, drive.drive_duration).gated()
        st = steady_state_response(trap, d)
        vel[i] = st.velocity_amplitude
        phase0 = st.phase + trap.omega_z * d.drive_duration
        tmap[i] = scale * st.velocity_amplitude * np.sin(trap.omega_z * times + phase0)
    return vel, tmap


@dataclass(frozen=True)
class ResponseFit:
    """Least-squares fit ``proxy**2 = scale * sinc((f - center) * duration)**2 + offset``.

    The squared proxy is a slice variance, so the driven part and the shot
    noise add.  ``duration`` is the effective drive time seen by the data;
    the response vanishes at ``center +- 1/duration``.
    """

    center: float
    duration: float
    scale: float
    offset: float

    @property
    def nulls(self) -> tuple[float, float]:
        return self.center - 1.0 / self.duration, self.center + 1.0 / self.duration

    def __call__(self, detuning):
        f = np.asarray(detuning, dtype=float)
        return np.sqrt(self.scale * np.sinc((f - self.center) * self.duration) ** 2 + self.offset)


def fit_response_shape(detuning, proxy) -> ResponseFit:
    """Fit the resonant response shape to a proxy curve (center and width free)."""
    f = np.asarray(detuning, dtype=float)
    y2 = np.square(np.asarray(proxy, dtype=float))
    if f.size < 5:
        raise ValueError("need at least 5 sweep points")
    ipk = int(np.argmax(y2))
    lo, hi = float(y2.min()), float(y2.max())
    if not hi > lo:
        raise ValueError("proxy curve is flat")
    try:
        width0 = fwhm(f, np.sqrt(np.maximum(y2 - lo, 0.0)))
    except ValueError:
        width0 = 0.25 * (f[-1] - f[0])
    # |sinc| falls to one half at 0.603 of the first-null distance
    t0 = 1.207 / width0
    span = f[-1] - f[0]

    def model(x, c, t, a, b):
        return a * np.sinc((x - c) * t) ** 2 + b

    try:
        popt, _ = curve_fit(
            model,
            f,
            y2,
            p0=[f[ipk], t0, hi - lo, lo],
            bounds=([f[0], 1.0 / span, 0.0, 0.0], [f[-1], 50.0 / span, np.inf, np.inf]),
            maxfev=20000,
        )
    except RuntimeError as exc:
        raise ValueError(f"response fit did not converge: {exc}") from None
    return ResponseFit(*map(float, popt))


def find_nulls(detuning, proxy, method: str = "fit") -> tuple[float, float]:
    """Detunings where the driven response vanishes on either side of the peak.

    ``method="fit"`` uses :func:`fit_response_shape`, which draws on every
    sweep point; ``"argmin"`` takes the deepest proxy minimum on each side,
    which is only reliable when the response near the nulls is well above
    the shot noise.
    """
    detuning = np.asarray(detuning, dtype=float)
    proxy = np.asarray(proxy, dtype=float)
    if method == "fit":
        return fit_response_shape(detuning, proxy).nulls
    if method != "argmin":
        raise ValueError("method must be 'fit' or 'argmin'")
    ipk = int(np.argmax(proxy))
    if ipk == 0 or ipk == len(proxy) - 1:
        raise ValueError("resonance peak sits at the edge of the sweep")
    left = int(np.argmin(proxy[:ipk]))
    right = ipk + 1 + int(np.argmin(proxy[ipk + 1 :]))
    return float(detuning[left]), float(detuning[right])


def fwhm(x, y) -> float:
    """Full width at half maximum of the peak in ``y``, linearly interpolated."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ipk = int(np.argmax(y))
    half = 0.5 * y[ipk]
    i = ipk
    while i > 0 and y[i - 1] > half:
        i -= 1
    j = ipk
    while j < len(y) - 1 and y[j + 1] > half:
        j += 1
    if i == 0 or j == len(y) - 1:
        raise ValueError("peak does not fall to half maximum inside the sweep")
    xl = np.interp(half, [y[i - 1], y[i]], [x[i - 1], x[i]])
    xr = np.interp(half, [y[j + 1], y[j]], [x[j + 1], x[j]])
    return float(xr - xl)


@dataclass(frozen=True)
class SpectrumResult:
    frequencies: np.ndarray = field(repr=False)
    power: np.ndarray = field(repr=False)
    peak_frequency: float
    snr: float
    peak_index: int = 0
    noise_level: float = 0.0  # mean magnitude of noise bins
    band: tuple = (0.0, 0.0)


def power_spectrum(
    hist: ArrivalHistogram,
    exclude_before: float,
    target_hz: float,
    band_hz: float = 600e3,
    peak_search_hz: float = 0.0,
    window: str = "rect",
    noise_band: tuple[float, float] | None = None,
) -> SpectrumResult:
    """DFT of mean-subtracted counts after ``exclude_before``.

    The peak is the largest bin within ``peak_search_hz`` of ``target_hz``
    (the nearest bin when zero).  Noise bins are all bins within ``band_hz``
    of the target except the peak and its two neighbours, or, when
    ``noise_band=(lo, hi)`` is given, all bins in that absolute frequency
    range.  A remote noise band keeps window leakage of a strong peak out of
    the noise estimate.

    ``snr`` is the peak magnitude over the mean noise magnitude, so it scales
    linearly with the modulation amplitude and is ~1 for pure noise.
    """
    i0 = _usable_slice(hist, exclude_before)
    y = hist.counts[i0:].astype(float)
    if y.size < 16:
        raise ValueError(f"need at least 16 bins for a spectrum, got {y.size}")
    y = y - y.mean()
    if window == "hann":
        y = y * np.hanning(y.size)
    elif window != "rect":
        raise ValueError(f"unknown window {window!r}")
    spec = np.fft.rfft(y)
    freqs = np.fft.rfftfreq(y.size, hist.bin_width)
    mag = np.abs(spec)
    off = np.abs(freqs - target_hz)
    search = np.flatnonzero(off <= peak_search_hz)
    if search.size == 0:
        search = np.array([int(np.argmin(off))])
    ipk = int(search[np.argmax(mag[search])])
    if noise_band is None:
        in_band = off <= band_hz
    else:
        in_band = (freqs >= noise_band[0]) & (freqs <= noise_band[1])
    in_band[max(ipk - 1, 0) : ipk + 2] = False
    in_band[0] = False  # DC is zero after mean subtraction
    if not in_band.any():
        raise ValueError("no noise bins inside the analysis band")
    noise = float(mag[in_band].mean())
    snr = float(mag[ipk] / noise) if noise > 0 else (math.inf if mag[ipk] > 0 else 0.0)
    return SpectrumResult(
        frequencies=freqs,
        power=mag**2,
        peak_frequency=float(freqs[ipk]),
        snr=snr,
        peak_index=ipk,
        noise_level=noise,
        band=(float(target_hz - band_hz), float(target_hz + band_hz))
        if noise_band is None
        else (float(noise_band[0]), float(noise_band[1])),
    )


@dataclass(frozen=True)
class SensitivityReport:
    total_force: float
    snr: float
    measurement_time: float
    bandwidth: float
    force_sensitivity: float
    displacement: float
    displacement_sensitivity: float
    total_force_uncertainty: float = 0.0
    force_sensitivity_uncertainty: float = 0.0
    displacement_uncertainty: float = 0.0
    displacement_sensitivity_uncertainty: float = 0.0

    def to_dict(self) -> dict:
        d = {"schema_version": REPORT_SCHEMA_VERSION}
        d.update(asdict(self))
        d["units"] = {
            "total_force": "N",
            "measurement_time": "s",
            "bandwidth": "Hz",
            "force_sensitivity": "N/sqrt(Hz)",
            "displacement": "m",
            "displacement_sensitivity": "m/sqrt(Hz)",
        }
        return d


def sensitivity_report(
    spectrum: SpectrumResult | float,
    total_force: float,
    tau_m: float,
    trap: TrapConfig,
    drive: DriveConfig,
    force_rel_uncertainty: float = 0.0,
    ion_count_uncertainty: float = 0.0,
    snr_rel_uncertainty: float = 0.0,
) -> SensitivityReport:
    """Unit-SNR force and displacement sensitivities for a total measurement time.

    ``force_rel_uncertainty`` is the relative uncertainty of the per-ion force
    calibration and ``ion_count_uncertainty`` the absolute ion-number error;
    both are propagated to first order.  The displacement depends only on the
    per-ion force, so the ion number drops out of its error.
    """
    snr = spectrum.snr if isinstance(spectrum, SpectrumResult) else float(spectrum)
    if not snr > 0:
        raise ValueError("snr must be positive")
    if not tau_m > 0:
        raise ValueError("measurement time must be positive")
    root_t = math.sqrt(tau_m)
    fs = total_force / snr * root_t
    z = com_displacement(trap, total_force, drive.drive_duration)
    zs = z / snr * root_t
    rn = ion_count_uncertainty / trap.ion_count
    rel_f = math.hypot(force_rel_uncertainty, rn)
    rel_fs = math.sqrt(force_rel_uncertainty**2 + rn**2 + snr_rel_uncertainty**2)
    rel_zs = math.hypot(force_rel_uncertainty, snr_rel_uncertainty)
    return SensitivityReport(
        total_force=total_force,
        snr=snr,
        measurement_time=tau_m,
        bandwidth=1.0 / tau_m,
        force_sensitivity=fs,
        displacement=z,
        displacement_sensitivity=zs,
        total_force_uncertainty=rel_f * total_force,
        force_sensitivity_uncertainty=rel_fs * fs,
        displacement_uncertainty=force_rel_uncertainty * z,
        displacement_sensitivity_uncertainty=rel_zs * zs,
    )
