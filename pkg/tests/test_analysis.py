import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ionforce.analysis import (
    ArrivalHistogram,
    amplitude_proxy,
    background_residuals,
    build_histogram,
    find_nulls,
    fit_exponential_background,
    fit_response_shape,
    frequency_sweep,
    fwhm,
    power_spectrum,
    sensitivity_report,
)
from ionforce.photons import CycleTrace, DetectionConfig, generate_cycle
from ionforce.physics import ComTrajectory, DriveConfig, TrapConfig

WZ = 2 * math.pi * 867e3
F_HZ = 867e3


def traces_from(times_per_cycle):
    return [CycleTrace(i, np.asarray(t, dtype=float)) for i, t in enumerate(times_per_cycle)]


def poisson_hist(rng, lam):
    edges = np.arange(len(lam) + 1) * 50e-9
    return ArrivalHistogram(edges, rng.poisson(lam), 1000)


def test_histogram_counts_and_edges():
    tr = traces_from([[0.01e-6, 0.06e-6], [0.06e-6, 0.99e-6], []])
    h = build_histogram(tr, 0.05e-6, window=1e-6)
    assert h.total == 4
    assert len(h.counts) == 20
    assert h.counts[0] == 1 and h.counts[1] == 2 and h.counts[-1] == 1
    assert h.n_cycles == 3
    assert h.bin_width == pytest.approx(0.05e-6)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(0, 15e-6), max_size=20), min_size=1, max_size=30))
def test_histogram_conserves_events_inside_window(cycles):
    h = build_histogram(traces_from(cycles), 50e-9, window=15e-6)
    assert h.total == sum(len(c) for c in cycles)
    assert np.all(h.counts >= 0)


def test_empty_traces_give_zero_histogram():
    h = build_histogram(traces_from([[]]), 50e-9, window=15e-6)
    assert h.total == 0 and len(h.counts) == 300
    with pytest.raises(ValueError):
        build_histogram([], 50e-9)


def test_exponential_fit_recovers_first_photon_decay():
    cfg = DetectionConfig(base_rate=3e5, acquisition_mode="tac_first_photon", detect_window=30e-6)
    still = ComTrajectory(omega=WZ, driven_amplitude=0.0, driven_phase=0.0)
    tr = [generate_cycle(still, cfg, [1, i], i) for i in range(20000)]
    h = build_histogram(tr, 100e-9, cfg.detect_window, cfg.acquisition_mode)
    fit = fit_exponential_background(h, cfg.hardware_delay)
    assert fit.decay_time == pytest.approx(1 / cfg.base_rate, rel=0.05)
    assert abs(fit.residuals.sum()) < 0.05 * h.total


def test_exponential_fit_needs_bins():
    h = ArrivalHistogram(np.arange(4) * 1e-6, np.array([5, 3, 1]), 1)
    with pytest.raises(ValueError):
        fit_exponential_background(h)


def test_mcs_residuals_are_mean_subtracted():
    h = ArrivalHistogram(np.arange(11) * 1e-6, np.arange(10) * 2 + 5, 1)
    t, r, bg = background_residuals(h, 2e-6)
    assert t[0] == pytest.approx(2.5e-6)
    assert r.sum() == pytest.approx(0.0)
    assert np.all(bg == bg[0])


def test_proxy_of_uniform_histogram():
    w = 10e-6
    n = 1000
    h = ArrivalHistogram(np.linspace(0, w, n + 1), np.full(n, 7), 1)
    assert amplitude_proxy(h) == pytest.approx(w / math.sqrt(12), rel=1e-4)


def test_proxy_of_residuals_and_errors():
    assert amplitude_proxy(np.array([1.0, -1.0, 1.0, -1.0])) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        amplitude_proxy(np.array([]))
    with pytest.raises(ValueError):
        amplitude_proxy(ArrivalHistogram(np.arange(3.0), np.zeros(2, int), 1))


def test_white_noise_snr_is_about_one():
    rng = np.random.default_rng(0)
    snrs = [power_spectrum(poisson_hist(rng, np.full(300, 200.0)), 4e-6, F_HZ,
                           noise_band=(2e6, 9e6)).snr for _ in range(60)]
    assert np.mean(snrs) == pytest.approx(1.0, abs=0.15)


def test_sinusoid_peak_and_snr():
    rng = np.random.default_rng(1)
    t = (np.arange(300) + 0.5) * 50e-9
    lam = 200.0 * (1 + 0.3 * np.sin(2 * math.pi * F_HZ * t))
    sp = power_spectrum(poisson_hist(rng, lam), 4e-6, F_HZ, noise_band=(2e6, 9e6))
    assert abs(sp.peak_frequency - F_HZ) <= 0.5 * (sp.frequencies[1] - sp.frequencies[0])
    assert sp.snr > 10
    hann = power_spectrum(poisson_hist(rng, lam), 4e-6, F_HZ, window="hann")
    assert hann.snr > 5


def test_snr_is_linear_in_modulation():
    t = (np.arange(300) + 0.5) * 50e-9
    out = []
    for depth in (0.01, 0.1):
        lam = 1000.0 * (1 + depth * np.sin(2 * math.pi * F_HZ * t))
        rng = np.random.default_rng(2)
        out.append(np.mean([power_spectrum(poisson_hist(rng, lam), 4e-6, F_HZ, noise_band=(2e6, 9e6)).snr
                            for _ in range(30)]))
    assert 15 < out[1] < 40
    assert out[1] / out[0] == pytest.approx(10, rel=0.2)


def test_spectrum_of_empty_histogram():
    h = ArrivalHistogram(np.arange(301) * 50e-9, np.zeros(300, int), 1)
    assert power_spectrum(h, 4e-6, F_HZ).snr == 0.0
    with pytest.raises(ValueError):
        power_spectrum(ArrivalHistogram(np.arange(11) * 1e-6, np.ones(10, int), 1), 0, F_HZ)
    with pytest.raises(ValueError):
        power_spectrum(h, 4e-6, F_HZ, window="blackman")


def test_sensitivity_report_reference_numbers():
    trap = TrapConfig(ion_count=130)
    drive = DriveConfig(2.9e-24, WZ, 1e-3)
    rep = sensitivity_report(2.3, 377e-24, 56.0, trap, drive, force_rel_uncertainty=18 / 290)
    assert rep.force_sensitivity * 1e24 == pytest.approx(1200, rel=0.05)
    assert rep.displacement == pytest.approx(18e-9, rel=0.03)
    assert rep.displacement_sensitivity == pytest.approx(58e-9, rel=0.03)
    assert rep.bandwidth == pytest.approx(1 / 56)
    assert rep.force_sensitivity_uncertainty == pytest.approx(rep.force_sensitivity * 18 / 290)
    d = rep.to_dict()
    assert d["schema_version"] == 1 and d["units"]["force_sensitivity"] == "N/sqrt(Hz)"
    with pytest.raises(ValueError):
        sensitivity_report(0.0, 377e-24, 56.0, trap, drive)


@settings(max_examples=100)
@given(st.floats(0.1, 100), st.floats(1, 1000))
def test_sensitivity_scaling(snr, tau):
    trap = TrapConfig()
    drive = DriveConfig(1e-24, WZ, 1e-3)
    a = sensitivity_report(snr, 1e-22, tau, trap, drive)
    b = sensitivity_report(2 * snr, 1e-22, 4 * tau, trap, drive)
    assert b.force_sensitivity == pytest.approx(a.force_sensitivity)
    assert a.displacement_sensitivity / a.force_sensitivity == pytest.approx(a.displacement / 1e-22)


def test_fwhm_and_nulls_on_exact_curve():
    x = np.linspace(-1500, 1500, 201)
    y = np.abs(np.sinc(x / 1000.0))
    assert fwhm(x, y) == pytest.approx(1207, rel=0.01)
    lo, hi = find_nulls(x, y, method="argmin")
    assert (lo, hi) == (pytest.approx(-1000, abs=15), pytest.approx(1000, abs=15))
    fit = fit_response_shape(x, np.sqrt(y**2 + 0.01))
    assert fit.nulls == (pytest.approx(-1000, rel=1e-3), pytest.approx(1000, rel=1e-3))
    with pytest.raises(ValueError):
        fwhm(x, np.ones_like(x))
    with pytest.raises(ValueError):
        find_nulls(x, y, method="median")


def test_sweep_shows_sidelobes_and_phase_shift():
    trap = TrapConfig()
    td = 200e-6
    cfg = DetectionConfig(bin_width=200e-9, damping_time=5.8e-6)
    grid = np.linspace(-3.5, 3.5, 57)
    omegas = WZ + 2 * math.pi * grid / td
    res = frequency_sweep(trap, DriveConfig(10 * 290e-24, WZ, td), cfg, omegas, 400, base_seed=3)
    assert res.response_map.shape == (57, len(res.times))

    def near(x):
        return int(np.argmin(np.abs(grid - x)))

    for side in (-1, 1):
        for k in (1, 2):
            inner, outer = near(side * k), near(side * (k + 1))
            lo, hi = sorted((inner, outer))
            lobe = res.proxy[lo : hi + 1].max()
            assert lobe > 1.3 * max(res.proxy[inner], res.proxy[outer])
    # oscillation maxima move linearly with detuning (phase from the drive)
    phase = [np.angle(np.sum(row * np.exp(-1j * WZ * res.times))) for row in res.theory_map]
    mid = slice(near(-0.6), near(0.6) + 1)
    unwrapped = np.unwrap(np.array(phase)[mid])
    slope = np.polyfit(grid[mid] / td * 2 * math.pi, unwrapped, 1)[0]
    gated = DriveConfig(1.0, WZ, td).gated().drive_duration
    # the start pulse sits on a drive zero crossing after whole drive cycles,
    # which leaves -(omega_d - omega_z) t_d / 2 relative to the trigger
    assert slope == pytest.approx(-0.5 * gated, rel=0.05)


def test_sweep_rejects_empty_grid():
    with pytest.raises(ValueError):
        frequency_sweep(TrapConfig(), DriveConfig(1e-22, WZ, 1e-3), DetectionConfig(), [], 10)
