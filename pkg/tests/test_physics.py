import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ionforce.physics import (
    BE9_ION_MASS,
    ELEMENTARY_CHARGE,
    DriveConfig,
    TrapConfig,
    calibrate_force,
    com_displacement,
    com_trajectory,
    fold_phase,
    steady_state_response,
    thermal_extent,
    thermal_velocity_rms,
)
from oracles import rk4_free_oscillation

WZ = 2 * math.pi * 867e3


def closed_form(trap, wd, force, cycles):
    drive = DriveConfig(force, wd, cycles * 2 * math.pi / wd)
    return steady_state_response(trap, drive)


def phase_error(a, b):
    return abs(math.remainder(a - b, 2 * math.pi))


@settings(max_examples=12, deadline=None)
@given(
    frac=st.floats(-0.01, 0.01).filter(lambda x: abs(x) > 1e-5),
    cycles=st.integers(10, 60),
    force=st.floats(1e-25, 1e-21),
)
def test_matches_rk4_off_resonance(frac, cycles, force):
    trap = TrapConfig(temperature=0)
    wd = WZ * (1 + frac)
    st_ = closed_form(trap, wd, force, cycles)
    amp, ph, _ = rk4_free_oscillation([WZ], [wd], [force / trap.ion_mass], [cycles])
    assert amp[0] == pytest.approx(st_.velocity_amplitude, rel=1e-4)
    assert phase_error(ph[0], st_.phase) < 1e-4


def test_matches_rk4_on_resonance():
    trap = TrapConfig(temperature=0)
    st_ = closed_form(trap, WZ, 1e-22, 40)
    amp, ph, td = rk4_free_oscillation([WZ], [WZ], [1e-22 / trap.ion_mass], [40])
    assert st_.velocity_amplitude == pytest.approx(1e-22 * td[0] / (2 * trap.ion_mass), rel=1e-12)
    assert amp[0] == pytest.approx(st_.velocity_amplitude, rel=1e-4)
    assert phase_error(ph[0], st_.phase) < 1e-4


def test_resonance_limit_is_continuous():
    trap = TrapConfig()
    td = 1e-3
    on = steady_state_response(trap, DriveConfig(1e-23, WZ, td))
    near = steady_state_response(trap, DriveConfig(1e-23, WZ * (1 + 1e-9), td))
    assert near.velocity_amplitude == pytest.approx(on.velocity_amplitude, rel=1e-6)


def test_detuning_null():
    trap = TrapConfig()
    td = 1e-3
    null = steady_state_response(trap, DriveConfig(1e-23, WZ + 2 * math.pi / td, td))
    peak = steady_state_response(trap, DriveConfig(1e-23, WZ, td))
    assert null.velocity_amplitude < 1e-9 * peak.velocity_amplitude


@settings(max_examples=200, deadline=None)
@given(
    frac=st.floats(-0.09, 0.09),
    td=st.floats(20e-6, 20e-3),
    force=st.one_of(st.just(0.0), st.floats(1e-30, 1e-20)),
    n=st.integers(1, 10_000),
)
def test_response_invariants(frac, td, force, n):
    trap = TrapConfig(ion_count=n)
    st_ = steady_state_response(trap, DriveConfig(force, WZ * (1 + frac), td))
    assert st_.velocity_amplitude >= 0
    assert -math.pi < st_.phase <= math.pi
    assert st_.displacement_amplitude == pytest.approx(st_.velocity_amplitude / WZ)
    # bounded by the resonant value, up to the 2 wd / (wz + wd) prefactor
    wd = WZ * (1 + frac)
    res = force * td / (2 * trap.ion_mass) * max(1.0, 2 * wd / (WZ + wd))
    assert st_.velocity_amplitude <= res * (1 + 1e-9)


@settings(max_examples=100, deadline=None)
@given(n1=st.integers(1, 5000), n2=st.integers(1, 5000), frac=st.floats(-0.05, 0.05))
def test_response_depends_only_on_per_ion_force(n1, n2, frac):
    drive = DriveConfig(3e-24, WZ * (1 + frac), 1e-3)
    a = steady_state_response(TrapConfig(ion_count=n1), drive)
    b = steady_state_response(TrapConfig(ion_count=n2), drive)
    assert a == b


@settings(max_examples=100, deadline=None)
@given(frac=st.floats(-0.05, 0.05), td=st.floats(50e-6, 5e-3))
def test_phase_is_linear_in_detuning(frac, td):
    trap = TrapConfig()
    wd = WZ * (1 + frac)
    st_ = steady_state_response(trap, DriveConfig(1e-23, wd, td))
    expected = 0.5 * (wd - WZ) * td
    # a sign flip of the amplitude adds pi
    err = min(phase_error(st_.phase, expected), phase_error(st_.phase, expected + math.pi))
    assert err < 1e-9


def test_rejects_large_detuning_and_short_drive():
    with pytest.raises(ValueError):
        steady_state_response(TrapConfig(), DriveConfig(1e-23, WZ * 1.2, 1e-3))
    with pytest.raises(ValueError):
        DriveConfig(1e-23, WZ, 5 / 867e3)
    with pytest.raises(ValueError):
        TrapConfig(ion_count=0)
    with pytest.raises(ValueError):
        TrapConfig(temperature=-1)


def test_gated_drive_has_whole_cycles():
    d = DriveConfig(1e-23, WZ, 1e-3).gated()
    cycles = d.drive_duration * d.omega_d / (2 * math.pi)
    assert cycles == pytest.approx(round(cycles), abs=1e-9)
    assert abs(d.drive_duration - 1e-3) <= 0.5 * 2 * math.pi / WZ


def test_com_displacement_reference_point():
    z = com_displacement(TrapConfig(ion_count=130), 377e-24, 1e-3)
    assert z == pytest.approx(18e-9, rel=0.03)


def test_com_displacement_scales():
    trap = TrapConfig(ion_count=130)
    z = com_displacement(trap, 1e-22, 1e-3)
    assert com_displacement(trap, 2e-22, 1e-3) == pytest.approx(2 * z)
    assert com_displacement(trap, 1e-22, 2e-3) == pytest.approx(2 * z)
    assert com_displacement(TrapConfig(ion_count=260), 1e-22, 1e-3) == pytest.approx(z / 2)


def test_thermal_extents():
    trap = TrapConfig(ion_count=130, temperature=0.5e-3)
    assert thermal_extent(trap, "com") == pytest.approx(11e-9, rel=0.05)
    assert thermal_extent(trap, "single_ion") == pytest.approx(120e-9, rel=0.05)
    assert thermal_extent(TrapConfig(temperature=0)) == 0
    with pytest.raises(ValueError):
        thermal_extent(trap, "radial")


def test_force_calibration():
    cal = calibrate_force(field_at_ions=1.8e-3)
    assert cal.force_per_ion == pytest.approx(288e-24, rel=0.005)
    assert abs(cal.force_per_ion - 290e-24) <= 18e-24
    via_v = calibrate_force(applied_voltage=165e-6, geometry_factor=1.8e-3 / 165e-6)
    assert via_v.field_at_ions == pytest.approx(1.8e-3)
    fixed = calibrate_force(field_at_ions=1.8e-3, applied_voltage=165e-6)
    assert fixed.geometry_factor == pytest.approx(1.8e-3 / 165e-6)
    with pytest.raises(ValueError):
        calibrate_force()
    with pytest.raises(ValueError):
        calibrate_force(applied_voltage=1e-4)
    with pytest.raises(ValueError):
        calibrate_force(1.8e-3, 1e-4, 18.0)


def test_ion_mass_and_charge():
    assert BE9_ION_MASS == pytest.approx(1.4965e-26, rel=1e-3)
    assert ELEMENTARY_CHARGE == pytest.approx(1.602176634e-19)


@settings(max_examples=200)
@given(st.floats(-100, 100))
def test_fold_phase_range(phi):
    f = fold_phase(phi)
    assert -math.pi < f <= math.pi
    assert math.cos(f) == pytest.approx(math.cos(phi), abs=1e-9)


def test_trajectory_continues_free_oscillation():
    trap = TrapConfig(temperature=0)
    drive = DriveConfig(1e-23, WZ * 1.002, 200e-6).gated()
    st_ = steady_state_response(trap, drive)
    traj = com_trajectory(trap, drive, 15e-6)
    t = np.linspace(0, 15e-6, 50)
    expected = st_.velocity_amplitude * np.sin(WZ * (t + drive.drive_duration) + st_.phase)
    np.testing.assert_allclose(traj(t), expected, atol=1e-12 * st_.velocity_amplitude + 1e-30)


def test_trajectory_damping_starts_at_onset():
    trap = TrapConfig(temperature=0)
    drive = DriveConfig(1e-23, WZ, 200e-6)
    free = com_trajectory(trap, drive, 15e-6)
    damped = com_trajectory(trap, drive, 15e-6, damping_time=5e-6, damping_onset=4e-6)
    t = np.linspace(0, 15e-6, 200)
    early = t <= 4e-6
    np.testing.assert_allclose(damped(t[early]), free(t[early]))
    late = ~early
    np.testing.assert_allclose(damped(t[late]), free(t[late]) * np.exp(-(t[late] - 4e-6) / 5e-6))


def test_thermal_velocity_distribution():
    trap = TrapConfig(ion_count=130, temperature=0.5e-3)
    drive = DriveConfig(0.0, WZ, 200e-6)
    amps = np.array([com_trajectory(trap, drive, 15e-6, thermal_seed=[7, i]).thermal_amplitude
                     for i in range(4000)])
    # amplitude^2 / 2 averages to the mean-square velocity
    rms = math.sqrt(np.mean(amps**2) / 2)
    assert rms == pytest.approx(thermal_velocity_rms(trap), rel=0.05)
