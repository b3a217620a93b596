"""Independent numerical references used by the tests."""

import numpy as np

STEPS_PER_PERIOD = 256


def rk4_free_oscillation(omega_z, omega_d, accel, n_drive_cycles, steps_per_period=STEPS_PER_PERIOD):
    """Integrate x'' + wz^2 x = a sin(wd t) from rest over whole drive cycles.

    All arguments are arrays of equal length (one oscillator per entry).
    Returns the amplitude and phase of the free velocity oscillation
    ``V sin(wz t + phase)`` that follows, with ``t`` from the drive start.
    """
    wz = np.asarray(omega_z, dtype=float)
    wd = np.asarray(omega_d, dtype=float)
    a = np.asarray(accel, dtype=float)
    cycles = np.asarray(n_drive_cycles, dtype=int)
    td = cycles * 2 * np.pi / wd
    n_steps = cycles * steps_per_period
    h = td / n_steps
    x = np.zeros_like(wz)
    v = np.zeros_like(wz)
    t = np.zeros_like(wz)

    def acc(t_, x_):
        return a * np.sin(wd * t_) - wz**2 * x_

    for k in range(int(n_steps.max())):
        hk = np.where(k < n_steps, h, 0.0)
        k1x, k1v = v, acc(t, x)
        k2x, k2v = v + 0.5 * hk * k1v, acc(t + 0.5 * hk, x + 0.5 * hk * k1x)
        k3x, k3v = v + 0.5 * hk * k2v, acc(t + 0.5 * hk, x + 0.5 * hk * k2x)
        k4x, k4v = v + hk * k3v, acc(t + hk, x + hk * k3x)
        x = x + hk / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + hk / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        t = t + hk
    # free motion: v = V sin(theta), x = -V/wz cos(theta)
    amp = np.hypot(v, wz * x)
    theta = np.arctan2(v, -wz * x)
    phase = theta - wz * td
    return amp, np.angle(np.exp(1j * phase)), td
