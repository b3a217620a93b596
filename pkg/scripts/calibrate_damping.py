"""Find the readout damping time that reproduces a target spectral SNR.

The expected (Rice-mean) SNR of the F0/100, 130-ion, 1 ms, 40,000-cycle run
falls monotonically as the driven motion decays faster, so a bisection on the
analytic model is enough.

    python scripts/calibrate_damping.py --target-snr 2.3
"""

import argparse
import math

from scipy.optimize import brentq

from ionforce.budget import expected_snr
from ionforce.config import DEFAULT_RATE_PER_ION, F0_PER_ION
from ionforce.photons import DetectionConfig
from ionforce.physics import DriveConfig, TrapConfig


def snr_for(tau, trap, drive, n_cycles):
    det = DetectionConfig(base_rate=DEFAULT_RATE_PER_ION * trap.ion_count, damping_time=tau)
    return expected_snr(trap, drive, det, n_cycles, rice=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--target-snr", type=float, default=2.3)
    ap.add_argument("--ions", type=int, default=130)
    ap.add_argument("--force-f0", type=float, default=0.01)
    ap.add_argument("--drive-s", type=float, default=1e-3)
    ap.add_argument("--cycles", type=int, default=40_000)
    args = ap.parse_args()

    trap = TrapConfig(ion_count=args.ions)
    drive = DriveConfig(args.force_f0 * F0_PER_ION, trap.omega_z, args.drive_s)
    tau = brentq(lambda x: snr_for(x, trap, drive, args.cycles) - args.target_snr, 1e-6, 1e-3, xtol=1e-10)
    print(f"damping_time_s: {tau:.3e}")
    for t in (tau, 25e-6, math.inf):
        print(f"  tau={t:.3g} s -> expected SNR {snr_for(t, trap, drive, args.cycles):.3f}")


if __name__ == "__main__":
    main()
