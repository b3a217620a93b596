"""Run every bundled figure pipeline and print the headline numbers.

    python scripts/run_figures.py --out-dir out --workers 4
"""

import argparse
import json
from pathlib import Path

from ionforce.cli import main as cli

PIPELINES = [
    ("first_photon", "simulate"),
    ("detuning_200us", "sweep-frequency"),
    ("detuning_ladder", "sweep-frequency"),
    ("detuning_zero_force", "sweep-frequency"),
    ("force_ladder", "sweep-force"),
    ("best_sensitivity", "sweep-force"),
    ("budget", "sensitivity-budget"),
]


def headline(name, out):
    summary = out / "summary.json"
    if not summary.exists():
        return
    s = json.loads(summary.read_text())
    if "rungs" in s:
        for r in s["rungs"]:
            nulls = r["nulls_hz"] and [round(x) for x in r["nulls_hz"]]
            print(f"  t_d {r['drive_duration_s'] * 1e6:g} us: nulls {nulls} Hz, FWHM {r['fwhm_hz']} Hz")
    for p in s.get("points", []):
        print(f"  F/ion {p['force_per_ion_n'] * 1e24:.3g} yN: SNR {p['snr']:.2f}, "
              f"{p.get('force_sensitivity_yn_per_rthz', float('nan')):.0f} yN/rtHz")
    if "snr" in s and "points" not in s:
        print(f"  {s['n_events']} events, first at {s['first_event_s']}, SNR {s['snr']:.1f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="out")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--only", nargs="*", help="subset of spec names")
    args = ap.parse_args()
    for name, command in PIPELINES:
        if args.only and name not in args.only:
            continue
        out = Path(args.out_dir) / name
        print(f"{name} ({command})")
        rc = cli([command, "--spec", name, "--out-dir", str(out), "--workers", str(args.workers)])
        if rc:
            raise SystemExit(rc)
        headline(name, out)


if __name__ == "__main__":
    main()
