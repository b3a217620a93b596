"""Command-line entry point.

Exit codes: 0 success, 2 invalid spec or arguments, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .config import SpecError, load_spec
from .runner import COMMANDS, cmd_calibrate

EXIT_OK = 0
EXIT_SPEC = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ionforce", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_spec=True):
        sp.add_argument("--spec", required=needs_spec,
                        help="YAML spec file, bundled spec name, or a run manifest.json")
        sp.add_argument("--seed", type=int, default=None, help="override the spec seed")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out-dir", default="out")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    for name, help_ in (
        ("simulate", "photon events and arrival histogram"),
        ("sweep-frequency", "response map and proxy curves vs drive frequency"),
        ("sweep-force", "spectra and sensitivity reports along a force ladder"),
        ("sensitivity-budget", "analytic projected-sensitivity table"),
    ):
        common(sub.add_parser(name, help=help_))

    cal = sub.add_parser("calibrate", help="relate applied voltage, field at the ions and force")
    cal.add_argument("--out-dir", default="out")
    cal.add_argument("--format", choices=("csv", "json"), default="json")
    cal.add_argument("--field", type=float, help="field at the ions (V/m)")
    cal.add_argument("--voltage", type=float, help="applied voltage (V)")
    cal.add_argument("--geometry-factor", type=float, help="field per volt (1/m)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_SPEC
    try:
        if args.command == "calibrate":
            try:
                manifest = cmd_calibrate(args.out_dir, args.field, args.voltage, args.geometry_factor,
                                         fmt_=args.format)
            except ValueError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_SPEC
        else:
            if args.workers < 1:
                print("error: --workers must be >= 1", file=sys.stderr)
                return EXIT_SPEC
            spec = load_spec(args.spec, seed=args.seed)
            manifest = COMMANDS[args.command](spec, args.out_dir, args.format, args.workers)
    except SpecError as exc:
        print(f"invalid spec: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except Exception as exc:  # noqa: BLE001 - anything else is a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for f in manifest["outputs"]:
        print(f"{args.out_dir}/{f['path']}  {f['sha256'][:12]}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
