"""Command-line driver.

    stokes-pod fom    --config run.cfg --output results
    stokes-pod pod    --config run.cfg --output results
    stokes-pod rom    --config run.cfg --output results
    stokes-pod report --config run.cfg --output results

Exit codes: 0 success, 2 configuration error, 3 missing input,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import harness
from .config import ConfigError, load_config
from .io import FormatError
from .linalg import SingularMatrixError, SolverError
from .pod import EmptyBasisError

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERICAL = 0, 2, 3, 4


def _parser():
    p = argparse.ArgumentParser(prog="stokes-pod", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("fom", "run the convergence study"),
                       ("pod", "build POD bases from the snapshot-mesh trajectory"),
                       ("rom", "run the reduced model for every rank"),
                       ("report", "collect results into report.txt")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", help="key = value configuration file")
        s.add_argument("--output", help="output directory (overrides output_dir)")
        s.add_argument("--threads", type=int, default=1,
                       help="mesh sizes run concurrently by 'fom' (default 1)")
        s.add_argument("--quiet", action="store_true")
    return p


def cli_fom(cfg, out, threads=1, log=print):
    harness.run_fom_study(cfg, out, threads, log)
    return EXIT_OK


def cli_pod(cfg, out, log=print):
    harness.run_pod_phase(cfg, out, log)
    return EXIT_OK


def cli_rom(cfg, out, log=print):
    harness.run_rom_phase(cfg, out, log)
    return EXIT_OK


def cli_report(cfg, out, log=print):
    harness.build_report(cfg, out)
    log(f"report written to {out}/report.txt")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    log = (lambda *a, **k: None) if args.quiet else print
    err = lambda msg: print(f"stokes-pod {args.command}: {msg}", file=sys.stderr)
    try:
        cfg = load_config(args.config, output_dir=args.output)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        out = cfg.output_dir
        if args.command == "fom":
            return cli_fom(cfg, out, args.threads, log)
        if args.command == "pod":
            return cli_pod(cfg, out, log)
        if args.command == "rom":
            return cli_rom(cfg, out, log)
        return cli_report(cfg, out, log)
    except ConfigError as exc:
        err(f"configuration error: {exc}")
        return EXIT_CONFIG
    except (harness.MissingInputError, FormatError) as exc:
        err(str(exc))
        return EXIT_MISSING
    except (SolverError, SingularMatrixError, EmptyBasisError, ArithmeticError,
            AssertionError, np.linalg.LinAlgError) as exc:
        err(f"numerical failure: {exc}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
