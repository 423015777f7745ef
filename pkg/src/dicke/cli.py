"""Command-line driver: ``dicke {validate,sweep,exponents,wavefunction}``.

Exit codes: 0 success, 1 configuration error, 2 computation failure,
3 validation check failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .observables import GridTooCoarse
from .runs import (
    CheckFailed,
    ConfigError,
    build_config,
    cmd_exponents,
    cmd_sweep,
    cmd_validate,
    cmd_wavefunction,
    load_toml,
)

EXIT_OK, EXIT_CONFIG, EXIT_COMPUTE, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("dicke")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file; keys mirror the long options")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--seed", type=int, help="Lanczos start-vector seed")
    common.add_argument("--n-list", help="system sizes, comma separated")
    common.add_argument("--d-ratio", help="omega0/omega values, comma separated")
    common.add_argument("--tol-energy", type=float, help="n_tr convergence tolerance on E0/N")
    common.add_argument("--no-cache", dest="cache", action="store_const", const=False,
                        help="ignore and do not write the per-point cache")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="dicke", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", parents=[common], help="oracle cross-checks at N <= 16")
    v.add_argument("--mutate", help=argparse.SUPPRESS)

    s = sub.add_parser("sweep", parents=[common], help="observables on an (N, lambda) grid")
    s.add_argument("--lambda-min", type=float)
    s.add_argument("--lambda-max", type=float)
    s.add_argument("--lambda-steps", type=int)
    s.add_argument("--lambdas", help="explicit couplings, comma separated")
    s.add_argument("--n-eig", type=int, help="also report the lowest n_eig levels")

    sub.add_parser("exponents", parents=[common],
                   help="peak finding, log-log fits and data collapse")

    w = sub.add_parser("wavefunction", parents=[common], help="ground-state grids Psi(x, y)")
    w.add_argument("--lambdas", help="couplings, comma separated")
    w.add_argument("--resolution", type=int, help="grid points per axis")
    return ap


RUNNERS = {"validate": cmd_validate, "sweep": cmd_sweep,
           "exponents": cmd_exponents, "wavefunction": cmd_wavefunction}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    opts = vars(args)
    command = opts.pop("command")
    mutation = opts.pop("mutate", None)
    config_path = opts.pop("config")
    opts.pop("verbose")
    try:
        file_values = load_toml(config_path) if config_path else {}
        cfg = build_config(command, file_values, opts)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    try:
        if command == "validate":
            report = cmd_validate(cfg, mutation)
            log.info("validate: %d checks passed", report["n_checks"])
        else:
            report = RUNNERS[command](cfg)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except CheckFailed as exc:
        log.error("%s", exc)
        return EXIT_CHECK
    except GridTooCoarse as exc:
        log.error("%s. Pass a larger --resolution, or leave the ranges unset so they "
                  "are chosen from the state.", exc)
        return EXIT_COMPUTE
    except Exception as exc:
        log.error("computation failed: %s: %s", type(exc).__name__, exc)
        return EXIT_COMPUTE
    if command == "sweep" and report["failures"]:
        for f in report["failures"]:
            log.error("point N=%s D=%s lambda=%s failed: %s",
                      f["n_atoms"], f["D"], f["lambda"], f["error"])
        return EXIT_COMPUTE
    log.info("results written to %s", cfg.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
