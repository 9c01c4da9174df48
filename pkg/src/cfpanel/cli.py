"""Command line entry point: ``cfpanel <subcommand> --config PATH [overrides]``.

Exit codes: 0 success, 2 configuration error, 3 data error (including a
missing upstream artifact), 4 too many firms skipped, 1 anything else.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import pipeline
from .config import dump_config, load_config
from .errors import CfPanelError, ConfigError, DataError, DependencyError, SkipThresholdError

log = logging.getLogger("cfpanel")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SKIPS = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--outdir")
    common.add_argument("--estimator", action="append",
                        help="bsts, llp_firm or llp_panel; repeat or comma-separate")
    common.add_argument("--outcome", action="append", help="markup or profit_rate; repeat or comma-separate")
    common.add_argument("--frequency", choices=("yearly", "quarterly"))
    common.add_argument("--sensitivity", help="comma-separated prior scale factors, e.g. 0.75,1.25")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cfpanel", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("ingest", "load and clean the panel"),
        ("fit", "fit the selected estimators firm by firm"),
        ("diagnose", "fit coverage, normality screen and holdout forecast quality"),
        ("effects", "firm effects, fleet aggregates and significance counts"),
        ("heterogeneity", "cross-sectional regressions, binscatters and industry breakdowns"),
        ("report", "diagnose, effects, heterogeneity and descriptive series"),
        ("run", "ingest, fit and report"),
        ("config", "print the effective configuration"),
    ):
        sub.add_parser(name, parents=[common], help=helptext)
    s = sub.add_parser("synth", parents=[common], help="write a synthetic fixture panel")
    s.add_argument("--firms", type=int, default=300)
    s.add_argument("--pre", type=int, default=20, help="pre-treatment periods")
    s.add_argument("--post", type=int, default=2, help="treated periods")
    s.add_argument("--effect", type=float, default=0.0, help="relative effect in treated periods")
    s.add_argument("--dgp-outcome", choices=("markup", "profit_rate"), default="markup")
    s.add_argument("--dest", help="output directory (default <outdir>/fixture)")
    return p


def _overrides(args) -> dict:
    o = {}
    if args.seed is not None:
        o["run.seed"] = str(args.seed)
    if args.workers is not None:
        o["run.workers"] = str(args.workers)
    if args.outdir:
        o["run.outdir"] = args.outdir
    if args.estimator:
        o["run.estimators"] = ",".join(args.estimator)
    if args.outcome:
        o["run.outcomes"] = ",".join(args.outcome)
    if args.frequency:
        o["data.frequency"] = args.frequency
    if args.sensitivity is not None:
        o["run.sensitivity"] = args.sensitivity
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        o[key.strip()] = val.strip()
    return o


def _synth(args, cfg) -> dict:
    from .synth import DgpSpec, export_fixture, generate_panel
    spec = DgpSpec(n_firms=args.firms, n_pre=args.pre, n_post=args.post, frequency=cfg.frequency,
                   outcome=args.dgp_outcome, effect=args.effect, seasonal=cfg.frequency == "quarterly",
                   seasonal_var=1e-6 if cfg.frequency == "quarterly" else 0.0,
                   treatment_start=cfg.treatment_start, seed=cfg.seed)
    dest = args.dest or os.path.join(cfg.outdir, "fixture")
    paths = export_fixture(generate_panel(spec), dest)
    for k, v in paths.items():
        print(f"{k}: {v}")
    return paths


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "config":
            cfg.validate(require_panel=False)
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        if args.command == "synth":
            cfg.validate(require_panel=False)
            _synth(args, cfg)
            return EXIT_OK
        cfg.validate(require_panel=args.command in ("ingest", "run"))
        step = {
            "ingest": pipeline.cmd_ingest,
            "fit": pipeline.cmd_fit,
            "diagnose": pipeline.cmd_diagnose,
            "effects": pipeline.cmd_effects,
            "heterogeneity": pipeline.cmd_heterogeneity,
            "report": pipeline.cmd_report,
            "run": pipeline.cmd_run,
        }[args.command]
        step(cfg)
        return EXIT_OK
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except SkipThresholdError as exc:
        log.error("%s", exc)
        return EXIT_SKIPS
    except (DataError, DependencyError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_DATA
    except CfPanelError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
