"""Command line: ``amtscope run|compare|export``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .amr.scenario import two_blob_scenario
from .errors import AmtError, ConfigurationError
from .harness import (
    ALL_MODES,
    DEFAULT_SAMPLE_PERIOD_MS,
    RunReport,
    compare_modes,
    export_scatter,
    export_spatial_idle,
    run_scenario,
)


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid int value: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _non_negative_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid int value: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _period_ms(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number: {text!r}") from None
    if not value >= 1.0:
        raise argparse.ArgumentTypeError(f"sample period must be >= 1 ms, got {text}")
    return value


def _energy_source(text):
    if text == "model" or (text.startswith("platform:") and len(text) > len("platform:")):
        return text
    raise argparse.ArgumentTypeError("expected 'model' or 'platform:<path>'")


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so :func:`main` owns the exit code."""

    def error(self, message):
        raise _UsageError(self, message)


class _UsageError(Exception):
    def __init__(self, parser, message):
        super().__init__(message)
        self.parser = parser


def _scenario_flags(p):
    p.add_argument("--localities", type=_positive_int, default=1)
    p.add_argument("--workers", type=_positive_int, default=1, help="workers per locality")
    p.add_argument("--max-level", type=_non_negative_int, default=4)
    p.add_argument("--steps", type=_non_negative_int, default=100)
    p.add_argument("--cells-per-edge", type=_positive_int, default=8)
    p.add_argument("--regrid-interval", type=_non_negative_int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-period-ms", type=_period_ms, default=DEFAULT_SAMPLE_PERIOD_MS)
    p.add_argument("--energy-source", type=_energy_source, default="model",
                   help="'model' or 'platform:<path to energy_uj>'")


def build_parser():
    parser = _Parser(prog="amtscope", description="AMT runtime introspection experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="one run under an instrumentation mode")
    _scenario_flags(run)
    run.add_argument("--mode", choices=[m.value for m in ALL_MODES], default="I")
    run.add_argument("--report", metavar="PATH", help="write the JSON run report here")
    run.add_argument("--scatter-out", metavar="PATH")
    run.add_argument("--spatial-out", metavar="PATH")

    cmp_ = sub.add_parser("compare", help="overhead of modes I-III against mode IV")
    _scenario_flags(cmp_)
    cmp_.set_defaults(localities=2, workers=4, steps=200)
    cmp_.add_argument("--repetitions", type=_positive_int, default=5)
    cmp_.add_argument("--report", metavar="PATH", help="write the JSON overhead report here")
    cmp_.add_argument("--csv-out", metavar="PATH", default="overhead.csv")

    exp = sub.add_parser("export", help="datasets from a saved run report")
    exp.add_argument("--report", metavar="PATH", required=True, help="JSON report from 'run'")
    exp.add_argument("--scatter-out", metavar="PATH")
    exp.add_argument("--spatial-out", metavar="PATH")
    return parser


def _config(args):
    return two_blob_scenario(
        max_level=args.max_level,
        steps=args.steps,
        cells_per_edge=args.cells_per_edge,
        regrid_interval=args.regrid_interval,
    )


def _cmd_run(args, out):
    report = run_scenario(
        _config(args), args.mode, args.localities, args.workers, seed=args.seed,
        sample_period_ms=args.sample_period_ms, energy_source=args.energy_source,
    )
    print(f"mode {report.mode}: {report.subgrids_processed} sub-grids in "
          f"{report.wall_seconds:.2f} s ({report.subgrids_per_second:.1f}/s), "
          f"{report.energy_kj:.3f} kJ, AGAS {report.agas_overhead_percent:.3f}%", file=out)
    print("idle rate %: " + " ".join(f"{r:.1f}" for r in report.idle_rates), file=out)
    if args.report:
        report.to_json(args.report)
    _exports(report, args, out)
    return 0


def _exports(report, args, out):
    if args.scatter_out:
        n = export_scatter(report, args.scatter_out)
        print(f"wrote {n} scatter rows to {args.scatter_out}", file=out)
    if args.spatial_out:
        n = export_spatial_idle(report, path=args.spatial_out)
        print(f"wrote {n} leaf rows to {args.spatial_out}", file=out)


def _cmd_compare(args, out):
    def progress(rep, mode, report):
        logging.getLogger(__name__).info("rep %d mode %s: %.1f sub-grids/s",
                                         rep + 1, mode.value, report.subgrids_per_second)

    result = compare_modes(
        _config(args), args.localities, args.workers, args.repetitions, seed=args.seed,
        progress=progress, sample_period_ms=args.sample_period_ms,
        energy_source=args.energy_source,
    )
    print(result.format_table(), file=out)
    result.to_csv(args.csv_out)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(result.to_dict(), fh, indent=2)
    return 0


def _cmd_export(args, out):
    if not (args.scatter_out or args.spatial_out):
        raise ConfigurationError("export needs --scatter-out and/or --spatial-out")
    report = RunReport.load(args.report)
    _exports(report, args, out)
    return 0


def main(argv=None, out=None) -> int:
    out = out if out is not None else sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        exc.parser.print_usage(sys.stderr)
        print(f"{exc.parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    commands = {"run": _cmd_run, "compare": _cmd_compare, "export": _cmd_export}
    try:
        return commands[args.command](args, out)
    except ConfigurationError as exc:
        print(f"amtscope: error: {exc}", file=sys.stderr)
        return 2
    except (AmtError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"amtscope: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
