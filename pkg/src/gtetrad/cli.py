"""Command-line interface.

Subcommands
-----------
``test``
    Run the classical and/or generalized tetrad tests on a CSV file.
``sweep``
    ``test`` over all 12 role permutations.
``simulate``
    Monte Carlo power study for a preset, a comma-separated list of presets,
    or the ``table2`` (main designs) and ``tableS4`` (covariate designs) macros.

Exit status
-----------
0
    success (whatever the test decisions are);
1
    unexpected internal error;
2
    configuration, parse or validation error (including usage errors and
    ``--alpha`` above 0.215 for generalized tests);
3
    numerical failure (singular system, degenerate statistic, or a study
    with too many failed replications).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace

from . import __version__, simlab
from .bridge_psmd import PENALTIES
from .classical import classical_test
from .dataset import load_csv
from .errors import ConfigurationError, GTetradError, NumericalError, StudyError
from .gt import GtConfig, check_alpha, gt_test, permutation_sweep

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

ALL_METHODS = ("ct", "gt-gmm", "gt-psmd")
MACROS = {"table2": simlab.MAIN_SETTINGS, "tables4": simlab.COVARIATE_SETTINGS}

TEST_CSV_FIELDS = ("method", "permutation", "n", "alpha", "statistic", "threshold", "p_value",
                   "reject", "mgt_h_sq", "mgt_g_sq", "amgt_sq", "s_n_h", "s_n_g", "s_n", "error")
STUDY_CSV_FIELDS = ("setting", "method", "n", "reps", "seed", "rejection_rate", "mc_se")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_bridge_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("bridge estimation")
    g.add_argument("--basis-h", help="basis for h0 (argument W), e.g. poly:1, pol:6, pspline:3:2")
    g.add_argument("--basis-g", help="basis for g0 (argument Z); defaults to --basis-h")
    g.add_argument("--instrument-basis", help="instrument basis for both bridges")
    g.add_argument("--lambda", dest="lam", type=float, help="PSMD penalty weight")
    g.add_argument("--penalty", choices=PENALTIES, help="PSMD penalty")


def _add_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="output file (default: standard output)")
    p.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gtetrad", description="Classical and generalized tetrad tests.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, helptext in (("test", "test a CSV data set"),
                           ("sweep", "test a CSV data set under all 12 role permutations")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--input", required=True, help="CSV file with a header row")
        for role in "xyzw":
            p.add_argument(f"--{role}", required=True, help=f"column for role {role.upper()}")
        p.add_argument("--covariates", default="", help="comma-separated covariate columns")
        p.add_argument("--method", default="all", choices=ALL_METHODS + ("all",))
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--standardize", action="store_true",
                       help="centre and scale the four role columns before testing")
        if name == "test":
            p.add_argument("--permutations", action="store_true",
                           help="also run every generalized test under all 12 role permutations")
        _add_bridge_flags(p)
        _add_output_flags(p)

    p = sub.add_parser("simulate", help="Monte Carlo power study")
    p.add_argument("--setting", required=True,
                   help="preset name, comma-separated presets, 'table2' or 'tableS4'")
    p.add_argument("--method", default="all", choices=ALL_METHODS + ("all",))
    p.add_argument("--n", default="500,1000", help="comma-separated sample sizes")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--workers", help="worker processes (default: $GTETRAD_WORKERS or 1)")
    _add_bridge_flags(p)
    _add_output_flags(p)
    return parser


def _methods(choice: str) -> tuple:
    return ALL_METHODS if choice == "all" else (choice,)


def _check_level(alpha: float, methods) -> None:
    if any(m != "ct" for m in methods):
        check_alpha(alpha)
    elif not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")


def _override(config: GtConfig, args) -> GtConfig:
    changes = {}
    if args.basis_h:
        changes["basis_h"] = args.basis_h
    if args.basis_g:
        changes["basis_g"] = args.basis_g
    if args.instrument_basis:
        changes["instrument_h"] = args.instrument_basis
        changes["instrument_g"] = None
    if config.method == "psmd":
        if args.lam is not None:
            changes["lam"] = args.lam
        if args.penalty:
            changes["penalty"] = args.penalty
    return replace(config, **changes) if changes else config


def _data_config(method: str, args) -> GtConfig:
    base = GtConfig.gmm() if method == "gt-gmm" else GtConfig.psmd_data()
    return _override(base, args)


def _split(text: str) -> list:
    return [t.strip() for t in text.split(",") if t.strip()]


def _emit(text: str, out) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _csv(rows, fields) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _flat(entry: dict, permutation: str = "(1,2,3,4)") -> dict:
    row = {k: entry.get(k, "") for k in TEST_CSV_FIELDS}
    row["permutation"] = entry.get("permutation", permutation)
    row["statistic"] = entry.get("statistic", entry.get("t_n", ""))
    return row


def cmd_test(args, sweep_all: bool = False) -> int:
    methods = _methods(args.method)
    _check_level(args.alpha, methods)
    covariates = _split(args.covariates)
    roles = {"X": args.x, "Y": args.y, "Z": args.z, "W": args.w}
    table = load_csv(args.input, roles, covariates)
    if args.standardize:
        table = table.standardized()
    results, sweeps = [], {}
    for method in methods:
        if method == "ct":
            report = classical_test(table, args.alpha).to_dict()
            report["permutation"] = "(1,2,3,4)"
            results.append(report)
            continue
        config = _data_config(method, args)
        try:
            results.append(gt_test(table, config.method, config, args.alpha).to_dict())
        except NumericalError as exc:
            raise NumericalError(f"{method}: {exc}") from exc
        if sweep_all or getattr(args, "permutations", False):
            sweeps[method] = [e.to_dict() for e in permutation_sweep(table, config.method, config, args.alpha)]
    if args.format == "json":
        doc = {"n": table.n, "alpha": args.alpha, "roles": roles, "covariates": covariates,
               "standardized": bool(args.standardize), "results": results}
        if sweeps:
            doc["sweeps"] = sweeps
        text = _json(doc)
    else:
        rows = [_flat(r) for r in results]
        for method, entries in sweeps.items():
            for e in entries:
                row = _flat(e)
                row["method"] = e.get("method", method)
                rows.append(row)
        text = _csv(rows, TEST_CSV_FIELDS)
    _emit(text, args.out)
    return EXIT_OK


def _settings(text: str) -> list:
    names = []
    for item in _split(text):
        macro = MACROS.get(item.lower())
        names.extend(macro if macro else [item])
    if not names:
        raise ConfigurationError("no setting given")
    return [simlab.get_setting(name).name for name in names]


def _sizes(text: str) -> list:
    try:
        sizes = [int(t) for t in _split(text)]
    except ValueError:
        raise ConfigurationError(f"cannot parse sample sizes {text!r}") from None
    if not sizes or min(sizes) < 1:
        raise ConfigurationError("sample sizes must be positive integers")
    return sizes


def cmd_simulate(args) -> int:
    methods = _methods(args.method)
    _check_level(args.alpha, methods)
    settings = _settings(args.setting)
    sizes = _sizes(args.n)
    workers = simlab.resolve_workers(args.workers)
    estimates = []
    for name in settings:
        for method in methods:
            config = None
            if method != "ct":
                config = _override(simlab.default_config(name, method), args)
            for n in sizes:
                est = simlab.power_study(name, method, n, args.reps, args.alpha, args.seed, workers, config)
                estimates.append(est)
    if args.format == "json":
        table = {s: {m: {} for m in methods} for s in settings}
        for e in estimates:
            table[e.setting][e.method][str(e.n)] = e.rejection_rate
        rows = [{"setting": e.setting, "method": e.method, "n": e.n, "reps": e.reps, "seed": e.seed,
                 "rejection_rate": e.rejection_rate, "mc_se": e.monte_carlo_se, "failures": e.failures}
                for e in estimates]
        text = _json({"alpha": args.alpha, "reps": args.reps, "seed": args.seed, "settings": settings,
                      "methods": list(methods), "sizes": sizes, "table": table, "rows": rows})
    else:
        text = _csv([e.to_row() for e in estimates], STUDY_CSV_FIELDS)
    _emit(text, args.out)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "test":
            return cmd_test(args)
        if args.command == "sweep":
            return cmd_test(args, sweep_all=True)
        return cmd_simulate(args)
    except ConfigurationError as exc:
        print(f"gtetrad: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, StudyError) as exc:
        print(f"gtetrad: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except GTetradError as exc:
        print(f"gtetrad: error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"gtetrad: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
