"""Command-line surface: matching runs, bias enumeration, synthetic data, SQL emission.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure. Every
nonzero exit writes a single diagnostic line to stderr. Subcommand handlers
import the heavy modules lazily so that light commands start fast. Output
files are written atomically (write to a temp file, then rename).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field

from .errors import FlameError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


@dataclass(frozen=True)
class CommandOutcome:
    exit_code: int = EXIT_OK
    artifacts: tuple[str, ...] = field(default_factory=tuple)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _atomic_write(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _split_base(path: str) -> str:
    base, ext = os.path.splitext(path)
    return base if ext else path


def cmd_match(args) -> CommandOutcome:
    from .dataset import DatasetSchema, load_csv, split_holdout
    from .engine import (
        FlameConfig,
        estimate_ate,
        matchrun_levels_csv,
        matchrun_to_json,
        matchrun_units_csv,
        run_flame,
    )
    from .errors import NoEstimateError

    if (args.holdout is None) == (args.holdout_frac is None):
        raise UsageError("exactly one of --holdout and --holdout-frac is required")
    covariates = tuple(c for c in (args.covariates or "").split(",") if c)
    schema = DatasetSchema(args.treatment, args.outcome, covariates)
    full = load_csv(args.input, schema)
    if args.holdout is not None:
        encodings = None if full.encodings is None else dict(zip(full.covariate_names, map(list, full.encodings)))
        matching, holdout = full, load_csv(args.holdout, schema, encodings=encodings)
    else:
        matching, holdout = split_holdout(full, args.holdout_frac, args.seed)
    config = FlameConfig(
        c_param=args.c,
        epsilon=args.epsilon,
        replacement=args.replacement,
        backend=args.backend,
        stop_on_pe_blowup=not args.no_pe_stop,
        pe_blowup_mode=args.pe_mode,
        max_levels=args.max_levels,
        mq_drop_threshold=args.mq_drop_threshold,
        seed=args.seed,
    )
    run = run_flame(matching, holdout, config)
    artifacts = []
    if args.format == "json":
        _atomic_write(args.output, matchrun_to_json(run) + "\n")
        artifacts.append(args.output)
    else:
        base = _split_base(args.output)
        units_path, levels_path = f"{base}.units.csv", f"{base}.levels.csv"
        _atomic_write(units_path, matchrun_units_csv(run))
        _atomic_write(levels_path, matchrun_levels_csv(run))
        artifacts.extend([units_path, levels_path])
    n_groups = sum(len(lv.groups) for lv in run.levels)
    try:
        ate = f"{estimate_ate(run):.6g}"
    except NoEstimateError:
        ate = "n/a"
    print(
        f"levels={len(run.levels)} groups={n_groups} matched={run.n_matched}/{run.n_units} "
        f"ate={ate} stop={run.stop_reason.value}"
    )
    for path in artifacts:
        print(f"wrote {path}")
    return CommandOutcome(EXIT_OK, tuple(artifacts))


def cmd_oracle_bias(args) -> CommandOutcome:
    from .oracle import bias_matrix, bias_matrix_to_json, format_bias_table

    if args.p == 4 and not args.force_heavy:
        raise UsageError("p=4 enumerates ~4.3e9 allocations; pass --force-heavy to run it anyway")
    bm = bias_matrix(args.p, allow_heavy=args.force_heavy)
    print(format_bias_table(bm))
    artifacts = []
    if args.output:
        _atomic_write(args.output, bias_matrix_to_json(bm) + "\n")
        artifacts.append(args.output)
        print(f"wrote {args.output}")
    return CommandOutcome(EXIT_OK, tuple(artifacts))


def cmd_synth(args) -> CommandOutcome:
    from .synth import SynthSpec, generate, write_outputs

    spec = SynthSpec(
        model=args.model,
        n_control=args.n_control,
        n_treated=args.n_treated,
        u_coeff=args.u_coeff,
        seed=args.seed,
    )
    result = generate(spec)
    csv_path, sidecar = write_outputs(result, args.out)
    print(f"wrote {csv_path}")
    print(f"wrote {sidecar}")
    return CommandOutcome(EXIT_OK, (csv_path, sidecar))


def cmd_sql_emit(args) -> CommandOutcome:
    from .grouper import emit_sql

    covariates = [c for c in args.covariates.split(",") if c]
    if not covariates:
        raise UsageError("--covariates must name at least one column")
    print(emit_sql(covariates, args.level, args.table), end="")
    return CommandOutcome(EXIT_OK)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flame-match", description="Almost-exact matching engine for categorical causal inference")
    sub = parser.add_subparsers(dest="command", required=True)

    m = sub.add_parser("match", help="run the covariate-elimination matching loop on a CSV")
    m.add_argument("--input", required=True)
    m.add_argument("--holdout", help="separate holdout CSV (same columns; encoding reused)")
    m.add_argument("--holdout-frac", type=float, help="carve the holdout out of --input at this fraction")
    m.add_argument("--treatment", required=True)
    m.add_argument("--outcome", required=True)
    m.add_argument("--covariates", help="comma-separated covariate columns (default: all remaining)")
    m.add_argument("--c", type=float, default=0.001, help="balance/prediction trade-off (default 0.001)")
    m.add_argument("--epsilon", type=float, default=0.02, help="allowed prediction-error growth (default 0.02)")
    m.add_argument("--pe-mode", choices=["relative", "absolute"], default="relative")
    m.add_argument("--no-pe-stop", action="store_true", help="disable the prediction-error stopping rule")
    m.add_argument("--replacement", action="store_true")
    m.add_argument("--backend", choices=["mixed_radix", "tuple_key"], default="mixed_radix")
    m.add_argument("--max-levels", type=int)
    m.add_argument("--mq-drop-threshold", type=float)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--output", default="matchrun.json")
    m.add_argument("--format", choices=["json", "csv"], default="json")
    m.set_defaults(func=cmd_match)

    o = sub.add_parser("oracle-bias", help="exact bias matrix of the idealized drop-order matcher")
    o.add_argument("--p", type=int, required=True, choices=[1, 2, 3, 4])
    o.add_argument("--output")
    o.add_argument("--force-heavy", action="store_true", help="allow the ~4.3e9-allocation p=4 run")
    o.set_defaults(func=cmd_oracle_bias)

    s = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    s.add_argument("--model", required=True, choices=["quadratic", "irrelevant", "decay_exp", "decay_pow", "tradeoff"])
    s.add_argument("--n-control", type=int, required=True)
    s.add_argument("--n-treated", type=int, required=True)
    s.add_argument("--u-coeff", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output prefix; writes PREFIX.csv and PREFIX.coeffs.json")
    s.set_defaults(func=cmd_synth)

    q = sub.add_parser("sql-emit", help="print the two-statement grouping query for a covariate set")
    q.add_argument("--covariates", required=True, help="comma-separated column names")
    q.add_argument("--level", type=int, default=1)
    q.add_argument("--table", default="D")
    q.set_defaults(func=cmd_sql_emit)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        outcome = args.func(args)
        return outcome.exit_code
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FlameError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
