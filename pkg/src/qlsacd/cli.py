"""Command-line pipeline: durations -> fit -> diagnose -> forecast/ivar/mc.

Every subcommand reads/writes plain CSV and JSON, validates its inputs
before computing, and is reproducible: identical inputs, flags and seeds
give byte-identical outputs (pass --deterministic to suppress the one
timestamp field in JSON documents).

Exit codes: 0 success, 2 input or configuration error, 3 numerical or
convergence failure, 4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .acd import AcdModelSpec, AcdParams
from .diagnostics import (
    EXP1_TARGETS,
    McConfig,
    SUMMARY_KEYS,
    envelope,
    gcs_residuals,
    residual_reference_check,
    run_mc_study,
)
from .errors import DomainError, FitError, QlsacdError
from .estimate import (
    SCHEMA_VERSION,
    FitOptions,
    FittedModel,
    fit_auto,
    q_grid_scan,
)
from .ingest import (
    DURATION_HEADER,
    compute_price_durations,
    descriptive_stats,
    diurnal_adjust,
    read_durations_csv,
    read_ticks_csv,
    write_durations_csv,
)
from .lsdist import EXTRA_COUNT, Family, GeneratorSpec
from .risk import ivar_backtest, ivar_forecast, prediction_interval

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_INTERNAL = 4

_FAMILY_NAMES = [f.value for f in Family]


class _CliInputError(Exception):
    pass


def _family(name: str) -> Family:
    try:
        return Family(name)
    except ValueError:
        raise _CliInputError(
            f"unknown family {name!r}; valid names: {', '.join(_FAMILY_NAMES)}"
        ) from None


def _order(text: str):
    try:
        r, s = (int(v) for v in text.split(","))
    except ValueError:
        raise _CliInputError(f"--order expects 'r,s', got {text!r}") from None
    if r < 0 or s < 0:
        raise _CliInputError("orders must be nonnegative")
    return r, s


def _floats(text: str):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip() != "")
    except ValueError:
        raise _CliInputError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip() != "")
    except ValueError:
        raise _CliInputError(f"expected comma-separated integers, got {text!r}") from None


def _q_grid(text: str):
    parts = text.split(":")
    if len(parts) != 3:
        raise _CliInputError(f"--q-grid expects 'lo:hi:step', got {text!r}")
    lo, hi, step = (float(v) for v in parts)
    if step <= 0 or not (0.0 < lo <= hi < 1.0):
        raise _CliInputError(f"invalid q grid {text!r}")
    count = int(round((hi - lo) / step))
    qs = [round(lo + k * step, 10) for k in range(count + 1)]
    return [q for q in qs if lo - 1e-12 <= q <= hi + 1e-12]


def _build_spec(args, q=None):
    """Returns (spec, profile): profile is True when extras are unpinned."""
    family = _family(args.family)
    extra = _floats(args.extra) if getattr(args, "extra", None) else ()
    profile = False
    if len(extra) != EXTRA_COUNT[family]:
        if extra:
            raise _CliInputError(
                f"{family.value} takes {EXTRA_COUNT[family]} extra parameter(s), got {len(extra)}"
            )
        # no extras supplied: profile over the grid, seeded by its first point
        from .estimate import default_profile_grid

        extra = default_profile_grid(family)[0]
        profile = EXTRA_COUNT[family] > 0
    r, s = _order(args.order)
    if q is None:
        q = float(getattr(args, "q", 0.5))
    return AcdModelSpec(r=r, s=s, q=q, gen=GeneratorSpec(family, extra)), profile


def _fit_options(args) -> FitOptions:
    grid = None
    if getattr(args, "profile_grid", None):
        grid = tuple(
            tuple(_floats(point)) for point in args.profile_grid.split(";")
        )
    return FitOptions(
        max_iterations=args.max_iterations,
        gradient_tolerance=args.gradient_tolerance,
        profile_grid=grid,
        seed=args.seed,
    )


def _json_doc(payload: dict, args) -> dict:
    doc = {"schema_version": SCHEMA_VERSION}
    if not args.deterministic:
        doc["generated_at"] = datetime.now(timezone.utc).isoformat()
    doc.update(payload)
    return doc


def _write_json(payload: dict, path, args) -> None:
    doc = _json_doc(payload, args)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _fingerprint(values: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype=float).tobytes()).hexdigest()


def _load_duration_column(path, column: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise _CliInputError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header == DURATION_HEADER:
            idx = DURATION_HEADER.index(column)
        elif column in header:
            idx = header.index(column)
        elif len(header) == 1 and header[0] in ("duration", "x"):
            idx = 0
        else:
            raise _CliInputError(
                f"{path}: cannot find column {column!r} in header {header}"
            )
        values = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                values.append(float(row[idx]))
            except (ValueError, IndexError) as exc:
                raise _CliInputError(f"{path}:{lineno}: {exc}") from None
    if not values:
        raise _CliInputError(f"{path}: no data rows")
    return np.asarray(values, dtype=float)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_durations(args) -> int:
    if args.kappa <= 0:
        raise _CliInputError(f"--kappa must be positive, got {args.kappa}")
    ticks, skipped = read_ticks_csv(args.input, strict=not args.lenient)
    d = compute_price_durations(ticks, args.kappa)
    if args.adjust == "spline":
        d = diurnal_adjust(d, "cubic-spline-hourly")
    elif args.adjust == "bins":
        d = diurnal_adjust(d, "time-of-day-means")
    write_durations_csv(d, args.output)
    if args.stats:
        if args.stats_out is None:
            args.stats_out = str(args.output) + (
                ".stats.json" if args.format == "json" else ".stats.txt"
            )
        payload = {
            "kappa": args.kappa,
            "skipped_rows": skipped,
            "raw": descriptive_stats(d.raw_durations),
            "adjusted": descriptive_stats(d.adjusted),
            "data_fingerprint": _fingerprint(d.adjusted),
        }
        if args.format == "json":
            _write_json(payload, args.stats_out, args)
        else:
            with open(args.stats_out, "w", encoding="utf-8") as fh:
                width = max(len(k) for k in payload["raw"])
                fh.write(f"{'statistic':<{width}}  {'raw':>14}  {'adjusted':>14}\n")
                for key in payload["raw"]:
                    raw_v, adj_v = payload["raw"][key], payload["adjusted"][key]
                    fh.write(f"{key:<{width}}  {raw_v:>14.6g}  {adj_v:>14.6g}\n")
    return EXIT_OK


def cmd_fit(args) -> int:
    x = _load_duration_column(args.input, args.column)
    options = _fit_options(args)
    if args.q_grid:
        qs = _q_grid(args.q_grid)
        spec, profile = _build_spec(args)
        result = q_grid_scan(spec, x, qs, options, profile=profile)
        if args.criteria_out is None:
            args.criteria_out = "criteria.csv"
        result.to_csv(args.criteria_out)
        payload = result.to_json_dict()
        payload["family"] = spec.gen.family.value
        if args.output:
            _write_json(payload, args.output, args)
        else:
            print(json.dumps(payload["averages"]))
        if result.n_converged == 0:
            print("no q-grid fit converged", file=sys.stderr)
            return EXIT_NUMERIC
        return EXIT_OK
    if args.output is None:
        raise _CliInputError("-o/--output is required for a single-q fit")
    spec, profile = _build_spec(args)
    fitted = fit_auto(spec, x, options, profile=profile)
    doc = fitted.to_json_dict()
    doc["data_fingerprint"] = _fingerprint(x)
    if not args.deterministic:
        doc["generated_at"] = datetime.now(timezone.utc).isoformat()
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    if not fitted.converged and not args.allow_nonconverged:
        print(
            f"fit did not converge (grad_max={fitted.convergence.get('grad_max')}); "
            "pass --allow-nonconverged to accept",
            file=sys.stderr,
        )
        return EXIT_NUMERIC
    return EXIT_OK


def _load_model(path) -> tuple:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise _CliInputError(f"model file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise _CliInputError(f"{path}: invalid JSON ({exc})") from None
    return FittedModel.from_json_dict(doc), doc.get("data_fingerprint")


def cmd_diagnose(args) -> int:
    model, fingerprint = _load_model(args.model)
    x = _load_duration_column(args.input, args.column)
    if fingerprint and fingerprint != _fingerprint(x):
        print(
            "warning: model was fitted on different data than the input file",
            file=sys.stderr,
        )
    if len(x) != model.n_obs:
        raise _CliInputError(
            f"model was fitted on n={model.n_obs} but input has n={len(x)}"
        )
    res = gcs_residuals(model, x)
    with open(args.residuals_out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "residual", "capped"])
        for i, (r, c) in enumerate(zip(res.r_gcs, res.capped), start=1):
            writer.writerow([i, repr(float(r)), int(c)])
    env = envelope(
        model, x, n_sim=args.envelope_sims, level=args.level, seed=args.seed,
        refit=args.refit,
    )
    env.to_csv(args.envelope_out)
    check = residual_reference_check(res)
    payload = {
        "exp1_targets": dict(zip(SUMMARY_KEYS, EXP1_TARGETS)),
        "reference_check": check.to_json_dict(),
        "envelope": {
            "level": env.level,
            "n_sim_requested": env.n_sim_requested,
            "n_sim_effective": env.n_sim_effective,
            "inside_fraction": env.inside_fraction,
        },
    }
    _write_json(payload, args.summary_out, args)
    return EXIT_OK


def cmd_mc(args) -> int:
    spec, _ = _build_spec(args, q=0.5)  # per-cell q values come from --q
    true_params = AcdParams.from_vector(np.asarray(_floats(args.true_params)), spec.r, spec.s)
    cfg = McConfig(
        spec=spec,
        true_params=true_params,
        sample_sizes=_ints(args.n),
        replications=args.replications,
        q_values=_floats(args.q),
        seed=args.seed,
        fit_options=_fit_options(args),
    )
    report = run_mc_study(cfg)
    report.to_csv(args.output)
    if args.residuals_out:
        report.residuals_to_csv(args.residuals_out)
    if args.json_out:
        _write_json(report.to_json_dict(), args.json_out, args)
    return EXIT_OK


def cmd_forecast(args) -> int:
    x = _load_duration_column(args.input, args.column)
    spec, profile = _build_spec(args)
    result = prediction_interval(
        x, spec, args.q_lo, args.q_hi, args.window, _fit_options(args),
        mode=args.mode, profile=profile,
    )
    result.to_csv(args.output)
    _write_json(result.summary_dict(), args.summary_out, args)
    return EXIT_OK


def cmd_ivar(args) -> int:
    if args.kappa <= 0:
        raise _CliInputError(f"--kappa must be positive, got {args.kappa}")
    d = read_durations_csv(args.input, kappa=args.kappa)
    spec, profile = _build_spec(args)
    options = _fit_options(args)
    fitted = fit_auto(spec, d.adjusted, options, profile=profile)
    if not fitted.converged and not args.allow_nonconverged:
        print("fit did not converge", file=sys.stderr)
        return EXIT_NUMERIC
    fc = ivar_forecast(fitted, d, args.var_level)
    payload = {"forecast": fc.to_json_dict()}
    if args.window > 0:
        bt = ivar_backtest(spec, d, args.var_level, args.window, options, profile=profile)
        bt.to_csv(args.output)
        payload["backtest"] = bt.summary_dict()
    _write_json(payload, args.summary_out, args)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and config plumbing
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file mirroring the flags")
    p.add_argument("--deterministic", action="store_true",
                   help="suppress timestamps so outputs are byte-reproducible")
    p.add_argument("--seed", type=int, default=0)


def _add_fit_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", default="log-normal")
    p.add_argument("--order", default="1,1", help="model orders 'r,s'")
    p.add_argument("--extra", help="fixed extra kernel parameter(s), comma separated")
    p.add_argument("--profile-grid",
                   help="semicolon-separated extra-parameter candidates, e.g. '2;3;4'")
    p.add_argument("--max-iterations", type=int, default=200)
    p.add_argument("--gradient-tolerance", type=float, default=1e-5)
    p.add_argument("--column", default="adjusted_duration",
                   help="duration column to model")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qlsacd",
        description="Quantile log-symmetric conditional duration modeling",
    )
    parser.add_argument("--version", action="version", version=f"qlsacd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("durations", help="ticks -> seasonally adjusted price durations")
    p.add_argument("input", help="tick CSV with header timestamp,bid,ask")
    p.add_argument("-o", "--output", required=True, help="duration CSV path")
    p.add_argument("--kappa", type=float, required=True, help="price move threshold")
    p.add_argument("--adjust", choices=["spline", "bins", "none"], default="spline")
    p.add_argument("--stats", action="store_true", help="emit summary statistics")
    p.add_argument("--stats-out", default=None)
    p.add_argument("--format", choices=["json", "table"], default="json")
    p.add_argument("--lenient", action="store_true",
                   help="skip malformed tick rows instead of failing")
    _add_common(p)
    p.set_defaults(func=cmd_durations)

    p = sub.add_parser("fit", help="maximum-likelihood fit, single q or q grid")
    p.add_argument("input", help="duration CSV")
    p.add_argument("-o", "--output", default=None, help="model JSON path")
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--q-grid", help="quantile grid 'lo:hi:step'")
    p.add_argument("--criteria-out", default=None, help="per-q criteria CSV")
    p.add_argument("--allow-nonconverged", action="store_true")
    _add_fit_common(p)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("diagnose", help="GCS residuals, reference check, envelope")
    p.add_argument("input", help="duration CSV used for the fit")
    p.add_argument("--model", required=True, help="model JSON from 'fit'")
    p.add_argument("--column", default="adjusted_duration")
    p.add_argument("--envelope-sims", type=int, default=100)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--refit", action="store_true", help="refit each envelope simulation")
    p.add_argument("--residuals-out", default="residuals.csv")
    p.add_argument("--envelope-out", default="envelope.csv")
    p.add_argument("--summary-out", default="diagnose.json")
    _add_common(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("mc", help="simulation study: relative bias, RMSE, residuals")
    p.add_argument("-o", "--output", required=True, help="report CSV path")
    p.add_argument("--true-params", default="0.25,0.20,0.70,0.10",
                   help="phi,omega,alpha...,beta...")
    p.add_argument("--n", default="200,1000,2000", help="sample sizes")
    p.add_argument("--replications", type=int, default=500)
    p.add_argument("--q", default="0.05,0.25,0.5,0.75,0.95", help="quantile levels")
    p.add_argument("--residuals-out", default=None)
    p.add_argument("--json-out", default=None)
    _add_fit_common(p)
    _add_common(p)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("forecast", help="rolling one-step prediction intervals")
    p.add_argument("input", help="duration CSV")
    p.add_argument("-o", "--output", required=True, help="interval CSV path")
    p.add_argument("--q-lo", type=float, default=0.025)
    p.add_argument("--q-hi", type=float, default=0.975)
    p.add_argument("--window", type=int, default=300)
    p.add_argument("--mode", choices=["fast", "refit"], default="fast")
    p.add_argument("--summary-out", default="forecast.json")
    _add_fit_common(p)
    _add_common(p)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("ivar", help="intraday VaR forecast and rolling backtest")
    p.add_argument("input", help="duration CSV (full 6-column schema)")
    p.add_argument("-o", "--output", default="ivar_backtest.csv")
    p.add_argument("--var-level", type=float, default=0.01)
    p.add_argument("--window", type=int, default=300,
                   help="backtest window; 0 emits the forecast couple only")
    p.add_argument("--kappa", type=float, required=True,
                   help="price threshold the durations were built with")
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--mode", choices=["fast"], default="fast")
    p.add_argument("--allow-nonconverged", action="store_true")
    p.add_argument("--summary-out", default="ivar.json")
    _add_fit_common(p)
    _add_common(p)
    p.set_defaults(func=cmd_ivar)

    return parser


def _apply_config(parser: argparse.ArgumentParser, argv):
    """Load `key = value` defaults from --config; flags still override."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise _CliInputError("--config needs a file path")
    path = argv[idx + 1]
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise _CliInputError(f"cannot read config {path}: {exc}") from None
    # find the subcommand parser to validate keys against
    command = next((a for a in argv if not a.startswith("-")), None)
    sub_actors = {}
    for action in parser._subparsers._group_actions:  # noqa: SLF001
        sub_actors = action.choices
    if command not in sub_actors:
        return argv
    sub = sub_actors[command]
    valid = {a.dest for a in sub._actions}  # noqa: SLF001
    overrides = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise _CliInputError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in text.split("=", 1))
        dest = key.replace("-", "_")
        if dest not in valid:
            raise _CliInputError(f"{path}:{lineno}: unknown config key {key!r}")
        overrides[dest] = value
    # coerce using the option's declared type/action
    for action in sub._actions:  # noqa: SLF001
        if action.dest in overrides:
            raw = overrides[action.dest]
            if isinstance(action, (argparse._StoreTrueAction,)):  # noqa: SLF001
                overrides[action.dest] = raw.lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                overrides[action.dest] = action.type(raw)
            action.required = False  # the config satisfies this option
    sub.set_defaults(**overrides)
    return argv


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except _CliInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DomainError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FitError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except QlsacdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # pragma: no cover - invariant violations
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
