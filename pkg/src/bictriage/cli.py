"""Command line entry point: ``bic-triage generate|train|classify|evaluate|report``.

Results go to stdout as JSON lines; diagnostics go to stderr. Exit status is
0 on success, 2 on usage errors and 1 on any other failure.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines (``#``
starts a comment). Keys are flag names without the leading dashes; boolean
flags take ``true``/``false``. Flags given on the command line win.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, datagen, logreg, max_precision, naive_bayes, report, store
from .harness import METHODS, HarnessError, RunConfig, rolling_evaluate
from .logreg import LogRegModel, SolverConfig, SolverError
from .max_precision import MpModel
from .naive_bayes import NbModel
from .samples import (
    META_FILE,
    FeatureSpace,
    SampleFormatError,
    SparseBatch,
    list_day_files,
    parse_daily_file,
    read_daily_file,
    read_meta,
)
from .store import ModelFormatError

PROG = "bic-triage"
THREADS_ENV = "BIC_TRIAGE_THREADS"

log = logging.getLogger(PROG)


class CliError(Exception):
    pass


# -- argument parsing ------------------------------------------------------------


def _probability_open(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie strictly between 0 and 1, got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _non_negative_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _threshold(text: str):
    if text == "search":
        return text
    try:
        return max_precision.as_threshold(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _grid(text: str) -> tuple[Fraction, ...]:
    """``lo:hi:step`` (inclusive) or a comma list of thresholds."""
    try:
        if ":" in text:
            lo, hi, step = (Fraction(p) for p in text.split(":"))
            if step <= 0:
                raise ValueError("grid step must be positive")
            values, v = [], lo
            while v <= hi:
                values.append(v)
                v += step
        else:
            values = [Fraction(p) for p in text.split(",") if p]
        grid = tuple(max_precision.as_threshold(v) for v in values)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not grid:
        raise argparse.ArgumentTypeError("grid is empty")
    return grid


def _methods(text: str) -> tuple[str, ...]:
    methods = tuple(m.strip().lower() for m in text.split(",") if m.strip())
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise argparse.ArgumentTypeError(f"methods must be a comma list of {','.join(METHODS)}")
    if len(set(methods)) != len(methods):
        raise argparse.ArgumentTypeError("duplicate method")
    return methods


def _correlated(text: str) -> tuple[int, int, float]:
    try:
        i, j, rho = text.split(":")
        return int(i), int(j), float(rho)
    except ValueError:
        raise argparse.ArgumentTypeError("expected I:J:RHO") from None


def _default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return _positive_int(env)
        except (ValueError, argparse.ArgumentTypeError):
            raise CliError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
    return os.cpu_count() or 1


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("logistic regression")
    g.add_argument("--lambda", dest="ridge_lambda", type=float, default=1e-6, help="L2 penalty (default 1e-6)")
    g.add_argument("--max-iter", type=_positive_int, default=50)
    g.add_argument("--tol", type=float, default=1e-8, help="sup-norm step tolerance")
    g.add_argument("--intercept", action=argparse.BooleanOptionalAction, default=False)
    g.add_argument("--damping", action=argparse.BooleanOptionalAction, default=True)


def _add_mp_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("max precision")
    g.add_argument("--threshold", type=_threshold, default=max_precision.DEFAULT_THRESHOLD,
                   help="T in (0,1), e.g. 0.99 or 99/100, or 'search' (default 0.99)")
    g.add_argument("--grid", type=_grid, default=None,
                   help="search grid, LO:HI:STEP or comma list (default 0.500:0.999:0.001)")
    g.add_argument("--incremental", action=argparse.BooleanOptionalAction, default=False,
                   help="rescore during the corrective pass instead of using a snapshot")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description="Sandbox sample triage from behavioral indicators.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, allow_abbrev=False)
        p.add_argument("--config", type=Path, help="key = value defaults file")
        return p

    p = add("generate", "write a synthetic daily-file dataset")
    p.add_argument("--out", type=Path, required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--spec", type=Path, help="generator.json to reproduce")
    src.add_argument("--m", type=_positive_int, default=None, help="number of BICs (default 256)")
    p.add_argument("--days", type=_positive_int, default=None)
    p.add_argument("--per-day", type=_non_negative_int, default=None)
    p.add_argument("--seed", type=_non_negative_int, default=None)
    p.add_argument("--prior", type=_probability_open, default=None, help="malicious fraction (default 0.32)")
    p.add_argument("--start-date", type=dt.date.fromisoformat, default=None)
    p.add_argument("--correlated", type=_correlated, action="append", default=None, metavar="I:J:RHO",
                   help="BIC J copies BIC I with probability RHO (repeatable)")

    p = add("train", "fit one model on every day in a data directory")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_mp_flags(p)
    _add_solver_flags(p)

    p = add("classify", "classify a daily file with a saved model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True, help="JSONL samples, '-' for stdin")
    p.add_argument("--out", type=Path, default=None, help="default: stdout")
    p.add_argument("--threads", type=_positive_int, default=None)

    p = add("evaluate", "rolling day-by-day evaluation")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--methods", type=_methods, default=METHODS)
    p.add_argument("--window", type=_positive_int, default=None, help="train on the last N days only")
    p.add_argument("--warm-start", action=argparse.BooleanOptionalAction, default=True,
                   help="start LR from the previous day's weights")
    p.add_argument("--threads", type=_positive_int, default=None)
    _add_mp_flags(p)
    _add_solver_flags(p)

    p = add("report", "rebuild charts and averages from a results directory")
    p.add_argument("--results", type=Path, required=True, help="directory containing report.csv")
    p.add_argument("--out", type=Path, default=None, help="default: the results directory")
    return parser


def _config_argv(path: Path, parser: argparse.ArgumentParser) -> list[str]:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        parser.error(f"cannot read config {path}: {exc}")
    flags = {opt: a for a in parser._actions for opt in a.option_strings}
    argv: list[str] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip().replace("_", "-"), value.strip()
        flag = f"--{key}"
        if not sep or not key:
            parser.error(f"{path}:{lineno}: expected key = value")
        if flag not in flags or key == "config":
            parser.error(f"{path}:{lineno}: unknown key {key!r}")
        if isinstance(flags[flag], argparse.BooleanOptionalAction):
            if value.lower() not in ("true", "false"):
                parser.error(f"{path}:{lineno}: {key} must be true or false")
            argv.append(flag if value.lower() == "true" else f"--no-{key}")
        else:
            argv += [flag, value]
    return argv


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.config is not None:
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        extra = _config_argv(args.config, subparser)
        # file values first so explicit flags override them
        i = argv.index(args.command) + 1
        args = parser.parse_args(argv[:i] + extra + argv[i:])
    if getattr(args, "grid", None) is not None and args.threshold != "search":
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        subparser.error("--grid requires --threshold search")
    return args


# -- commands -------------------------------------------------------------------


def _emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj, separators=(",", ":"), sort_keys=False) + "\n")
    sys.stdout.flush()


def _solver(args) -> SolverConfig:
    try:
        return SolverConfig(
            ridge_lambda=args.ridge_lambda,
            max_iterations=args.max_iter,
            tolerance=args.tol,
            damping=args.damping,
            intercept=args.intercept,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None


def cmd_generate(args) -> int:
    if args.spec is not None:
        try:
            spec = datagen.GeneratorSpec.from_json(args.spec.read_text(encoding="utf-8"))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise CliError(f"invalid generator spec {args.spec}: {exc}") from None
        overrides = {k: v for k, v in (
            ("days", args.days), ("samples_per_day", args.per_day), ("seed", args.seed),
            ("prior_malicious", args.prior), ("start_date", args.start_date),
        ) if v is not None}
        if overrides:
            spec = dataclasses.replace(spec, **overrides)
    else:
        spec = datagen.default_profile(
            m_count=args.m if args.m is not None else 256,
            prior_malicious=args.prior if args.prior is not None else 0.32,
            samples_per_day=args.per_day if args.per_day is not None else 5000,
            days=args.days if args.days is not None else 30,
            seed=args.seed if args.seed is not None else 0,
        )
        extra = {}
        if args.start_date is not None:
            extra["start_date"] = args.start_date
        if args.correlated:
            extra["correlated_pairs"] = tuple(args.correlated)
        if extra:
            spec = dataclasses.replace(spec, **extra)
    paths = datagen.write_dataset(spec, args.out)
    _emit({"out": str(args.out), "days": len(paths), "samples_per_day": spec.samples_per_day,
           "m_count": spec.m_count, "seed": spec.seed})
    return 0


def _load_training(data_dir: Path) -> tuple[FeatureSpace, SparseBatch, int]:
    space = read_meta(data_dir)
    files = list_day_files(data_dir)
    if not files:
        raise CliError(f"no daily files in {data_dir}")
    parts = []
    for path in files:
        batch = SparseBatch.from_samples(read_daily_file(path, space).samples, space.m_count)
        parts.append(batch.select(batch.labels >= 0))
    train = SparseBatch.concat(parts)
    if len(train) == 0:
        raise CliError(f"no labeled samples in {data_dir}")
    return space, train, len(files)


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    space, train, n_days = _load_training(args.data)
    t1 = time.perf_counter()
    summary: dict = {"method": args.method, "days": n_days, "train_size": len(train), "m_count": space.m_count}
    if args.method == "lr":
        model, rep = logreg.fit(train, space, _solver(args))
        summary.update(iterations=rep.iterations_used, final_nll=rep.final_nll, converged=rep.converged)
    elif args.method == "nb":
        model = naive_bayes.finalize(naive_bayes.NbCounters(space.m_count).update_batch(train))
    else:
        model = max_precision.fit(
            train, space.m_count, threshold=args.threshold, corrected=args.method == "mp2",
            grid=args.grid, incremental=args.incremental,
        )
        summary.update(threshold=f"{model.threshold.numerator}/{model.threshold.denominator}",
                       corrected=model.corrected)
    t2 = time.perf_counter()
    store.save(model, args.out)
    summary.update(out=str(args.out), load_seconds=round(t1 - t0, 6), train_seconds=round(t2 - t1, 6))
    _emit(summary)
    return 0


def score_batch(model, batch: SparseBatch) -> tuple[np.ndarray, np.ndarray]:
    """(predictions, scores) exactly as the per-sample library calls give them."""
    if isinstance(model, LogRegModel):
        p = model.predict_proba_batch(batch)
        return (p >= 0.5).astype(np.int8), p
    if isinstance(model, NbModel):
        s = model.scores_batch(batch)
        with np.errstate(invalid="ignore"):
            diff = s[1] - s[0]
        return (s[1] >= s[0]).astype(np.int8), diff
    if isinstance(model, MpModel):
        return model.classify_batch(batch), model.score_batch(batch)
    raise TypeError(type(model).__name__)


def _json_score(v: float):
    # an empty training class gives NB scores of +/-inf, which JSON cannot carry
    return float(v) if math.isfinite(v) else None


def cmd_classify(args) -> int:
    model = store.load(args.model)
    space = FeatureSpace(model.m_count)
    if str(args.input) == "-":
        batch = parse_daily_file(sys.stdin.buffer, space, source="<stdin>")
    else:
        meta = args.input.parent / META_FILE
        if meta.exists() and read_meta(args.input.parent).m_count != model.m_count:
            raise CliError(f"m_count mismatch: model has {model.m_count}, {meta} has {read_meta(args.input.parent).m_count}")
        try:
            with args.input.open("rb") as fh:
                batch = parse_daily_file(fh, space, source=str(args.input))
        except OSError as exc:
            raise CliError(f"cannot read {args.input}: {exc}") from None

    samples = batch.samples
    threads = args.threads or _default_threads()
    chunk = max(1, math.ceil(len(samples) / threads))
    chunks = [samples[i : i + chunk] for i in range(0, len(samples), chunk)]

    def run(part):
        return score_batch(model, SparseBatch.from_samples(part, model.m_count))

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]

    out = sys.stdout if args.out is None else args.out.open("w", encoding="utf-8")
    try:
        for part, (pred, score) in zip(chunks, results):
            for s, p, v in zip(part, pred.tolist(), score.tolist()):
                out.write(json.dumps({"id": s.id, "prediction": p, "score": _json_score(v)}, separators=(",", ":")) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_evaluate(args) -> int:
    threads = args.threads or _default_threads()
    try:
        config = RunConfig(
            data_dir=args.data,
            methods=args.methods,
            mp_threshold=args.threshold,
            window_days=args.window,
            lr_solver=_solver(args),
            lr_warm_start=args.warm_start,
            mp_incremental=args.incremental,
            mp_grid=args.grid,
            threads=threads,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None
    rep = rolling_evaluate(config)
    cfg = config.to_dict()
    # thread count never changes results; keep it out of the echoed config
    cfg.pop("threads")
    paths = report.write_results(rep, args.out, cfg)
    _emit({
        "out": str(args.out),
        "days_evaluated": len(rep.days),
        "files": sorted(paths),
        "macro_averages": rep.macro_averages,
        "pooled_metrics": {k: v.as_dict() for k, v in rep.pooled_metrics.items()},
    })
    return 0


def cmd_report(args) -> int:
    src = args.results / "report.csv"
    try:
        rows = report.read_csv(src.read_bytes())
    except OSError as exc:
        raise CliError(f"cannot read {src}: {exc}") from None
    except ValueError as exc:
        raise CliError(f"{src}: {exc}") from None
    if not rows:
        raise CliError(f"{src} has no rows")
    dates, series, macro, pooled = report.summarize_csv(rows)
    out = args.out or args.results
    out.mkdir(parents=True, exist_ok=True)
    (out / "accuracy.svg").write_text(report.accuracy_svg(dates, series), encoding="utf-8")
    (out / "averages.svg").write_text(report.averages_svg(macro), encoding="utf-8")
    for method in series:
        _emit({"method": method, "days": sum(v is not None for v in series[method]),
               "macro": macro[method], "pooled": pooled[method]})
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "classify": cmd_classify,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format=f"{PROG}: %(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except BrokenPipeError:
        # the reader went away (e.g. piped into head); stop quietly
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return 1
    except (CliError, SampleFormatError, ModelFormatError, HarnessError, SolverError, ValueError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"{PROG}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
