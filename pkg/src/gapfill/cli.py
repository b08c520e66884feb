"""Command-line entry point.

Subcommands: synth, train, impute, eval, gradcheck. Exit codes: 0 success,
1 usage or configuration error, 2 partial benchmark failure, 3 numerical
divergence during training.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, default_config_text, load_config
from .data import (
    DataError,
    WindowSpec,
    compute_norm_stats,
    denormalize,
    extract_windows,
    load_csv,
    normalize,
    normalize_table,
    split_train_test,
    synth,
    write_csv,
)
from .eval import (
    BenchmarkConfig,
    BenchmarkDataset,
    borda,
    borda_rows,
    format_borda,
    format_report,
    report_rows,
    run_benchmark,
)
from .model import SCHEDULE_VARIANTS, gradient_check, impute
from .optim import DivergenceError, split_validation, train, write_train_log

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2
EXIT_DIVERGED = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gapfill",
        description="Fill gaps in time series with a two-encoder sequence model.",
    )
    parser.add_argument("--print-defaults", action="store_true",
                        help="print the default configuration file and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="write a synthetic CSV series")
    p.add_argument("--kind", default="sine", choices=("sine", "sum-of-sines", "random-walk"))
    p.add_argument("--n", type=int, default=1000, help="number of rows")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0, help="noise standard deviation")
    p.add_argument("--period", type=float, default=50.0, help="period of the sine kind")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override training.seed")
    p.add_argument("--variant", default=None, choices=SCHEDULE_VARIANTS,
                   help="override model.schedule")
    p.add_argument("--out", default=None, help="override paths.checkpoint")

    p = sub.add_parser("impute", help="fill gaps in a CSV with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="input CSV")
    p.add_argument("--gap", action="append", default=[], metavar="START:LENGTH",
                   help="gap to fill, zero-based data row index (repeatable)")
    p.add_argument("--column", action="append", default=[],
                   help="column name or index fed to the model "
                        "(repeat to match a multivariate checkpoint; default 0)")
    p.add_argument("--context", type=int, default=None,
                   help="observed rows used on each side of a gap (default: the gap length)")
    p.add_argument("--variant", default=None, choices=SCHEDULE_VARIANTS,
                   help="override the checkpoint's stream-weight schedule")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("eval", help="benchmark model variants per the config's datasets")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override training.seed")
    p.add_argument("--jobs", type=int, default=1, help="parallel training jobs")

    p = sub.add_parser("gradcheck", help="verify the closed-form gradients numerically")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def cmd_synth(args) -> int:
    table = synth(args.kind, args.n, noise_std=args.noise, seed=args.seed, period=args.period)
    try:
        write_csv(args.out, table)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"wrote {table.n_rows} rows to {args.out}")
    return EXIT_OK


def _load_training_data(cfg: RunConfig):
    d = cfg.data
    if not d["path"]:
        raise ConfigError("data.path: required for training")
    columns = [c.strip() for c in d["columns"].split(",") if c.strip()]
    if len(columns) != cfg.model["input_dim"]:
        raise ConfigError(
            f"data.columns: {len(columns)} column(s) selected but model.input_dim "
            f"is {cfg.model['input_dim']}")
    table = load_csv(d["path"], columns=columns, markers=d["missing"])
    train_part, _ = split_train_test(table, d["test_fraction"])
    stats = compute_norm_stats(train_part)
    spec = WindowSpec(d["before_len"], d["gap_len"], d["after_len"], d["train_stride"])
    windows = extract_windows(normalize_table(train_part, stats), spec)
    if len(windows) < 2:
        raise DataError(f"{d['path']}: only {len(windows)} training windows; "
                        "need at least 2 (shrink the window or add rows)")
    return windows, stats


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.training["seed"] = args.seed
    if args.variant is not None:
        cfg.model["schedule"] = args.variant
    ckpt_path = args.out or cfg.paths["checkpoint"]
    windows, stats = _load_training_data(cfg)
    fit, val = split_validation(windows, cfg.training["val_fraction"])
    params, log = train(cfg.network_config(), fit, val, None, cfg.train_config())
    save_checkpoint(ckpt_path, params, stats)
    write_train_log(log, cfg.paths["train_log"] + ".txt", cfg.paths["train_log"] + ".csv")
    print(f"trained {len(log.rows)} epoch(s); best validation loss "
          f"{log.best_val_loss:.6e} at epoch {log.best_epoch}")
    print(f"checkpoint: {ckpt_path}")
    return EXIT_OK


def _parse_gaps(specs: list[str]) -> list[tuple[int, int]]:
    gaps = []
    for spec in specs:
        try:
            start_s, len_s = spec.split(":")
            start, length = int(start_s), int(len_s)
        except ValueError:
            raise DataError(f"gap {spec!r}: expected START:LENGTH") from None
        if start < 0 or length < 0:
            raise DataError(f"gap {spec!r}: start and length must be non-negative")
        if length > 0:
            gaps.append((start, length))
    gaps.sort()
    for (s1, l1), (s2, l2) in zip(gaps, gaps[1:]):
        if s1 + l1 > s2:
            raise DataError(f"gap {s2}:{l2} overlaps gap {s1}:{l1}")
    return gaps


def cmd_impute(args) -> int:
    params, stats = load_checkpoint(args.checkpoint)
    d = params.config.input_dim
    columns = args.column or ["0"]
    if len(columns) != d:
        raise DataError(f"checkpoint expects {d} column(s), got {len(columns)} --column flags")
    table = load_csv(args.data)
    col_idx = [table.column_index(c) for c in columns]
    gaps = _parse_gaps(args.gap)

    with open(args.data) as fh:
        raw = fh.read()
    had_newline = raw.endswith("\n")
    lines = raw.split("\n")
    if had_newline:
        lines = lines[:-1]
    header_offset = len(lines) - table.n_rows  # rows consumed by the header

    values = table.values[:, col_idx]
    observed = ~table.missing[:, col_idx].any(axis=1) & np.isfinite(values).all(axis=1)
    in_gap = np.zeros(table.n_rows, dtype=bool)
    for start, length in gaps:
        if start + length > table.n_rows:
            raise DataError(f"gap {start}:{length} runs past the {table.n_rows}-row file")
        in_gap[start:start + length] = True

    for start, length in gaps:
        context = args.context or length
        lo, hi = start - context, start + length + context
        if lo < 0 or hi > table.n_rows:
            raise DataError(f"gap {start}:{length}: needs {context} observed rows on each side")
        ctx_rows = np.r_[lo:start, start + length:hi]
        if not observed[ctx_rows].all() or in_gap[ctx_rows].any():
            raise DataError(f"gap {start}:{length}: context rows must be observed values")
        before = normalize(values[lo:start], stats)
        after = normalize(values[start + length:hi], stats)
        filled = denormalize(impute(params, before, after, length, args.variant), stats)
        for offset in range(length):
            row = start + offset
            cells = lines[header_offset + row].split(",")
            for k, c in enumerate(col_idx):
                cells[c] = repr(float(filled[offset, k]))
            lines[header_offset + row] = ",".join(cells)

    out_text = "\n".join(lines) + ("\n" if had_newline else "")
    with open(args.out, "w") as fh:
        fh.write(out_text)
    filled_rows = sum(length for _, length in gaps)
    print(f"filled {filled_rows} row(s) across {len(gaps)} gap(s) into {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.training["seed"] = args.seed
    if not cfg.datasets:
        raise ConfigError("eval needs at least one [dataset:NAME] section")
    datasets = []
    for spec in cfg.datasets:
        table = load_csv(spec.path, markers=spec.missing)
        for col in spec.columns:
            idx = table.column_index(col)
            datasets.append(BenchmarkDataset(f"{spec.name}:{idx}", table.select([idx])))
    d = cfg.data
    bench = BenchmarkConfig(
        window=WindowSpec(d["before_len"], d["gap_len"], d["after_len"], d["train_stride"]),
        train=cfg.train_config(),
        hidden_dim=cfg.model["hidden_dim"],
        schedule_variant=cfg.model["schedule"],
        merge_hidden=cfg.model["merge_hidden"],
        test_fraction=d["test_fraction"],
        eval_stride=d["eval_stride"] or None,
        val_fraction=cfg.training["val_fraction"],
        jobs=args.jobs,
    )
    report = run_benchmark(datasets, cfg.eval["variants"], bench)
    with open(cfg.paths["report"] + ".txt", "w") as fh:
        fh.write(format_report(report))
    with open(cfg.paths["report"] + ".csv", "w") as fh:
        fh.write(report_rows(report))
    print(format_report(report), end="")
    if report.complete:
        tables = [borda(report, "mae"), borda(report, "mre")]
        with open(cfg.paths["borda"] + ".txt", "w") as fh:
            fh.write(format_borda(tables))
        with open(cfg.paths["borda"] + ".csv", "w") as fh:
            fh.write(borda_rows(tables))
        print(format_borda(tables), end="")
        return EXIT_OK
    print(f"warning: {len(report.failed_cells)} cell(s) failed; ranking skipped", file=sys.stderr)
    return EXIT_PARTIAL


def cmd_gradcheck(args) -> int:
    report = gradient_check(n_instances=args.instances, seed=args.seed,
                            eps=args.eps, tolerance=args.tolerance)
    for inst in report.instances:
        print(f"dims {inst.input_dim}x{inst.hidden_dim} gap {inst.gap_len} "
              f"{inst.variant:<8} merge_mlp {inst.merge_hidden}: "
              f"max rel err {inst.max_rel_err:.3e} ({inst.worst_path})")
    status = "PASS" if report.passed else "FAIL"
    print(f"{status}: max relative error {report.max_rel_err:.3e} "
          f"(worst parameter {report.worst_path}, tolerance {report.tolerance:g})")
    return EXIT_OK if report.passed else EXIT_USAGE


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        print(default_config_text(), end="")
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE
    handler = {
        "synth": cmd_synth,
        "train": cmd_train,
        "impute": cmd_impute,
        "eval": cmd_eval,
        "gradcheck": cmd_gradcheck,
    }[args.command]
    try:
        return handler(args)
    except (ConfigError, DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
