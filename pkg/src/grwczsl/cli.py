"""``grwczsl`` command line: run, synth, plot, verify.

Exit codes: 0 ok, 1 configuration or input error, 2 numeric failure,
3 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional

import numpy as np
import scipy
import sklearn
from threadpoolctl import threadpool_limits

from . import __version__, verify
from .config import RunConfig, default_config, dump_toml, load_config
from .data import (SyntheticSpec, build_static_schedule, generate_synthetic, load_dataset_csv,
                   load_schedule, save_dataset_csv)
from .exceptions import ConfigError, DataParseError, GRWError, NumericError
from .svgplot import fit_line, line_chart, pearson, scatter_with_fit
from .trainer import StreamReport, TrainerState, train_task_stream

log = logging.getLogger("grwczsl")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# --- run ---------------------------------------------------------------------------

def _fmt(v):
    return "" if v is None else repr(float(v))


def load_run_data(cfg: RunConfig, seed):
    """``(train, test, schedule)`` for one seed."""
    d = cfg.data
    if d.source == "synthetic":
        dataset = generate_synthetic(cfg.synthetic_spec(seed))
    else:
        dataset = load_dataset_csv(d.features, d.attributes)
    schedule = load_schedule(d.schedule) if d.schedule else \
        build_static_schedule(dataset.n_classes, d.n_tasks)
    if sorted(schedule.all_classes()) != list(range(dataset.n_classes)):
        raise ConfigError("schedule does not cover the dataset classes exactly")
    train, test = dataset.split(d.test_fraction, np.random.default_rng(seed))
    return train, test, schedule


def summary_dict(report: StreamReport, cfg: RunConfig, seed) -> dict:
    return {"mSA": report.mSA, "mUA": report.mUA, "mHA": report.mHA, "BWT": report.BWT,
            "config_hash": cfg.hash(), "seed": int(seed)}


def write_run_outputs(out: Path, report: StreamReport, cfg: RunConfig, seed):
    out.mkdir(parents=True, exist_ok=True)
    with (out / "per_task.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "S_t", "U_t", "H_t"])
        H = report.harmonic_per_task
        for t, (s, u) in enumerate(zip(report.seen_acc, report.unseen_acc), start=1):
            w.writerow([t, _fmt(s), _fmt(u), _fmt(H[t - 1]) if u is not None else ""])
    with (out / "gdb_trace.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "epoch", "grw_loss", "gdb"])
        for t, e, g, d in report.gdb_trace:
            w.writerow([t, e, _fmt(g), _fmt(d)])
    with (out / "buffer_counts.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "class_id", "count"])
        for t, counts in enumerate(report.buffer_counts, start=1):
            for c, n in counts.items():
                w.writerow([t, c, n])
    summary = summary_dict(report, cfg, seed)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def run_seed(cfg: RunConfig, seed, out: Path) -> dict:
    """Train and evaluate one seed; writes every run file under ``out``."""
    start = time.perf_counter()
    train, test, schedule = load_run_data(cfg, seed)
    # training is single-threaded by contract; this also pins BLAS results
    with threadpool_limits(limits=1):
        state = TrainerState(train.d_a, train.d_x, cfg.trainer_config(seed), cfg.loss)
        report = train_task_stream(state, train, schedule, eval_dataset=test)
    for name in ("mSA", "mUA", "mHA", "BWT"):
        v = getattr(report, name)
        if v is not None and not np.isfinite(v):
            raise NumericError(f"{name} is not finite")
    summary = write_run_outputs(out, report, cfg, seed)
    manifest = {
        "config": cfg.to_dict(),
        "seed": int(seed),
        "config_hash": cfg.hash(),
        "versions": {"grwczsl": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "scikit-learn": sklearn.__version__},
        "wall_time_s": time.perf_counter() - start,
        "files": ["per_task.csv", "summary.json", "gdb_trace.csv", "buffer_counts.csv"],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return summary


def _run_seed_worker(args):
    cfg, seed, out = args
    try:
        return seed, run_seed(cfg, seed, out), None
    except NumericError as exc:
        return seed, None, (EXIT_NUMERIC, str(exc))
    except (ConfigError, DataParseError) as exc:
        return seed, None, (EXIT_CONFIG, str(exc))


def parse_seeds(text) -> List[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise CliError(EXIT_CONFIG, f"--seeds must be comma-separated integers, got {text!r}")
    if not seeds or len(set(seeds)) != len(seeds):
        raise CliError(EXIT_CONFIG, "--seeds must list distinct integers")
    return seeds


def thread_cap() -> int:
    raw = os.environ.get("GRW_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliError(EXIT_CONFIG, f"GRW_THREADS must be a positive integer, got {raw!r}")
    if n < 1:
        raise CliError(EXIT_CONFIG, "GRW_THREADS must be a positive integer")
    return n


def cmd_run(args) -> int:
    if args.print_config:
        cfg = load_config(args.config) if args.config else default_config()
        sys.stdout.write(dump_toml(cfg))
        return EXIT_OK
    if not args.config:
        raise CliError(EXIT_CONFIG, "run needs --config PATH")
    cfg = load_config(args.config)
    out = Path(args.out or cfg.out_dir)
    if args.seeds is None:
        seed = cfg.seed
        _, summary, err = _run_seed_worker((cfg, seed, out))
        if err:
            raise CliError(*err)
        print(json.dumps(summary, sort_keys=True))
        return EXIT_OK

    seeds = parse_seeds(args.seeds)
    jobs = [(cfg, s, out / f"seed_{s}") for s in seeds]
    workers = min(thread_cap(), len(seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_seed_worker, jobs))
    else:
        results = [_run_seed_worker(j) for j in jobs]
    failures = [(s, e) for s, _, e in results if e]
    if failures:
        seed, (code, msg) = failures[0]
        raise CliError(code, f"seed {seed}: {msg}")
    per_seed = {str(s): summ for s, summ, _ in results}
    mhas = [summ["mHA"] for summ in per_seed.values() if summ["mHA"] is not None]
    agg = {"seeds": seeds, "per_seed": per_seed,
           "mean_mHA": float(np.mean(mhas)) if mhas else None}
    out.mkdir(parents=True, exist_ok=True)
    (out / "seeds_summary.json").write_text(json.dumps(agg, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"seeds": seeds, "mean_mHA": agg["mean_mHA"]}, sort_keys=True))
    return EXIT_OK


# --- synth -------------------------------------------------------------------

def load_synthetic_spec(path) -> SyntheticSpec:
    from .config import tomllib
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"spec file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}")
    raw = raw.get("synthetic", raw)
    allowed = set(SyntheticSpec.__dataclass_fields__)
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]}")
    try:
        return SyntheticSpec(**raw).validate()
    except TypeError as exc:
        raise ConfigError(str(exc))


def cmd_synth(args) -> int:
    spec = load_synthetic_spec(args.spec)
    dataset = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset_csv(dataset, out / "features.csv", out / "attributes.csv")
    schedule = build_static_schedule(spec.n_classes, spec.n_tasks)
    (out / "schedule.json").write_text(schedule.to_json() + "\n")
    print(f"wrote {len(dataset)} samples of {spec.n_classes} classes to {out}")
    return EXIT_OK


# --- plot -------------------------------------------------------------------

def _read_csv(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_plot(args) -> int:
    run = Path(args.run_dir)
    per_task = run / "per_task.csv"
    if not per_task.is_file():
        raise CliError(EXIT_CONFIG, f"missing {per_task}")
    rows = [r for r in _read_csv(per_task) if r["H_t"] != ""]
    if rows:
        t = [int(r["task"]) for r in rows]
        h = [float(r["H_t"]) for r in rows]
        svg = line_chart(t, h, "Harmonic mean accuracy per task", "task", "H_t")
    else:
        svg = line_chart([1], [0.0], "Harmonic mean accuracy per task (no unseen tasks)",
                         "task", "H_t")
    (run / "mha_per_task.svg").write_text(svg)

    trace_path = run / "gdb_trace.csv"
    trace = _read_csv(trace_path) if trace_path.is_file() else []
    if not trace:
        log.warning("gdb trace is empty; skipping grw_vs_gdb.svg")
        return EXIT_OK
    trace_tuples = [(int(r["task"]), int(r["epoch"]), float(r["grw_loss"]), float(r["gdb"]))
                    for r in trace]
    grw = [x[2] for x in trace_tuples]
    gdb = [x[3] for x in trace_tuples]
    r = pearson(grw, gdb)
    within = verify.mean_within_task_correlation(trace_tuples)
    title = "GRW loss vs GDB distance, Pearson r = " + ("n/a" if r is None else f"{r:.3f}")
    if within is not None:
        title += f" (mean within-task r = {within:.3f})"
    (run / "grw_vs_gdb.svg").write_text(scatter_with_fit(grw, gdb, title, "GRW loss", "GDB"))
    if len(grw) >= 2 and np.ptp(grw) > 0:
        slope, _ = fit_line(grw, gdb)
        print(f"fitted slope {slope:.4g}, Pearson r {r if r is None else round(r, 4)}")
    return EXIT_OK


# --- verify -------------------------------------------------------------------

def cmd_verify(args) -> int:
    names = args.suite or list(verify.SUITES)
    unknown = [n for n in names if n not in verify.SUITES]
    if unknown:
        raise CliError(EXIT_CONFIG, f"unknown suite {unknown[0]}; choose from {list(verify.SUITES)}")
    results = verify.run_all(names)
    print(verify.format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# --- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grwczsl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-task progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train and evaluate over a task stream")
    r.add_argument("--config", help="TOML run configuration")
    r.add_argument("--seeds", help="comma-separated seeds, one subdirectory each")
    r.add_argument("--out", help="output directory (overrides out_dir)")
    r.add_argument("--print-config", action="store_true",
                   help="print the resolved configuration and exit")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("synth", help="write a synthetic benchmark as CSV")
    s.add_argument("--spec", required=True, help="TOML synthetic spec")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    pl = sub.add_parser("plot", help="render SVG charts for a run directory")
    pl.add_argument("run_dir")
    pl.set_defaults(func=cmd_plot)

    v = sub.add_parser("verify", help="run the property and oracle suites")
    v.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataParseError, GRWError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
