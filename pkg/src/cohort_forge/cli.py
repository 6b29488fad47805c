"""Batch command-line interface.

Loads a task config and an event-stream dataset (one file, or a set of
shards), runs the extraction (optionally in parallel across shards), and
writes one output table per shard plus a JSON run manifest whose config
hash and input listing make the run exactly re-executable.

Exit codes: 0 success, 1 config error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import glob as _glob
import hashlib
import json
import logging
import multiprocessing
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import polars as pl

from . import __version__
from .config import ConfigError, TaskConfig, load_task_config, serialize_task_config
from .engine import cohort_frame, extract_cohort
from .ingest import DataError, load_cohort_source, load_direct_predicates

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_DATA_ERROR = 2
EXIT_INTERNAL_ERROR = 3

USAGE = (
    "cohort-extract --config FILE --data PATH --standard {meds,direct} --output PATH"
    " [--shards EXPR] [--jobs N] [--include-window-stats] [--log-level LVL]"
)

_GLOB_CHARS = set("*?[")


@dataclass
class RunOptions:
    config_path: str
    data_path: str
    standard: str  # "meds" | "direct"
    output_path: str
    shards: str | None = None  # glob or <folder>/<num> expansion, relative to data_path
    jobs: int = 1
    include_window_stats: bool = False
    log_level: str = "INFO"


def expand_shards(expr: str, root: str | Path | None = None) -> list[Path]:
    """Expand a shard expression to a deterministic list of paths.

    ``<folder>/<num>`` expands to ``<folder>/0 .. <folder>/<num-1>``; any
    other expression is a glob, expanded lexicographically. Relative paths
    resolve against ``root``. A glob matching nothing is a data error.
    """
    head, sep, tail = expr.rpartition("/")
    if sep and tail.isdigit() and not _GLOB_CHARS.intersection(expr):
        n = int(tail)
        if n <= 0:
            raise DataError(f"shard count in {expr!r} must be positive")
        base = Path(head)
        if root is not None and not base.is_absolute():
            base = Path(root) / base
        return [base / str(i) for i in range(n)]
    pattern = expr
    if root is not None and not Path(expr).is_absolute():
        pattern = str(Path(root) / expr)
    matches = sorted(_glob.glob(pattern))
    if not matches:
        raise DataError(f"shard expression {expr!r} matched no files")
    return [Path(m) for m in matches]


def _ensure_dir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"output location {path} is not usable as a directory: {e}") from e


def _resolve_shard_file(path: Path) -> Path:
    """Accept extensionless shard names by probing .parquet/.csv variants."""
    if path.is_file():
        return path
    for ext in (".parquet", ".csv"):
        probe = Path(f"{path}{ext}")
        if probe.is_file():
            return probe
    raise DataError(f"shard file not found: {path}")


def _plan_shards(options: RunOptions) -> list[tuple[Path, Path, str]]:
    """(input, output, name) per extraction unit; creates output dirs."""
    data_path = Path(options.data_path)
    if options.shards is None:
        if not data_path.exists():
            raise DataError(f"no such data file: {data_path}")
        if data_path.is_dir():
            raise DataError(f"{data_path} is a directory; pass --shards to read a folder of shards")
        out = Path(options.output_path)
        _ensure_dir(out.parent)
        return [(data_path, out, "total")]
    if not data_path.is_dir():
        raise DataError(f"--data must be the shard root directory when --shards is given: {data_path}")
    inputs = [_resolve_shard_file(p) for p in expand_shards(options.shards, root=data_path)]
    out_dir = Path(options.output_path)
    _ensure_dir(out_dir)
    plan = []
    seen: set[str] = set()
    for p in inputs:
        name = p.stem
        if name in seen:
            name = f"{len(seen)}_{name}"
        seen.add(name)
        plan.append((p, out_dir / f"{name}.parquet", name))
    return plan


def write_table(df: pl.DataFrame, path: Path) -> None:
    if path.suffix == ".csv":
        df.write_csv(path)
    else:
        df.write_parquet(path, compression="zstd")


def _extract_one(
    config: TaskConfig, input_path: Path, output_path: Path, standard: str, window_stats: bool
) -> int:
    if standard == "direct":
        source = load_direct_predicates(input_path, config)
    else:
        source = load_cohort_source(input_path, config)
    rows = extract_cohort(source, config)
    write_table(cohort_frame(rows, config, window_stats), output_path)
    return len(rows)


def _extract_shard(args: tuple) -> int:
    return _extract_one(*args)


def config_hash(config: TaskConfig) -> str:
    """SHA-256 of the canonical config serialization."""
    return hashlib.sha256(serialize_task_config(config).encode()).hexdigest()


def _manifest_path(options: RunOptions) -> Path:
    if options.shards is None:
        return Path(options.output_path).with_suffix(".manifest.json")
    return Path(options.output_path) / "manifest.json"


def _write_manifest(
    options: RunOptions,
    config: TaskConfig,
    plan: list[tuple[Path, Path, str]],
    row_counts: dict[str, int],
    started: float,
) -> Path:
    manifest = {
        "tool": "cohort-extract",
        "engine_version": __version__,
        "config_path": options.config_path,
        "config_sha256": config_hash(config),
        "standard": options.standard,
        "data_path": options.data_path,
        "shards": options.shards,
        "output_path": options.output_path,
        "include_window_stats": options.include_window_stats,
        "jobs": options.jobs,
        "log_level": options.log_level,
        "inputs": [str(p) for p, _, _ in plan],
        "outputs": [str(o) for _, o, _ in plan],
        "row_counts": row_counts,
        "timing": {"started_unix": started, "wall_seconds": time.time() - started},
    }
    path = _manifest_path(options)
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def _setup_logging(options: RunOptions) -> None:
    level_name = os.environ.get("COHORT_FORGE_LOG", options.log_level)
    level = getattr(logging, str(level_name).upper(), logging.INFO)
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True
    )


def run(options: RunOptions) -> int:
    """Execute one extraction run; returns the process exit code."""
    _setup_logging(options)
    started = time.time()
    try:
        try:
            config = load_task_config(options.config_path)
        except ConfigError as e:
            print(f"config error: {e}", file=sys.stderr)
            return EXIT_CONFIG_ERROR
        try:
            plan = _plan_shards(options)
            row_counts: dict[str, int] = {}
            if options.jobs > 1 and len(plan) > 1:
                ctx = multiprocessing.get_context("spawn")
                with ProcessPoolExecutor(max_workers=options.jobs, mp_context=ctx) as pool:
                    args = [
                        (config, inp, out, options.standard, options.include_window_stats)
                        for inp, out, _ in plan
                    ]
                    for (_, _, name), n in zip(plan, pool.map(_extract_shard, args)):
                        row_counts[name] = n
            else:
                for inp, out, name in plan:
                    row_counts[name] = _extract_one(
                        config, inp, out, options.standard, options.include_window_stats
                    )
        except DataError as e:
            print(f"data error: {e}", file=sys.stderr)
            return EXIT_DATA_ERROR
        _write_manifest(options, config, plan, row_counts, started)
        total = sum(row_counts.values())
        logger.info("extracted %d rows across %d input file(s)", total, len(plan))
        return EXIT_OK
    except Exception as e:  # anything unplanned is an internal error
        logger.exception("internal error")
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL_ERROR


def run_from_manifest(path: str | Path) -> int:
    """Re-execute a previous run from its manifest; reproduces the outputs."""
    m = json.loads(Path(path).read_text())
    options = RunOptions(
        config_path=m["config_path"],
        data_path=m["data_path"],
        standard=m["standard"],
        output_path=m["output_path"],
        shards=m["shards"],
        jobs=m["jobs"],
        include_window_stats=m["include_window_stats"],
        log_level=m["log_level"],
    )
    return run(options)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cohort-extract",
        usage=USAGE,
        description="Extract a labeled cohort table from event-stream data per a task config.",
    )
    parser.add_argument("--config", required=True, metavar="FILE", help="task configuration file")
    parser.add_argument(
        "--data", required=True, metavar="PATH",
        help="data file, or the shard root directory when --shards is given",
    )
    parser.add_argument(
        "--standard", required=True, choices=("meds", "direct"),
        help="input format: raw events (meds) or pre-extracted predicate counts (direct)",
    )
    parser.add_argument(
        "--output", required=True, metavar="PATH",
        help="output file (single mode) or directory (shard mode)",
    )
    parser.add_argument(
        "--shards", metavar="EXPR", default=None,
        help="glob or <folder>/<num> expansion selecting shard files under --data",
    )
    parser.add_argument("--jobs", type=int, default=1, metavar="N", help="parallel shard workers")
    parser.add_argument(
        "--include-window-stats", action="store_true",
        help="emit per-window boundaries, constrained predicate counts, and truncation flags",
    )
    parser.add_argument(
        "--log-level", default="INFO", metavar="LVL",
        help="logging level (overridden by COHORT_FORGE_LOG)",
    )
    return parser


def main(argv: list[str] | None = None) -> None:
    args = _build_parser().parse_args(argv)
    options = RunOptions(
        config_path=args.config,
        data_path=args.data,
        standard=args.standard,
        output_path=args.output,
        shards=args.shards,
        jobs=args.jobs,
        include_window_stats=args.include_window_stats,
        log_level=args.log_level,
    )
    sys.exit(run(options))


if __name__ == "__main__":
    main()
