"""Event-stream ingestion and per-subject timeline indexes.

Input rows (columnar parquet, CSV fallback) are evaluated against the
config's predicates, grouped per subject, merged at identical timestamps
(one timeline row per distinct timestamp, counts summed), and indexed with
cumulative per-predicate counts so interval aggregation and event-bound
searches reduce to binary searches.

Timestamps are normalized to integer microseconds since the Unix epoch,
UTC. Rows with a null timestamp (static data) are dropped from timelines
and counted in a warning.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np
import polars as pl

from .config import (
    ANY_EVENT,
    Combinator,
    DerivedPredicate,
    PlainPredicate,
    TaskConfig,
    predicate_columns,
)

logger = logging.getLogger(__name__)

MEDS_COLUMNS = ("subject_id", "time", "code")


class DataError(ValueError):
    """Missing, malformed, or inconsistent input data."""


@dataclass(frozen=True)
class Provenance:
    path: str
    format: str  # "meds" | "direct" | "memory"


@dataclass(frozen=True)
class EventRecord:
    subject_id: int
    time: int  # microseconds since the Unix epoch, UTC
    code: str
    numeric_value: float | None = None


@dataclass
class SubjectTimeline:
    """Sorted unique timestamps with per-timestamp and cumulative counts.

    ``counts[i, p]`` is the number of events at ``timestamps[i]`` satisfying
    predicate ``p``; ``cumulative`` holds the prefix sums along axis 0. The
    ``_ANY_EVENT`` column counts every raw event at that timestamp.
    """

    subject_id: int
    timestamps: np.ndarray  # int64 microseconds, strictly increasing
    counts: np.ndarray  # int64 [n_timestamps, n_predicates]
    cumulative: np.ndarray  # int64 prefix sums of counts
    predicate_names: list[str]  # column order; shared across one source

    def column(self, predicate: str) -> int:
        try:
            return self.predicate_names.index(predicate)
        except ValueError:
            raise KeyError(f"predicate {predicate!r} not in timeline columns") from None

    @property
    def first_timestamp(self) -> int:
        return int(self.timestamps[0])

    @property
    def last_timestamp(self) -> int:
        return int(self.timestamps[-1])


@dataclass
class CohortSource:
    timelines: dict[int, SubjectTimeline]  # keyed and ordered by subject_id
    predicate_names: list[str]
    provenance: Provenance


def _read_raw_frame(path: str | Path) -> pl.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such data file: {path}")
    if path.is_dir():
        raise DataError(f"{path} is a directory; pass a shard expression to read a folder")
    with open(path, "rb") as f:
        magic = f.read(4)
    try:
        if magic == b"PAR1":
            return pl.read_parquet(path)
        return pl.read_csv(path, try_parse_dates=True)
    except Exception as e:
        raise DataError(f"cannot read {path}: {e}") from e


def _normalize_time(df: pl.DataFrame, path: str | Path) -> pl.DataFrame:
    """Coerce the ``time`` column to Datetime[us] (naive UTC)."""
    dtype = df.schema["time"]
    col = pl.col("time")
    if isinstance(dtype, pl.Datetime):
        if dtype.time_zone is not None:
            col = col.dt.convert_time_zone("UTC").dt.replace_time_zone(None)
        expr = col.cast(pl.Datetime("us"))
    elif dtype == pl.Date:
        expr = col.cast(pl.Datetime("us"))
    elif dtype == pl.Utf8:
        expr = col.str.to_datetime(time_unit="us")
    else:
        raise DataError(f"unparseable timestamp column 'time' in {path}: dtype {dtype}")
    try:
        return df.with_columns(expr.alias("time"))
    except Exception as e:
        raise DataError(f"unparseable timestamp in column 'time' of {path}: {e}") from e


def _load_table(path: str | Path, required: tuple[str, ...]) -> tuple[pl.DataFrame, int]:
    """Read a columnar file, normalize time to int µs, drop null-time rows.

    Returns the frame (with ``time_us`` replacing ``time``) and the number
    of null-time rows skipped.
    """
    df = _read_raw_frame(path)
    for column in required:
        if column not in df.columns:
            raise DataError(f"missing required column {column!r} in {path}")
    df = _normalize_time(df, path)
    n_null = df["time"].null_count()
    if n_null:
        df = df.filter(pl.col("time").is_not_null())
    try:
        df = df.with_columns(
            pl.col("subject_id").cast(pl.Int64),
            pl.col("time").cast(pl.Int64).alias("time_us"),
        ).drop("time")
    except Exception as e:
        raise DataError(f"malformed subject_id column in {path}: {e}") from e
    return df, n_null


def _load_events_frame(path: str | Path) -> tuple[pl.DataFrame, int]:
    df, n_null = _load_table(path, MEDS_COLUMNS)
    if "numeric_value" not in df.columns:
        df = df.with_columns(pl.lit(None, dtype=pl.Float64).alias("numeric_value"))
    df = df.with_columns(
        pl.col("code").cast(pl.Utf8),
        pl.col("numeric_value").cast(pl.Float64),
    )
    return df.select("subject_id", "time_us", "code", "numeric_value"), n_null


def load_events(path: str | Path) -> Iterator[EventRecord]:
    """Stream events from a MEDS-like file in file order.

    Null-time rows are skipped; the skip count is logged as a warning.
    """
    df, skipped = _load_events_frame(path)
    if skipped:
        logger.warning("skipped %d null-time (static) rows in %s", skipped, path)

    def _gen() -> Iterator[EventRecord]:
        for sid, t, code, value in df.iter_rows():
            yield EventRecord(sid, t, code, value)

    return _gen()


def evaluate_plain_predicate(record: EventRecord, pred: PlainPredicate) -> int:
    """1 iff the event's code matches and its value lies within the bounds.

    A trailing ``*`` in the matcher makes it a prefix pattern. An event with
    a null numeric value fails any value-bounded predicate.
    """
    matcher = pred.code_matcher
    if record.code is None:
        return 0
    if matcher.endswith("*"):
        if not record.code.startswith(matcher[:-1]):
            return 0
    elif record.code != matcher:
        return 0
    if pred.value_min is not None or pred.value_max is not None:
        value = record.numeric_value
        if value is None:
            return 0
        if pred.value_min is not None and value < pred.value_min:
            return 0
        if pred.value_max is not None and value > pred.value_max:
            return 0
    return 1


def evaluate_derived_predicate(values: Mapping[str, int], pred: DerivedPredicate) -> int:
    """Combine already-evaluated operand indicators for one event."""
    operands = [values[name] for name in pred.operands]
    return max(operands) if pred.combinator is Combinator.ANY_OF else min(operands)


def _timelines_from_arrays(
    sids: np.ndarray, ts: np.ndarray, counts: np.ndarray, names: list[str]
) -> dict[int, SubjectTimeline]:
    """Split globally sorted (subject, time) count rows into per-subject indexes."""
    timelines: dict[int, SubjectTimeline] = {}
    if len(sids) == 0:
        return timelines
    boundaries = np.flatnonzero(np.diff(sids)) + 1
    starts = np.concatenate(([0], boundaries))
    stops = np.concatenate((boundaries, [len(sids)]))
    for i0, i1 in zip(starts, stops):
        sub_counts = counts[i0:i1]
        timelines[int(sids[i0])] = SubjectTimeline(
            subject_id=int(sids[i0]),
            timestamps=ts[i0:i1],
            counts=sub_counts,
            cumulative=np.cumsum(sub_counts, axis=0),
            predicate_names=names,
        )
    return timelines


def _source_from_counts_frame(
    df: pl.DataFrame, names: list[str], provenance: Provenance
) -> CohortSource:
    """Aggregate per-row counts at identical (subject, timestamp) and index."""
    counted = (
        df.select("subject_id", "time_us", *names)
        .group_by("subject_id", "time_us")
        .agg(pl.col(names).sum())
        .sort("subject_id", "time_us")
    )
    timelines = _timelines_from_arrays(
        counted["subject_id"].to_numpy(),
        counted["time_us"].to_numpy(),
        counted.select(names).to_numpy().astype(np.int64, copy=False),
        names,
    )
    return CohortSource(timelines, names, provenance)


def source_from_events_frame(
    df: pl.DataFrame, config: TaskConfig, provenance: Provenance
) -> CohortSource:
    """Vectorized predicate evaluation over a canonical events frame."""
    names = predicate_columns(config)
    indicator_exprs = []
    derived = []
    for name in names[:-1]:
        pred = config.predicates[name]
        if isinstance(pred, PlainPredicate):
            matcher = pred.code_matcher
            if matcher.endswith("*"):
                expr = pl.col("code").str.starts_with(matcher[:-1])
            else:
                expr = pl.col("code") == matcher
            if pred.value_min is not None:
                expr = expr & (pl.col("numeric_value") >= pred.value_min)
            if pred.value_max is not None:
                expr = expr & (pl.col("numeric_value") <= pred.value_max)
            indicator_exprs.append(expr.fill_null(False).cast(pl.Int64).alias(name))
        else:
            derived.append(pred)
    df = df.with_columns(*indicator_exprs, pl.lit(1, dtype=pl.Int64).alias(ANY_EVENT))
    for pred in derived:  # dependency order; deriveds may reference deriveds
        operands = [pl.col(name) for name in pred.operands]
        combined = (
            pl.max_horizontal(operands)
            if pred.combinator is Combinator.ANY_OF
            else pl.min_horizontal(operands)
        )
        df = df.with_columns(combined.alias(pred.name))
    return _source_from_counts_frame(df, names, provenance)


def load_cohort_source(path: str | Path, config: TaskConfig) -> CohortSource:
    """Load a MEDS-like file and build the per-subject query index."""
    df, skipped = _load_events_frame(path)
    if skipped:
        logger.warning("skipped %d null-time (static) rows in %s", skipped, path)
    return source_from_events_frame(df, config, Provenance(str(path), "meds"))


def load_direct_predicates(path: str | Path, config: TaskConfig) -> CohortSource:
    """Load a file of pre-extracted per-row predicate counts.

    The file must carry one nonnegative integer column per plain predicate;
    derived predicates and ``_ANY_EVENT`` are taken from matching columns
    when present and computed otherwise (row-wise any_of = max,
    all_of = min; ``_ANY_EVENT`` = 1 per input row).
    """
    df, skipped = _load_table(path, ("subject_id", "time"))
    if skipped:
        logger.warning("skipped %d null-time rows in %s", skipped, path)
    names = predicate_columns(config)
    missing = [
        name
        for name in names[:-1]
        if isinstance(config.predicates[name], PlainPredicate) and name not in df.columns
    ]
    if missing:
        raise DataError(f"missing predicate column(s) {missing} in {path}")
    provided = [name for name in names if name in df.columns]
    try:
        df = df.with_columns(pl.col(provided).cast(pl.Int64))
    except Exception as e:
        raise DataError(f"non-integer predicate column in {path}: {e}") from e
    negatives = df.select(pl.col(provided).min()).row(0) if provided else ()
    for name, lo in zip(provided, negatives):
        if lo is not None and lo < 0:
            raise DataError(f"negative counts in predicate column {name!r} of {path}")
    if ANY_EVENT not in df.columns:
        df = df.with_columns(pl.lit(1, dtype=pl.Int64).alias(ANY_EVENT))
    for name in names[:-1]:
        pred = config.predicates[name]
        if isinstance(pred, DerivedPredicate) and name not in df.columns:
            operands = [pl.col(op) for op in pred.operands]
            combined = (
                pl.max_horizontal(operands)
                if pred.combinator is Combinator.ANY_OF
                else pl.min_horizontal(operands)
            )
            df = df.with_columns(combined.alias(name))
    return _source_from_counts_frame(df, names, Provenance(str(path), "direct"))


def partition_source(source: CohortSource, n_partitions: int) -> list[CohortSource]:
    """Split a source by subject into disjoint sources for parallel workers.

    Timelines are shared, not copied; extracting each partition and
    concatenating in order equals extracting the whole source.
    """
    if n_partitions < 1:
        raise ValueError("n_partitions must be positive")
    sids = list(source.timelines)
    chunk = -(-len(sids) // n_partitions) if sids else 1
    parts = []
    for i in range(0, len(sids), chunk):
        subset = {sid: source.timelines[sid] for sid in sids[i : i + chunk]}
        parts.append(CohortSource(subset, source.predicate_names, source.provenance))
    return parts


def build_timeline(records: Iterable[EventRecord], config: TaskConfig) -> CohortSource:
    """Build a CohortSource from a (possibly unsorted) record stream.

    Per-record reference path: predicates are evaluated per event, derived
    predicates from the event's own indicators, and equal-timestamp events
    merged by summing. Large files should go through load_cohort_source,
    which computes the same result columnwise.
    """
    names = predicate_columns(config)
    per_subject: dict[int, dict[int, list[int]]] = {}
    for record in records:
        values: dict[str, int] = {}
        for name in names[:-1]:
            pred = config.predicates[name]
            if isinstance(pred, PlainPredicate):
                values[name] = evaluate_plain_predicate(record, pred)
            else:
                values[name] = evaluate_derived_predicate(values, pred)
        values[ANY_EVENT] = 1
        rows = per_subject.setdefault(record.subject_id, {})
        acc = rows.get(record.time)
        if acc is None:
            rows[record.time] = [values[name] for name in names]
        else:
            for i, name in enumerate(names):
                acc[i] += values[name]
    timelines: dict[int, SubjectTimeline] = {}
    for sid in sorted(per_subject):
        rows = per_subject[sid]
        ts_sorted = sorted(rows)
        counts = np.array([rows[t] for t in ts_sorted], dtype=np.int64).reshape(
            len(ts_sorted), len(names)
        )
        timelines[sid] = SubjectTimeline(
            subject_id=sid,
            timestamps=np.array(ts_sorted, dtype=np.int64),
            counts=counts,
            cumulative=np.cumsum(counts, axis=0),
            predicate_names=names,
        )
    return CohortSource(timelines, names, Provenance("<stream>", "memory"))
