"""Recursive window-tree resolution over subject timelines.

For each subject, every trigger occurrence anchors one candidate
realization. Tree edges are then resolved in traversal order: temporal
edges by exact microsecond arithmetic, event-bound edges by binary search
over cumulative predicate counts, sentinels by clamping to the observed
record. A realization dies as soon as an event bound has no match, a window
resolves with start after end, or a count constraint fails; survivors
become labeled cohort rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import polars as pl

from .config import BoundDirection, ConstraintBound, TaskConfig, predicate_columns
from .ingest import CohortSource, SubjectTimeline
from .tree import ROOT, SpanKind, TreeEdge, WindowTree, build_tree

MICROS_PER_SECOND = 1_000_000


@dataclass
class Realization:
    """One candidate assignment of timestamps to tree nodes for one anchor."""

    subject_id: int
    assigned: dict[str, int]  # node id -> resolved timestamp (µs)
    alive: bool = True


@dataclass(frozen=True)
class WindowSummary:
    window: str
    start: int
    end: int
    counts: dict[str, int] = field(hash=False)  # constrained predicates only
    truncated: bool = False  # window extends past the observed record


@dataclass(frozen=True)
class CohortRow:
    subject_id: int
    index_timestamp: int
    label: int | None  # None when the config has no label window
    window_summaries: tuple[WindowSummary, ...] = field(hash=False)


def find_trigger_anchors(
    timeline: SubjectTimeline, trigger: str, per_event_anchors: bool = False
) -> list[int]:
    """Timestamps whose trigger count is >= 1, in increasing order.

    By default one anchor per timestamp; with ``per_event_anchors`` a
    timestamp with trigger count k yields k identical anchors.
    """
    col = timeline.column(trigger)
    hits = np.flatnonzero(timeline.counts[:, col] > 0)
    if not per_event_anchors:
        return [int(t) for t in timeline.timestamps[hits]]
    out = []
    for i in hits:
        out.extend([int(timeline.timestamps[i])] * int(timeline.counts[i, col]))
    return out


_INT64_MAX = 2**63 - 1


def resolve_temporal_endpoint(anchor: int, offset_seconds: int) -> int:
    """anchor + offset at exact microsecond precision; may leave the record."""
    result = anchor + offset_seconds * MICROS_PER_SECOND
    if not -_INT64_MAX <= result <= _INT64_MAX:
        raise OverflowError(f"timestamp overflow: {anchor} offset by {offset_seconds}s")
    return result


def resolve_event_bound_endpoint(
    timeline: SubjectTimeline, anchor: int, predicate: str, direction: BoundDirection
) -> int | None:
    """Nearest timestamp with a predicate hit strictly after/before the anchor.

    Binary searches the cumulative count column; returns None when no such
    occurrence exists.
    """
    cum = timeline.cumulative[:, timeline.column(predicate)]
    ts = timeline.timestamps
    n = len(ts)
    if direction is BoundDirection.NEXT:
        i = int(np.searchsorted(ts, anchor, side="right"))
        if i >= n:
            return None
        base = int(cum[i - 1]) if i > 0 else 0
        j = int(np.searchsorted(cum, base, side="right"))
        return int(ts[j]) if j < n else None
    i = int(np.searchsorted(ts, anchor, side="left"))
    if i <= 0:
        return None
    total = int(cum[i - 1])
    if total == 0:
        return None
    j = int(np.searchsorted(cum, total, side="left"))
    return int(ts[j])


def count_in_interval(
    timeline: SubjectTimeline,
    start: int,
    end: int,
    start_inclusive: bool,
    end_inclusive: bool,
    predicate: str,
) -> int:
    """Predicate count over an interval, as a cumulative-count difference."""
    if start > end:
        raise ValueError(
            f"subject {timeline.subject_id}: interval start {start} exceeds end {end}"
        )
    ts = timeline.timestamps
    col = timeline.column(predicate)
    hi = int(np.searchsorted(ts, end, side="right" if end_inclusive else "left")) - 1
    lo = int(np.searchsorted(ts, start, side="left" if start_inclusive else "right")) - 1
    c_hi = int(timeline.cumulative[hi, col]) if hi >= 0 else 0
    c_lo = int(timeline.cumulative[lo, col]) if lo >= 0 else 0
    return max(0, c_hi - c_lo)


def _counts_satisfy(counts: Mapping[str, int], constraints: Iterable[ConstraintBound]) -> bool:
    for c in constraints:
        n = counts[c.predicate]
        if c.min_count is not None and n < c.min_count:
            return False
        if c.max_count is not None and n > c.max_count:
            return False
    return True


def check_constraints(summary: WindowSummary, constraints: Iterable[ConstraintBound]) -> bool:
    """True iff every constrained count lies within its inclusive bounds."""
    return _counts_satisfy(summary.counts, constraints)


def _closes_ok(tree: WindowTree, timeline: SubjectTimeline, r: Realization, node: str) -> bool:
    """Check ordering and constraints of every window closing at this node."""
    for wname in tree.nodes[node].closing_windows:
        binding = tree.bindings[wname]
        w = binding.window
        start = r.assigned[binding.start_node]
        end = r.assigned[binding.end_node]
        if start > end:
            return False
        counts = {
            c.predicate: count_in_interval(
                timeline, start, end, w.start_inclusive, w.end_inclusive, c.predicate
            )
            for c in w.constraints
        }
        if not _counts_satisfy(counts, w.constraints):
            return False
    return True


def extract_subtree(
    tree: WindowTree,
    timeline: SubjectTimeline,
    realizations: list[Realization],
    edge_cursor: int = 0,
) -> list[Realization]:
    """Resolve the edge at ``edge_cursor`` for every live realization, filter,
    and recurse over the remaining edges; returns fully assigned survivors."""
    if edge_cursor >= len(tree.edges):
        return [r for r in realizations if r.alive]
    edge = tree.edges[edge_cursor]
    survivors = []
    for r in realizations:
        if not r.alive:
            continue
        child_ts = _resolve_edge(edge, timeline, r.assigned[edge.parent])
        if child_ts is None:
            r.alive = False
            continue
        r.assigned[edge.child] = child_ts
        if _closes_ok(tree, timeline, r, edge.child):
            survivors.append(r)
        else:
            r.alive = False
    return extract_subtree(tree, timeline, survivors, edge_cursor + 1)


def _resolve_edge(edge: TreeEdge, timeline: SubjectTimeline, parent_ts: int) -> int | None:
    if edge.kind is SpanKind.TEMPORAL:
        return resolve_temporal_endpoint(parent_ts, edge.offset_seconds)
    if edge.kind is SpanKind.EVENT_BOUND:
        return resolve_event_bound_endpoint(timeline, parent_ts, edge.predicate, edge.direction)
    return timeline.last_timestamp if edge.toward_record_end else timeline.first_timestamp


def _summarize(
    tree: WindowTree, timeline: SubjectTimeline, r: Realization, wname: str
) -> WindowSummary:
    binding = tree.bindings[wname]
    w = binding.window
    start = r.assigned[binding.start_node]
    end = r.assigned[binding.end_node]
    counts = {
        c.predicate: count_in_interval(
            timeline, start, end, w.start_inclusive, w.end_inclusive, c.predicate
        )
        for c in w.constraints
    }
    truncated = start < timeline.first_timestamp or end > timeline.last_timestamp
    return WindowSummary(wname, start, end, counts, truncated)


def _assemble_row(tree: WindowTree, timeline: SubjectTimeline, r: Realization) -> CohortRow:
    label = None
    if tree.label_window is not None:
        binding = tree.bindings[tree.label_window]
        w = binding.window
        hits = count_in_interval(
            timeline,
            r.assigned[binding.start_node],
            r.assigned[binding.end_node],
            w.start_inclusive,
            w.end_inclusive,
            w.label_predicate,
        )
        label = 1 if hits >= 1 else 0
    summaries = tuple(_summarize(tree, timeline, r, wname) for wname in tree.bindings)
    return CohortRow(r.subject_id, r.assigned[tree.index_node], label, summaries)


def extract_cohort(source: CohortSource, config: TaskConfig) -> list[CohortRow]:
    """Run the full resolution over every subject and anchor.

    Rows are ordered by (subject_id, index_timestamp), anchor order breaking
    ties. Raises ValueError when the source's predicate columns do not match
    the config.
    """
    expected = predicate_columns(config)
    if source.predicate_names != expected:
        raise ValueError(
            f"source predicate columns {source.predicate_names} do not cover "
            f"config predicates {expected}"
        )
    tree = build_tree(config)
    rows: list[CohortRow] = []
    for timeline in source.timelines.values():
        rows.extend(_extract_subject(tree, timeline, config))
    rows.sort(key=lambda row: (row.subject_id, row.index_timestamp))
    return rows


def _extract_subject(
    tree: WindowTree, timeline: SubjectTimeline, config: TaskConfig
) -> list[CohortRow]:
    anchors = find_trigger_anchors(timeline, config.trigger)
    if not anchors:
        return []
    realizations = []
    for anchor in anchors:
        r = Realization(timeline.subject_id, {ROOT: anchor})
        # windows whose boundaries all alias the trigger close immediately
        if _closes_ok(tree, timeline, r, ROOT):
            realizations.append(r)
        else:
            r.alive = False
    survivors = extract_subtree(tree, timeline, realizations, 0)
    return [_assemble_row(tree, timeline, r) for r in survivors]


def cohort_frame(
    rows: list[CohortRow], config: TaskConfig, include_window_stats: bool = False
) -> pl.DataFrame:
    """Rows as a table with the output schema (always emitted, even empty).

    Columns: subject_id (int64), index_timestamp (timestamp[µs]), label
    (int8, present iff the config has a label window); with window stats,
    per window: ``<w>.start`` / ``<w>.end`` timestamps, ``<w>.<pred>``
    counts per constrained predicate, and ``<w>.window_truncated``.
    """
    has_label = config.label_window is not None
    schema: dict[str, pl.DataType] = {"subject_id": pl.Int64, "index_timestamp": pl.Int64}
    if has_label:
        schema["label"] = pl.Int8
    if include_window_stats:
        for wname, w in config.windows.items():
            schema[f"{wname}.start"] = pl.Int64
            schema[f"{wname}.end"] = pl.Int64
            for c in w.constraints:
                schema[f"{wname}.{c.predicate}"] = pl.Int64
            schema[f"{wname}.window_truncated"] = pl.Boolean
    data: dict[str, list] = {name: [] for name in schema}
    for row in rows:
        data["subject_id"].append(row.subject_id)
        data["index_timestamp"].append(row.index_timestamp)
        if has_label:
            data["label"].append(row.label)
        if include_window_stats:
            for s in row.window_summaries:
                data[f"{s.window}.start"].append(s.start)
                data[f"{s.window}.end"].append(s.end)
                for c in config.windows[s.window].constraints:
                    data[f"{s.window}.{c.predicate}"].append(s.counts[c.predicate])
                data[f"{s.window}.window_truncated"].append(s.truncated)
    df = pl.DataFrame(data, schema=schema)
    time_cols = [
        name
        for name in schema
        if name == "index_timestamp" or name.endswith(".start") or name.endswith(".end")
    ]
    return df.with_columns(pl.col(name).cast(pl.Datetime("us")) for name in time_cols)
