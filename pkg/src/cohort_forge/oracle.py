"""Deliberately naive reference extractor for differential testing.

Same contract as engine.extract_cohort, but: boundaries are resolved per
anchor by fixpoint iteration over the window definitions (no tree build),
every count and event-bound search is a linear scan over the timeline rows
(no cumulative index, no binary search), and filtering happens only after a
realization is fully resolved. Slow on purpose; shares nothing with the
engine's resolution path beyond the input and output types.
"""

from __future__ import annotations

from .config import BoundaryKind, BoundDirection, TaskConfig, predicate_columns
from .engine import CohortRow, WindowSummary
from .ingest import CohortSource, SubjectTimeline


def _scan_count(ts, grid, col, start, end, start_inclusive, end_inclusive) -> int:
    total = 0
    for t, row in zip(ts, grid):
        after_start = t > start or (start_inclusive and t == start)
        before_end = t < end or (end_inclusive and t == end)
        if after_start and before_end:
            total += row[col]
    return total


def _scan_bound(ts, grid, col, anchor, direction) -> int | None:
    if direction is BoundDirection.NEXT:
        for t, row in zip(ts, grid):
            if t > anchor and row[col] > 0:
                return t
        return None
    hit = None
    for t, row in zip(ts, grid):
        if t >= anchor:
            break
        if row[col] > 0:
            hit = t
    return hit


def _resolve_boundaries(config: TaskConfig, ts, grid, names, anchor) -> dict[str, int] | None:
    """Fixpoint resolution of every window boundary for one anchor.

    Returns None when an event-bound boundary has no matching occurrence
    (the realization cannot be fully resolved).
    """
    resolved = {"trigger": anchor}
    pending = [
        (f"{w}.{side}", expr)
        for w, wdef in config.windows.items()
        for side, expr in (("start", wdef.start), ("end", wdef.end))
    ]
    while pending:
        progressed = False
        still = []
        for key, expr in pending:
            if expr.kind is BoundaryKind.UNBOUNDED:
                resolved[key] = ts[0] if key.endswith(".start") else ts[-1]
                progressed = True
                continue
            ref = expr.reference.key
            if ref not in resolved:
                still.append((key, expr))
                continue
            base = resolved[ref]
            if expr.kind is BoundaryKind.REFERENCE:
                resolved[key] = base
            elif expr.kind is BoundaryKind.TEMPORAL_OFFSET:
                resolved[key] = base + expr.offset_seconds * 1_000_000
            else:
                hit = _scan_bound(ts, grid, names.index(expr.predicate), base, expr.direction)
                if hit is None:
                    return None
                resolved[key] = hit
            progressed = True
        pending = still
        if pending and not progressed:  # pragma: no cover - configs are validated
            raise RuntimeError(f"unresolvable boundaries: {[k for k, _ in pending]}")
    return resolved


def _subject_rows(config: TaskConfig, timeline: SubjectTimeline) -> list[CohortRow]:
    ts = [int(t) for t in timeline.timestamps]
    grid = timeline.counts.tolist()
    names = timeline.predicate_names
    trigger_col = names.index(config.trigger)
    rows = []
    for t, row in zip(ts, grid):
        if row[trigger_col] <= 0:
            continue
        resolved = _resolve_boundaries(config, ts, grid, names, t)
        if resolved is None:
            continue
        ok = True
        for wname, w in config.windows.items():
            start, end = resolved[f"{wname}.start"], resolved[f"{wname}.end"]
            if start > end:
                ok = False
                continue
            for c in w.constraints:
                n = _scan_count(
                    ts, grid, names.index(c.predicate), start, end,
                    w.start_inclusive, w.end_inclusive,
                )
                if c.min_count is not None and n < c.min_count:
                    ok = False
                if c.max_count is not None and n > c.max_count:
                    ok = False
        if not ok:
            continue
        label = None
        if (label_window := config.label_window) is not None:
            w = config.windows[label_window]
            n = _scan_count(
                ts, grid, names.index(w.label_predicate),
                resolved[f"{label_window}.start"], resolved[f"{label_window}.end"],
                w.start_inclusive, w.end_inclusive,
            )
            label = 1 if n >= 1 else 0
        summaries = []
        for wname, w in config.windows.items():
            start, end = resolved[f"{wname}.start"], resolved[f"{wname}.end"]
            counts = {
                c.predicate: _scan_count(
                    ts, grid, names.index(c.predicate), start, end,
                    w.start_inclusive, w.end_inclusive,
                )
                for c in w.constraints
            }
            summaries.append(
                WindowSummary(wname, start, end, counts, start < ts[0] or end > ts[-1])
            )
        if (idx := config.index_window) is not None:
            index_ts = resolved[f"{idx[0]}.{idx[1]}"]
        else:
            index_ts = t
        rows.append(CohortRow(timeline.subject_id, index_ts, label, tuple(summaries)))
    return rows


def naive_extract(source: CohortSource, config: TaskConfig) -> list[CohortRow]:
    """Ground-truth extraction by exhaustive scanning."""
    expected = predicate_columns(config)
    if source.predicate_names != expected:
        raise ValueError(
            f"source predicate columns {source.predicate_names} do not cover "
            f"config predicates {expected}"
        )
    rows: list[CohortRow] = []
    for sid in sorted(source.timelines):
        rows.extend(_subject_rows(config, source.timelines[sid]))
    rows.sort(key=lambda row: (row.subject_id, row.index_timestamp))
    return rows
