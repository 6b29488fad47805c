"""Rooted boundary tree over a task's windows.

Nodes are distinct boundary identities (``trigger`` plus one per window
boundary that is not a pure alias); each edge records how a child boundary
is resolved from its parent: by a signed temporal offset, by searching for
the next/previous occurrence of a predicate, or by clamping to the start or
end of the subject's observed record (sentinel for unbounded boundaries).

Pure references create no node of their own: they alias an existing one.
Every window also gets a closing node, the later of its two boundary nodes
in depth-first order, where the window's ordering and count constraints
become checkable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .config import (
    BoundaryExpr,
    BoundaryKind,
    BoundDirection,
    ConfigError,
    TaskConfig,
    WindowDef,
)

ROOT = "trigger"


class SpanKind(Enum):
    TEMPORAL = "temporal"
    EVENT_BOUND = "event_bound"
    RECORD_SENTINEL = "record_sentinel"


@dataclass(frozen=True)
class TreeEdge:
    parent: str
    child: str
    kind: SpanKind
    offset_seconds: int = 0  # TEMPORAL
    predicate: str | None = None  # EVENT_BOUND
    direction: BoundDirection | None = None  # EVENT_BOUND
    toward_record_end: bool = False  # RECORD_SENTINEL: clamp to last (else first) event


@dataclass
class TreeNode:
    id: str
    closing_windows: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class WindowBinding:
    """A window's definition joined with its resolved boundary node ids."""

    window: WindowDef
    start_node: str
    end_node: str
    close_node: str


@dataclass
class WindowTree:
    root: str
    nodes: dict[str, TreeNode]
    edges: tuple[TreeEdge, ...]  # depth-first traversal order, parent before child
    bindings: dict[str, WindowBinding]  # window name -> binding, declaration order
    aliases: dict[str, str]  # boundary key -> canonical node id
    node_order: dict[str, int]  # node id -> depth-first position, root = 0
    index_node: str
    label_window: str | None


def _chase_alias(key: str, alias: dict[str, str]) -> str:
    seen = [key]
    while key in alias:
        key = alias[key]
        if key in seen:
            cycle = " -> ".join(seen + [key])
            raise ConfigError(f"cyclic window references: {cycle}")
        seen.append(key)
    return key


def _edge_for(expr: BoundaryExpr, parent: str, child: str) -> TreeEdge:
    if expr.kind is BoundaryKind.TEMPORAL_OFFSET:
        return TreeEdge(parent, child, SpanKind.TEMPORAL, offset_seconds=expr.offset_seconds)
    return TreeEdge(
        parent, child, SpanKind.EVENT_BOUND, predicate=expr.predicate, direction=expr.direction
    )


def build_tree(config: TaskConfig) -> WindowTree:
    """Build and validate the boundary tree of a parsed config.

    Raises ConfigError when boundary references are cyclic or otherwise
    cannot all be resolved from the trigger.
    """
    alias: dict[str, str] = {}
    pending: dict[str, tuple[str, BoundaryExpr | None]] = {}  # node key -> (parent key, expr)
    for wname, w in config.windows.items():
        for side, expr in (("start", w.start), ("end", w.end)):
            key = f"{wname}.{side}"
            if expr.kind is BoundaryKind.REFERENCE:
                alias[key] = expr.reference.key
            elif expr.kind is BoundaryKind.UNBOUNDED:
                sibling = f"{wname}.{'end' if side == 'start' else 'start'}"
                pending[key] = (sibling, None)
            else:
                pending[key] = (expr.reference.key, expr)

    nodes: dict[str, TreeNode] = {ROOT: TreeNode(ROOT)}
    children: dict[str, list[TreeEdge]] = {}
    for key in pending:
        nodes[key] = TreeNode(key)
    for key, (parent_key, expr) in pending.items():
        parent = _chase_alias(parent_key, alias)
        if parent not in nodes:  # pragma: no cover - refs are validated at parse
            raise ConfigError(f"boundary {key!r} references unresolvable {parent_key!r}")
        if expr is None:
            wname, _, side = key.partition(".")
            edge = TreeEdge(
                parent, key, SpanKind.RECORD_SENTINEL, toward_record_end=(side == "end")
            )
        else:
            edge = _edge_for(expr, parent, key)
        children.setdefault(parent, []).append(edge)

    order: dict[str, int] = {ROOT: 0}
    traversal: list[TreeEdge] = []

    def _walk(node: str) -> None:
        for edge in children.get(node, ()):
            traversal.append(edge)
            order[edge.child] = len(order)
            _walk(edge.child)

    _walk(ROOT)
    if len(order) != len(nodes):
        stranded = sorted(set(nodes) - set(order))
        raise ConfigError(f"cyclic window references involving: {', '.join(stranded)}")

    bindings: dict[str, WindowBinding] = {}
    label_window = None
    for wname, w in config.windows.items():
        start_node = _chase_alias(f"{wname}.start", alias)
        end_node = _chase_alias(f"{wname}.end", alias)
        close_node = start_node if order[start_node] >= order[end_node] else end_node
        bindings[wname] = WindowBinding(w, start_node, end_node, close_node)
        nodes[close_node].closing_windows.append(wname)
        if w.label_predicate is not None:
            label_window = wname

    if (idx := config.index_window) is not None:
        index_node = _chase_alias(f"{idx[0]}.{idx[1]}", alias)
    else:
        index_node = ROOT

    return WindowTree(
        root=ROOT,
        nodes=nodes,
        edges=tuple(traversal),
        bindings=bindings,
        aliases={k: _chase_alias(k, alias) for k in alias},
        node_order=order,
        index_node=index_node,
        label_window=label_window,
    )


def traversal_order(tree: WindowTree) -> tuple[TreeEdge, ...]:
    """Edges in resolution order: depth-first, children by declaration order."""
    return tree.edges
