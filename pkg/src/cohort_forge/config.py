"""Parsing and validation for the task-configuration language.

A task document is YAML with three top-level keys:

``predicates``
    Ordered table of event predicates. A plain predicate matches an event
    code (exact, or prefix when the code ends in ``*``), optionally bounded
    on the event's numeric value (inclusive ``value_min`` / ``value_max``).
    A derived predicate combines previously defined predicates with
    ``any_of(...)`` or ``all_of(...)``.
``trigger``
    Name of the predicate whose occurrences anchor candidate samples.
``windows``
    Ordered table of named windows. Boundaries are string expressions::

        boundary := "NULL" | ref | ref ("+"|"-") duration | ref ("->"|"<-") predicate
        ref      := "trigger" | "start" | "end" | <window> "." ("start"|"end")

    ``NULL`` means unbounded (clamped to the subject's observed record),
    bare ``start``/``end`` name the sibling boundary of the same window,
    ``->`` / ``<-`` bind to the next / previous occurrence of a predicate.
    ``has`` attaches inclusive ``"(min, max)"`` count constraints (``None``
    for an open bound), ``label`` marks the label window, and
    ``index_timestamp: start|end`` selects the boundary used as the row's
    prediction timestamp.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import yaml

ANY_EVENT = "_ANY_EVENT"
RESERVED_NAMES = frozenset({"trigger", "start", "end", ANY_EVENT})

_IDENTIFIER_RE = re.compile(r"[a-z_][a-z0-9_]*\Z")
_DURATION_UNITS = {"s": 1, "m": 60, "h": 3600, "d": 86400, "w": 604800}
_DURATION_TOKEN_RE = re.compile(r"([+-]?\d+)([a-zA-Z]+)\Z")
_EXPR_RE = re.compile(r"(any_of|all_of)\(\s*([a-z_][a-z0-9_]*(?:\s*,\s*[a-z_][a-z0-9_]*)+)\s*\)\Z")
_BOUND_RE = re.compile(r"\(\s*(None|\d+)\s*,\s*(None|\d+)\s*\)\Z")
_REF_RE = r"trigger|start|end|[a-z_][a-z0-9_]*\.(?:start|end)"
_BOUNDARY_RE = re.compile(rf"(?P<ref>{_REF_RE})(?:\s*(?P<op>->|<-|\+|-)\s*(?P<rhs>\S.*?))?\Z")

_WINDOW_KEYS = frozenset(
    {"start", "end", "start_inclusive", "end_inclusive", "has", "label", "index_timestamp"}
)


class ConfigError(ValueError):
    """Any defect in a task-configuration document.

    Syntax errors carry the 1-based ``line``/``column`` of the offending
    token; semantic errors carry a dotted document path in the message.
    """

    def __init__(self, message: str, *, line: int | None = None, column: int | None = None):
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column


class BoundaryKind(Enum):
    UNBOUNDED = "unbounded"
    REFERENCE = "reference"
    TEMPORAL_OFFSET = "temporal_offset"
    EVENT_BOUND = "event_bound"


class BoundDirection(Enum):
    NEXT = "next"
    PREVIOUS = "previous"


class Combinator(Enum):
    ANY_OF = "any_of"
    ALL_OF = "all_of"


@dataclass(frozen=True)
class Duration:
    """A nonnegative span of time; signs live on boundary operators."""

    seconds: int

    def __post_init__(self):
        if self.seconds < 0:
            raise ConfigError(f"duration must be nonnegative, got {self.seconds}s")


@dataclass(frozen=True)
class BoundaryRef:
    """Target of a boundary reference: the trigger, or a window boundary."""

    window: str | None = None  # None means the trigger node
    side: str | None = None  # "start" | "end"; None for the trigger

    @property
    def key(self) -> str:
        return "trigger" if self.window is None else f"{self.window}.{self.side}"


TRIGGER_REF = BoundaryRef()


@dataclass(frozen=True)
class BoundaryExpr:
    kind: BoundaryKind
    reference: BoundaryRef | None = None
    offset_seconds: int = 0  # signed; meaningful only for TEMPORAL_OFFSET
    predicate: str | None = None  # EVENT_BOUND target predicate
    direction: BoundDirection | None = None  # EVENT_BOUND search direction


@dataclass(frozen=True)
class PlainPredicate:
    name: str
    code_matcher: str  # exact code, or prefix when it ends with "*"
    value_min: float | None = None
    value_max: float | None = None


@dataclass(frozen=True)
class DerivedPredicate:
    name: str
    combinator: Combinator
    operands: tuple[str, ...]


Predicate = PlainPredicate | DerivedPredicate


@dataclass(frozen=True)
class ConstraintBound:
    """Inclusive [min, max] bound on a predicate count; None is open."""

    predicate: str
    min_count: int | None = None
    max_count: int | None = None


@dataclass(frozen=True)
class WindowDef:
    name: str
    start: BoundaryExpr
    end: BoundaryExpr
    start_inclusive: bool = True
    end_inclusive: bool = True
    constraints: tuple[ConstraintBound, ...] = ()
    label_predicate: str | None = None
    index_selector: str | None = None  # "start" | "end" when this window indexes rows


@dataclass(frozen=True, eq=True)
class TaskConfig:
    predicates: dict[str, Predicate] = field(hash=False)
    trigger: str = ""
    windows: dict[str, WindowDef] = field(default_factory=dict, hash=False)

    @property
    def label_window(self) -> str | None:
        for name, w in self.windows.items():
            if w.label_predicate is not None:
                return name
        return None

    @property
    def index_window(self) -> tuple[str, str] | None:
        """(window, side) carrying index_timestamp, if any."""
        for name, w in self.windows.items():
            if w.index_selector is not None:
                return name, w.index_selector
        return None

    def is_defined(self, predicate: str) -> bool:
        return predicate == ANY_EVENT or predicate in self.predicates


def parse_duration(text: str) -> Duration:
    """Parse space-separated ``<integer><unit>`` tokens into a Duration.

    Units: s, m, h, d, w.

    >>> parse_duration("24h").seconds
    86400
    >>> parse_duration("2d 6h").seconds
    194400
    """
    tokens = text.split()
    if not tokens:
        raise ConfigError("empty duration")
    total = 0
    for tok in tokens:
        m = _DURATION_TOKEN_RE.match(tok)
        if m is None:
            raise ConfigError(f"malformed duration token {tok!r}; expected <integer><unit>")
        value, unit = int(m.group(1)), m.group(2)
        if unit not in _DURATION_UNITS:
            raise ConfigError(f"unknown duration unit {unit!r} in {tok!r}; expected one of s, m, h, d, w")
        if value < 0:
            raise ConfigError(f"negative duration {tok!r}; the sign belongs on the boundary operator")
        total += value * _DURATION_UNITS[unit]
    return Duration(total)


def format_duration(seconds: int) -> str:
    """Render seconds as compact unit tokens, largest unit first."""
    if seconds == 0:
        return "0s"
    parts = []
    for unit in "wdhms":
        q, seconds = divmod(seconds, _DURATION_UNITS[unit])
        if q:
            parts.append(f"{q}{unit}")
    return " ".join(parts)


def _parse_ref(text: str, context: str) -> BoundaryRef:
    if text == "trigger":
        return TRIGGER_REF
    if text in ("start", "end"):
        return BoundaryRef(context, text)
    window, _, side = text.partition(".")
    return BoundaryRef(window, side)


def parse_boundary_expr(text: str, context: str) -> BoundaryExpr:
    """Parse one boundary expression in the scope of window ``context``.

    >>> e = parse_boundary_expr("trigger + 24h", "input")
    >>> (e.kind.value, e.offset_seconds)
    ('temporal_offset', 86400)
    >>> parse_boundary_expr("NULL", "input").kind.value
    'unbounded'
    >>> e = parse_boundary_expr("start -> death_or_discharge", "target")
    >>> (e.reference.key, e.direction.value, e.predicate)
    ('target.start', 'next', 'death_or_discharge')
    """
    text = text.strip()
    if not text:
        raise ConfigError(f"window {context!r}: empty boundary expression")
    if text == "NULL":
        return BoundaryExpr(BoundaryKind.UNBOUNDED)
    m = _BOUNDARY_RE.match(text)
    if m is None:
        raise ConfigError(f"window {context!r}: malformed boundary expression {text!r}")
    ref = _parse_ref(m.group("ref"), context)
    op, rhs = m.group("op"), m.group("rhs")
    if op is None:
        return BoundaryExpr(BoundaryKind.REFERENCE, ref)
    if op in ("+", "-"):
        dur = parse_duration(rhs)
        offset = dur.seconds if op == "+" else -dur.seconds
        return BoundaryExpr(BoundaryKind.TEMPORAL_OFFSET, ref, offset_seconds=offset)
    direction = BoundDirection.NEXT if op == "->" else BoundDirection.PREVIOUS
    if _IDENTIFIER_RE.match(rhs) is None and rhs != ANY_EVENT:
        raise ConfigError(f"window {context!r}: malformed predicate name {rhs!r} in event bound")
    return BoundaryExpr(BoundaryKind.EVENT_BOUND, ref, predicate=rhs, direction=direction)


def predicate_dependency_order(config: TaskConfig) -> list[str]:
    """Predicate names with plain predicates first, then derived ones.

    Declaration order is preserved within each group; because operands must
    be defined before use, the result is a valid topological order.
    """
    plain = [n for n, p in config.predicates.items() if isinstance(p, PlainPredicate)]
    derived = [n for n, p in config.predicates.items() if isinstance(p, DerivedPredicate)]
    return plain + derived


def predicate_columns(config: TaskConfig) -> list[str]:
    """Column order of timeline count matrices: dependency order plus _ANY_EVENT."""
    return predicate_dependency_order(config) + [ANY_EVENT]


class _StrictLoader(yaml.SafeLoader):
    """SafeLoader that rejects duplicate mapping keys with a position."""


def _construct_mapping(loader, node, deep=False):
    seen = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            mark = key_node.start_mark
            raise ConfigError(
                f"duplicate name {key!r}", line=mark.line + 1, column=mark.column + 1
            )
        seen[key] = loader.construct_object(value_node, deep=deep)
    return seen


_StrictLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def _load_yaml(text: str) -> dict:
    try:
        doc = yaml.load(text, Loader=_StrictLoader)
    except ConfigError:
        raise
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark
        if mark is not None:
            raise ConfigError(
                e.problem or "syntax error", line=mark.line + 1, column=mark.column + 1
            ) from e
        raise ConfigError(str(e)) from e
    except yaml.YAMLError as e:
        raise ConfigError(f"syntax error: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("task document must be a mapping with keys: predicates, trigger, windows")
    return doc


def _check_name(name, what: str) -> str:
    if isinstance(name, str) and name in RESERVED_NAMES:
        raise ConfigError(f"{what} name {name!r} is reserved")
    if not isinstance(name, str) or _IDENTIFIER_RE.match(name) is None:
        raise ConfigError(f"invalid {what} name {name!r}; expected [a-z_][a-z0-9_]*")
    return name


def _check_value_bound(raw, path: str) -> float | None:
    if raw is None:
        return None
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {raw!r}")
    return raw


def _parse_predicates(raw) -> dict[str, Predicate]:
    if not isinstance(raw, dict) or not raw:
        raise ConfigError("predicates: expected a nonempty mapping of name -> definition")
    table: dict[str, Predicate] = {}
    for name, body in raw.items():
        _check_name(name, "predicate")
        path = f"predicates.{name}"
        if not isinstance(body, dict):
            raise ConfigError(f"{path}: expected a mapping with 'code' or 'expr'")
        keys = set(body)
        if "code" in keys and "expr" in keys:
            raise ConfigError(f"{path}: 'code' and 'expr' are mutually exclusive")
        if "expr" in keys:
            if extra := keys - {"expr"}:
                raise ConfigError(f"{path}: unknown keys {sorted(map(repr, extra))}")
            m = _EXPR_RE.match(str(body["expr"]).strip())
            if m is None:
                raise ConfigError(
                    f"{path}: malformed expr {body['expr']!r}; "
                    "expected any_of(a, b, ...) or all_of(a, b, ...) with >= 2 operands"
                )
            operands = tuple(op.strip() for op in m.group(2).split(","))
            for op in operands:
                if op not in table:
                    raise ConfigError(
                        f"{path}: references undefined predicate {op!r} "
                        "(predicates must be defined before use)"
                    )
            table[name] = DerivedPredicate(name, Combinator(m.group(1)), operands)
        elif "code" in keys:
            if extra := keys - {"code", "value_min", "value_max"}:
                raise ConfigError(f"{path}: unknown keys {sorted(map(repr, extra))}")
            code = body["code"]
            if not isinstance(code, str) or not code:
                raise ConfigError(f"{path}: 'code' must be a nonempty string")
            vmin = _check_value_bound(body.get("value_min"), f"{path}.value_min")
            vmax = _check_value_bound(body.get("value_max"), f"{path}.value_max")
            if vmin is not None and vmax is not None and vmin > vmax:
                raise ConfigError(f"{path}: value_min {vmin} exceeds value_max {vmax}")
            table[name] = PlainPredicate(name, code, vmin, vmax)
        else:
            raise ConfigError(f"{path}: expected either 'code' or 'expr'")
    return table


def _parse_constraints(raw, window: str, predicates: dict[str, Predicate]) -> tuple[ConstraintBound, ...]:
    if raw is None:
        return ()
    path = f"windows.{window}.has"
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping of predicate -> \"(min, max)\"")
    out = []
    for pred, bound in raw.items():
        if pred != ANY_EVENT and pred not in predicates:
            raise ConfigError(f"{path}: unknown predicate {pred!r}")
        if not isinstance(bound, str) or (m := _BOUND_RE.match(bound.strip())) is None:
            raise ConfigError(f"{path}.{pred}: malformed bound {bound!r}; expected \"(min, max)\"")
        mn = None if m.group(1) == "None" else int(m.group(1))
        mx = None if m.group(2) == "None" else int(m.group(2))
        if mn is None and mx is None:
            raise ConfigError(f"{path}.{pred}: at least one of min/max must be given")
        if mn is not None and mx is not None and mn > mx:
            raise ConfigError(f"{path}.{pred}: min {mn} exceeds max {mx}")
        out.append(ConstraintBound(pred, mn, mx))
    return tuple(out)


def _boundary_field(body: dict, window: str, side: str) -> BoundaryExpr:
    if side not in body:
        raise ConfigError(f"windows.{window}: missing required key {side!r} (use \"NULL\" for unbounded)")
    raw = body[side]
    if raw is None:  # unquoted NULL parses as YAML null
        return BoundaryExpr(BoundaryKind.UNBOUNDED)
    if not isinstance(raw, str):
        raise ConfigError(f"windows.{window}.{side}: expected a boundary expression string, got {raw!r}")
    return parse_boundary_expr(raw, window)


def _parse_windows(raw, predicates: dict[str, Predicate]) -> dict[str, WindowDef]:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError("windows: expected a mapping of name -> window definition")
    windows: dict[str, WindowDef] = {}
    for name, body in raw.items():
        _check_name(name, "window")
        path = f"windows.{name}"
        if not isinstance(body, dict):
            raise ConfigError(f"{path}: expected a mapping")
        if extra := set(body) - _WINDOW_KEYS:
            raise ConfigError(f"{path}: unknown keys {sorted(map(repr, extra))}")
        start = _boundary_field(body, name, "start")
        end = _boundary_field(body, name, "end")
        if start.kind is BoundaryKind.UNBOUNDED and end.kind is BoundaryKind.UNBOUNDED:
            raise ConfigError(f"{path}: start and end cannot both be unbounded")
        for side, expr in (("start", start), ("end", end)):
            if expr.reference is not None and expr.reference == BoundaryRef(name, side):
                raise ConfigError(f"{path}.{side}: boundary references itself")
        externally_anchored = any(
            expr.reference is not None and expr.reference.window != name for expr in (start, end)
        )
        if not externally_anchored:
            raise ConfigError(
                f"{path}: at least one boundary must reference the trigger or another window"
            )
        flags = {}
        for key in ("start_inclusive", "end_inclusive"):
            val = body.get(key, True)
            if not isinstance(val, bool):
                raise ConfigError(f"{path}.{key}: expected a boolean, got {val!r}")
            flags[key] = val
        label = body.get("label")
        if label is not None and (
            not isinstance(label, str) or (label != ANY_EVENT and label not in predicates)
        ):
            raise ConfigError(f"{path}.label: unknown predicate {label!r}")
        index_sel = body.get("index_timestamp")
        if index_sel is not None and index_sel not in ("start", "end"):
            raise ConfigError(f"{path}.index_timestamp: expected 'start' or 'end', got {index_sel!r}")
        windows[name] = WindowDef(
            name=name,
            start=start,
            end=end,
            start_inclusive=flags["start_inclusive"],
            end_inclusive=flags["end_inclusive"],
            constraints=_parse_constraints(body.get("has"), name, predicates),
            label_predicate=label,
            index_selector=index_sel,
        )
    return windows


def _cross_validate(config: TaskConfig) -> None:
    """Reference checks that need the full window table (forward refs allowed)."""
    if not config.is_defined(config.trigger):
        raise ConfigError(f"trigger: unknown predicate {config.trigger!r}")
    label_windows = [n for n, w in config.windows.items() if w.label_predicate is not None]
    if len(label_windows) > 1:
        raise ConfigError(f"multiple label windows: {label_windows}")
    index_windows = [n for n, w in config.windows.items() if w.index_selector is not None]
    if len(index_windows) > 1:
        raise ConfigError(f"multiple index windows: {index_windows}")
    for name, w in config.windows.items():
        for side, expr in (("start", w.start), ("end", w.end)):
            ref = expr.reference
            if ref is not None and ref.window is not None and ref.window not in config.windows:
                raise ConfigError(f"windows.{name}.{side}: unknown window {ref.window!r}")
            if expr.kind is BoundaryKind.EVENT_BOUND and not config.is_defined(expr.predicate):
                raise ConfigError(f"windows.{name}.{side}: unknown predicate {expr.predicate!r}")


def parse_task_config(text: str) -> TaskConfig:
    """Parse and fully validate a task document.

    Raises ConfigError on any syntax or semantic defect; never returns a
    partially validated config. Window boundary references are additionally
    checked to form a tree rooted at the trigger.
    """
    doc = _load_yaml(text)
    if extra := set(doc) - {"predicates", "trigger", "windows"}:
        raise ConfigError(f"unknown top-level keys {sorted(map(repr, extra))}")
    if "predicates" not in doc:
        raise ConfigError("missing top-level key 'predicates'")
    if "trigger" not in doc:
        raise ConfigError("missing top-level key 'trigger'")
    predicates = _parse_predicates(doc["predicates"])
    trigger = doc["trigger"]
    if not isinstance(trigger, str):
        raise ConfigError(f"trigger: expected a predicate name, got {trigger!r}")
    windows = _parse_windows(doc.get("windows"), predicates)
    config = TaskConfig(predicates=predicates, trigger=trigger, windows=windows)
    _cross_validate(config)

    from .tree import build_tree  # deferred: tree consumes config types

    build_tree(config)  # raises ConfigError on cyclic or disconnected references
    return config


def load_task_config(path: str | Path) -> TaskConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read task config {str(path)!r}: {e}") from e
    try:
        return parse_task_config(text)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from e


def _format_ref(ref: BoundaryRef, window: str) -> str:
    if ref.window is None:
        return "trigger"
    if ref.window == window:
        return ref.side
    return ref.key


def _format_boundary(expr: BoundaryExpr, window: str) -> str:
    if expr.kind is BoundaryKind.UNBOUNDED:
        return "NULL"
    ref = _format_ref(expr.reference, window)
    if expr.kind is BoundaryKind.REFERENCE:
        return ref
    if expr.kind is BoundaryKind.TEMPORAL_OFFSET:
        sign = "+" if expr.offset_seconds >= 0 else "-"
        return f"{ref} {sign} {format_duration(abs(expr.offset_seconds))}"
    arrow = "->" if expr.direction is BoundDirection.NEXT else "<-"
    return f"{ref} {arrow} {expr.predicate}"


def _format_bound(c: ConstraintBound) -> str:
    mn = "None" if c.min_count is None else str(c.min_count)
    mx = "None" if c.max_count is None else str(c.max_count)
    return f"({mn}, {mx})"


def serialize_task_config(config: TaskConfig) -> str:
    """Render a config back to canonical YAML.

    Reparsing the output yields a structurally equal TaskConfig; the text is
    also the canonical form hashed into run manifests.
    """
    q = json.dumps  # JSON string quoting is valid YAML
    lines = ["predicates:"]
    for name, pred in config.predicates.items():
        if isinstance(pred, PlainPredicate):
            parts = [f"code: {q(pred.code_matcher)}"]
            if pred.value_min is not None:
                parts.append(f"value_min: {pred.value_min}")
            if pred.value_max is not None:
                parts.append(f"value_max: {pred.value_max}")
            lines.append(f"  {name}: {{ {', '.join(parts)} }}")
        else:
            expr = f"{pred.combinator.value}({', '.join(pred.operands)})"
            lines.append(f"  {name}: {{ expr: {q(expr)} }}")
    lines.append(f"trigger: {config.trigger}")
    lines.append("windows:")
    for name, w in config.windows.items():
        lines.append(f"  {name}:")
        lines.append(f"    start: {q(_format_boundary(w.start, name))}")
        lines.append(f"    end: {q(_format_boundary(w.end, name))}")
        lines.append(f"    start_inclusive: {'true' if w.start_inclusive else 'false'}")
        lines.append(f"    end_inclusive: {'true' if w.end_inclusive else 'false'}")
        if w.constraints:
            items = ", ".join(f"{c.predicate}: {q(_format_bound(c))}" for c in w.constraints)
            lines.append(f"    has: {{ {items} }}")
        if w.label_predicate is not None:
            lines.append(f"    label: {w.label_predicate}")
        if w.index_selector is not None:
            lines.append(f"    index_timestamp: {w.index_selector}")
    return "\n".join(lines) + "\n"
