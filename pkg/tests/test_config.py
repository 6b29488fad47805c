import random

import pytest

import cohort_forge as cf
from cohort_forge.config import (
    BoundaryKind,
    BoundaryRef,
    BoundDirection,
    Combinator,
    ConfigError,
    DerivedPredicate,
    PlainPredicate,
)
from task_randomizer import random_task_text

MINIMAL_PREDS = 'predicates:\n  p: { code: "X" }\ntrigger: p\n'


def _cfg(windows_yaml: str, preds: str = MINIMAL_PREDS) -> cf.TaskConfig:
    return cf.parse_task_config(preds + windows_yaml)


class TestParseDuration:
    @pytest.mark.parametrize(
        "text,seconds",
        [("24h", 86_400), ("2d 6h", 194_400), ("30d", 2_592_000), ("0s", 0), ("1w 1d", 691_200)],
    )
    def test_values(self, text, seconds):
        assert cf.parse_duration(text).seconds == seconds

    @pytest.mark.parametrize("text", ["", "24x", "-3h", "h", "1.5h", "3 h"])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            cf.parse_duration(text)


class TestParseBoundaryExpr:
    def test_temporal_offset_from_trigger(self):
        e = cf.parse_boundary_expr("trigger + 24h", "input")
        assert e.kind is BoundaryKind.TEMPORAL_OFFSET
        assert e.reference == BoundaryRef()
        assert e.offset_seconds == 86_400

    def test_null_is_unbounded(self):
        assert cf.parse_boundary_expr("NULL", "w").kind is BoundaryKind.UNBOUNDED

    def test_event_bound_from_sibling(self):
        e = cf.parse_boundary_expr("start -> death_or_discharge", "target")
        assert e.kind is BoundaryKind.EVENT_BOUND
        assert e.reference == BoundaryRef("target", "start")
        assert e.direction is BoundDirection.NEXT
        assert e.predicate == "death_or_discharge"

    def test_previous_event_bound(self):
        e = cf.parse_boundary_expr("gap.end <- admission", "w")
        assert e.direction is BoundDirection.PREVIOUS
        assert e.reference == BoundaryRef("gap", "end")

    def test_negative_offset(self):
        e = cf.parse_boundary_expr("end - 2d", "w")
        assert e.offset_seconds == -172_800
        assert e.reference == BoundaryRef("w", "end")

    def test_pure_reference(self):
        e = cf.parse_boundary_expr("gap.end", "target")
        assert e.kind is BoundaryKind.REFERENCE

    @pytest.mark.parametrize("text", ["", "foo bar", "trigger ++ 24h", "trigger + 24x", "+ 24h"])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            cf.parse_boundary_expr(text, "w")


class TestParseTaskConfig:
    def test_mortality_fixture(self, mortality_config):
        cfg = mortality_config
        assert list(cfg.predicates) == ["admission", "discharge", "death", "death_or_discharge"]
        assert isinstance(cfg.predicates["death_or_discharge"], DerivedPredicate)
        assert cfg.predicates["death_or_discharge"].combinator is Combinator.ANY_OF
        assert cfg.trigger == "admission"
        assert list(cfg.windows) == ["input", "gap", "target"]
        assert cfg.label_window == "target"
        assert cfg.windows["target"].label_predicate == "death"
        assert cfg.index_window == ("target", "start")
        assert cfg.windows["gap"].start_inclusive is False
        assert cfg.windows["input"].constraints == (cf.ConstraintBound("_ANY_EVENT", 5, None),)

    def test_degenerate_zero_offset_window(self):
        cfg = _cfg('windows:\n  w: { start: "trigger", end: "trigger + 0s" }\n')
        w = cfg.windows["w"]
        assert w.start.kind is BoundaryKind.REFERENCE
        assert w.end.offset_seconds == 0

    def test_cyclic_window_references(self):
        doc = (
            MINIMAL_PREDS
            + "windows:\n"
            + '  a: { start: "b.end", end: "start + 1h" }\n'
            + '  b: { start: "a.start", end: "start + 1h" }\n'
        )
        with pytest.raises(ConfigError, match="cyclic"):
            cf.parse_task_config(doc)

    def test_forward_window_reference_is_fine(self):
        cfg = _cfg(
            "windows:\n"
            '  a: { start: "b.end", end: "start + 1h" }\n'
            '  b: { start: "trigger", end: "start + 1h" }\n'
        )
        assert set(cfg.windows) == {"a", "b"}

    def test_windowless_config(self):
        cfg = cf.parse_task_config(MINIMAL_PREDS)
        assert cfg.windows == {}
        assert cfg.label_window is None

    def test_value_bounds_roundtrip(self):
        cfg = cf.parse_task_config(
            'predicates:\n  p: { code: "LAB//x", value_min: 1.5, value_max: 3 }\ntrigger: p\n'
        )
        pred = cfg.predicates["p"]
        assert (pred.value_min, pred.value_max) == (1.5, 3)


class TestConfigErrors:
    @pytest.mark.parametrize(
        "doc,match",
        [
            ('predicates:\n  trigger: { code: "X" }\ntrigger: trigger\n', "reserved"),
            ('predicates:\n  _ANY_EVENT: { code: "X" }\ntrigger: _ANY_EVENT\n', "reserved"),
            (MINIMAL_PREDS + 'windows:\n  end: { start: "trigger", end: "start + 1h" }\n', "reserved"),
            ('predicates:\n  p: { code: "X" }\ntrigger: q\n', "unknown predicate"),
            (MINIMAL_PREDS + 'windows:\n  w: { start: "trigger", end: "start -> q" }\n', "unknown predicate"),
            (MINIMAL_PREDS + 'windows:\n  w: { start: "trigger", end: "start + 1h", label: q }\n', "unknown predicate"),
            (MINIMAL_PREDS + 'windows:\n  w: { start: "q.end", end: "start + 1h" }\n', "unknown window"),
            (MINIMAL_PREDS + 'windows:\n  w: { start: "NULL", end: "NULL" }\n', "both be unbounded"),
            (MINIMAL_PREDS + 'windows:\n  w: { start: "start + 1h", end: "trigger" }\n', "references itself"),
            (MINIMAL_PREDS + 'windows:\n  w: { start: "NULL", end: "start + 1h" }\n', "trigger or another window"),
            (MINIMAL_PREDS + 'windows:\n  w: { start: "trigger" }\n', "missing required key"),
            (MINIMAL_PREDS + 'windows:\n  w: { start: "trigger", end: "start + 1h", has: { p: "(None, None)" } }\n', "at least one"),
            (MINIMAL_PREDS + 'windows:\n  w: { start: "trigger", end: "start + 1h", has: { p: "(3, 1)" } }\n', "exceeds"),
            (MINIMAL_PREDS + 'windows:\n  w: { start: "trigger", end: "start + 1h", has: { p: "5" } }\n', "malformed bound"),
            ('predicates:\n  p: { code: "X", value_min: 3, value_max: 1 }\ntrigger: p\n', "exceeds"),
            ('predicates:\n  d: { expr: "any_of(a)" }\ntrigger: d\n', "malformed expr"),
            ('predicates:\n  d: { expr: "any_of(a, b)" }\ntrigger: d\n', "undefined predicate"),
            ('predicates:\n  p: { code: "X", expr: "any_of(a, b)" }\ntrigger: p\n', "mutually exclusive"),
            ('predicates:\n  p: {}\ntrigger: p\n', "either 'code' or 'expr'"),
            ('predicates:\n  p: { code: "X", foo: 1 }\ntrigger: p\n', "unknown keys"),
            (MINIMAL_PREDS + "extras: {}\n", "unknown top-level"),
            ("trigger: p\n", "missing top-level key 'predicates'"),
        ],
    )
    def test_rejected(self, doc, match):
        with pytest.raises(ConfigError, match=match):
            cf.parse_task_config(doc)

    def test_duplicate_predicate_names(self):
        doc = 'predicates:\n  p: { code: "X" }\n  p: { code: "Y" }\ntrigger: p\n'
        with pytest.raises(ConfigError, match="duplicate name"):
            cf.parse_task_config(doc)

    def test_syntax_error_carries_position(self):
        with pytest.raises(ConfigError) as exc:
            cf.parse_task_config("predicates:\n  p: { code: [unclosed\ntrigger: p\n")
        assert exc.value.line is not None
        assert "line" in str(exc.value)

    def test_multiple_label_windows(self):
        doc = (
            MINIMAL_PREDS
            + "windows:\n"
            + '  a: { start: "trigger", end: "start + 1h", label: p }\n'
            + '  b: { start: "trigger", end: "start + 2h", label: p }\n'
        )
        with pytest.raises(ConfigError, match="multiple label windows"):
            cf.parse_task_config(doc)

    def test_multiple_index_windows(self):
        doc = (
            MINIMAL_PREDS
            + "windows:\n"
            + '  a: { start: "trigger", end: "start + 1h", index_timestamp: start }\n'
            + '  b: { start: "trigger", end: "start + 2h", index_timestamp: end }\n'
        )
        with pytest.raises(ConfigError, match="multiple index windows"):
            cf.parse_task_config(doc)

    def test_derived_forward_reference_rejected(self):
        doc = (
            "predicates:\n"
            '  d: { expr: "any_of(a, b)" }\n'
            '  a: { code: "A" }\n'
            '  b: { code: "B" }\n'
            "trigger: a\n"
        )
        with pytest.raises(ConfigError, match="undefined predicate"):
            cf.parse_task_config(doc)


class TestDependencyOrder:
    def test_mortality_fixture(self, mortality_config):
        order = cf.predicate_dependency_order(mortality_config)
        assert order == ["admission", "discharge", "death", "death_or_discharge"]

    def test_plain_only_keeps_declaration_order(self):
        cfg = cf.parse_task_config(
            'predicates:\n  b: { code: "B" }\n  a: { code: "A" }\ntrigger: a\n'
        )
        assert cf.predicate_dependency_order(cfg) == ["b", "a"]

    def test_every_operand_precedes_its_user(self):
        cfg = cf.parse_task_config(
            "predicates:\n"
            '  a: { code: "A" }\n'
            '  a2: { code: "A2" }\n'
            '  b: { expr: "any_of(a, a2)" }\n'
            '  c: { expr: "all_of(b, a)" }\n'
            "trigger: a\n"
        )
        order = cf.predicate_dependency_order(cfg)
        pos = {name: i for i, name in enumerate(order)}
        for name, pred in cfg.predicates.items():
            if isinstance(pred, DerivedPredicate):
                assert all(pos[op] < pos[name] for op in pred.operands)
        assert cf.predicate_columns(cfg)[-1] == cf.ANY_EVENT


class TestRoundTrip:
    def test_corpus_round_trips(self, task_corpus_paths):
        for path in task_corpus_paths:
            cfg = cf.parse_task_config(path.read_text())
            again = cf.parse_task_config(cf.serialize_task_config(cfg))
            assert again == cfg, path.name
            assert list(again.predicates) == list(cfg.predicates)
            assert list(again.windows) == list(cfg.windows)

    def test_random_configs_round_trip(self):
        rng = random.Random(20_240)
        for _ in range(200):
            cfg = cf.parse_task_config(random_task_text(rng))
            assert cf.parse_task_config(cf.serialize_task_config(cfg)) == cfg

    def test_serialization_is_stable(self, mortality_config):
        once = cf.serialize_task_config(mortality_config)
        assert cf.serialize_task_config(cf.parse_task_config(once)) == once


class TestParserTotality:
    def test_mutated_documents_never_crash(self, mortality_config_text):
        # every outcome is a validated TaskConfig or a ConfigError, never a
        # partial parse or a stray exception
        rng = random.Random(8_855)
        seeds = [mortality_config_text] + [random_task_text(rng) for _ in range(20)]
        alphabet = "abz_09:{}()[]->+<\"' \n\t*NULL"
        for _ in range(400):
            text = rng.choice(seeds)
            mutated = list(text)
            for _ in range(rng.randint(1, 6)):
                op = rng.random()
                pos = rng.randrange(len(mutated)) if mutated else 0
                if op < 0.4 and mutated:
                    mutated[pos] = rng.choice(alphabet)
                elif op < 0.7 and mutated:
                    del mutated[pos]
                else:
                    mutated.insert(pos, rng.choice(alphabet))
            try:
                result = cf.parse_task_config("".join(mutated))
            except ConfigError:
                continue
            assert isinstance(result, cf.TaskConfig)
