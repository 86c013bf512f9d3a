"""
Tests for the rule-language parser and serializer.
"""

import logging

import pytest

from norabench.engine.parser import parse_file, parse_program, serialize_program, tokenize
from norabench.errors import (
    ArityConflictError,
    CardinalityError,
    ParseError,
    UnknownPredicateError,
)
from norabench.models.program import GroundAtom


class TestParseProgram:
    """Statement kinds and program tables."""

    def test_statement_kinds_in_file_order(self):
        program = parse_program(
            """
            % people
            parent_of(ann, bob).
            child_of(Y, X) :- parent_of(X, Y).
            :- parent_of(X, X).
            1{likes(ann, bob); likes(ann, cid)}1.
            """
        )
        assert [r.kind for r in program.rules] == ["fact", "definite", "constraint", "cardinality"]
        assert program.rules_of_kind("definite")[0][0] == 1
        assert program.facts() == [GroundAtom("parent_of", ("ann", "bob"))]

    def test_predicate_table_and_constants(self):
        program = parse_program("sibling_of(X, Y) :- brother_of(X, Y), X != Y.\nis_agegroup(underage).")
        assert program.predicates == {"sibling_of": 2, "brother_of": 2, "is_agegroup": 1}
        assert program.constants == frozenset({"underage"})
        assert program.input_predicates == frozenset({"brother_of"})

    def test_inequality_literal(self):
        program = parse_program("a(X, Y) :- b(X, Y), X != Y.")
        rule = program.rules[0]
        assert len(rule.body_atoms) == 1
        assert len(rule.inequalities) == 1
        assert str(rule) == "a(X,Y) :- b(X,Y), X != Y."

    def test_block_comments_are_skipped(self):
        program = parse_program("%* a\nmulti-line\ncomment *%\np(a).")
        assert program.facts() == [GroundAtom("p", ("a",))]

    def test_cardinality_bounds(self):
        program = parse_program("1{r(a, b); r(a, c); r(a, d)}3.")
        rule = program.rules[0]
        assert rule.bounds == (1, 3)
        assert [str(c) for c in rule.choices] == ["r(a,b)", "r(a,c)", "r(a,d)"]

    def test_serialize_then_parse_keeps_rules(self, mini_world):
        again = parse_program(serialize_program(mini_world))
        assert again.rules == mini_world.rules

    def test_bundled_worlds_parse(self, nora_world, mini_world):
        assert nora_world.rules_of_kind("definite")
        assert len(mini_world.rules_of_kind("definite")) == 6
        assert mini_world.rules[6].kind == "constraint"


class TestParseErrors:
    """Rejected inputs carry a location."""

    def test_error_location(self):
        with pytest.raises(ParseError) as e:
            parse_program("p(a).\n  q(b) :- .")
        assert (e.value.line, e.value.column) == (2, 11)

    def test_unexpected_character(self):
        with pytest.raises(ParseError, match="unexpected character"):
            tokenize("p(a) & q(b).")

    def test_fact_with_variables(self):
        with pytest.raises(ParseError, match="contains variables"):
            parse_program("p(X).")

    def test_arity_conflict(self):
        with pytest.raises(ArityConflictError) as e:
            parse_program("p(a).\np(a, b).")
        assert e.value.line == 2

    @pytest.mark.parametrize(
        "text",
        [
            "{p(a, b); p(a, c)}.",
            "1{p(a, b); q(a, c)}1.",
            "1{p(a, b); p(c, b)}1.",
            "2{p(a, b); p(a, c)}2.",
            "1{p(a, b)}1.",
            "1{p(a, b); p(a, c)}1 :- q(a).",
        ],
    )
    def test_unsupported_cardinality_facts(self, text):
        with pytest.raises(CardinalityError):
            parse_program(text)

    def test_missing_file_path_raises_os_error(self, tmp_path):
        with pytest.raises(OSError):
            parse_file(tmp_path / "absent.lp")

    def test_malformed_story_file(self, fixtures_dir):
        with pytest.raises(ParseError):
            parse_file(fixtures_dir / "malformed_story.lp")


class TestDirectives:
    """#defined declares input predicates; other directives are ignored."""

    def test_defined_declares_inputs(self):
        program = parse_program("#defined knows/2.\nfriend_of(X, Y) :- knows(X, Y).")
        assert program.declared_inputs == (("knows", 2),)
        assert program.input_predicates == frozenset({"knows"})

    def test_undeclared_body_predicate(self):
        with pytest.raises(UnknownPredicateError):
            parse_program("#defined knows/2.\nfriend_of(X, Y) :- likes(X, Y).")

    def test_other_directive_warns(self, caplog):
        with caplog.at_level(logging.WARNING):
            program = parse_program("#show p/1.\np(a).")
        assert "Ignoring directive" in caplog.text
        assert len(program.rules) == 1

    def test_unsafe_variable_warns(self, caplog):
        with caplog.at_level(logging.WARNING):
            parse_program("p(X, Y) :- q(X).")
        assert "has unsafe variables" in caplog.text
