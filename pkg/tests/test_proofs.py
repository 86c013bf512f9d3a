"""
Tests for minimal proof extraction, proof checking and trace rendering.
"""

import pytest

from norabench.engine.grounding import answer_sets
from norabench.engine.proofs import (
    CONTRADICTION,
    ProofStep,
    check_proof,
    format_trace,
    greedy_proof,
    minimal_proof,
)
from norabench.errors import GoalNotDerivableError
from norabench.models.program import GroundAtom


def lisp(x, y):
    return GroundAtom("living_in_same_place", (x, y))


SCHOOLMATES = GroundAtom("school_mates_with", ("ram", "irfan"))
PARENT = GroundAtom("parent_of", ("lola", "ram"))
UNDERAGE = GroundAtom("belongs_to", ("ram", "underage"))


def _step(result, head, *body):
    """The ground rule deriving `head` from exactly `body`, as a proof step."""
    for rule in result.supports(head):
        if set(rule.body) == set(body):
            return ProofStep.of(rule)
    raise LookupError(f"no ground rule {head} :- {body}")


@pytest.fixture(scope="module")
def schoolmates(mini_world, load_story):
    story = load_story("schoolmates_story.lp", mini_world)
    result = answer_sets(mini_world, story)
    return story, result, result.ref_plus[0]


class TestMinimalProof:
    """Smallest derivations over the schoolmates answer set."""

    def test_step_count(self, schoolmates):
        _, result, answer_set = schoolmates
        proof = minimal_proof(answer_set, lisp("irfan", "lola"), result.supports)
        assert len(proof) == 5
        assert proof.exact
        assert proof.steps[-1].derived == lisp("irfan", "lola")
        assert set(proof.leaves()) == {SCHOOLMATES, PARENT}
        assert proof.derived == {
            lisp("ram", "irfan"),
            UNDERAGE,
            lisp("lola", "ram"),
            lisp("lola", "irfan"),
            lisp("irfan", "lola"),
        }

    def test_proof_is_well_founded(self, schoolmates):
        _, result, answer_set = schoolmates
        proof = minimal_proof(answer_set, lisp("irfan", "lola"), result.supports)
        assert check_proof(proof.steps, answer_set.refinement.facts, result.ground_rules)

    def test_greedy_is_an_upper_bound(self, schoolmates):
        _, result, answer_set = schoolmates
        goal = lisp("irfan", "lola")
        greedy = greedy_proof(answer_set, goal, result.supports)
        assert len(greedy) >= len(minimal_proof(answer_set, goal, result.supports))
        assert check_proof(greedy.steps, answer_set.refinement.facts, result.ground_rules)

    def test_single_rule_goal(self, schoolmates):
        _, result, answer_set = schoolmates
        proof = minimal_proof(answer_set, lisp("ram", "irfan"), result.supports)
        assert proof.steps == (_step(result, lisp("ram", "irfan"), SCHOOLMATES),)

    def test_fact_goal_has_empty_proof(self, schoolmates):
        _, result, answer_set = schoolmates
        proof = minimal_proof(answer_set, SCHOOLMATES, result.supports)
        assert proof.steps == ()
        assert format_trace(proof) == "Fact: school_mates_with(ram,irfan)"

    def test_goal_outside_closure(self, schoolmates):
        _, result, answer_set = schoolmates
        with pytest.raises(GoalNotDerivableError):
            minimal_proof(answer_set, GroundAtom("living_in", ("ram", "delhi")), result.supports)

    def test_contradiction_of_consistent_refinement(self, schoolmates):
        _, result, answer_set = schoolmates
        with pytest.raises(GoalNotDerivableError):
            minimal_proof(answer_set, CONTRADICTION, result.supports)


class TestCheckProof:
    """Longer valid derivations pass; gaps and foreign rules fail."""

    def test_six_step_walkthrough(self, schoolmates):
        _, result, answer_set = schoolmates
        steps = [
            _step(result, lisp("ram", "irfan"), SCHOOLMATES),
            _step(result, lisp("irfan", "ram"), lisp("ram", "irfan")),
            _step(result, UNDERAGE, SCHOOLMATES),
            _step(result, lisp("lola", "ram"), UNDERAGE, PARENT),
            _step(result, lisp("ram", "lola"), lisp("lola", "ram")),
            _step(result, lisp("irfan", "lola"), lisp("irfan", "ram"), lisp("ram", "lola")),
        ]
        assert check_proof(steps, answer_set.refinement.facts, result.ground_rules)

    def test_out_of_order_steps(self, schoolmates):
        _, result, answer_set = schoolmates
        steps = [
            _step(result, lisp("irfan", "ram"), lisp("ram", "irfan")),
            _step(result, lisp("ram", "irfan"), SCHOOLMATES),
        ]
        assert not check_proof(steps, answer_set.refinement.facts)

    def test_step_outside_program(self, schoolmates):
        _, result, answer_set = schoolmates
        invented = ProofStep(0, lisp("irfan", "lola"), (SCHOOLMATES,))
        assert check_proof([invented], answer_set.refinement.facts)
        assert not check_proof([invented], answer_set.refinement.facts, result.ground_rules)


class TestContradictionProof:
    """Inconsistent refinements are explained by a derivation of falsity."""

    def test_underage_parent(self, mini_world, load_story):
        story = load_story("underage_parent_story.lp", mini_world)
        result = answer_sets(mini_world, story)
        (closure,) = result.contradictions
        proof = minimal_proof(closure, CONTRADICTION, result.supports)
        assert len(proof) == 2
        assert proof.steps[0].derived == UNDERAGE
        assert proof.steps[-1].derived == CONTRADICTION
        assert str(proof.steps[-1]) == ":- belongs_to(ram,underage), parent_of(ram,lola)."
        assert check_proof(proof.steps, closure.refinement.facts, result.ground_rules)


class TestFormatTrace:
    def test_facts_listed_before_first_use(self, schoolmates):
        _, result, answer_set = schoolmates
        proof = minimal_proof(answer_set, lisp("irfan", "lola"), result.supports)
        lines = format_trace(proof, answer_set.refinement.facts).splitlines()
        assert len(lines) == 7
        assert sum(line.startswith("Fact: ") for line in lines) == 2
        assert lines[-1] == "5. living_in_same_place(irfan,lola) :- living_in_same_place(lola,irfan)."
        assert lines.index("Fact: parent_of(lola,ram)") < next(
            i for i, line in enumerate(lines) if "parent_of(lola,ram)" in line and not line.startswith("Fact")
        )
