"""
Tests for the story graph and the four difficulty metrics.
"""

import itertools
from fractions import Fraction

import networkx as nx
import pytest
from hypothesis import given, settings, strategies as st

from norabench.engine.grounding import answer_sets
from norabench.engine.parser import parse_program
from norabench.engine.proofs import Proof
from norabench.models.program import GroundAtom
from norabench.models.story import AmbiguousFact, Story
from norabench.tools.metrics import (
    StoryReasoner,
    backtrack_load,
    compute_metrics,
    proof_to_dot,
)
from norabench.tools.story_graph import StoryGraph, blocks_between, fact_edges

CHAIN_WORLD = parse_program(
    """
    #defined edge/2.
    reach(X, Y) :- edge(X, Y).
    reach(X, Z) :- edge(X, Y), reach(Y, Z).
    """
)


def knows(x, y):
    return GroundAtom("knows", (x, y))


def edge(x, y):
    return GroundAtom("edge", (x, y))


class TestStoryGraph:
    """Edges, loops and the off-path test."""

    ENTITIES = {"a": "person", "b": "person", "c": "person", "d": "person", "tall": "reserved"}
    ATOMS = [
        knows("a", "b"),
        knows("b", "c"),
        knows("c", "a"),
        knows("c", "d"),
        GroundAtom("has_property", ("d", "tall")),
    ]

    def test_reserved_second_argument_is_a_loop(self):
        edges = fact_edges(self.ATOMS, self.ENTITIES)
        assert len(edges) == 5
        assert edges[-1].is_loop
        assert (edges[-1].u, edges[-1].v) == ("d", "d")

    def test_blocks_between(self):
        graph = nx.Graph([("a", "b"), ("b", "c"), ("c", "a"), ("c", "d")])
        assert blocks_between(graph, "a", "b") == {
            frozenset("ab"), frozenset("bc"), frozenset("ca"),
        }
        assert frozenset("cd") in blocks_between(graph, "a", "d")
        assert blocks_between(graph, "a", "a") == set()

    def test_off_path(self):
        graph = StoryGraph(self.ATOMS, self.ENTITIES)
        assert graph.off_path("a", "b") == {knows("c", "d"), GroundAtom("has_property", ("d", "tall"))}
        assert graph.off_path("b", "a") == graph.off_path("a", "b")
        assert graph.off_path("a", "d") == {GroundAtom("has_property", ("d", "tall"))}

    def test_disconnected_pair(self):
        graph = StoryGraph([knows("a", "b")], {"a": "person", "b": "person", "c": "person"})
        assert graph.off_path("a", "c") == {knows("a", "b")}

    def test_dot_marks_off_path_edges(self):
        dot = StoryGraph(self.ATOMS, self.ENTITIES).to_dot("a", "b")
        assert dot.startswith('digraph "story" {')
        assert dot.count('color="deeppink"') == 2
        assert 'label="is_tall"' in dot


class TestSchoolmatesMetrics:
    """Unambiguous story over the small world."""

    def test_bundle(self, mini_world, load_story):
        story = load_story("schoolmates_story.lp", mini_world)
        metrics = compute_metrics(mini_world, story, "irfan", "lola")
        assert metrics.depth == 5
        assert metrics.positive_depth == 5
        assert metrics.width == 1
        assert metrics.bl == Fraction(5, 3)
        assert metrics.opec == 0
        assert (metrics.refinements, metrics.consistent_refinements) == (1, 1)
        assert metrics.exact

    def test_not_hard_ambiguous(self, mini_world, load_story):
        story = load_story("schoolmates_story.lp", mini_world)
        assert not StoryReasoner(mini_world, story).is_hard_ambiguous("irfan", "lola")


class TestOffPathFacts:
    """The aunt story needs facts that sit off every ann-todd path."""

    @pytest.fixture(scope="class")
    def reasoner(self, nora_world, load_story):
        return StoryReasoner(nora_world, load_story("aunt_story.lp", nora_world))

    def test_relation_set(self, reasoner):
        assert reasoner.relations("ann", "todd") == {"aunt_of", "aunt_or_uncle_of", "maternal_aunt_of"}

    def test_bundle(self, reasoner):
        metrics = reasoner.metrics("ann", "todd")
        assert metrics.depth == 2
        assert metrics.width == 1
        assert metrics.bl == Fraction(2, 3)
        assert metrics.opec == 2

    def test_off_path_facts(self, reasoner):
        graph = reasoner.graph(reasoner.result.ref_plus[0])
        assert graph.off_path("ann", "todd") >= {
            GroundAtom("grandparent_of", ("wes", "todd")),
            GroundAtom("has_property", ("wes", "no_daughters")),
        }

    def test_proof_dot(self, reasoner):
        answer_set = reasoner.result.ref_plus[0]
        proof = reasoner.proof(answer_set, GroundAtom("maternal_aunt_of", ("ann", "todd")))
        dot = proof_to_dot(reasoner.story, proof, "ann", "todd")
        assert 'color="deeppink"' in dot
        assert "penwidth=2" in dot


class TestAmbiguousMetrics:
    """Width and depth across consistent and contradictory refinements."""

    def test_shared_residence(self, nora_world, load_story):
        reasoner = StoryReasoner(nora_world, load_story("shared_residence_story.lp", nora_world))
        metrics = reasoner.metrics("mary", "rome")
        assert metrics.positive_depth == 3
        assert metrics.depth >= metrics.positive_depth
        assert metrics.width == 2
        assert (metrics.refinements, metrics.consistent_refinements) == (4, 2)
        assert not reasoner.is_hard_ambiguous("mary", "rome")

    def test_unrelated_pair_has_no_metrics(self, nora_world, load_story):
        reasoner = StoryReasoner(nora_world, load_story("shared_residence_story.lp", nora_world))
        with pytest.raises(ValueError):
            reasoner.metrics("eve", "ann")

    def test_residence_width(self, nora_world, load_story):
        reasoner = StoryReasoner(nora_world, load_story("residence_width_story.lp", nora_world))
        assert reasoner.width(GroundAtom("living_in", ("ryan", "kgp"))) == 3

    def test_constraint_resolved_ambiguity_is_hard(self, nora_world, load_story):
        reasoner = StoryReasoner(nora_world, load_story("underage_colleague_story.lp", nora_world))
        assert reasoner.is_hard_ambiguous("rob", "uptown")
        assert reasoner.metrics("rob", "uptown").width == 2

    def test_unambiguous_label_is_not_hard(self, nora_world, load_story):
        reasoner = StoryReasoner(nora_world, load_story("underage_colleague_story.lp", nora_world))
        assert not reasoner.is_hard_ambiguous("rob", "daisy")
        assert reasoner.metrics("rob", "daisy").width == 2

    def test_opec_is_maximized_over_refinements(self):
        world = parse_program(
            """
            #defined edge/2.
            #defined tag/2.
            #defined via/2.
            rel(X, Y) :- edge(X, Y), tag(Y, Z).
            near(X, Y) :- edge(X, Y).
            near(X, Z) :- near(X, Y), via(Y, Z).
            rel(X, Y) :- near(X, Y).
            """
        )
        story = Story(
            facts=(GroundAtom("via", ("m", "b")), GroundAtom("tag", ("b", "t"))),
            ambiguous=(AmbiguousFact(choices=(edge("a", "b"), edge("a", "m"))),),
            entities={x: "person" for x in "abmt"},
        )
        metrics = compute_metrics(world, story, "a", "b")
        # the 3-step proof stays on the a-m-b path; the 1-step one uses the dead end tag(b,t)
        assert metrics.depth == metrics.positive_depth == 3
        assert metrics.opec == 1
        assert metrics.width == 2

    def test_every_choice_derives_the_label(self, nora_world, load_story):
        reasoner = StoryReasoner(nora_world, load_story("brother_story.lp", nora_world))
        assert reasoner.relations("sean", "daisy") >= {"father_of", "parent_of"}
        assert not reasoner.is_hard_ambiguous("sean", "daisy")


class TestBacktrackLoad:
    def test_empty_proof(self):
        proof = Proof(goal=knows("a", "b"), steps=())
        assert backtrack_load(proof, {"a": "person", "b": "person"}) == 0


@st.composite
def chain_stories(draw):
    """
    A path n0..nk with dead-end branches, renamed by a random injective map.

    Up to two chain edges become 1{edge(ni, nj); edge(ni, di)}1 with a plain
    edge(di, nj) closing the detour, so every refinement keeps exactly one
    n0-nk path. Otherwise an ambiguous fact may point a chain node at one of
    two dead ends.
    """
    k = draw(st.integers(min_value=1, max_value=5))
    detours = draw(st.lists(st.integers(min_value=0, max_value=k - 1), max_size=2, unique=True))
    branches = draw(st.lists(st.integers(min_value=0, max_value=k), max_size=4))
    chain = [f"n{i}" for i in range(k + 1)]
    facts = [edge(chain[i], chain[i + 1]) for i in range(k) if i not in detours]
    facts += [edge(f"d{i}", chain[i + 1]) for i in detours]
    facts += [edge(chain[j], f"f{t}") for t, j in enumerate(branches)]
    ambiguous = [AmbiguousFact(choices=(edge(chain[i], chain[i + 1]), edge(chain[i], f"d{i}"))) for i in detours]
    if len(ambiguous) < 2 and draw(st.booleans()):
        j = draw(st.integers(min_value=0, max_value=k))
        ambiguous.append(
            AmbiguousFact(
                choices=(edge(chain[j], "g0"), edge(chain[j], "g1")), lower=1, upper=draw(st.sampled_from([1, 2]))
            )
        )
    atoms = facts + [c for fact in ambiguous for c in fact.choices]
    names = sorted({x for atom in atoms for x in atom.args})
    targets = draw(st.permutations([f"e{i}" for i in range(len(names))]))
    story = Story(
        story_id="chain",
        facts=tuple(facts),
        ambiguous=tuple(ambiguous),
        entities={n: "person" for n in names},
    )
    return k, len(detours), story, dict(zip(names, targets))


@st.composite
def graph_stories(draw, max_ambiguous=2):
    """Random directed edge stories over three to six people, cycles included."""
    nodes = "abcdef"[: draw(st.integers(min_value=3, max_value=6))]
    pairs = st.tuples(st.sampled_from(nodes), st.sampled_from(nodes)).filter(lambda p: p[0] != p[1])
    facts = [edge(*p) for p in draw(st.lists(pairs, min_size=1, max_size=8, unique=True))]
    found = []
    seen = set(facts)
    for _ in range(draw(st.integers(min_value=0, max_value=max_ambiguous))):
        subject = draw(st.sampled_from(nodes))
        objects = draw(
            st.lists(st.sampled_from([n for n in nodes if n != subject]), min_size=2, max_size=3, unique=True)
        )
        choices = tuple(edge(subject, o) for o in objects)
        if seen.isdisjoint(choices):
            found.append(AmbiguousFact(choices=choices, lower=1, upper=draw(st.sampled_from([1, len(choices)]))))
            seen.update(choices)
    return Story(
        story_id="graph",
        facts=tuple(facts),
        ambiguous=tuple(found),
        entities={n: "person" for n in nodes},
    )


def _queries(reasoner):
    entities = sorted(reasoner.story.entities)
    return [(x, y) for x, y in itertools.permutations(entities, 2) if reasoner.relations(x, y)]


class TestRenamingInvariance:
    """Metrics depend on the structure of a story, not on entity names."""

    @settings(max_examples=500, deadline=None)
    @given(case=chain_stories())
    def test_chain_metrics(self, case):
        k, detours, story, renaming = case
        a, b = "n0", f"n{k}"
        metrics = compute_metrics(CHAIN_WORLD, story, a, b)
        renamed = story.rename(renaming, story_id="renamed")
        again = compute_metrics(CHAIN_WORLD, renamed, renaming[a], renaming[b])
        assert again == metrics
        longest = k + detours
        assert metrics.depth == metrics.positive_depth == longest
        assert metrics.bl == Fraction(longest, longest + 1)
        assert metrics.width == 2 ** detours
        assert metrics.opec == 0
        assert metrics.consistent_refinements == metrics.refinements

    def test_relation_set_of_chain(self):
        story = Story(
            facts=(GroundAtom("edge", ("x", "y")), GroundAtom("edge", ("y", "z"))),
            entities={"x": "person", "y": "person", "z": "person"},
        )
        result = answer_sets(CHAIN_WORLD, story)
        assert result.relations("x", "z") == {"reach"}
        assert result.relations("x", "y") == {"edge", "reach"}


class TestMetricProperties:
    """Structural properties of closures and metrics on random edge stories."""

    @settings(max_examples=200, deadline=None)
    @given(story=graph_stories(max_ambiguous=0))
    def test_unambiguous_width_is_one(self, story):
        reasoner = StoryReasoner(CHAIN_WORLD, story)
        for x, y in _queries(reasoner):
            assert reasoner.metrics(x, y).width == 1

    @settings(max_examples=300, deadline=None)
    @given(story=graph_stories())
    def test_layers_are_first_derivation_rounds(self, story):
        result = answer_sets(CHAIN_WORLD, story)
        for closure in result.closures():
            layers = closure.layers
            assert set(layers) == closure.atoms
            for atom in closure.atoms:
                if atom in closure.refinement.facts:
                    assert layers[atom] == 0
                    continue
                rounds = [
                    max(layers[p] for p in rule.body)
                    for rule in result.supports(atom)
                    if all(p in closure.atoms for p in rule.body)
                ]
                assert layers[atom] == 1 + min(rounds)

    @settings(max_examples=300, deadline=None)
    @given(
        story=graph_stories(max_ambiguous=0),
        extra=st.lists(st.tuples(st.sampled_from("abcdef"), st.sampled_from("abcdef")), max_size=4),
    )
    def test_closure_grows_with_facts(self, story, extra):
        added = tuple(edge(x, y) for x, y in extra)
        entities = {**story.entities, **{x: "person" for atom in added for x in atom.args}}
        bigger = Story(story_id="bigger", facts=story.facts + added, entities=entities)
        (small,) = answer_sets(CHAIN_WORLD, story).ref_plus
        (large,) = answer_sets(CHAIN_WORLD, bigger).ref_plus
        assert small.atoms <= large.atoms

    @settings(max_examples=100, deadline=None)
    @given(story=graph_stories(max_ambiguous=1), upper=st.sampled_from([1, 3]))
    def test_unused_ambiguous_fact_keeps_metrics(self, story, upper):
        likes = AmbiguousFact(
            choices=tuple(GroundAtom("likes", ("u0", u)) for u in ("u1", "u2", "u3")), lower=1, upper=upper
        )
        padded = story.model_copy(
            update={
                "ambiguous": story.ambiguous + (likes,),
                "entities": {**story.entities, **{u: "person" for u in ("u0", "u1", "u2", "u3")}},
            }
        )
        before = StoryReasoner(CHAIN_WORLD, story)
        after = StoryReasoner(CHAIN_WORLD, padded)
        assert after.result.refinement_count == before.result.refinement_count * (3 if upper == 1 else 7)
        for x, y in _queries(before):
            assert after.relations(x, y) == before.relations(x, y)
            old, new = before.metrics(x, y), after.metrics(x, y)
            assert (new.width, new.depth, new.bl, new.opec) == (old.width, old.depth, old.bl, old.opec)
