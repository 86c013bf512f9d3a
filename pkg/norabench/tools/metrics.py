"""
Difficulty metrics: reasoning depth, reasoning width, backtrack load and
off-path edge count, computed from minimal proofs of every refinement.
"""

import logging
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

from ..engine.grounding import AnswerSet, Closure, EntailmentResult, answer_sets
from ..engine.proofs import CONTRADICTION, Proof, minimal_proof
from ..models.program import GroundAtom, Program
from ..models.schemas import MetricBundle
from ..models.story import Story
from .story_graph import StoryGraph

logger = logging.getLogger(__name__)


def backtrack_load(proof: Proof, entities: Mapping[str, str]) -> Fraction:
    """Steps divided by the distinct non-reserved constants of the proof's atoms."""
    if not proof.steps:
        return Fraction(0)
    involved = {
        arg
        for atom in proof.atoms()
        for arg in atom.args
        if entities.get(arg, "reserved") != "reserved"
    }
    if not involved:
        raise ValueError(f"proof of {proof.goal} touches no entity")
    return Fraction(len(proof.steps), len(involved))


def off_path_edges(graph: StoryGraph, a: str, b: str) -> FrozenSet[GroundAtom]:
    """Story-fact edges that lie on no simple path between a and b."""
    return graph.off_path(a, b)


def opec(proof: Proof, graph: StoryGraph, a: str, b: str) -> int:
    """Leaf facts of the proof that lie on no simple path between a and b."""
    off = off_path_edges(graph, a, b)
    return sum(1 for leaf in proof.leaves() if leaf in graph and leaf in off)


class StoryReasoner:
    """Answer sets of one story plus cached proofs and story graphs per refinement."""

    def __init__(
        self,
        world: Program,
        story: Story,
        result: Optional[EntailmentResult] = None,
        node_limit: Optional[int] = None,
    ):
        self.world = world
        self.story = story
        self.result = result or answer_sets(world, story)
        self.node_limit = node_limit
        self._proofs: Dict[Tuple[int, GroundAtom], Proof] = {}
        self._graphs: Dict[int, StoryGraph] = {}

    @property
    def consistent(self) -> bool:
        return self.result.consistent

    def relations(self, a: str, b: str) -> FrozenSet[str]:
        return self.result.relations(a, b)

    def proof(self, closure: Closure, goal: GroundAtom) -> Proof:
        key = (closure.origin, goal)
        if key not in self._proofs:
            self._proofs[key] = minimal_proof(closure, goal, self.result.supports, self.node_limit)
        return self._proofs[key]

    def graph(self, closure: Closure) -> StoryGraph:
        if closure.origin not in self._graphs:
            self._graphs[closure.origin] = StoryGraph(
                sorted(closure.refinement.facts), self.story.entities
            )
        return self._graphs[closure.origin]

    def positive_proofs(self, atom: GroundAtom) -> List[Tuple[AnswerSet, Proof]]:
        return [(a, self.proof(a, atom)) for a in self.result.ref_plus]

    def contradiction_proofs(self) -> List[Tuple[Closure, Proof]]:
        return [(c, self.proof(c, CONTRADICTION)) for c in self.result.contradictions]

    def width(self, atom: GroundAtom) -> int:
        """Distinct minimal derivations of `atom` plus distinct contradiction derivations."""
        positive = {p.key for _, p in self.positive_proofs(atom)}
        negative = {p.key for _, p in self.contradiction_proofs()}
        return len(positive) + len(negative)

    def depth(self, a: str, b: str, labels: Iterable[str]) -> int:
        sizes = [len(p) for r in labels for _, p in self.positive_proofs(GroundAtom(r, (a, b)))]
        sizes.extend(len(p) for _, p in self.contradiction_proofs())
        return max(sizes, default=0)

    def metrics(self, a: str, b: str, labels: Optional[Iterable[str]] = None) -> MetricBundle:
        """
        Compute all four metrics for the query (a, b).

        Args:
            a: Query source
            b: Query target
            labels: Relation set R (default: relations entailed between a and b)

        Returns:
            MetricBundle maximized over the label set and the refinements
        """
        labels = sorted(self.relations(a, b) if labels is None else set(labels))
        if not labels:
            raise ValueError(f"no relation holds between {a} and {b}")
        positive_depth = width = opec_max = 0
        bl = Fraction(0)
        exact = True
        for r in labels:
            atom = GroundAtom(r, (a, b))
            for answer_set, proof in self.positive_proofs(atom):
                positive_depth = max(positive_depth, len(proof))
                bl = max(bl, backtrack_load(proof, self.story.entities))
                opec_max = max(opec_max, opec(proof, self.graph(answer_set), a, b))
                exact = exact and proof.exact
            width = max(width, self.width(atom))
        contradictions = self.contradiction_proofs()
        depth = max([positive_depth] + [len(p) for _, p in contradictions])
        exact = exact and all(p.exact for _, p in contradictions)
        logger.debug(f"Metrics for ({a}, {b}) over {labels}: depth={depth} width={width} bl={bl} opec={opec_max}")
        return MetricBundle(
            depth=depth,
            width=width,
            bl=bl,
            opec=opec_max,
            positive_depth=positive_depth,
            refinements=self.result.refinement_count,
            consistent_refinements=len(self.result.ref_plus),
            exact=exact,
        )

    def is_hard_ambiguous(self, a: str, b: str, labels: Optional[Iterable[str]] = None) -> bool:
        """
        True when some entailed label needs an ambiguous fact resolved by constraints.

        A label r qualifies through an ambiguous fact F when a minimal proof of
        r(a, b) in a consistent refinement uses one of F's alternatives as a
        leaf, and for some admissible resolution of F no refinement with that
        resolution derives r(a, b), constraints ignored.
        """
        labels = sorted(self.relations(a, b) if labels is None else set(labels))
        explicit = set(self.story.facts)
        closures = self.result.closures()
        for r in labels:
            atom = GroundAtom(r, (a, b))
            if atom in explicit:
                continue
            for index, fact in enumerate(self.story.ambiguous):
                choices = set(fact.choices)
                used = any(
                    choices.intersection(proof.leaves()) for _, proof in self.positive_proofs(atom)
                )
                if not used:
                    continue
                derivable: Dict[Tuple[int, ...], bool] = {}
                for closure in closures:
                    selection = closure.refinement.selection[index]
                    derivable[selection] = derivable.get(selection, False) or atom in closure.atoms
                if not all(derivable.values()):
                    return True
        return False


def compute_metrics(
    world: Program,
    story: Story,
    a: str,
    b: str,
    labels: Optional[Iterable[str]] = None,
    reasoner: Optional[StoryReasoner] = None,
) -> MetricBundle:
    reasoner = reasoner or StoryReasoner(world, story)
    return reasoner.metrics(a, b, labels)


def proof_to_dot(story: Story, proof: Proof, a: str, b: str, facts: Optional[Sequence[GroundAtom]] = None) -> str:
    """DOT rendering of the refinement facts with the proof's leaves in bold and off-path edges colored."""
    atoms = sorted(facts) if facts is not None else sorted(story.facts)
    graph = StoryGraph(atoms, story.entities)
    return graph.to_dot(a, b, used=proof.leaves(), name=f"proof_{proof.goal.predicate}")
