"""
Grounding, forward chaining and answer-set computation for the rule fragment.

Answer sets of a story are the closures of its consistent refinements: every
ambiguous fact is resolved in each admissible way, the resulting unambiguous
story is closed under the definite rules, and refinements whose closure
satisfies a constraint body are discarded.
"""

import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import (
    Dict,
    FrozenSet,
    Iterable,
    Iterator,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Sequence,
    Set,
    Tuple,
)

from .. import config
from ..errors import (
    InconsistentStoryError,
    RefinementOverflowError,
    StoryError,
    UnknownPredicateError,
)
from ..models.program import Atom, GroundAtom, Program, Rule
from ..models.story import AmbiguousFact, Story, infer_entities

logger = logging.getLogger(__name__)

Binding = Dict[str, str]
_EMPTY: FrozenSet = frozenset()


class GroundRule(NamedTuple):
    """Instantiated definite rule (head set) or constraint (head None)."""
    index: int
    head: Optional[GroundAtom]
    body: Tuple[GroundAtom, ...]

    @property
    def is_constraint(self) -> bool:
        return self.head is None

    def sort_key(self):
        return (self.index, self.body, self.head or ("", ()))

    def __str__(self) -> str:
        body = ", ".join(str(a) for a in self.body)
        if self.head is None:
            return f":- {body}."
        return f"{self.head} :- {body}."


class _Pattern(NamedTuple):
    predicate: str
    args: Tuple[str, ...]
    variables: Tuple[bool, ...]

    @classmethod
    def of(cls, atom: Atom) -> "_Pattern":
        return cls(
            atom.predicate,
            tuple(t.name for t in atom.args),
            tuple(t.is_variable for t in atom.args),
        )

    def match(self, values: Tuple[str, ...], binding: Binding) -> Optional[Binding]:
        extended = None
        for value, arg, is_var in zip(values, self.args, self.variables):
            if is_var:
                current = binding.get(arg) if extended is None else extended.get(arg)
                if current is None:
                    if extended is None:
                        extended = dict(binding)
                    extended[arg] = value
                elif current != value:
                    return None
            elif arg != value:
                return None
        return binding if extended is None else extended

    def substitute(self, binding: Binding) -> GroundAtom:
        return GroundAtom(
            self.predicate,
            tuple(binding[a] if v else a for a, v in zip(self.args, self.variables)),
        )


@dataclass(frozen=True)
class _CompiledRule:
    index: int
    head: Optional[_Pattern]
    body: Tuple[_Pattern, ...]
    inequalities: Tuple[Tuple[Tuple[str, bool], Tuple[str, bool]], ...]
    unsafe: Tuple[str, ...]

    @classmethod
    def of(cls, index: int, rule: Rule) -> "_CompiledRule":
        return cls(
            index=index,
            head=_Pattern.of(rule.head) if rule.head is not None else None,
            body=tuple(_Pattern.of(a) for a in rule.body_atoms),
            inequalities=tuple(
                ((q.left.name, q.left.is_variable), (q.right.name, q.right.is_variable))
                for q in rule.inequalities
            ),
            unsafe=tuple(rule.unsafe_variables()),
        )

    def instances(self, binding: Binding, universe: Sequence[str]) -> Iterator[GroundRule]:
        """Complete a body binding over the universe and emit ground rules passing `!=`."""
        for values in itertools.product(universe, repeat=len(self.unsafe)):
            full = dict(binding, **dict(zip(self.unsafe, values))) if self.unsafe else binding
            if any(
                (full[l] if lv else l) == (full[r] if rv else r)
                for (l, lv), (r, rv) in self.inequalities
            ):
                continue
            yield GroundRule(
                self.index,
                self.head.substitute(full) if self.head is not None else None,
                tuple(p.substitute(full) for p in self.body),
            )


class AtomIndex:
    """Ground atoms indexed by predicate and by (predicate, position, value)."""

    def __init__(self, atoms: Iterable[GroundAtom] = ()):
        self.atoms: Set[GroundAtom] = set()
        self.by_predicate: Dict[str, Set[Tuple[str, ...]]] = defaultdict(set)
        self.by_position: Dict[Tuple[str, int, str], Set[Tuple[str, ...]]] = defaultdict(set)
        for atom in atoms:
            self.add(atom)

    def __contains__(self, atom) -> bool:
        return atom in self.atoms

    def __len__(self) -> int:
        return len(self.atoms)

    def add(self, atom: GroundAtom) -> bool:
        if atom in self.atoms:
            return False
        self.atoms.add(atom)
        self.by_predicate[atom.predicate].add(atom.args)
        for position, value in enumerate(atom.args):
            self.by_position[(atom.predicate, position, value)].add(atom.args)
        return True

    def discard(self, atom: GroundAtom):
        if atom not in self.atoms:
            return
        self.atoms.discard(atom)
        self.by_predicate[atom.predicate].discard(atom.args)
        for position, value in enumerate(atom.args):
            self.by_position[(atom.predicate, position, value)].discard(atom.args)

    def candidates(self, pattern: _Pattern, binding: Binding):
        best = None
        for position, (arg, is_var) in enumerate(zip(pattern.args, pattern.variables)):
            value = binding.get(arg) if is_var else arg
            if value is None:
                continue
            bucket = self.by_position.get((pattern.predicate, position, value), _EMPTY)
            if best is None or len(bucket) < len(best):
                best = bucket
        if best is None:
            best = self.by_predicate.get(pattern.predicate, _EMPTY)
        return best


def _join(patterns: Sequence[_Pattern], index: AtomIndex, binding: Binding) -> Iterator[Binding]:
    if not patterns:
        yield binding
        return
    chosen, bucket = 0, None
    for i, pattern in enumerate(patterns):
        candidates = index.candidates(pattern, binding)
        if bucket is None or len(candidates) < len(bucket):
            chosen, bucket = i, candidates
            if not candidates:
                return
    pattern = patterns[chosen]
    rest = patterns[:chosen] + patterns[chosen + 1:]
    for values in bucket:
        extended = pattern.match(values, binding)
        if extended is not None:
            yield from _join(rest, index, extended)


class SemiNaiveEvaluator:
    """Semi-naive bottom-up evaluation of a program's definite rules and constraints."""

    def __init__(self, program: Program, universe: Iterable[str] = ()):
        self.program = program
        self.universe = tuple(sorted(set(universe) | program.constants))
        self.rules = [_CompiledRule.of(i, r) for i, r in program.rules_of_kind("definite")]
        self.constraints = [_CompiledRule.of(i, r) for i, r in program.rules_of_kind("constraint")]
        self.facts = program.facts()

    def _fire(self, rule: _CompiledRule, delta: Dict[str, List[Tuple[str, ...]]], index: AtomIndex):
        for position, pattern in enumerate(rule.body):
            for values in delta.get(pattern.predicate, ()):
                binding = pattern.match(values, {})
                if binding is None:
                    continue
                rest = rule.body[:position] + rule.body[position + 1:]
                for full in _join(rest, index, binding):
                    yield from rule.instances(full, self.universe)

    def run(
        self,
        index: AtomIndex,
        delta_atoms: Iterable[GroundAtom],
        layers: Optional[Dict[GroundAtom, int]] = None,
        fired: Optional[Set[GroundRule]] = None,
    ) -> List[GroundAtom]:
        """
        Close `index` under the definite rules, starting from atoms just added to it.

        Args:
            index: Atom index already containing `delta_atoms`
            delta_atoms: Atoms new since the last fixpoint
            layers: Optional map updated with the round each new atom appeared in
            fired: Optional set collecting every ground rule instance found

        Returns:
            Atoms added to the index, in round order
        """
        added: List[GroundAtom] = []
        delta = list(delta_atoms)
        start = max(layers.values(), default=0) if layers else 0
        round_no = start
        while delta:
            round_no += 1
            by_predicate: Dict[str, List[Tuple[str, ...]]] = defaultdict(list)
            for atom in delta:
                by_predicate[atom.predicate].append(atom.args)
            fresh: Dict[GroundAtom, None] = {}
            for rule in self.rules:
                for ground_rule in self._fire(rule, by_predicate, index):
                    if fired is not None:
                        fired.add(ground_rule)
                    if ground_rule.head not in index:
                        fresh.setdefault(ground_rule.head, None)
            for atom in fresh:
                index.add(atom)
                if layers is not None:
                    layers[atom] = round_no
            added.extend(fresh)
            delta = list(fresh)
        return added

    def closure(self, facts: Iterable[GroundAtom], fired: Optional[Set[GroundRule]] = None) -> AtomIndex:
        index = AtomIndex()
        start = [a for a in itertools.chain(facts, self.facts) if index.add(a)]
        self.run(index, start, fired=fired)
        return index

    def violations(self, index: AtomIndex) -> List[GroundRule]:
        found: Set[GroundRule] = set()
        for rule in self.constraints:
            for binding in _join(rule.body, index, {}):
                found.update(rule.instances(binding, self.universe))
        return sorted(found, key=GroundRule.sort_key)

    def new_violations(self, index: AtomIndex, delta_atoms: Iterable[GroundAtom]) -> List[GroundRule]:
        """Violated constraint instances that use at least one of `delta_atoms`."""
        by_predicate: Dict[str, List[Tuple[str, ...]]] = defaultdict(list)
        for atom in delta_atoms:
            by_predicate[atom.predicate].append(atom.args)
        found: Set[GroundRule] = set()
        for rule in self.constraints:
            found.update(self._fire(rule, by_predicate, index))
        return sorted(found, key=GroundRule.sort_key)


@dataclass(frozen=True)
class Refinement:
    """One admissible resolution of every ambiguous fact of a story."""
    index: int
    story_id: str
    selection: Tuple[Tuple[int, ...], ...]
    facts: FrozenSet[GroundAtom]
    chosen: Tuple[GroundAtom, ...] = ()


@dataclass(frozen=True, eq=False)
class Closure:
    """Deductive closure of one refinement."""
    refinement: Refinement
    atoms: FrozenSet[GroundAtom]
    layers: Mapping[GroundAtom, int]
    violations: Tuple[GroundRule, ...] = ()

    @property
    def origin(self) -> int:
        return self.refinement.index

    @property
    def consistent(self) -> bool:
        return not self.violations


class AnswerSet(Closure):
    """Closure of a consistent refinement."""


@dataclass
class EntailmentResult:
    """Answer sets of a story, split by refinement consistency."""
    story: Story
    ground_rules: Tuple[GroundRule, ...]
    ref_plus: List[AnswerSet]
    ref_minus: List[Refinement]
    contradictions: List[Closure]
    entailed: FrozenSet[GroundAtom]
    common: FrozenSet[GroundAtom]
    program_facts: FrozenSet[GroundAtom]
    _pairs: Optional[Dict[Tuple[str, ...], Set[str]]] = field(default=None, repr=False)
    _supports: Optional[Dict[GroundAtom, List[GroundRule]]] = field(default=None, repr=False)

    @property
    def consistent(self) -> bool:
        return bool(self.ref_plus)

    @property
    def refinement_count(self) -> int:
        return len(self.ref_plus) + len(self.ref_minus)

    def closures(self) -> List[Closure]:
        """All refinement closures ordered by refinement index."""
        return sorted([*self.ref_plus, *self.contradictions], key=lambda c: c.origin)

    def relations(self, x: str, y: str) -> FrozenSet[str]:
        """R for the pair (x, y): predicates holding in every answer set."""
        if self._pairs is None:
            pairs: Dict[Tuple[str, ...], Set[str]] = defaultdict(set)
            for atom in self.common:
                if atom.arity == 2:
                    pairs[atom.args].add(atom.predicate)
            self._pairs = pairs
        return frozenset(self._pairs.get((x, y), ()))

    def supports(self, atom: GroundAtom) -> List[GroundRule]:
        """Ground definite rules deriving `atom`, ordered by (rule index, body)."""
        if self._supports is None:
            table: Dict[GroundAtom, List[GroundRule]] = defaultdict(list)
            for rule in self.ground_rules:
                if rule.head is not None:
                    table[rule.head].append(rule)
            for rules in table.values():
                rules.sort(key=GroundRule.sort_key)
            self._supports = table
        return self._supports.get(atom, [])

    @property
    def constraints(self) -> List[GroundRule]:
        return [r for r in self.ground_rules if r.head is None]


def universe_of(program: Program, story: Story) -> List[str]:
    return sorted(set(story.entities) | program.constants)


def check_body_predicates(program: Program, story: Story):
    """Raise UnknownPredicateError for a body predicate that no rule, declaration or story fact supplies."""
    known = set(program.produced_predicates())
    known.update(name for name, _ in program.declared_inputs)
    known.update(atom.predicate for atom in story.all_atoms())
    for index, rule in program.rules_of_kind("definite") + program.rules_of_kind("constraint"):
        for atom in rule.body_atoms:
            if atom.predicate not in known:
                raise UnknownPredicateError(
                    f"unknown predicate '{atom.predicate}' in body of rule {index}: no rule derives it, "
                    f"it is not declared with #defined and story {story.story_id} has no such fact"
                )


def ground(program: Program, story: Story, prune: bool = True) -> List[GroundRule]:
    """
    Instantiate the definite rules and constraints of a program over a story's constants.

    Args:
        program: World rules
        story: Story providing the constant universe (and, when pruning, the facts)
        prune: Keep only instances whose body atoms are derivable from the story
            facts together with every ambiguous alternative

    Returns:
        Ground rules ordered by (rule index, body, head)

    Raises:
        UnknownPredicateError: a body predicate is not derived by any rule, not
            declared with #defined and absent from the story
    """
    check_body_predicates(program, story)

    universe = universe_of(program, story)
    if not prune:
        rules: List[GroundRule] = []
        for index, rule in program.rules_of_kind("definite") + program.rules_of_kind("constraint"):
            compiled = _CompiledRule.of(index, rule)
            names = rule.variables()
            bound = [n for n in names if n not in compiled.unsafe]
            for values in itertools.product(universe, repeat=len(bound)):
                rules.extend(compiled.instances(dict(zip(bound, values)), universe))
        return sorted(rules, key=GroundRule.sort_key)

    evaluator = SemiNaiveEvaluator(program, universe)
    fired: Set[GroundRule] = set()
    superset = evaluator.closure(story.all_atoms(), fired=fired)
    for rule in evaluator.constraints:
        for binding in _join(rule.body, superset, {}):
            fired.update(rule.instances(binding, evaluator.universe))
    logger.debug(f"Grounded story {story.story_id}: {len(fired)} rules over {len(superset)} atoms")
    return sorted(fired, key=GroundRule.sort_key)


def _premise_table(rules: Iterable[GroundRule]) -> Dict[GroundAtom, List[GroundRule]]:
    table: Dict[GroundAtom, List[GroundRule]] = defaultdict(list)
    for rule in rules:
        if rule.head is None:
            continue
        for premise in set(rule.body):
            table[premise].append(rule)
    return table


def _propagate(
    facts: Iterable[GroundAtom], by_premise: Mapping[GroundAtom, List[GroundRule]]
) -> Dict[GroundAtom, int]:
    layers: Dict[GroundAtom, int] = {atom: 0 for atom in facts}
    delta = list(layers)
    round_no = 0
    while delta:
        round_no += 1
        pending: Dict[GroundAtom, None] = {}
        for atom in delta:
            for rule in by_premise.get(atom, ()):
                head = rule.head
                if head in layers or head in pending:
                    continue
                if all(p in layers for p in rule.body):
                    pending[head] = None
        for atom in pending:
            layers[atom] = round_no
        delta = list(pending)
    return layers


def forward_chain(
    facts: Iterable[GroundAtom], rules: Iterable[GroundRule]
) -> Tuple[FrozenSet[GroundAtom], Dict[GroundAtom, int]]:
    """
    Least fixpoint of ground definite rules over a set of facts.

    Returns:
        (closure, layers) where layers maps each atom to the round it first appeared in
    """
    layers = _propagate(facts, _premise_table(rules))
    return frozenset(layers), layers


def check_constraints(closure: Iterable[GroundAtom], rules: Iterable[GroundRule]) -> List[GroundRule]:
    """Ground constraints whose whole body holds in the closure."""
    atoms = closure if isinstance(closure, (set, frozenset)) else set(closure)
    return [r for r in rules if r.head is None and all(b in atoms for b in r.body)]


def admissible_selections(fact: AmbiguousFact) -> List[Tuple[int, ...]]:
    """Subsets of choice indices allowed by the bounds, in lexicographic order."""
    indices = range(len(fact.choices))
    selections = [
        combo
        for size in range(max(fact.lower, 1), fact.upper + 1)
        for combo in itertools.combinations(indices, size)
    ]
    return sorted(selections)


def count_refinements(story: Story) -> int:
    count = 1
    for fact in story.ambiguous:
        count *= len(admissible_selections(fact))
    return count


def enumerate_refinements(story: Story, cap: Optional[int] = None) -> List[Refinement]:
    """
    Resolve every ambiguous fact in each admissible way.

    Args:
        story: Story to refine
        cap: Maximum number of refinements (default REFINEMENT_CAP)

    Returns:
        Refinements in lexicographic order of (fact index, choice index)

    Raises:
        RefinementOverflowError: more refinements than the cap
    """
    cap = config.REFINEMENT_CAP if cap is None else cap
    count = count_refinements(story)
    if count > cap:
        raise RefinementOverflowError(count, cap)
    per_fact = [admissible_selections(f) for f in story.ambiguous]
    plain = frozenset(story.facts)
    refinements = []
    for index, selection in enumerate(itertools.product(*per_fact)):
        chosen = tuple(
            fact.choices[i] for fact, picks in zip(story.ambiguous, selection) for i in picks
        )
        refinements.append(
            Refinement(
                index=index,
                story_id=story.story_id,
                selection=tuple(selection),
                facts=plain | frozenset(chosen),
                chosen=chosen,
            )
        )
    return refinements


def answer_sets(program: Program, story: Story, cap: Optional[int] = None) -> EntailmentResult:
    """
    Compute the answer sets of a story under a program.

    Returns:
        EntailmentResult with one AnswerSet per consistent refinement and the
        inconsistent refinements kept separately
    """
    refinements = enumerate_refinements(story, cap)
    rules = tuple(ground(program, story))
    by_premise = _premise_table(rules)
    constraints = [r for r in rules if r.head is None]
    program_facts = frozenset(program.facts())

    ref_plus: List[AnswerSet] = []
    ref_minus: List[Refinement] = []
    contradictions: List[Closure] = []
    for refinement in refinements:
        layers = _propagate(refinement.facts | program_facts, by_premise)
        atoms = frozenset(layers)
        violated = tuple(check_constraints(atoms, constraints))
        if violated:
            ref_minus.append(refinement)
            contradictions.append(Closure(refinement, atoms, layers, violated))
        else:
            ref_plus.append(AnswerSet(refinement, atoms, layers))

    if ref_plus:
        common = frozenset.intersection(*(a.atoms for a in ref_plus))
    else:
        common = frozenset()
    entailed = common - frozenset(story.facts) - program_facts
    logger.debug(
        f"Story {story.story_id}: {len(ref_plus)} answer sets, "
        f"{len(ref_minus)} inconsistent refinements, {len(entailed)} entailed atoms"
    )
    return EntailmentResult(
        story=story,
        ground_rules=rules,
        ref_plus=ref_plus,
        ref_minus=ref_minus,
        contradictions=contradictions,
        entailed=entailed,
        common=common,
        program_facts=program_facts,
    )


def entailed_relations(
    program: Program,
    story: Story,
    x: str,
    y: str,
    result: Optional[EntailmentResult] = None,
) -> FrozenSet[str]:
    """
    Relations holding between x and y in every answer set (explicit facts included).

    Raises:
        StoryError: x or y is not a story entity
        InconsistentStoryError: the story has no answer set
    """
    for name in (x, y):
        if name not in story.entities:
            raise StoryError(f"'{name}' is not an entity of story {story.story_id}")
    result = result or answer_sets(program, story)
    if not result.consistent:
        raise InconsistentStoryError(f"story {story.story_id} has no answer set")
    return result.relations(x, y)


def is_consistent(program: Program, story: Story, cap: Optional[int] = None) -> bool:
    """True when at least one refinement is consistent; stops at the first one."""
    check_body_predicates(program, story)
    evaluator = SemiNaiveEvaluator(program, story.entities)
    for refinement in enumerate_refinements(story, cap):
        if not evaluator.violations(evaluator.closure(refinement.facts)):
            return True
    return False


def story_from_program(
    story_program: Program,
    world: Program,
    place_predicates: Optional[Iterable[str]] = None,
    story_id: str = "story",
) -> Story:
    """Build a Story from a parsed story file (facts and cardinality facts)."""
    facts = [r.head.to_ground() for r in story_program.rules if r.kind == "fact"]
    ambiguous = [
        AmbiguousFact(
            choices=tuple(c.to_ground() for c in r.choices), lower=r.bounds[0], upper=r.bounds[1]
        )
        for r in story_program.rules
        if r.kind == "cardinality"
    ]
    others = [r for r in story_program.rules if r.kind not in ("fact", "cardinality")]
    if others:
        raise StoryError(f"story files may only contain facts, found: {others[0]}")
    places = config.PLACE_PREDICATES if place_predicates is None else tuple(place_predicates)
    atoms = facts + [c for a in ambiguous for c in a.choices]
    try:
        return Story(
            story_id=story_id,
            facts=tuple(facts),
            ambiguous=tuple(ambiguous),
            entities=infer_entities(atoms, world.constants, places),
        )
    except ValueError as e:
        raise StoryError(str(e)) from e
