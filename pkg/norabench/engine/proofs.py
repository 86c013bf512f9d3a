"""
Minimal proof extraction over refinement closures.

A proof is a set of ground rule applications, one per derived atom, whose
premises are refinement facts or atoms derived by other steps of the set.
The step count of the smallest such set is the reasoning depth of its goal.
"""

import heapq
import logging
from dataclasses import dataclass
from typing import (
    Callable,
    Dict,
    FrozenSet,
    Iterable,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Sequence,
    Set,
    Tuple,
)

from .. import config
from ..errors import GoalNotDerivableError
from ..models.program import GroundAtom
from .grounding import Closure, GroundRule

logger = logging.getLogger(__name__)

CONTRADICTION = GroundAtom("⊥", ())

SupportFn = Callable[[GroundAtom], Sequence[GroundRule]]


class ProofStep(NamedTuple):
    """One ground rule application."""
    rule_index: int
    derived: GroundAtom
    premises: Tuple[GroundAtom, ...]

    @classmethod
    def of(cls, rule: GroundRule) -> "ProofStep":
        return cls(rule.index, rule.head if rule.head is not None else CONTRADICTION, rule.body)

    def __str__(self) -> str:
        body = ", ".join(str(p) for p in self.premises)
        if self.derived == CONTRADICTION:
            return f":- {body}."
        return f"{self.derived} :- {body}."


@dataclass(frozen=True)
class Proof:
    goal: GroundAtom
    steps: Tuple[ProofStep, ...]
    refinement: int = 0
    exact: bool = True

    @property
    def key(self) -> FrozenSet[ProofStep]:
        """Order-independent identity used to count distinct derivations."""
        return frozenset(self.steps)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def derived(self) -> Set[GroundAtom]:
        return {s.derived for s in self.steps}

    def leaves(self) -> List[GroundAtom]:
        """Premises not derived inside the proof, in first-use order."""
        derived = self.derived
        seen: Dict[GroundAtom, None] = {}
        for step in self.steps:
            for premise in step.premises:
                if premise not in derived:
                    seen.setdefault(premise, None)
        return list(seen)

    def atoms(self) -> Set[GroundAtom]:
        found = {s.derived for s in self.steps if s.derived != CONTRADICTION}
        for step in self.steps:
            found.update(step.premises)
        return found


def _usable(rules: Iterable[GroundRule], atoms: FrozenSet[GroundAtom]) -> List[GroundRule]:
    return [r for r in rules if all(b in atoms for b in r.body)]


def _roots(closure: Closure, goal: GroundAtom, supports: SupportFn) -> List[GroundRule]:
    if goal == CONTRADICTION:
        if not closure.violations:
            raise GoalNotDerivableError(f"refinement {closure.origin} violates no constraint")
        return sorted(closure.violations, key=GroundRule.sort_key)
    if goal not in closure.atoms:
        raise GoalNotDerivableError(f"{goal} is not in the closure of refinement {closure.origin}")
    rules = [r for r in _usable(supports(goal), closure.atoms) if goal not in r.body]
    return sorted(rules, key=GroundRule.sort_key)


def _topological(steps: Iterable[ProofStep], layers: Mapping[GroundAtom, int]) -> Tuple[ProofStep, ...]:
    by_atom = {s.derived: s for s in steps}
    waiting = {
        atom: {p for p in step.premises if p in by_atom and p != atom}
        for atom, step in by_atom.items()
    }
    users: Dict[GroundAtom, List[GroundAtom]] = {a: [] for a in by_atom}
    for atom, needs in waiting.items():
        for need in needs:
            users[need].append(atom)

    def rank(atom: GroundAtom):
        return (atom == CONTRADICTION, layers.get(atom, 0), atom)

    ready = [rank(a) for a, needs in waiting.items() if not needs]
    heapq.heapify(ready)
    ordered: List[ProofStep] = []
    while ready:
        _, _, atom = heapq.heappop(ready)
        ordered.append(by_atom[atom])
        for user in users[atom]:
            waiting[user].discard(atom)
            if not waiting[user]:
                heapq.heappush(ready, rank(user))
    return tuple(ordered)


def greedy_proof(closure: Closure, goal: GroundAtom, supports: SupportFn) -> Proof:
    """
    Cheap proof following, for every atom, the support with the smallest tree cost.

    The result is a valid derivation and an upper bound on the minimal step count.
    """
    layers = closure.layers
    roots = _roots(closure, goal, supports)
    if goal != CONTRADICTION and layers.get(goal) == 0:
        return Proof(goal, (), closure.origin)

    cost: Dict[GroundAtom, int] = {}
    best: Dict[GroundAtom, GroundRule] = {}
    order = sorted((a for a, t in layers.items() if t > 0), key=lambda a: (layers[a], a))

    def tree_cost(rule: GroundRule) -> Optional[int]:
        total = 1
        for premise in rule.body:
            if layers.get(premise) == 0:
                continue
            if premise not in cost:
                return None
            total += cost[premise]
        return total

    changed = True
    while changed:
        changed = False
        for atom in order:
            for rule in _usable(supports(atom), closure.atoms):
                value = tree_cost(rule)
                if value is not None and value < cost.get(atom, value + 1):
                    cost[atom], best[atom] = value, rule
                    changed = True

    candidates = [(tree_cost(r), r.sort_key(), r) for r in roots]
    candidates = [c for c in candidates if c[0] is not None]
    if not candidates:
        raise GoalNotDerivableError(f"no support for {goal} in refinement {closure.origin}")
    _, _, root = min(candidates, key=lambda c: (c[0], c[1]))

    steps: Dict[GroundAtom, ProofStep] = {}
    stack = [ProofStep.of(root)]
    while stack:
        step = stack.pop()
        if step.derived in steps:
            continue
        steps[step.derived] = step
        for premise in step.premises:
            if layers.get(premise, 0) > 0 and premise not in steps:
                stack.append(ProofStep.of(best[premise]))
    return Proof(goal, _topological(steps.values(), layers), closure.origin)


class _SearchBudgetExceeded(Exception):
    pass


class _ProofSearch:
    """Depth-first search for a support assignment of at most `limit` steps."""

    def __init__(self, closure: Closure, supports: SupportFn, node_limit: int):
        self.closure = closure
        self.layers = closure.layers
        self.supports = supports
        self.node_limit = node_limit
        self.nodes = 0
        self._cache: Dict[GroundAtom, List[GroundRule]] = {}

    def candidates(self, atom: GroundAtom) -> List[GroundRule]:
        if atom not in self._cache:
            self._cache[atom] = sorted(
                (r for r in _usable(self.supports(atom), self.closure.atoms) if atom not in r.body),
                key=GroundRule.sort_key,
            )
        return self._cache[atom]

    def _is_leaf(self, atom: GroundAtom) -> bool:
        return self.layers.get(atom, 0) == 0

    def _reaches(self, start: GroundAtom, target: GroundAtom, chosen: Mapping[GroundAtom, GroundRule]) -> bool:
        stack, seen = [start], set()
        while stack:
            atom = stack.pop()
            if atom == target:
                return True
            if atom in seen or atom not in chosen:
                continue
            seen.add(atom)
            stack.extend(chosen[atom].body)
        return False

    def search(self, roots: Sequence[GroundRule], goal: GroundAtom, limit: int) -> Optional[Dict[GroundAtom, GroundRule]]:
        for root in roots:
            chosen = {goal: root}
            open_atoms = {p for p in root.body if not self._is_leaf(p)}
            found = self._extend(chosen, open_atoms, limit)
            if found is not None:
                return found
        return None

    def _extend(self, chosen: Dict[GroundAtom, GroundRule], open_atoms: Set[GroundAtom], limit: int):
        self.nodes += 1
        if self.nodes > self.node_limit:
            raise _SearchBudgetExceeded()
        if len(chosen) + len(open_atoms) > limit:
            return None
        if not open_atoms:
            return dict(chosen)
        atom = min(open_atoms)
        rest = open_atoms - {atom}
        for rule in self.candidates(atom):
            if any(self._reaches(p, atom, chosen) for p in rule.body):
                continue
            fresh = {p for p in rule.body if not self._is_leaf(p) and p not in chosen}
            chosen[atom] = rule
            found = self._extend(chosen, rest | fresh, limit)
            del chosen[atom]
            if found is not None:
                return found
        return None


def minimal_proof(
    closure: Closure,
    goal: GroundAtom,
    supports: SupportFn,
    node_limit: Optional[int] = None,
) -> Proof:
    """
    Smallest derivation of `goal` (or of a contradiction) in one refinement closure.

    Args:
        closure: Refinement closure with derivation layers
        goal: Atom of the closure, or CONTRADICTION for an inconsistent refinement
        supports: Ground definite rules deriving a given atom
        node_limit: Search budget (default PROOF_SEARCH_NODE_LIMIT)

    Returns:
        Proof with globally minimal step count; steps are topologically ordered
        with the goal step last. If the budget runs out, the best greedy proof
        is returned with exact=False.

    Raises:
        GoalNotDerivableError: goal outside the closure, or no violation for CONTRADICTION
    """
    node_limit = config.PROOF_SEARCH_NODE_LIMIT if node_limit is None else node_limit
    layers = closure.layers
    roots = _roots(closure, goal, supports)
    if goal != CONTRADICTION and layers.get(goal) == 0:
        return Proof(goal, (), closure.origin)

    upper = greedy_proof(closure, goal, supports)
    if goal == CONTRADICTION:
        lower = 1 + min(max((layers.get(b, 0) for b in r.body), default=0) for r in roots)
    else:
        lower = max(1, layers[goal])

    search = _ProofSearch(closure, supports, node_limit)
    try:
        for limit in range(lower, len(upper) + 1):
            found = search.search(roots, goal, limit)
            if found is not None:
                steps = [ProofStep.of(rule) for rule in found.values()]
                return Proof(goal, _topological(steps, layers), closure.origin)
    except _SearchBudgetExceeded:
        logger.warning(
            f"Proof search for {goal} in refinement {closure.origin} hit the node limit "
            f"({node_limit}); using a {len(upper)}-step greedy proof"
        )
        return Proof(goal, upper.steps, closure.origin, exact=False)
    return upper


def check_proof(
    steps: Sequence[ProofStep],
    facts: Iterable[GroundAtom],
    ground_rules: Optional[Iterable[GroundRule]] = None,
) -> bool:
    """
    Check that a derivation is well-founded.

    Args:
        steps: Steps in the order they are applied
        facts: Atoms available without derivation
        ground_rules: When given, every step must be one of these rules

    Returns:
        True when each premise is a fact or derived by an earlier step
    """
    known = set(facts)
    allowed = None
    if ground_rules is not None:
        allowed = {ProofStep.of(r) for r in ground_rules}
    for step in steps:
        if allowed is not None and step not in allowed:
            logger.debug(f"Step {step} is not an instance of a program rule")
            return False
        missing = [p for p in step.premises if p not in known]
        if missing:
            logger.debug(f"Step {step} uses underived premises {', '.join(map(str, missing))}")
            return False
        known.add(step.derived)
    return True


def format_trace(proof: Proof, facts: Optional[Iterable[GroundAtom]] = None) -> str:
    """Render a proof one step per line, listing each leaf fact before its first use."""
    derived = proof.derived
    facts = set(facts) if facts is not None else None
    lines: List[str] = []
    shown: Set[GroundAtom] = set()
    for number, step in enumerate(proof.steps, start=1):
        for premise in step.premises:
            if premise in derived or premise in shown:
                continue
            if facts is None or premise in facts:
                lines.append(f"Fact: {premise}")
                shown.add(premise)
        lines.append(f"{number}. {step}")
    if not proof.steps:
        lines.append(f"Fact: {proof.goal}")
    return "\n".join(lines)
