"""
Stitching: compose two instances by deleting a lemma fact from the base story,
renaming the donor so that its query supplies the lemma, and uniting the facts.
"""

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..engine.parser import parse_program
from ..errors import (
    InconsistentStitchError,
    LemmaMismatchError,
    NoraError,
    RenamingCollisionError,
    StitchError,
)
from ..models.program import GroundAtom, Program
from ..models.schemas import Lineage, LineageStep, ProblemInstance, SplitSpec
from ..models.story import EntityKind, Story
from ..tools.metrics import StoryReasoner
from .builder import filter_split

logger = logging.getLogger(__name__)

CANDIDATE_CAP = 50
_PREFIX = {"person": "p", "place": "loc"}


@dataclass(frozen=True)
class StitchPlan:
    """Base instance, lemma fact of its story, donor instance and donor renaming."""
    base: ProblemInstance
    donor: Optional[ProblemInstance] = None
    lemma: Optional[GroundAtom] = None
    renaming: Dict[str, str] = field(default_factory=dict)


def parse_lemma(text: str) -> GroundAtom:
    program = parse_program(text if text.rstrip().endswith(".") else text + ".")
    facts = program.facts()
    if len(facts) != 1 or len(program.rules) != 1:
        raise LemmaMismatchError(f"lemma must be a single ground fact: {text!r}")
    return facts[0]


def default_renaming(base: Story, donor: ProblemInstance, lemma: GroundAtom, tag: str = "d") -> Dict[str, str]:
    """Align the donor query with the lemma arguments and give every other donor entity a fresh name."""
    renaming = {donor.source: lemma.args[0], donor.target: lemma.args[1]}
    taken = set(base.entities) | set(renaming.values())
    for name, kind in donor.story.entities.items():
        if kind == "reserved" or name in renaming:
            continue
        fresh, n = f"{name}_{tag}", 1
        while fresh in taken:
            n += 1
            fresh = f"{name}_{tag}{n}"
        renaming[name] = fresh
        taken.add(fresh)
    return renaming


def _check_plan(plan: StitchPlan) -> None:
    base, donor, lemma = plan.base, plan.donor, plan.lemma
    if lemma is None or lemma.arity != 2:
        raise LemmaMismatchError("stitching needs a binary lemma fact")
    if lemma.predicate not in donor.labels:
        raise LemmaMismatchError(
            f"donor {donor.instance_id} does not entail '{lemma.predicate}' between its query entities"
        )
    renaming = plan.renaming
    if (renaming.get(donor.source), renaming.get(donor.target)) != lemma.args:
        raise LemmaMismatchError(
            f"renamed donor query ({renaming.get(donor.source)}, {renaming.get(donor.target)}) "
            f"does not match lemma {lemma}"
        )

    donor_entities = donor.story.entities
    for name, kind in donor_entities.items():
        if kind != "reserved" and name not in renaming:
            raise RenamingCollisionError(f"renaming does not cover donor entity '{name}'")
    values = list(renaming.values())
    if len(set(values)) != len(values):
        raise RenamingCollisionError("renaming is not injective")
    aligned = {donor.source, donor.target}
    for name, new in renaming.items():
        if name not in donor_entities:
            raise RenamingCollisionError(f"'{name}' is not a donor entity")
        if new not in base.story.entities:
            continue
        if name not in aligned:
            raise RenamingCollisionError(f"donor entity '{name}' would merge with base entity '{new}'")
        if base.story.entities[new] != donor_entities[name]:
            raise RenamingCollisionError(
                f"'{name}' is a {donor_entities[name]} but '{new}' is a {base.story.entities[new]}"
            )


def canonical_renaming(story: Story, source: str, target: str) -> Dict[str, str]:
    """Fresh names: query source, query target, then entities in order of first appearance."""
    order: Dict[str, None] = {source: None, target: None}
    for atom in story.all_atoms():
        for arg in atom.args:
            order.setdefault(arg, None)
    for name in story.entities:
        order.setdefault(name, None)
    counters = {"person": 0, "place": 0}
    renaming = {}
    for name in order:
        kind = story.entities[name]
        if kind == "reserved":
            continue
        renaming[name] = f"{_PREFIX[kind]}{counters[kind]}"
        counters[kind] += 1
    return renaming


def _lineage_id(lineage: Lineage) -> str:
    payload = json.dumps(lineage.model_dump(mode="json"), sort_keys=True)
    return "st_" + hashlib.sha1(payload.encode("utf-8")).hexdigest()[:16]


def _unite(plan: StitchPlan) -> Story:
    base = plan.base.story
    if plan.donor is None:
        return base
    donor = plan.donor.story.rename(plan.renaming)
    facts = [f for f in base.facts if f != plan.lemma]
    facts.extend(f for f in donor.facts if f not in facts)
    entities: Dict[str, EntityKind] = dict(base.entities)
    for name, kind in donor.entities.items():
        entities.setdefault(name, kind)
    try:
        return Story(
            story_id=base.story_id,
            facts=tuple(facts),
            ambiguous=base.ambiguous + donor.ambiguous,
            entities=entities,
        )
    except ValueError as e:
        raise RenamingCollisionError(f"united story is invalid: {e}") from e


def stitch(
    world: Program,
    plan: StitchPlan,
    final_renaming: Optional[Dict[str, str]] = None,
    allow_ambiguous: bool = False,
) -> ProblemInstance:
    """
    Stitch the donor into the base at the lemma and recompute everything.

    Args:
        world: World rules
        plan: Base, donor, lemma and donor renaming; a plan without donor only renames the base
        final_renaming: Names applied to the united story (default canonical_renaming)
        allow_ambiguous: Accept stories with ambiguous facts

    Returns:
        Stitched instance with labels and metrics recomputed from the united story

    Raises:
        LemmaMismatchError: the donor does not supply the lemma
        RenamingCollisionError: the renaming merges entities outside the alignment points
        InconsistentStitchError: the united story has no answer set or lost a base label
    """
    base = plan.base
    if not allow_ambiguous:
        for part in (base, plan.donor):
            if part is not None and part.story.is_ambiguous:
                raise StitchError(f"{part.instance_id} has ambiguous facts")
    if plan.donor is not None:
        _check_plan(plan)

    united = _unite(plan)
    renaming = final_renaming or canonical_renaming(united, base.source, base.target)
    names = [renaming.get(n, n) for n in united.non_reserved()]
    if len(set(names)) != len(names) or any(united.kind_of(n) == "reserved" for n in renaming.values()):
        raise RenamingCollisionError("final renaming is not injective on story entities")

    previous = base.lineage
    step = LineageStep(
        base_id=base.instance_id,
        donor_id=plan.donor.instance_id if plan.donor is not None else None,
        lemma=f"{plan.lemma}." if plan.lemma is not None else None,
        renaming=dict(plan.renaming),
    )
    lineage = Lineage(
        root_id=previous.root_id if previous else base.instance_id,
        steps=(previous.steps if previous else []) + [step],
        final_renaming=dict(renaming),
    )
    instance_id = _lineage_id(lineage)
    story = united.rename(renaming, story_id=instance_id)
    source, target = renaming.get(base.source, base.source), renaming.get(base.target, base.target)

    reasoner = StoryReasoner(world, story)
    if not reasoner.consistent:
        raise InconsistentStitchError(f"stitching {step.donor_id} into {base.instance_id} is inconsistent")
    labels = reasoner.relations(source, target)
    lost = set(base.labels) - labels
    if lost:
        raise InconsistentStitchError(
            f"stitched story no longer entails {', '.join(sorted(lost))} between {base.source} and {base.target}"
        )
    hard = reasoner.is_hard_ambiguous(source, target, labels) if story.is_ambiguous else None
    stitched = ProblemInstance(
        instance_id=instance_id,
        story=story,
        source=source,
        target=target,
        labels=tuple(labels),
        metrics=reasoner.metrics(source, target, labels),
        hard_ambiguous=hard,
        lineage=lineage,
    )
    logger.debug(
        f"Stitched {step.donor_id} into {base.instance_id} at {plan.lemma}: "
        f"depth={stitched.metrics.depth} opec={stitched.metrics.opec}"
    )
    return stitched


def lemma_candidates(world: Program, instance: ProblemInstance) -> List[GroundAtom]:
    """Binary story facts used as leaves by a minimal proof of some label, in first-use order."""
    reasoner = StoryReasoner(world, instance.story)
    entities = instance.story.entities
    facts = set(instance.story.facts)
    found: Dict[GroundAtom, None] = {}
    for label in instance.labels:
        atom = GroundAtom(label, (instance.source, instance.target))
        for _, proof in reasoner.positive_proofs(atom):
            for leaf in proof.leaves():
                if leaf in facts and leaf.arity == 2 and all(entities[a] != "reserved" for a in leaf.args):
                    found.setdefault(leaf, None)
    return list(found)


def _donor_index(pool: Sequence[ProblemInstance], allow_ambiguous: bool) -> Dict[str, List[ProblemInstance]]:
    index: Dict[str, List[ProblemInstance]] = {}
    for instance in pool:
        if instance.story.is_ambiguous and not allow_ambiguous:
            continue
        for label in instance.labels:
            index.setdefault(label, []).append(instance)
    return index


def _kinds_match(base: Story, lemma: GroundAtom, donor: ProblemInstance) -> bool:
    return (
        donor.story.entities[donor.source] == base.entities[lemma.args[0]]
        and donor.story.entities[donor.target] == base.entities[lemma.args[1]]
    )


def _expand_one(payload) -> Tuple[Optional[ProblemInstance], int]:
    world, base, donors, spec, rounds, sequence, candidate_cap, allow_ambiguous = payload
    rng = np.random.default_rng(sequence)
    current = base
    failures = 0
    for round_number in range(1, rounds + 1):
        candidates = [
            (lemma, donor)
            for lemma in lemma_candidates(world, current)
            for donor in donors.get(lemma.predicate, [])
            if donor.instance_id != current.instance_id and _kinds_match(current.story, lemma, donor)
        ]
        if not candidates:
            break
        order = rng.permutation(len(candidates))[:candidate_cap]
        stitched = None
        for position in order:
            lemma, donor = candidates[int(position)]
            plan = StitchPlan(
                base=current,
                donor=donor,
                lemma=lemma,
                renaming=default_renaming(current.story, donor, lemma, tag=f"r{round_number}_"),
            )
            try:
                stitched = stitch(world, plan, allow_ambiguous=allow_ambiguous)
                break
            except NoraError as e:
                failures += 1
                logger.debug(f"Stitch of {donor.instance_id} into {current.instance_id} failed: {e}")
        if stitched is None:
            break
        current = stitched
        if spec.admits(current):
            return current, failures
    return None, failures


def recursive_expand(
    world: Program,
    pool: Sequence[ProblemInstance],
    spec: SplitSpec,
    rounds: int,
    seed: int = 0,
    candidate_cap: int = CANDIDATE_CAP,
    allow_ambiguous: bool = False,
    jobs: int = 1,
) -> List[ProblemInstance]:
    """
    Grow harder instances by repeatedly stitching pool instances into each other.

    Every pool instance is used as a base in turn; each round stitches one
    compatible donor at a lemma of the current proof, and expansion stops as
    soon as the result meets `spec`.

    Args:
        world: World rules
        pool: Instances to combine
        spec: Bounds the outputs must meet
        rounds: Maximum stitches per base
        seed: Root seed; each base draws from its own child sequence
        candidate_cap: (lemma, donor) pairs tried per round
        allow_ambiguous: Accept ambiguous stories as bases and donors
        jobs: Worker processes

    Returns:
        Stitched instances meeting `spec`, ordered by base position in the pool
    """
    if rounds <= 0:
        return filter_split(pool, spec)
    donors = _donor_index(pool, allow_ambiguous)
    bases = [i for i in pool if allow_ambiguous or not i.story.is_ambiguous]
    sequences = np.random.SeedSequence(seed).spawn(len(bases))
    payloads = [
        (world, base, donors, spec, rounds, s, candidate_cap, allow_ambiguous)
        for base, s in zip(bases, sequences)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            outcomes = list(executor.map(_expand_one, payloads))
    else:
        outcomes = [_expand_one(p) for p in payloads]

    results, seen = [], set()
    for instance, _ in outcomes:
        if instance is not None and instance.instance_id not in seen:
            seen.add(instance.instance_id)
            results.append(instance)
    failures = sum(f for _, f in outcomes)
    logger.info(
        f"Expanded {len(bases)} bases into {len(results)} instances meeting {spec.name} "
        f"({failures} failed stitches)"
    )
    return results


def replay_lineage(world: Program, pool: Mapping[str, ProblemInstance], lineage: Lineage) -> ProblemInstance:
    """
    Rebuild a stitched instance from its recorded lineage.

    Raises:
        StitchError: a component is missing or an intermediate id does not match the record
    """
    if lineage.root_id not in pool:
        raise StitchError(f"root instance {lineage.root_id} is not in the pool")
    current = pool[lineage.root_id]
    if not lineage.steps:
        return current
    for number, step in enumerate(lineage.steps, start=1):
        if step.base_id != current.instance_id:
            raise StitchError(f"step {number} expects base {step.base_id}, replay produced {current.instance_id}")
        donor = None
        if step.donor_id is not None:
            if step.donor_id not in pool:
                raise StitchError(f"donor {step.donor_id} is not in the pool")
            donor = pool[step.donor_id]
        plan = StitchPlan(
            base=current,
            donor=donor,
            lemma=parse_lemma(step.lemma) if step.lemma else None,
            renaming=dict(step.renaming),
        )
        last = number == len(lineage.steps)
        current = stitch(
            world,
            plan,
            final_renaming=dict(lineage.final_renaming) if last else None,
            allow_ambiguous=True,
        )
    return current


def pool_by_id(instances: Iterable[ProblemInstance]) -> Dict[str, ProblemInstance]:
    return {instance.instance_id: instance for instance in instances}
