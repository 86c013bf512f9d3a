"""
Random story generation under fixed world rules, and harvesting of problem
instances from the entailed atoms of the generated stories.
"""

import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from .. import config
from ..engine.grounding import EntailmentResult, SemiNaiveEvaluator, answer_sets, is_consistent
from ..errors import ConfigError, GenerationError, NoraError
from ..models.program import GroundAtom, Program
from ..models.schemas import GenConfig, GenRecord, ProblemInstance, Provenance
from ..models.story import AmbiguousFact, EntityKind, Story
from ..tools.metrics import StoryReasoner

logger = logging.getLogger(__name__)


def load_gen_config(path: Optional[Path] = None) -> GenConfig:
    """
    Load a generation config from a KEY=value file.

    Args:
        path: Config file; falls back to <CONFIG_DIR>/generation.env, then defaults

    Returns:
        Validated GenConfig
    """
    path = path or config.default_generation_config_path()
    if path is None:
        return GenConfig()
    try:
        return GenConfig.from_key_values(config.read_key_values(path))
    except (ValidationError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"Invalid generation config {path}: {e}") from e


@dataclass(frozen=True)
class WorldVocabulary:
    """Binary predicates of a world grouped by the entity kinds they connect."""
    person: Tuple[str, ...]
    place: Tuple[str, ...]
    properties: Dict[str, Tuple[str, ...]]
    genders: Tuple[str, ...]
    gender_predicate: Optional[str]

    @classmethod
    def of(
        cls,
        world: Program,
        place_predicates: Iterable[str],
        excluded: Iterable[str] = (),
    ) -> "WorldVocabulary":
        place_predicates, excluded = set(place_predicates), set(excluded)
        variable_second: Dict[str, bool] = defaultdict(bool)
        constants: Dict[str, set] = defaultdict(set)
        for rule in world.rules:
            atoms = list(rule.body_atoms) + list(rule.choices)
            if rule.head is not None:
                atoms.append(rule.head)
            for atom in atoms:
                if atom.arity != 2:
                    continue
                second = atom.args[1]
                if second.is_variable:
                    variable_second[atom.predicate] = True
                else:
                    constants[atom.predicate].add(second.name)

        genders = tuple(sorted(f.args[0] for f in world.facts() if f.predicate == config.GENDER_FACT and f.arity == 1))
        person, place, properties = [], [], {}
        for name, arity in sorted(world.predicates.items()):
            if arity != 2 or name in excluded:
                continue
            if name in place_predicates:
                place.append(name)
            elif not variable_second[name] and constants[name]:
                properties[name] = tuple(sorted(constants[name]))
            else:
                person.append(name)

        gender_predicate = None
        if genders:
            for name, values in sorted(properties.items()):
                if set(genders) <= set(values):
                    gender_predicate = name
                    break
        if gender_predicate is not None:
            properties.pop(gender_predicate)
        return cls(tuple(person), tuple(place), properties, genders, gender_predicate)

    def pool(self) -> List[Tuple[str, str]]:
        """(predicate, kind) pairs available for sampling."""
        entries = [(p, "person") for p in self.person]
        entries += [(p, "place") for p in self.place]
        entries += [(p, "property") for p in sorted(self.properties)]
        return entries


def _pick(rng: np.random.Generator, items: Sequence[str]) -> str:
    return items[int(rng.integers(len(items)))]


class StoryGenerator:
    """Samples consistent stories fact by fact under one world."""

    def __init__(self, world: Program, cfg: Optional[GenConfig] = None, place_predicates: Optional[Iterable[str]] = None):
        self.world = world
        self.cfg = cfg or GenConfig()
        self.place_predicates = tuple(config.PLACE_PREDICATES if place_predicates is None else place_predicates)
        self.vocabulary = WorldVocabulary.of(world, self.place_predicates, config.EXCLUDED_PREDICATES)
        self.pool = self.vocabulary.pool()
        if not self.pool:
            raise ConfigError("world has no binary predicates to sample")
        unknown = sorted(set(self.cfg.predicate_weights) - {p for p, _ in self.pool})
        if unknown:
            raise ConfigError(f"weights given for predicates outside the world: {', '.join(unknown)}")

    def _weights(self, feasible: List[Tuple[str, str]]) -> np.ndarray:
        weights = np.array([self.cfg.predicate_weights.get(p, 1.0) for p, _ in feasible], dtype=float)
        total = weights.sum()
        if total <= 0:
            raise ConfigError("predicate weights sum to zero")
        return weights / total

    def _sample_entities(self, rng: np.random.Generator) -> Tuple[List[str], List[str]]:
        low, high = self.cfg.entity_range
        count = int(rng.integers(low, high + 1))
        is_person = rng.random(count) < self.cfg.person_percent
        persons_needed = min(2, count)
        if is_person.sum() < persons_needed:
            is_person[:persons_needed] = True
        persons = [f"p{i}" for i in range(int(is_person.sum()))]
        places = [f"loc{i}" for i in range(count - len(persons))]
        return persons, places

    def _sample_fact(
        self,
        rng: np.random.Generator,
        feasible: List[Tuple[str, str]],
        probabilities: np.ndarray,
        persons: List[str],
        places: List[str],
    ) -> GroundAtom:
        predicate, kind = feasible[int(rng.choice(len(feasible), p=probabilities))]
        subject = _pick(rng, persons)
        if kind == "person":
            other = _pick(rng, [p for p in persons if p != subject])
        elif kind == "place":
            other = _pick(rng, places)
        else:
            other = _pick(rng, self.vocabulary.properties[predicate])
        return GroundAtom(predicate, (subject, other))

    def _ambiguate(
        self,
        rng: np.random.Generator,
        candidates: List[GroundAtom],
        taken: set,
        persons: List[str],
        places: List[str],
    ) -> Optional[Tuple[GroundAtom, AmbiguousFact]]:
        original = candidates[int(rng.integers(len(candidates)))]
        subject, other = original.args
        pool = places if original.predicate in self.vocabulary.place else persons
        alternatives = [
            e for e in pool
            if e not in (subject, other) and GroundAtom(original.predicate, (subject, e)) not in taken
        ]
        if not alternatives:
            return None
        k = 3 if len(alternatives) >= 2 and rng.random() < self.cfg.three_choice_weight else 2
        picked = sorted(int(i) for i in rng.choice(len(alternatives), size=k - 1, replace=False))
        choices = [GroundAtom(original.predicate, (subject, alternatives[i])) for i in picked]
        choices.insert(int(rng.integers(k)), original)
        upper = 1 if rng.random() < self.cfg.exactly_one_weight else k
        return original, AmbiguousFact(choices=tuple(choices), lower=1, upper=upper)

    def _attempt(self, rng: np.random.Generator, story_id: str, stats: Dict[str, int]) -> Optional[Tuple[Story, int, int]]:
        persons, places = self._sample_entities(rng)
        low, high = self.cfg.fact_range
        fact_target = int(rng.integers(low, high + 1))
        low, high = self.cfg.ambiguous_range
        ambiguous_target = min(int(rng.integers(low, high + 1)), fact_target)

        evaluator = SemiNaiveEvaluator(self.world, persons + places)
        index = evaluator.closure([])

        def try_add(atom: GroundAtom) -> bool:
            index.add(atom)
            added = [atom] + evaluator.run(index, [atom])
            if evaluator.new_violations(index, added):
                for derived in added:
                    index.discard(derived)
                return False
            return True

        gender_facts: List[GroundAtom] = []
        vocab = self.vocabulary
        if vocab.gender_predicate is not None:
            for person in persons:
                if rng.random() < self.cfg.no_gender_assign:
                    continue
                atom = GroundAtom(vocab.gender_predicate, (person, _pick(rng, vocab.genders)))
                if try_add(atom):
                    gender_facts.append(atom)

        feasible = [(p, kind) for p, kind in self.pool if kind != "place" or places]
        if len(persons) < 2:
            feasible = [(p, kind) for p, kind in feasible if kind != "person"]
        if not feasible:
            return None
        probabilities = self._weights(feasible)

        relational: List[GroundAtom] = []
        misses = 0
        while len(relational) < fact_target:
            atom = self._sample_fact(rng, feasible, probabilities, persons, places)
            if atom in index or not try_add(atom):
                stats["fact_rejections"] += 1
                misses += 1
                if misses >= self.cfg.max_fact_attempts:
                    logger.debug(f"{story_id}: {misses} rejected facts in a row, restarting")
                    return None
                continue
            relational.append(atom)
            misses = 0

        ambiguous: List[AmbiguousFact] = []
        taken = set(gender_facts) | set(relational)
        for _ in range(ambiguous_target):
            for _ in range(self.cfg.max_fact_attempts):
                candidates = [
                    a for a in relational
                    if a.predicate in vocab.person or a.predicate in vocab.place
                ]
                if not candidates:
                    break
                proposal = self._ambiguate(rng, candidates, taken, persons, places)
                if proposal is None:
                    continue
                original, fact = proposal
                facts = [a for a in gender_facts + relational if a != original]
                trial = self._story(story_id, facts, ambiguous + [fact], persons, places)
                if is_consistent(self.world, trial):
                    relational.remove(original)
                    ambiguous.append(fact)
                    taken.update(fact.choices)
                    break
                stats["ambiguity_rejections"] += 1

        story = self._story(story_id, gender_facts + relational, ambiguous, persons, places)
        result = answer_sets(self.world, story)
        if not result.consistent or not queryable_pairs(result):
            stats["no_entailed"] += 1
            return None
        return story, len(persons) + len(places), len(relational) + len(ambiguous)

    def _story(
        self,
        story_id: str,
        facts: List[GroundAtom],
        ambiguous: List[AmbiguousFact],
        persons: List[str],
        places: List[str],
    ) -> Story:
        entities: Dict[str, EntityKind] = {p: "person" for p in persons}
        entities.update({p: "place" for p in places})
        for atom in facts + [c for f in ambiguous for c in f.choices]:
            for arg in atom.args:
                entities.setdefault(arg, "reserved")
        return Story(story_id=story_id, facts=tuple(facts), ambiguous=tuple(ambiguous), entities=entities)

    def generate(self, rng: np.random.Generator, story_id: str = "story", seed: int = 0, story_index: int = 0) -> GenRecord:
        """
        Generate one story with at least one answer set and one entailed query.

        Raises:
            GenerationError: every story attempt ran out of fact attempts
        """
        stats = {"fact_rejections": 0, "ambiguity_rejections": 0, "no_entailed": 0, "story_attempts": 0}
        for attempt in range(1, self.cfg.max_story_attempts + 1):
            stats["story_attempts"] = attempt
            outcome = self._attempt(rng, story_id, stats)
            if outcome is None:
                continue
            story, entity_count, fact_count = outcome
            provenance = Provenance(
                seed=seed,
                story_index=story_index,
                person_percent=self.cfg.person_percent,
                no_gender_assign=self.cfg.no_gender_assign,
                rejections=stats["fact_rejections"] + stats["ambiguity_rejections"],
                config=self.cfg.model_dump(mode="json"),
            )
            return GenRecord(
                story=story,
                provenance=provenance,
                entity_count=entity_count,
                fact_count=fact_count,
                attempts=attempt,
            )
        raise GenerationError(f"Could not generate {story_id} in {self.cfg.max_story_attempts} attempts", stats)


def generate_story(world: Program, cfg: GenConfig, rng: np.random.Generator, story_id: str = "story", seed: int = 0) -> GenRecord:
    return StoryGenerator(world, cfg).generate(rng, story_id=story_id, seed=seed)


def queryable_pairs(result: EntailmentResult) -> List[Tuple[str, str]]:
    """Ordered entity pairs of entailed binary atoms, self-pairs and reserved constants excluded."""
    entities = result.story.entities
    pairs = {
        atom.args
        for atom in result.entailed
        if atom.arity == 2
        and atom.args[0] != atom.args[1]
        and entities.get(atom.args[0], "reserved") != "reserved"
        and entities.get(atom.args[1], "reserved") != "reserved"
    }
    return sorted(pairs)


def harvest_instances(
    world: Program,
    story: Story,
    provenance: Optional[Provenance] = None,
    max_instances: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    reasoner: Optional[StoryReasoner] = None,
) -> List[ProblemInstance]:
    """
    Turn every entailed entity pair of a story into a problem instance.

    Args:
        world: World rules
        story: Consistent story
        provenance: Generator provenance copied into each instance
        max_instances: Optional cap; pairs are then drawn with `rng`
        rng: Random generator for the cap (default seeded with 0)
        reasoner: Precomputed reasoner for the story

    Returns:
        Instances ordered by (source, target)
    """
    reasoner = reasoner or StoryReasoner(world, story)
    pairs = queryable_pairs(reasoner.result)
    if max_instances is not None and len(pairs) > max_instances:
        rng = rng or np.random.default_rng(0)
        keep = sorted(int(i) for i in rng.choice(len(pairs), size=max_instances, replace=False))
        pairs = [pairs[i] for i in keep]

    instances = []
    for source, target in pairs:
        labels = reasoner.relations(source, target)
        metrics = reasoner.metrics(source, target, labels)
        hard = reasoner.is_hard_ambiguous(source, target, labels) if story.is_ambiguous else None
        instances.append(
            ProblemInstance(
                instance_id=f"{story.story_id}:{source}:{target}",
                story=story,
                source=source,
                target=target,
                labels=tuple(labels),
                metrics=metrics,
                hard_ambiguous=hard,
                provenance=provenance,
            )
        )
    logger.debug(f"Harvested {len(instances)} instances from {story.story_id}")
    return instances


@dataclass
class PoolResult:
    records: List[GenRecord]
    instances: List[ProblemInstance]
    failures: List[str]


def _generate_one(payload) -> Tuple[Optional[GenRecord], List[ProblemInstance], Optional[str]]:
    world, cfg, seed, index, sequence, place_predicates = payload
    story_sequence, harvest_sequence = sequence.spawn(2)
    story_id = f"s{seed}_{index:05d}"
    try:
        generator = StoryGenerator(world, cfg, place_predicates)
        record = generator.generate(np.random.default_rng(story_sequence), story_id, seed, index)
        instances = harvest_instances(
            world,
            record.story,
            provenance=record.provenance,
            max_instances=cfg.max_instances_per_story,
            rng=np.random.default_rng(harvest_sequence),
        )
    except NoraError as e:
        return None, [], f"{story_id}: {e}"
    return record, instances, None


def generate_pool(
    world: Program,
    cfg: GenConfig,
    seed: int,
    count: int,
    jobs: int = 1,
    place_predicates: Optional[Iterable[str]] = None,
) -> PoolResult:
    """
    Generate `count` stories and harvest their instances.

    Each story draws from its own child of one seed sequence, so the output
    does not depend on `jobs`.
    """
    places = tuple(config.PLACE_PREDICATES if place_predicates is None else place_predicates)
    sequences = np.random.SeedSequence(seed).spawn(count)
    payloads = [(world, cfg, seed, i, s, places) for i, s in enumerate(sequences)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            outcomes = list(executor.map(_generate_one, payloads))
    else:
        outcomes = [_generate_one(p) for p in payloads]

    result = PoolResult([], [], [])
    for record, instances, failure in outcomes:
        if failure is not None:
            logger.warning(f"Story generation failed: {failure}")
            result.failures.append(failure)
            continue
        result.records.append(record)
        result.instances.extend(instances)
    logger.info(
        f"Generated {len(result.records)} stories, {len(result.instances)} instances, "
        f"{len(result.failures)} failures"
    )
    return result
