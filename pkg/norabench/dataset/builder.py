"""
Split assembly: preset filters, stratified rejection balancing, label
closure, hard-ambiguity labeling, re-validation and JSONL import/export.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from .. import config
from ..engine.parser import parse_program, serialize_program
from ..errors import ConfigError, DatasetIOError, LabelClosureError, NoraError, ParseError
from ..models.program import Program
from ..models.schemas import (
    METRICS,
    BinSpec,
    ExportRecord,
    MetricBound,
    ProblemInstance,
    SplitSpec,
)
from ..models.story import AmbiguousFact, Story
from ..tools.metrics import StoryReasoner
from .graph_encoder import encode_graph

logger = logging.getLogger(__name__)


def _b(op: str, value) -> MetricBound:
    return MetricBound(op=op, value=value)


_CORE = dict(depth=_b("<=", 6), width=_b("<=", 5), bl=_b("<=", "3/2"), opec=_b("<=", 2))
_CORE_NA = dict(_CORE, width=_b("==", 1))
_V11 = dict(depth=_b("<=", 6), width=_b("==", 1), bl=_b("<", "3/2"), opec=_b("<=", 3))

PRESETS: Dict[str, SplitSpec] = {
    spec.name: spec
    for spec in [
        SplitSpec(name="train-a", training=True, **_CORE),
        SplitSpec(name="train-na", training=True, require_unambiguous=True, **_CORE_NA),
        SplitSpec(name="test-d", require_positive=True, **dict(_CORE, depth=_b(">", 6))),
        SplitSpec(name="test-w", **dict(_CORE, width=_b(">", 5))),
        SplitSpec(name="test-bl", require_positive=True, **dict(_CORE, bl=_b(">", "3/2"), opec=None)),
        SplitSpec(name="test-opec", require_positive=True, opec=_b(">=", 3)),
        SplitSpec(name="test-in-dist", **_CORE),
        SplitSpec(name="test-d-na", require_unambiguous=True, **dict(_CORE_NA, depth=_b(">", 6))),
        SplitSpec(name="test-bl-na", require_unambiguous=True, **dict(_CORE_NA, bl=_b(">", "3/2"), opec=None)),
        SplitSpec(name="test-opec-na", require_unambiguous=True, width=_b("==", 1), opec=_b(">=", 3)),
        SplitSpec(name="test-in-dist-na", require_unambiguous=True, **_CORE_NA),
        SplitSpec(name="v11-train-na", training=True, require_unambiguous=True, **_V11),
        SplitSpec(name="v11-test-d-na", require_unambiguous=True, **dict(_V11, depth=_b(">", 6))),
        SplitSpec(name="v11-test-bl-na", require_unambiguous=True, **dict(_V11, bl=_b(">=", "3/2"))),
        SplitSpec(name="v11-test-opec-na", require_unambiguous=True, width=_b("==", 1), opec=_b(">=", 3)),
        SplitSpec(name="v11-test-in-dist-na", require_unambiguous=True, **_V11),
    ]
}

# Training preset -> the in-distribution test split carved out of it
IN_DIST_OF: Dict[str, str] = {
    "train-a": "test-in-dist",
    "train-na": "test-in-dist-na",
    "v11-train-na": "v11-test-in-dist-na",
}


def get_preset(name: str) -> SplitSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"Unknown split preset '{name}'. Choose from: {', '.join(PRESETS)}") from None


def filter_split(pool: Iterable[ProblemInstance], spec: SplitSpec) -> List[ProblemInstance]:
    """Instances of `pool` satisfying every bound of `spec`, in pool order."""
    return [instance for instance in pool if spec.admits(instance)]


# ---- Stratified rejection balancing ----

def _values(pool: Sequence[ProblemInstance], metric: str) -> np.ndarray:
    return np.array([instance.metrics.value(metric) for instance in pool], dtype=float)


def bin_edges(values: np.ndarray, count: int, strategy: str = "uniform") -> np.ndarray:
    """Inner bin edges; an empty array means a single bin."""
    if count <= 1 or values.size == 0 or values.min() == values.max():
        return np.array([])
    if strategy == "quantile":
        edges = np.quantile(values, np.linspace(0, 1, count + 1))
    else:
        edges = np.linspace(values.min(), values.max(), count + 1)
    return np.unique(edges[1:-1])


def assign_bins(values: np.ndarray, edges: np.ndarray, metric: str = "", count: int = 0) -> np.ndarray:
    """Bin index per value; values on an edge fall into the lower bin."""
    if metric == "opec" and count == 2:
        return (values > 0).astype(int)
    if edges.size == 0:
        return np.zeros(values.size, dtype=int)
    return np.searchsorted(edges, values, side="left")


def _bin_table(
    pool: Sequence[ProblemInstance],
    bins: BinSpec,
    fixed_edges: Mapping[str, np.ndarray],
    metrics: Sequence[str],
) -> Dict[str, np.ndarray]:
    table = {}
    for metric in metrics:
        values = _values(pool, metric)
        count = bins.count(metric)
        if bins.strategy == "quantile":
            edges = bin_edges(values, count, "quantile")
        else:
            edges = fixed_edges[metric]
        table[metric] = assign_bins(values, edges, metric, count)
    return table


def _occupied(assignment: np.ndarray) -> Dict[int, int]:
    labels, counts = np.unique(assignment, return_counts=True)
    return {int(label): int(count) for label, count in zip(labels, counts)}


def is_balanced(assignment: np.ndarray, tolerance: float) -> bool:
    counts = list(_occupied(assignment).values())
    return len(counts) <= 1 or max(counts) <= tolerance * min(counts)


def balance_by_rejection(
    pool: Sequence[ProblemInstance],
    bins: Optional[BinSpec] = None,
    max_passes: Optional[int] = None,
    tolerance: Optional[float] = None,
    metrics: Sequence[str] = METRICS,
) -> List[ProblemInstance]:
    """
    Remove instances until every metric's bin marginal is near uniform.

    Each pass scores every instance by the number of over-represented bins it
    falls in, then, metric by metric, trims each over-represented bin down to
    `tolerance` times the smallest occupied bin, highest scores first.

    Args:
        pool: Candidate instances
        bins: Bin counts and edge strategy (default BinSpec())
        max_passes: Pass limit (default BALANCE_MAX_PASSES)
        tolerance: Allowed largest/smallest bin ratio (default BALANCE_TOLERANCE)
        metrics: Metrics to balance

    Returns:
        Surviving instances in their original order
    """
    bins = bins or BinSpec()
    max_passes = config.BALANCE_MAX_PASSES if max_passes is None else max_passes
    tolerance = config.BALANCE_TOLERANCE if tolerance is None else tolerance
    if tolerance < 1:
        raise ConfigError(f"balance tolerance must be at least 1, got {tolerance}")
    alive = list(pool)
    if not alive or max_passes <= 0:
        return alive

    fixed_edges = {m: bin_edges(_values(alive, m), bins.count(m), "uniform") for m in metrics}
    for number in range(1, max_passes + 1):
        table = _bin_table(alive, bins, fixed_edges, metrics)
        if all(is_balanced(table[m], tolerance) for m in metrics):
            logger.debug(f"Balanced after {number - 1} passes")
            break

        scores = np.zeros(len(alive), dtype=int)
        for metric in metrics:
            counts = _occupied(table[metric])
            target = tolerance * min(counts.values())
            for label, count in counts.items():
                if count > target:
                    scores[table[metric] == label] += 1

        keep = np.ones(len(alive), dtype=bool)
        for metric in metrics:
            assignment = table[metric]
            counts = _occupied(assignment[keep])
            if len(counts) <= 1:
                continue
            cap = int(np.floor(tolerance * min(counts.values())))
            for label, count in sorted(counts.items()):
                excess = count - cap
                if excess <= 0:
                    continue
                members = np.flatnonzero(keep & (assignment == label))
                # Highest score first, later positions first among equals
                order = sorted(members, key=lambda i: (-scores[i], -i))
                keep[order[:excess]] = False

        removed = int((~keep).sum())
        alive = [instance for instance, k in zip(alive, keep) if k]
        logger.debug(f"Balancing pass {number}: removed {removed}, {len(alive)} remain")
        if removed == 0 or not alive:
            break
    return alive


# ---- Labels and re-validation ----

class ReasonerCache:
    """One StoryReasoner per distinct story."""

    def __init__(self, world: Program, node_limit: Optional[int] = None):
        self.world = world
        self.node_limit = node_limit
        self._entries: Dict[str, Tuple[Story, StoryReasoner]] = {}

    def get(self, story: Story) -> StoryReasoner:
        entry = self._entries.get(story.story_id)
        if entry is None or entry[0] != story:
            entry = (story, StoryReasoner(self.world, story, node_limit=self.node_limit))
            self._entries[story.story_id] = entry
        return entry[1]


def label_hard_ambiguous(
    world: Program,
    instance: ProblemInstance,
    reasoner: Optional[StoryReasoner] = None,
) -> bool:
    """True when answering the instance needs an ambiguous fact resolved through constraints."""
    if not instance.story.is_ambiguous:
        return False
    reasoner = reasoner or StoryReasoner(world, instance.story)
    return reasoner.is_hard_ambiguous(instance.source, instance.target, instance.labels)


def recompute_instance(
    world: Program,
    instance: ProblemInstance,
    reasoner: Optional[StoryReasoner] = None,
) -> ProblemInstance:
    """Re-solve the story and return the instance with fresh labels, metrics and hardness flag."""
    reasoner = reasoner or StoryReasoner(world, instance.story)
    labels = reasoner.relations(instance.source, instance.target)
    if not labels:
        raise NoraError(f"{instance.instance_id}: no relation is entailed between {instance.source} and {instance.target}")
    hard = None
    if instance.story.is_ambiguous:
        hard = reasoner.is_hard_ambiguous(instance.source, instance.target, labels)
    return instance.model_copy(
        update={
            "labels": tuple(sorted(labels)),
            "metrics": reasoner.metrics(instance.source, instance.target, labels),
            "hard_ambiguous": hard,
        }
    )


def _recompute_story(payload) -> List[ProblemInstance]:
    world, instances = payload
    reasoner = StoryReasoner(world, instances[0].story)
    return [recompute_instance(world, i, reasoner) for i in instances]


def recompute_all(world: Program, instances: Sequence[ProblemInstance], jobs: int = 1) -> List[ProblemInstance]:
    """
    Recompute every instance, solving each distinct story once.

    Args:
        world: World rules
        instances: Instances to recompute
        jobs: Worker processes; each task handles all instances of one story

    Returns:
        Recomputed instances in input order

    Raises:
        NoraError: an instance has no entailed relation left
    """
    groups: List[List[int]] = []
    by_id: Dict[str, List[int]] = {}
    for position, instance in enumerate(instances):
        for g in by_id.setdefault(instance.story.story_id, []):
            if instances[groups[g][0]].story == instance.story:
                groups[g].append(position)
                break
        else:
            by_id[instance.story.story_id].append(len(groups))
            groups.append([position])

    payloads = [(world, [instances[p] for p in group]) for group in groups]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            outcomes = list(executor.map(_recompute_story, payloads))
    else:
        outcomes = [_recompute_story(p) for p in payloads]

    fresh: List[Optional[ProblemInstance]] = [None] * len(instances)
    for group, recomputed in zip(groups, outcomes):
        for position, instance in zip(group, recomputed):
            fresh[position] = instance
    logger.info(f"Recomputed {len(instances)} instances over {len(groups)} stories with {jobs} job(s)")
    return fresh


class Violation(NamedTuple):
    instance_id: str
    field: str
    expected: str
    actual: str


def validate_instances(
    world: Program,
    instances: Iterable[ProblemInstance],
    spec: Optional[SplitSpec] = None,
    cache: Optional[ReasonerCache] = None,
) -> List[Violation]:
    """
    Recompute every instance from scratch and compare with the stored values.

    Args:
        world: World rules
        instances: Instances to check
        spec: Split bounds every recomputed instance must satisfy
        cache: Reasoner cache shared across calls

    Returns:
        One Violation per mismatching field or violated bound
    """
    cache = cache or ReasonerCache(world)
    found: List[Violation] = []
    for instance in instances:
        try:
            fresh = recompute_instance(world, instance, cache.get(instance.story))
        except NoraError as e:
            found.append(Violation(instance.instance_id, "story", "solvable", str(e)))
            continue
        if fresh.labels != instance.labels:
            found.append(Violation(instance.instance_id, "labels", ",".join(fresh.labels), ",".join(instance.labels)))
        for name in ("depth", "width", "bl", "opec", "positive_depth"):
            stored, actual = getattr(instance.metrics, name), getattr(fresh.metrics, name)
            if stored != actual:
                found.append(Violation(instance.instance_id, name, str(actual), str(stored)))
        if fresh.hard_ambiguous != instance.hard_ambiguous:
            found.append(
                Violation(instance.instance_id, "hard_ambiguous", str(fresh.hard_ambiguous), str(instance.hard_ambiguous))
            )
        if spec is not None:
            for reason in spec.violations(fresh):
                found.append(Violation(instance.instance_id, spec.name, "within bounds", reason))
    return found


# ---- Split assembly ----

def _check_label_closure(
    splits: Dict[str, List[ProblemInstance]],
    training: Sequence[str],
    drop_unseen: bool,
) -> None:
    seen = {label for name in training for instance in splits[name] for label in instance.labels}
    for name, instances in splits.items():
        if name in training:
            continue
        unseen = {label for instance in instances for label in instance.labels} - seen
        if not unseen:
            continue
        if not drop_unseen:
            raise LabelClosureError(name, unseen)
        kept = [i for i in instances if not set(i.labels) & unseen]
        logger.warning(
            f"Split {name}: dropped {len(instances) - len(kept)} instances with labels unseen in training "
            f"({', '.join(sorted(unseen))})"
        )
        splits[name] = kept


def build_splits(
    pool: Sequence[ProblemInstance],
    presets: Sequence[str],
    seed: int = 0,
    in_dist_fraction: Optional[float] = None,
    drop_unseen: bool = False,
    balance: bool = True,
    bins: Optional[BinSpec] = None,
) -> Dict[str, List[ProblemInstance]]:
    """
    Assemble named splits from one instance pool.

    Training presets are filled first; when the matching in-distribution test
    preset is also requested, a random `in_dist_fraction` of the training-eligible
    instances is moved there before the training split is balanced. Every
    instance lands in at most one split.

    Args:
        pool: Harvested instances
        presets: Preset names, see PRESETS
        seed: Seed for the in-distribution carve-out
        in_dist_fraction: Share of training-eligible instances held out (default IN_DIST_FRACTION)
        drop_unseen: Drop test instances with labels unseen in training instead of failing
        balance: Apply balance_by_rejection to training splits
        bins: Bin specification for balancing

    Returns:
        Split name -> instances, in the order the presets were given

    Raises:
        ConfigError: unknown preset
        LabelClosureError: a test label never occurs in training (unless drop_unseen)
    """
    specs = [get_preset(name) for name in dict.fromkeys(presets)]
    fraction = config.IN_DIST_FRACTION if in_dist_fraction is None else in_dist_fraction
    rng = np.random.default_rng(seed)
    used: set = set()
    splits: Dict[str, List[ProblemInstance]] = {spec.name: [] for spec in specs}
    requested = set(splits)

    training = [spec for spec in specs if spec.training]
    for spec in training:
        eligible = [i for i in filter_split(pool, spec) if i.instance_id not in used]
        used.update(i.instance_id for i in eligible)
        held_name = IN_DIST_OF.get(spec.name)
        if held_name in requested and eligible:
            size = int(round(fraction * len(eligible)))
            held = set(int(i) for i in rng.choice(len(eligible), size=size, replace=False))
            splits[held_name] = [x for n, x in enumerate(eligible) if n in held]
            eligible = [x for n, x in enumerate(eligible) if n not in held]
        splits[spec.name] = balance_by_rejection(eligible, bins) if balance else eligible

    carved = {IN_DIST_OF.get(spec.name) for spec in training}
    for spec in specs:
        if spec.training or spec.name in carved:
            continue
        chosen = [i for i in filter_split(pool, spec) if i.instance_id not in used]
        used.update(i.instance_id for i in chosen)
        splits[spec.name] = chosen

    if training:
        _check_label_closure(splits, [s.name for s in training], drop_unseen)
    elif any(splits.values()):
        logger.warning("No training preset requested; label closure not checked")

    for name, instances in splits.items():
        if not instances:
            logger.warning(f"Split {name} is empty")
        else:
            logger.info(f"Split {name}: {len(instances)} instances")
    return splits


# ---- JSONL export ----

def to_record(instance: ProblemInstance) -> ExportRecord:
    story = instance.story
    return ExportRecord(
        instance_id=instance.instance_id,
        story_id=story.story_id,
        story_text=serialize_program(story.to_program()),
        entities=dict(story.entities),
        graph=encode_graph(story, instance.source, instance.target, instance.labels),
        source=instance.source,
        target=instance.target,
        labels=list(instance.labels),
        metrics=instance.metrics,
        hard_ambiguous=instance.hard_ambiguous,
        provenance=instance.provenance,
        lineage=instance.lineage,
    )


def from_record(record: ExportRecord) -> ProblemInstance:
    program = parse_program(record.story_text)
    story = Story(
        story_id=record.story_id,
        facts=tuple(r.head.to_ground() for r in program.rules if r.kind == "fact"),
        ambiguous=tuple(
            AmbiguousFact(choices=tuple(c.to_ground() for c in r.choices), lower=r.bounds[0], upper=r.bounds[1])
            for r in program.rules
            if r.kind == "cardinality"
        ),
        entities=record.entities,
    )
    return ProblemInstance(
        instance_id=record.instance_id,
        story=story,
        source=record.source,
        target=record.target,
        labels=tuple(record.labels),
        metrics=record.metrics,
        hard_ambiguous=record.hard_ambiguous,
        provenance=record.provenance,
        lineage=record.lineage,
    )


def export_jsonl(instances: Iterable[ProblemInstance], path) -> int:
    """
    Write one ExportRecord per line.

    Returns:
        Number of records written

    Raises:
        DatasetIOError: the file cannot be written
    """
    path = Path(path)
    count = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for instance in instances:
                f.write(to_record(instance).model_dump_json() + "\n")
                count += 1
    except OSError as e:
        raise DatasetIOError(f"Cannot write dataset ({e.strerror})", path) from e
    logger.info(f"Wrote {count} records to {path}")
    return count


def import_jsonl(path) -> List[ProblemInstance]:
    """Read an exported split back into problem instances."""
    path = Path(path)
    instances = []
    try:
        with open(path, encoding="utf-8") as f:
            for number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    instances.append(from_record(ExportRecord.model_validate_json(line)))
                except (ValidationError, ParseError, ValueError) as e:
                    raise DatasetIOError(f"Invalid record on line {number} ({e})", path) from e
    except OSError as e:
        if isinstance(e, DatasetIOError):
            raise
        raise DatasetIOError(f"Cannot read dataset ({e.strerror})", path) from e
    return instances


def label_set(instances: Iterable[ProblemInstance]) -> List[str]:
    return sorted({label for instance in instances for label in instance.labels})


def metric_rows(instances: Iterable[ProblemInstance]) -> List[Tuple[str, str, str, int, int, Fraction, int]]:
    """(instance_id, source, target, depth, width, bl, opec) per instance."""
    return [
        (i.instance_id, i.source, i.target, i.metrics.depth, i.metrics.width, i.metrics.bl, i.metrics.opec)
        for i in instances
    ]
