from fractions import Fraction
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PlainSerializer,
    PlainValidator,
    field_validator,
    model_validator,
)

from ..config import SCHEMA_VERSION, TOOL_VERSION
from .story import EntityKind, Story


def _to_fraction(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, float):
        return Fraction(str(v))
    try:
        return Fraction(v)
    except (TypeError, ValueError, ZeroDivisionError) as e:
        raise ValueError(f"not a rational number: {v!r}") from e


Rational = Annotated[
    Fraction,
    PlainValidator(_to_fraction),
    PlainSerializer(lambda v: str(v), return_type=str),
]


class MetricBundle(BaseModel):
    """Difficulty measures of one problem instance."""
    model_config = ConfigDict(frozen=True)

    depth: int = Field(..., ge=0, description="Max proof size over consistent refinements and contradictions")
    width: int = Field(..., ge=1, description="Max number of distinct minimal derivations over the label set")
    bl: Rational = Field(..., description="Max backtrack load (steps / entities) as a fraction")
    opec: int = Field(..., ge=0, description="Max off-path edge count")
    positive_depth: int = Field(0, ge=0, description="Max proof size over consistent refinements only")
    refinements: int = Field(1, ge=1, description="Number of refinements of the story")
    consistent_refinements: int = Field(1, ge=1, description="Number of answer sets")
    exact: bool = Field(True, description="False when some proof came from the greedy fallback")

    def value(self, metric: str) -> float:
        return float(getattr(self, metric))


class Provenance(BaseModel):
    """Where a generated story came from."""
    model_config = ConfigDict(frozen=True)

    seed: int = Field(..., description="Root seed of the generation run")
    story_index: int = Field(..., ge=0, description="Index of the story within the run")
    person_percent: float = Field(..., description="Person probability used for this story")
    no_gender_assign: float = Field(..., description="Fraction of persons left without gender")
    rejections: int = Field(0, ge=0, description="Facts discarded for inconsistency")
    config: Dict[str, Any] = Field(default_factory=dict, description="Generation config echo")
    tool_version: str = Field(TOOL_VERSION, description="Version of the generating tool")


class GenRecord(BaseModel):
    """Generated story with its provenance."""
    model_config = ConfigDict(frozen=True)

    story: Story = Field(..., description="Generated story")
    provenance: Provenance = Field(..., description="Seed and configuration echo")
    entity_count: int = Field(..., ge=0, description="Non-reserved entities")
    fact_count: int = Field(..., ge=0, description="Relational plain facts plus ambiguous facts")
    attempts: int = Field(1, ge=1, description="Story attempts used")


class LineageStep(BaseModel):
    """One stitch: donor renamed into the base at the lemma."""
    model_config = ConfigDict(frozen=True)

    base_id: str = Field(..., description="Instance id of the base (or of the previous stitch output)")
    donor_id: Optional[str] = Field(None, description="Instance id of the donor; None for a no-op")
    lemma: Optional[str] = Field(None, description="Base fact supplied by the donor, as rule text")
    renaming: Dict[str, str] = Field(default_factory=dict, description="Donor entity -> base entity")


class Lineage(BaseModel):
    """Construction history of a stitched instance."""
    model_config = ConfigDict(frozen=True)

    root_id: str = Field(..., description="Pool instance the construction starts from")
    steps: List[LineageStep] = Field(default_factory=list, description="Stitches in application order")
    final_renaming: Dict[str, str] = Field(default_factory=dict, description="Fresh names applied last")

    @property
    def components(self) -> List[str]:
        ids = [self.root_id] + [s.donor_id for s in self.steps if s.donor_id]
        return list(dict.fromkeys(ids))


class ProblemInstance(BaseModel):
    """Story, query pair and entailed relation set with metrics."""
    model_config = ConfigDict(frozen=True)

    instance_id: str = Field(..., description="Unique instance identifier")
    story: Story = Field(..., description="Story facts and entities")
    source: str = Field(..., description="Query source entity")
    target: str = Field(..., description="Query target entity")
    labels: Tuple[str, ...] = Field(..., min_length=1, description="Entailed relation set R, sorted")
    metrics: MetricBundle = Field(..., description="Difficulty measures")
    hard_ambiguous: Optional[bool] = Field(None, description="Hard-ambiguous flag; None for unambiguous stories")
    provenance: Optional[Provenance] = Field(None, description="Generator provenance")
    lineage: Optional[Lineage] = Field(None, description="Stitching lineage")

    @field_validator("labels")
    @classmethod
    def sort_labels(cls, v):
        return tuple(sorted(set(v)))

    @model_validator(mode="after")
    def check_query(self):
        for name in (self.source, self.target):
            if name not in self.story.entities:
                raise ValueError(f"query entity '{name}' is not in the story")
        if self.source == self.target:
            raise ValueError("query source and target must differ")
        return self


MetricName = Literal["depth", "width", "bl", "opec"]
METRICS: Tuple[str, ...] = ("depth", "width", "bl", "opec")


class MetricBound(BaseModel):
    """Threshold on one metric."""
    model_config = ConfigDict(frozen=True)

    op: Literal["<=", "<", ">", ">=", "=="] = Field(..., description="Comparison")
    value: Rational = Field(..., description="Threshold")

    def admits(self, x) -> bool:
        x = _to_fraction(x)
        if self.op == "<=":
            return x <= self.value
        if self.op == "<":
            return x < self.value
        if self.op == ">":
            return x > self.value
        if self.op == ">=":
            return x >= self.value
        return x == self.value

    def __str__(self) -> str:
        return f"{self.op} {self.value}"


class SplitSpec(BaseModel):
    """Metric bounds defining one named split."""
    model_config = ConfigDict(frozen=True)

    name: str = Field(..., description="Split name")
    depth: Optional[MetricBound] = Field(None, description="Reasoning depth bound")
    width: Optional[MetricBound] = Field(None, description="Reasoning width bound")
    bl: Optional[MetricBound] = Field(None, description="Backtrack load bound")
    opec: Optional[MetricBound] = Field(None, description="Off-path edge count bound")
    require_positive: bool = Field(False, description="Depth bound must hold on a consistent refinement")
    require_unambiguous: bool = Field(False, description="Only stories without ambiguous facts")
    training: bool = Field(False, description="Split is used for training")

    def bounds(self) -> Dict[str, MetricBound]:
        return {m: getattr(self, m) for m in METRICS if getattr(self, m) is not None}

    def violations(self, instance: ProblemInstance) -> List[str]:
        """Human-readable reasons the instance does not belong to this split."""
        found = []
        metrics = instance.metrics
        for metric, bound in self.bounds().items():
            value = getattr(metrics, metric)
            if metric == "depth" and self.require_positive:
                value = metrics.positive_depth
            if not bound.admits(value):
                found.append(f"{metric}={value} not {bound}")
        if self.require_unambiguous and instance.story.is_ambiguous:
            found.append("story has ambiguous facts")
        return found

    def admits(self, instance: ProblemInstance) -> bool:
        return not self.violations(instance)


class BinSpec(BaseModel):
    """Per-metric bin counts for stratified rejection sampling."""
    model_config = ConfigDict(frozen=True)

    strategy: Literal["uniform", "quantile"] = Field("uniform", description="Bin edge strategy")
    depth: int = Field(3, ge=1, description="Depth bins")
    width: int = Field(3, ge=1, description="Width bins")
    bl: int = Field(2, ge=1, description="BL bins")
    opec: int = Field(2, ge=1, description="OPEC bins; two bins split {0} from {>=1}")

    def count(self, metric: str) -> int:
        return getattr(self, metric)


class GenConfig(BaseModel):
    """Story generation parameters."""
    model_config = ConfigDict(frozen=True)

    person_percent: float = Field(0.8, ge=0, le=1, description="Probability that a sampled entity is a person")
    no_gender_assign: float = Field(0.2, ge=0, le=1, description="Fraction of persons left without gender")
    entity_range: Tuple[int, int] = Field((20, 50), description="Entity count interval")
    fact_range: Tuple[int, int] = Field((30, 75), description="Fact count interval")
    ambiguous_range: Tuple[int, int] = Field((0, 3), description="Ambiguous fact budget interval")
    exactly_one_weight: float = Field(0.5, ge=0, le=1, description="Probability of a 1..1 ambiguous fact")
    three_choice_weight: float = Field(0.3, ge=0, le=1, description="Probability of k=3 alternatives")
    predicate_weights: Dict[str, float] = Field(default_factory=dict, description="Per-predicate sampling weights")
    max_fact_attempts: int = Field(50, ge=1, description="Rejected facts allowed per slot")
    max_story_attempts: int = Field(20, ge=1, description="Story retries before giving up")
    max_instances_per_story: Optional[int] = Field(None, ge=1, description="Cap on harvested queries per story")

    @field_validator("entity_range", "fact_range", "ambiguous_range", mode="before")
    @classmethod
    def parse_range(cls, v):
        if isinstance(v, str):
            v = tuple(int(part) for part in v.replace("-", ",").split(",") if part.strip())
        return v

    @field_validator("entity_range", "fact_range", "ambiguous_range")
    @classmethod
    def check_range(cls, v):
        low, high = v
        if low < 0 or low > high:
            raise ValueError(f"invalid interval {low},{high}")
        return v

    @field_validator("predicate_weights", mode="before")
    @classmethod
    def parse_weights(cls, v):
        if isinstance(v, str):
            pairs = [item.split(":") for item in v.split(",") if item.strip()]
            return {name.strip(): float(weight) for name, weight in pairs}
        return v

    @field_validator("predicate_weights")
    @classmethod
    def check_weights(cls, v):
        if any(w < 0 for w in v.values()):
            raise ValueError("predicate weights must be nonnegative")
        return v

    @classmethod
    def from_key_values(cls, values: Dict[str, str]) -> "GenConfig":
        known = set(cls.model_fields)
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValueError(f"unknown generation keys: {', '.join(unknown)}")
        return cls(**values)


class GraphNode(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int = Field(..., ge=0, description="Anonymized node id")
    name: str = Field(..., description="Entity name, or amb<i> for ambiguity nodes")
    kind: Literal["person", "place", "reserved", "amb"] = Field(..., description="Node kind")


class GraphEdge(BaseModel):
    model_config = ConfigDict(frozen=True)

    src: int = Field(..., description="Source node id")
    dst: int = Field(..., description="Target node id")
    label: str = Field(..., description="Edge label")
    predicate: str = Field(..., description="Fact predicate")
    kind: Literal["fact", "unary", "amb_source", "amb_choice"] = Field(..., description="Edge role")


class EncodedGraph(BaseModel):
    """Labeled directed graph view of a story and its query."""
    model_config = ConfigDict(frozen=True)

    nodes: List[GraphNode] = Field(..., description="Entities followed by ambiguity nodes")
    edges: List[GraphEdge] = Field(..., description="Edges in story order")
    query: Tuple[int, int] = Field(..., description="(source, target) node ids")
    labels: List[str] = Field(default_factory=list, description="Label set R")
    bounds: Dict[str, Tuple[int, int]] = Field(default_factory=dict, description="Ambiguity node name -> (l, u)")


class ErrorReport(BaseModel):
    """Error payload."""
    error: str = Field(..., description="Error message")
    detail: Optional[str] = Field(None, description="Additional error details")
    status: str = Field("error", description="Run status")


class ExportRecord(BaseModel):
    """One line of an exported split."""
    schema_version: str = Field(SCHEMA_VERSION, description="Record schema version")
    instance_id: str = Field(..., description="Instance identifier")
    story_id: str = Field(..., description="Story identifier")
    story_text: str = Field(..., description="Story facts as rule text")
    entities: Dict[str, EntityKind] = Field(..., description="Entity kinds")
    graph: EncodedGraph = Field(..., description="Graph encoding")
    source: str = Field(..., description="Query source")
    target: str = Field(..., description="Query target")
    labels: List[str] = Field(..., description="Label set R")
    metrics: MetricBundle = Field(..., description="Difficulty measures")
    hard_ambiguous: Optional[bool] = Field(None, description="Hard-ambiguous flag")
    provenance: Optional[Provenance] = Field(None, description="Generator provenance")
    lineage: Optional[Lineage] = Field(None, description="Stitching lineage")

    @field_validator("schema_version")
    @classmethod
    def check_version(cls, v):
        if v.split(".")[0] != SCHEMA_VERSION.split(".")[0]:
            raise ValueError(f"unsupported schema version {v}")
        return v


class RunManifest(BaseModel):
    """Everything needed to reproduce a CLI run."""
    subcommand: str = Field(..., description="Command name")
    arguments: Dict[str, Any] = Field(default_factory=dict, description="Parsed arguments")
    world: Optional[str] = Field(None, description="World rule file")
    config: Optional[str] = Field(None, description="Generation config file")
    seed: Optional[int] = Field(None, description="Root seed")
    outputs: List[str] = Field(default_factory=list, description="Files written")
    tool_version: str = Field(TOOL_VERSION, description="Tool version")
    wall_clock_seconds: float = Field(0.0, description="Elapsed time")
    instance_count: int = Field(0, description="Instances written")
    status: str = Field("success", description="Run status")
    error: Optional[ErrorReport] = Field(None, description="Failure details")
