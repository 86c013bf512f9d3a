from typing import Dict, Iterable, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .program import Atom, GroundAtom, Program, Rule, check_cardinality_shape

EntityKind = Literal["person", "place", "reserved"]


class AmbiguousFact(BaseModel):
    """Ground cardinality fact: between `lower` and `upper` of `choices` hold."""
    model_config = ConfigDict(frozen=True)

    choices: Tuple[GroundAtom, ...] = Field(..., description="Alternatives in source order")
    lower: int = Field(1, description="Lower bound")
    upper: int = Field(1, description="Upper bound")

    @model_validator(mode="after")
    def check_shape(self):
        check_cardinality_shape(self.choices, (self.lower, self.upper))
        return self

    @property
    def exactly_one(self) -> bool:
        return self.upper == 1

    @property
    def predicate(self) -> str:
        return self.choices[0].predicate

    @property
    def subject(self) -> str:
        return self.choices[0].args[0]

    def rename(self, mapping: Dict[str, str]) -> "AmbiguousFact":
        return AmbiguousFact(
            choices=tuple(c.rename(mapping) for c in self.choices), lower=self.lower, upper=self.upper
        )

    def to_rule(self) -> Rule:
        return Rule(
            kind="cardinality",
            bounds=(self.lower, self.upper),
            choices=tuple(Atom.from_ground(c) for c in self.choices),
        )


class Story(BaseModel):
    """Set of ground facts over typed entities."""
    model_config = ConfigDict(frozen=True)

    story_id: str = Field("story", description="Story identifier")
    facts: Tuple[GroundAtom, ...] = Field(default=(), description="Plain facts, deduplicated, in insertion order")
    ambiguous: Tuple[AmbiguousFact, ...] = Field(default=(), description="Ambiguous cardinality facts")
    entities: Dict[str, EntityKind] = Field(default_factory=dict, description="Constant -> kind")

    @field_validator("facts")
    @classmethod
    def dedupe_facts(cls, v):
        return tuple(dict.fromkeys(v))

    @model_validator(mode="after")
    def check_story(self):
        for atom in self.all_atoms():
            for arg in atom.args:
                if arg not in self.entities:
                    raise ValueError(f"constant '{arg}' of {atom} is not a story entity")
        seen = set()
        for fact in self.ambiguous:
            overlap = seen.intersection(fact.choices)
            if overlap:
                raise ValueError(f"ambiguous alternatives overlap: {', '.join(map(str, sorted(overlap)))}")
            seen.update(fact.choices)
        return self

    def all_atoms(self) -> Iterable[GroundAtom]:
        yield from self.facts
        for fact in self.ambiguous:
            yield from fact.choices

    @property
    def is_ambiguous(self) -> bool:
        return bool(self.ambiguous)

    def kind_of(self, constant: str) -> Optional[EntityKind]:
        return self.entities.get(constant)

    def non_reserved(self) -> List[str]:
        return [name for name, kind in self.entities.items() if kind != "reserved"]

    def to_program(self) -> Program:
        rules: List[Rule] = [Rule(kind="fact", head=Atom.from_ground(f)) for f in self.facts]
        rules.extend(a.to_rule() for a in self.ambiguous)
        return Program(rules=tuple(rules))

    def rename(self, mapping: Dict[str, str], story_id: Optional[str] = None) -> "Story":
        """Apply a renaming to non-reserved entities; unmapped names stay."""
        mapping = {k: v for k, v in mapping.items() if self.entities.get(k) != "reserved"}
        entities: Dict[str, EntityKind] = {}
        for name, kind in self.entities.items():
            entities[mapping.get(name, name)] = kind
        return Story(
            story_id=story_id or self.story_id,
            facts=tuple(f.rename(mapping) for f in self.facts),
            ambiguous=tuple(a.rename(mapping) for a in self.ambiguous),
            entities=entities,
        )


def infer_entities(
    atoms: Iterable[GroundAtom],
    reserved: Iterable[str],
    place_predicates: Iterable[str],
) -> Dict[str, EntityKind]:
    """Tag constants: world constants are reserved, second arguments of place predicates are places."""
    reserved = set(reserved)
    place_predicates = set(place_predicates)
    entities: Dict[str, EntityKind] = {}
    for atom in atoms:
        for position, arg in enumerate(atom.args):
            if arg in reserved:
                entities[arg] = "reserved"
            elif position == 1 and atom.predicate in place_predicates:
                entities[arg] = "place"
            else:
                entities.setdefault(arg, "person")
    return entities
