"""
Logic-program data model: terms, atoms, rules and programs.
Covers definite rules, constraints, facts and restricted cardinality facts.
"""

import re
from typing import Dict, FrozenSet, Iterator, List, Literal, NamedTuple, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

VARIABLE_PATTERN = re.compile(r"^[A-Z][A-Za-z0-9_]*$")
CONSTANT_PATTERN = re.compile(r"^[a-z0-9][A-Za-z0-9_]*$")
PREDICATE_PATTERN = re.compile(r"^[a-z][A-Za-z0-9_]*$")

RuleKind = Literal["definite", "constraint", "fact", "cardinality"]


class GroundAtom(NamedTuple):
    """Variable-free atom; tuples order lexicographically by (predicate, args)."""
    predicate: str
    args: Tuple[str, ...]

    def __str__(self) -> str:
        if not self.args:
            return self.predicate
        return f"{self.predicate}({','.join(self.args)})"

    @property
    def arity(self) -> int:
        return len(self.args)

    def rename(self, mapping: Dict[str, str]) -> "GroundAtom":
        return GroundAtom(self.predicate, tuple(mapping.get(a, a) for a in self.args))


class Term(BaseModel):
    """Variable or constant."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["variable", "constant"] = Field(..., description="Term kind")
    name: str = Field(..., description="Identifier")

    @model_validator(mode="after")
    def check_name(self):
        pattern = VARIABLE_PATTERN if self.kind == "variable" else CONSTANT_PATTERN
        if not pattern.match(self.name):
            raise ValueError(f"invalid {self.kind} name: {self.name!r}")
        return self

    @classmethod
    def var(cls, name: str) -> "Term":
        return cls(kind="variable", name=name)

    @classmethod
    def const(cls, name: str) -> "Term":
        return cls(kind="constant", name=name)

    @property
    def is_variable(self) -> bool:
        return self.kind == "variable"

    def __str__(self) -> str:
        return self.name


class Atom(BaseModel):
    """Predicate applied to an ordered list of terms."""
    model_config = ConfigDict(frozen=True)

    predicate: str = Field(..., description="Predicate name")
    args: Tuple[Term, ...] = Field(default=(), description="Arguments")

    @field_validator("predicate")
    @classmethod
    def validate_predicate(cls, v):
        if not PREDICATE_PATTERN.match(v):
            raise ValueError(f"invalid predicate name: {v!r}")
        return v

    @property
    def arity(self) -> int:
        return len(self.args)

    @property
    def is_ground(self) -> bool:
        return not any(t.is_variable for t in self.args)

    def variables(self) -> List[str]:
        return [t.name for t in self.args if t.is_variable]

    def to_ground(self) -> GroundAtom:
        if not self.is_ground:
            raise ValueError(f"atom {self} has variables")
        return GroundAtom(self.predicate, tuple(t.name for t in self.args))

    @classmethod
    def from_ground(cls, atom: GroundAtom) -> "Atom":
        return cls(predicate=atom.predicate, args=tuple(Term.const(a) for a in atom.args))

    def __str__(self) -> str:
        if not self.args:
            return self.predicate
        return f"{self.predicate}({','.join(str(t) for t in self.args)})"


class Inequality(BaseModel):
    """Builtin `left != right`."""
    model_config = ConfigDict(frozen=True)

    left: Term = Field(..., description="Left operand")
    right: Term = Field(..., description="Right operand")

    def variables(self) -> List[str]:
        return [t.name for t in (self.left, self.right) if t.is_variable]

    def __str__(self) -> str:
        return f"{self.left} != {self.right}"


BodyLiteral = Union[Atom, Inequality]


class Rule(BaseModel):
    """One statement of a program."""
    model_config = ConfigDict(frozen=True)

    kind: RuleKind = Field(..., description="Statement kind")
    head: Optional[Atom] = Field(None, description="Head atom (definite rules and facts)")
    body: Tuple[BodyLiteral, ...] = Field(default=(), description="Body literals in source order")
    bounds: Optional[Tuple[int, int]] = Field(None, description="Cardinality bounds (l, u)")
    choices: Tuple[Atom, ...] = Field(default=(), description="Cardinality alternatives")

    @model_validator(mode="after")
    def check_shape(self):
        if self.kind == "definite":
            if self.head is None or not self.body or self.bounds is not None or self.choices:
                raise ValueError("definite rule needs a head and a nonempty body")
        elif self.kind == "constraint":
            if self.head is not None or not self.body or self.choices:
                raise ValueError("constraint needs an empty head and a nonempty body")
        elif self.kind == "fact":
            if self.head is None or self.body or self.choices:
                raise ValueError("fact needs a head and no body")
            if not self.head.is_ground:
                raise ValueError(f"fact {self.head} is not ground")
        else:
            check_cardinality_shape(self.choices, self.bounds)
        return self

    @property
    def body_atoms(self) -> List[Atom]:
        return [lit for lit in self.body if isinstance(lit, Atom)]

    @property
    def inequalities(self) -> List[Inequality]:
        return [lit for lit in self.body if isinstance(lit, Inequality)]

    def variables(self) -> List[str]:
        """Variables in order of first occurrence, head first."""
        seen: Dict[str, None] = {}
        atoms = ([self.head] if self.head is not None else []) + list(self.body)
        for item in atoms:
            for name in item.variables():
                seen.setdefault(name, None)
        return list(seen)

    def unsafe_variables(self) -> List[str]:
        bound = {name for atom in self.body_atoms for name in atom.variables()}
        return [v for v in self.variables() if v not in bound]

    def __str__(self) -> str:
        if self.kind == "fact":
            return f"{self.head}."
        if self.kind == "cardinality":
            low, high = self.bounds
            return f"{low}{{{'; '.join(str(c) for c in self.choices)}}}{high}."
        body = ", ".join(str(lit) for lit in self.body)
        if self.kind == "constraint":
            return f":- {body}."
        return f"{self.head} :- {body}."


def check_cardinality_shape(choices, bounds) -> None:
    """Raise ValueError unless (choices, bounds) is a supported ambiguous fact."""
    if not choices:
        raise ValueError("cardinality fact needs choices")
    if bounds is None:
        raise ValueError("cardinality fact needs explicit bounds")
    low, high = bounds
    k = len(choices)
    if not 0 <= low <= high <= k:
        raise ValueError(f"bounds {low}..{high} do not fit {k} choices")
    if k not in (2, 3):
        raise ValueError(f"cardinality fact must list 2 or 3 choices, got {k}")
    if (low, high) not in ((1, 1), (1, k)):
        raise ValueError(f"bounds {low}..{high} must be 1..1 or 1..{k}")
    heads = {(c.predicate, c.args[0] if c.args else None) for c in choices}
    if len(heads) != 1:
        raise ValueError("choices must share predicate and first argument")
    if any(not getattr(c, "is_ground", True) for c in choices):
        raise ValueError("choices must be ground")
    if len(set(choices)) != k:
        raise ValueError("choices must be distinct")


class Program(BaseModel):
    """Parsed rule file: world rules, story facts or both."""
    model_config = ConfigDict(frozen=True)

    rules: Tuple[Rule, ...] = Field(default=(), description="Statements in source order")
    declared_inputs: Tuple[Tuple[str, int], ...] = Field(
        default=(), description="Story-level input predicates declared with #defined"
    )

    @model_validator(mode="after")
    def check_arities(self):
        table: Dict[str, int] = {}
        for name, arity in self._signatures():
            if table.setdefault(name, arity) != arity:
                raise ValueError(f"predicate '{name}' used with arities {table[name]} and {arity}")
        if self.declared_inputs:
            produced = self.produced_predicates() | {name for name, _ in self.declared_inputs}
            missing = sorted(self.body_predicates() - produced)
            if missing:
                raise ValueError(f"undefined body predicates: {', '.join(missing)}")
        return self

    def _signatures(self) -> Iterator[Tuple[str, int]]:
        for name, arity in self.declared_inputs:
            yield name, arity
        for rule in self.rules:
            if rule.head is not None:
                yield rule.head.predicate, rule.head.arity
            for atom in rule.body_atoms:
                yield atom.predicate, atom.arity
            for atom in rule.choices:
                yield atom.predicate, atom.arity

    @property
    def predicates(self) -> Dict[str, int]:
        """Predicate table: name -> arity."""
        return dict(self._signatures())

    def produced_predicates(self) -> FrozenSet[str]:
        names = set()
        for rule in self.rules:
            if rule.head is not None:
                names.add(rule.head.predicate)
            names.update(c.predicate for c in rule.choices)
        return frozenset(names)

    def body_predicates(self) -> FrozenSet[str]:
        return frozenset(a.predicate for rule in self.rules for a in rule.body_atoms)

    @property
    def input_predicates(self) -> FrozenSet[str]:
        """Declared inputs, or every body-only predicate when nothing is declared."""
        if self.declared_inputs:
            return frozenset(name for name, _ in self.declared_inputs)
        return self.body_predicates() - self.produced_predicates()

    @property
    def constants(self) -> FrozenSet[str]:
        names = set()
        for rule in self.rules:
            atoms = list(rule.choices) + rule.body_atoms
            if rule.head is not None:
                atoms.append(rule.head)
            for atom in atoms:
                names.update(t.name for t in atom.args if not t.is_variable)
            for ineq in rule.inequalities:
                names.update(t.name for t in (ineq.left, ineq.right) if not t.is_variable)
        return frozenset(names)

    def rules_of_kind(self, kind: RuleKind) -> List[Tuple[int, Rule]]:
        """(index, rule) pairs; the index is the rule's position in the file."""
        return [(i, r) for i, r in enumerate(self.rules) if r.kind == kind]

    def facts(self) -> List[GroundAtom]:
        return [r.head.to_ground() for r in self.rules if r.kind == "fact"]

    def merge(self, other: "Program") -> "Program":
        return Program(
            rules=self.rules + other.rules,
            declared_inputs=self.declared_inputs + tuple(
                d for d in other.declared_inputs if d not in self.declared_inputs
            ),
        )
