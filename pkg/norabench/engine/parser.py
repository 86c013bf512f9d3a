"""
Parser and serializer for the Clingo-style rule fragment.
Supports definite rules, constraints, facts, restricted cardinality facts and `!=`.
"""

import logging
import re
from typing import Dict, List, NamedTuple, Optional, Tuple

from pydantic import ValidationError

from ..errors import ArityConflictError, CardinalityError, ParseError, UnknownPredicateError
from ..models.program import (
    Atom,
    BodyLiteral,
    Inequality,
    Program,
    Rule,
    Term,
    check_cardinality_shape,
)

logger = logging.getLogger(__name__)

TOKEN_SPEC = [
    ("BLOCK_COMMENT", r"%\*.*?\*%"),
    ("COMMENT", r"%[^\n]*"),
    ("DIRECTIVE", r"#[A-Za-z_]+[^.]*\."),
    ("IF", r":-"),
    ("NEQ", r"!="),
    ("NUMBER", r"\d+(?![A-Za-z0-9_])"),
    ("IDENT", r"[a-z0-9][A-Za-z0-9_]*"),
    ("VARIABLE", r"[A-Z][A-Za-z0-9_]*"),
    ("PUNCT", r"[(),;{}.]"),
    ("NEWLINE", r"\n"),
    ("SKIP", r"[ \t\r﻿]+"),
    ("MISMATCH", r"."),
]
TOKEN_RE = re.compile("|".join(f"(?P<{name}>{pattern})" for name, pattern in TOKEN_SPEC), re.DOTALL)
DEFINED_RE = re.compile(r"^#defined\s+([a-z][A-Za-z0-9_]*)\s*/\s*(\d+)\s*\.$")


class Token(NamedTuple):
    kind: str
    text: str
    line: int
    column: int


def tokenize(text: str) -> List[Token]:
    """Split rule text into tokens, dropping whitespace and comments."""
    tokens: List[Token] = []
    line, line_start = 1, 0
    for match in TOKEN_RE.finditer(text):
        kind, value = match.lastgroup, match.group()
        column = match.start() - line_start + 1
        if kind == "MISMATCH":
            raise ParseError(f"unexpected character {value!r}", line, column)
        if kind not in ("SKIP", "COMMENT", "NEWLINE", "BLOCK_COMMENT"):
            tokens.append(Token(kind, value, line, column))
        newlines = value.count("\n")
        if newlines:
            line += newlines
            line_start = match.start() + value.rindex("\n") + 1
    return tokens


class _Parser:
    """Recursive-descent parser over the token list."""

    def __init__(self, tokens: List[Token]):
        self.tokens = tokens
        self.pos = 0
        self.arities: Dict[str, int] = {}
        self.rules: List[Rule] = []
        self.declared: List[Tuple[str, int]] = []

    # Token helpers

    def _peek(self, offset: int = 0) -> Optional[Token]:
        index = self.pos + offset
        return self.tokens[index] if index < len(self.tokens) else None

    def _next(self) -> Token:
        token = self._peek()
        if token is None:
            last = self.tokens[-1] if self.tokens else Token("EOF", "", 1, 1)
            raise ParseError("unexpected end of input", last.line, last.column + len(last.text))
        self.pos += 1
        return token

    def _expect(self, text: str) -> Token:
        token = self._next()
        if token.text != text:
            raise ParseError(f"expected '{text}' but found '{token.text}'", token.line, token.column)
        return token

    def _at(self, text: str) -> bool:
        token = self._peek()
        return token is not None and token.text == text

    # Grammar

    def statements(self):
        while self._peek() is not None:
            self._statement()

    def _statement(self):
        token = self._peek()
        if token.kind == "DIRECTIVE":
            self._directive(self._next())
        elif token.kind == "IF":
            self._next()
            body = self._body()
            self._expect(".")
            self.rules.append(Rule(kind="constraint", body=tuple(body)))
            self._warn_unsafe(self.rules[-1], token)
        elif token.kind == "NUMBER" and self._peek(1) is not None and self._peek(1).text == "{":
            self._cardinality()
        elif token.text == "{":
            raise CardinalityError("cardinality fact needs explicit bounds", token.line, token.column)
        else:
            head = self._atom()
            if self._at("."):
                self._next()
                if not head.is_ground:
                    raise ParseError(f"fact {head} contains variables", token.line, token.column)
                self.rules.append(Rule(kind="fact", head=head))
            else:
                self._expect(":-")
                body = self._body()
                self._expect(".")
                self.rules.append(Rule(kind="definite", head=head, body=tuple(body)))
                self._warn_unsafe(self.rules[-1], token)

    def _directive(self, token: Token):
        match = DEFINED_RE.match(token.text)
        if match:
            name, arity = match.group(1), int(match.group(2))
            self._register(name, arity, token)
            if (name, arity) not in self.declared:
                self.declared.append((name, arity))
            return
        logger.warning(f"Ignoring directive '{token.text}' at line {token.line}")

    def _cardinality(self):
        low_token = self._next()
        brace = self._expect("{")
        choices = [self._atom()]
        while self._at(";"):
            self._next()
            choices.append(self._atom())
        self._expect("}")
        high_token = self._next()
        if high_token.kind != "NUMBER":
            raise CardinalityError("cardinality fact needs an upper bound", high_token.line, high_token.column)
        end = self._next()
        if end.text == ":-":
            raise CardinalityError("choice rules with a body are not supported", end.line, end.column)
        if end.text != ".":
            raise ParseError(f"expected '.' but found '{end.text}'", end.line, end.column)
        bounds = (int(low_token.text), int(high_token.text))
        try:
            check_cardinality_shape(choices, bounds)
        except ValueError as e:
            raise CardinalityError(str(e), brace.line, brace.column) from e
        self.rules.append(Rule(kind="cardinality", bounds=bounds, choices=tuple(choices)))

    def _body(self) -> List[BodyLiteral]:
        literals = [self._literal()]
        while self._at(","):
            self._next()
            literals.append(self._literal())
        return literals

    def _literal(self) -> BodyLiteral:
        token = self._peek()
        follower = self._peek(1)
        if token is not None and (
            token.kind in ("VARIABLE", "NUMBER") or (follower is not None and follower.kind == "NEQ")
        ):
            left = self._term()
            self._expect("!=")
            right = self._term()
            return Inequality(left=left, right=right)
        return self._atom()

    def _atom(self) -> Atom:
        token = self._next()
        if token.kind != "IDENT" or not token.text[0].isalpha():
            raise ParseError(f"expected a predicate but found '{token.text}'", token.line, token.column)
        args: List[Term] = []
        if self._at("("):
            self._next()
            args.append(self._term())
            while self._at(","):
                self._next()
                args.append(self._term())
            self._expect(")")
        self._register(token.text, len(args), token)
        return Atom(predicate=token.text, args=tuple(args))

    def _term(self) -> Term:
        token = self._next()
        if token.kind == "VARIABLE":
            return Term.var(token.text)
        if token.kind in ("IDENT", "NUMBER"):
            return Term.const(token.text)
        raise ParseError(f"expected a term but found '{token.text}'", token.line, token.column)

    def _register(self, predicate: str, arity: int, token: Token):
        known = self.arities.setdefault(predicate, arity)
        if known != arity:
            raise ArityConflictError(predicate, known, arity, token.line, token.column)

    def _warn_unsafe(self, rule: Rule, token: Token):
        unsafe = rule.unsafe_variables()
        if unsafe:
            logger.warning(
                f"Rule at line {token.line} has unsafe variables {', '.join(unsafe)}; "
                f"they range over all constants"
            )


def parse_program(text: str) -> Program:
    """
    Parse rule source into a Program.

    Args:
        text: UTF-8 rule text; statements end with '.', '%' starts a comment

    Returns:
        Parsed Program

    Raises:
        ParseError: syntax error with line and column
        ArityConflictError: a predicate is used with two arities
        CardinalityError: malformed cardinality fact
        UnknownPredicateError: a body predicate is neither produced nor declared
            (only checked when the text declares inputs with #defined)
    """
    parser = _Parser(tokenize(text))
    parser.statements()
    if parser.declared:
        produced = {r.head.predicate for r in parser.rules if r.head is not None}
        produced.update(c.predicate for r in parser.rules for c in r.choices)
        produced.update(name for name, _ in parser.declared)
        body = {a.predicate for r in parser.rules for a in r.body_atoms}
        missing = sorted(body - produced)
        if missing:
            raise UnknownPredicateError(f"undefined body predicates: {', '.join(missing)}")
    try:
        return Program(rules=tuple(parser.rules), declared_inputs=tuple(parser.declared))
    except ValidationError as e:
        raise ParseError(f"invalid program: {e.errors()[0]['msg']}", 1, 1) from e


def serialize_program(program: Program) -> str:
    """Render a Program as rule text, one statement per line."""
    lines = [f"#defined {name}/{arity}." for name, arity in program.declared_inputs]
    lines.extend(str(rule) for rule in program.rules)
    return "\n".join(lines) + ("\n" if lines else "")


def parse_file(path) -> Program:
    """Read and parse a rule file."""
    with open(path, encoding="utf-8") as f:
        return parse_program(f.read())
