"""Horn-clause rule language over a fixed predicate vocabulary.

The surface syntax is a small Prolog subset: one clause per line (clauses may
wrap), ``Head(X) :- Lit, Lit, ... .`` with ``Not(...)`` as the only negation
form and ``,`` or the conjunction sign ``∧`` between body literals. Lines
starting with ``#`` or ``%`` are comments. Variables and predicate names are
both capitalized identifiers and are told apart by position (functor vs. bare
argument).

Only action predicates may appear in a clause head; every head variable must
also occur in the body (range restriction), so the universally quantified head
is well-defined once body variables are grounded.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

ACTIONS: tuple[str, ...] = ("Slow", "Normal", "Fast", "Stop")

KIND_SEMANTIC_UNARY = "semantic_unary"
KIND_SPATIAL = "spatial"
KIND_ACTION = "action"
_KINDS = (KIND_SEMANTIC_UNARY, KIND_SPATIAL, KIND_ACTION)


class RuleError(ValueError):
    """Parse or validation failure, annotated with a source position when known."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"line {line}, col {col}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class PredicateDecl:
    name: str
    arity: int
    kind: str

    def __post_init__(self) -> None:
        if self.arity not in (1, 2):
            raise RuleError(f"predicate {self.name}: arity must be 1 or 2, got {self.arity}")
        if self.kind not in _KINDS:
            raise RuleError(f"predicate {self.name}: unknown kind {self.kind!r}")
        if self.kind == KIND_ACTION and self.arity != 1:
            raise RuleError(f"action predicate {self.name} must be unary")
        if self.kind == KIND_SEMANTIC_UNARY and self.arity != 1:
            raise RuleError(f"semantic predicate {self.name} must be unary")


@dataclass(frozen=True)
class PredicateRegistry:
    """Declared predicates plus the per-mode subsets used to build observations."""

    decls: tuple[PredicateDecl, ...]
    mode_subsets: dict[str, tuple[str, ...]] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for d in self.decls:
            if d.name in seen:
                raise RuleError(f"duplicate predicate declaration: {d.name}")
            seen.add(d.name)
        for mode, names in self.mode_subsets.items():
            for n in names:
                d = self.get(n)
                if d is None:
                    raise RuleError(f"mode {mode!r} references unknown predicate {n}")
                if d.kind == KIND_ACTION:
                    raise RuleError(f"mode {mode!r} lists action predicate {n}")

    def get(self, name: str) -> PredicateDecl | None:
        for d in self.decls:
            if d.name == name:
                return d
        return None

    def background(self) -> tuple[PredicateDecl, ...]:
        return tuple(d for d in self.decls if d.kind != KIND_ACTION)

    def actions(self) -> tuple[PredicateDecl, ...]:
        return tuple(d for d in self.decls if d.kind == KIND_ACTION)

    def semantic_unaries(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.decls if d.kind == KIND_SEMANTIC_UNARY)

    def mode_predicates(self, mode: str) -> tuple[PredicateDecl, ...]:
        """Background predicates of a mode, in declaration order."""
        try:
            names = set(self.mode_subsets[mode])
        except KeyError:
            raise RuleError(f"unknown mode {mode!r}") from None
        return tuple(d for d in self.background() if d.name in names)

    @staticmethod
    def from_json(path: str | Path) -> "PredicateRegistry":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        decls = tuple(
            PredicateDecl(p["name"], int(p["arity"]), p["kind"]) for p in raw["predicates"]
        )
        modes = {m: tuple(names) for m, names in raw.get("modes", {}).items()}
        return PredicateRegistry(decls, modes)

    def to_json(self) -> str:
        return json.dumps(
            {
                "predicates": [
                    {"name": d.name, "arity": d.arity, "kind": d.kind} for d in self.decls
                ],
                "modes": {m: list(v) for m, v in self.mode_subsets.items()},
            },
            indent=2,
        )


@dataclass(frozen=True)
class Literal:
    predicate: str
    args: tuple[str, ...]
    negated: bool = False

    def render(self) -> str:
        atom = f"{self.predicate}({', '.join(self.args)})"
        return f"Not({atom})" if self.negated else atom


@dataclass(frozen=True)
class Clause:
    head: Literal
    body: tuple[Literal, ...]
    source_text: str = field(default="", compare=False)

    def variables(self) -> tuple[str, ...]:
        out: list[str] = []
        for lit in (self.head, *self.body):
            for v in lit.args:
                if v not in out:
                    out.append(v)
        return tuple(out)

    def body_variables(self) -> set[str]:
        return {v for lit in self.body for v in lit.args}

    def render(self) -> str:
        body = ", ".join(lit.render() for lit in self.body)
        if not body:
            return f"{self.head.render()}."
        return f"{self.head.render()} :- {body}."


@dataclass(frozen=True)
class RuleSet:
    clauses: tuple[Clause, ...]
    registry: PredicateRegistry

    def __len__(self) -> int:
        return len(self.clauses)

    def by_head(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for i, c in enumerate(self.clauses):
            out.setdefault(c.head.predicate, []).append(i)
        return out


# --- tokenizer -------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<WS>[ \t\r]+)
  | (?P<COMMENT>[#%][^\n]*)
  | (?P<NEWLINE>\n)
  | (?P<IMPLIES>:-)
  | (?P<IDENT>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<LPAREN>\()
  | (?P<RPAREN>\))
  | (?P<COMMA>,)
  | (?P<AND>∧)
  | (?P<DOT>\.)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise RuleError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup or ""
        tok = m.group()
        if kind == "NEWLINE":
            line += 1
            col = 1
        else:
            if kind not in ("WS", "COMMENT"):
                tokens.append(_Token(kind, tok, line, col))
            col += len(tok)
        pos = m.end()
    tokens.append(_Token("EOF", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token], registry: PredicateRegistry):
        self.tokens = tokens
        self.registry = registry
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self, kind: str, what: str | None = None) -> _Token:
        tok = self.tokens[self.i]
        if tok.kind != kind:
            raise RuleError(f"expected {what or kind}, got {tok.text or 'end of input'!r}", tok.line, tok.col)
        self.i += 1
        return tok

    def parse(self) -> list[Clause]:
        clauses = []
        while self.peek().kind != "EOF":
            clauses.append(self.clause())
        return clauses

    def clause(self) -> Clause:
        start = self.peek()
        head = self.literal()
        if head.negated:
            raise RuleError("clause head must not be negated", start.line, start.col)
        body: list[Literal] = []
        if self.peek().kind == "IMPLIES":
            self.take("IMPLIES")
            body.append(self.literal())
            while self.peek().kind in ("COMMA", "AND"):
                self.i += 1
                body.append(self.literal())
        end = self.take("DOT", "'.' at end of clause")
        clause = Clause(head, tuple(body))
        self._check(clause, start, end)
        return clause

    def literal(self) -> Literal:
        tok = self.take("IDENT", "predicate name")
        if tok.text == "Not":
            self.take("LPAREN", "'(' after Not")
            inner_tok = self.peek()
            inner = self._atom()
            if inner.negated:
                raise RuleError("double negation is not supported", inner_tok.line, inner_tok.col)
            self.take("RPAREN", "')' closing Not")
            return Literal(inner.predicate, inner.args, negated=True)
        return self._atom_tail(tok)

    def _atom(self) -> Literal:
        tok = self.take("IDENT", "predicate name")
        return self._atom_tail(tok)

    def _atom_tail(self, name_tok: _Token) -> Literal:
        self.take("LPAREN", f"'(' after predicate {name_tok.text}")
        args = [self.take("IDENT", "variable name").text]
        while self.peek().kind == "COMMA":
            self.take("COMMA")
            args.append(self.take("IDENT", "variable name").text)
        self.take("RPAREN", "')' closing argument list")
        decl = self.registry.get(name_tok.text)
        if decl is None:
            raise RuleError(f"unknown predicate {name_tok.text}", name_tok.line, name_tok.col)
        if decl.arity != len(args):
            raise RuleError(
                f"predicate {name_tok.text} has arity {decl.arity}, got {len(args)} argument(s)",
                name_tok.line,
                name_tok.col,
            )
        for a in args:
            if not a[0].isupper():
                raise RuleError(f"variables must be capitalized, got {a!r}", name_tok.line, name_tok.col)
        return Literal(name_tok.text, tuple(args))

    def _check(self, clause: Clause, start: _Token, end: _Token) -> None:
        head_decl = self.registry.get(clause.head.predicate)
        assert head_decl is not None
        if head_decl.kind != KIND_ACTION:
            raise RuleError(
                f"clause head must be an action predicate, got {clause.head.predicate}",
                start.line,
                start.col,
            )
        unbound = set(clause.head.args) - clause.body_variables()
        if unbound:
            raise RuleError(
                f"head variable(s) {sorted(unbound)} do not occur in the body",
                start.line,
                start.col,
            )


def parse_rules(text: str, registry: PredicateRegistry) -> RuleSet:
    """Parse rule source text against a registry; clause order is preserved."""
    tokens = _tokenize(text)
    parser = _Parser(tokens, registry)
    clauses = parser.parse()
    # Reattach normalized source for diagnostics.
    clauses = [Clause(c.head, c.body, source_text=c.render()) for c in clauses]
    return RuleSet(tuple(clauses), registry)


def parse_rules_file(path: str | Path, registry: PredicateRegistry) -> RuleSet:
    return parse_rules(Path(path).read_text(encoding="utf-8"), registry)


def render_rules(rules: RuleSet) -> str:
    """Canonical text form: one clause per line, trailing newline when non-empty."""
    if not rules.clauses:
        return ""
    return "\n".join(c.render() for c in rules.clauses) + "\n"


# --- stratification ---------------------------------------------------------


@dataclass(frozen=True)
class StratificationReport:
    order: tuple[str, ...]
    strata: dict[str, int]
    cycles: tuple[tuple[str, ...], ...]
    normal_headed_clauses: tuple[int, ...]

    @property
    def ok(self) -> bool:
        return not self.cycles


def validate_stratification(rules: RuleSet) -> StratificationReport:
    """Order action predicates so body action literals only reference earlier strata.

    Cycles among action predicates (through positive or negated body use) are
    reported, not raised. Actions with no dependencies keep the canonical
    Stop < Slow < Fast order; Normal never carries clauses in shipped rule
    files and acts as the default.
    """
    actions = [d.name for d in rules.registry.actions()]
    action_set = set(actions)
    deps: dict[str, set[str]] = {a: set() for a in actions}
    normal_headed = tuple(
        i for i, c in enumerate(rules.clauses) if c.head.predicate == "Normal"
    )
    for clause in rules.clauses:
        for lit in clause.body:
            if lit.predicate in action_set:
                deps[clause.head.predicate].add(lit.predicate)

    canonical = {name: i for i, name in enumerate(("Stop", "Slow", "Fast", "Normal"))}
    order: list[str] = []
    strata: dict[str, int] = {}
    remaining = set(actions)
    while remaining:
        ready = sorted(
            (a for a in remaining if not (deps[a] & remaining)),
            key=lambda a: canonical.get(a, len(canonical)),
        )
        if not ready:
            break
        for a in ready:
            strata[a] = max((strata[d] + 1 for d in deps[a]), default=0)
            order.append(a)
        remaining -= set(ready)

    cycles: tuple[tuple[str, ...], ...] = ()
    if remaining:
        cycles = (tuple(sorted(remaining, key=lambda a: canonical.get(a, 99))),)
    return StratificationReport(tuple(order), strata, cycles, normal_headed)
