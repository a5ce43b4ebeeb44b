"""Action resolution from a grounding and a rule set.

The production resolver runs stratified forward chaining: action predicates
are evaluated in dependency order so negated action literals always reference
already-resolved values, and the final decision is one-hot with precedence
Stop > Slow > Fast > Normal (Normal is the default when nothing fires).

``resolve_actions_exhaustive`` is the verification twin: it enumerates all 16
truth assignments of the four grounded ego action atoms, keeps the assignments
consistent with every grounded clause instance under the one-hot constraint,
and returns the precedence-minimal consistent model. The two routes must agree
on stratifiable, guard-disciplined rule sets.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

from .grounding import GroundingVector
from .rules import ACTIONS, Clause, RuleSet, validate_stratification


class SolverError(ValueError):
    pass


class ConflictError(SolverError):
    """No action assignment satisfies every grounded clause instance."""


@dataclass(frozen=True)
class ActionVector:
    slow: bool = False
    normal: bool = False
    fast: bool = False
    stop: bool = False

    @staticmethod
    def of(name: str) -> "ActionVector":
        if name not in ACTIONS:
            raise SolverError(f"unknown action {name!r}")
        return ActionVector(**{name.lower(): True})

    @staticmethod
    def from_index(index: int) -> "ActionVector":
        if not 0 <= index < len(ACTIONS):
            raise SolverError(f"action index {index} out of range 0..{len(ACTIONS) - 1}")
        return ActionVector.of(ACTIONS[index])

    @property
    def name(self) -> str:
        for n in ACTIONS:
            if getattr(self, n.lower()):
                return n
        raise SolverError("empty action vector")

    @property
    def index(self) -> int:
        return ACTIONS.index(self.name)

    def is_one_hot(self) -> bool:
        return sum((self.slow, self.normal, self.fast, self.stop)) == 1

    def as_tuple(self) -> tuple[bool, bool, bool, bool]:
        return (self.slow, self.normal, self.fast, self.stop)


@dataclass(frozen=True)
class Derivation:
    """Why the resolver mandated what it did: every clause whose body held for
    the ego slot, with the first (lexicographic) witness substitution."""

    action: str
    fired: tuple[tuple[int, dict[str, int]], ...]

    @property
    def constrained(self) -> bool:
        return bool(self.fired)

    def to_json(self) -> dict:
        return {
            "action": self.action,
            "fired": [{"clause": i, "witness": w} for i, w in self.fired],
        }


# Precedence for the one-hot decision; Normal is the default.
_PRECEDENCE = ("Stop", "Slow", "Fast")
_MODEL_RANK = {"Normal": 0, "Fast": 1, "Slow": 2, "Stop": 3}


class _Evaluator:
    """Shared clause-evaluation machinery over one grounding.

    Witnesses range over the real (non-pad) slots only, in lexicographic
    order, so adding pad slots never changes any result.
    """

    def __init__(self, g: GroundingVector, rules: RuleSet):
        self.g = g
        self.rules = rules
        self.vals = g.values.tolist()
        self.schema = g.schema
        self.action_names = set(ACTIONS)
        self.by_head: dict[str, list[int]] = rules.by_head()
        self._truth_memo: dict[tuple[str, int], bool] = {}
        report = validate_stratification(rules)
        if not report.ok:
            raise SolverError(f"rules are not stratifiable; cycle among {report.cycles[0]}")
        if report.normal_headed_clauses:
            raise SolverError(
                "clauses with a Normal head are not supported; Normal is the default action"
            )

    # -- literal lookup --------------------------------------------------------

    def background(self, pred: str, slots: tuple[int, ...]) -> bool:
        off = self.schema.offsets.get(pred)
        if off is None:
            raise SolverError(f"predicate {pred} is not part of mode {self.schema.mode!r}")
        if len(slots) == 1:
            return self.vals[off + slots[0]]
        return self.vals[off + slots[0] * self.schema.n_slots + slots[1]]

    def action_truth(self, action: str, slot: int) -> bool:
        """Resolved truth of an action atom at one slot (memoized recursion;
        stratification guarantees termination)."""
        key = (action, slot)
        hit = self._truth_memo.get(key)
        if hit is not None:
            return hit
        self._truth_memo[key] = False  # placeholder; acyclic by stratification
        value = any(
            self.clause_fires(self.rules.clauses[i], slot) for i in self.by_head.get(action, ())
        )
        self._truth_memo[key] = value
        return value

    # -- clause satisfaction -----------------------------------------------------

    def _literal(self, lit, binding: dict[str, int]) -> bool:
        slots = tuple(binding[v] for v in lit.args)
        if lit.predicate in self.action_names:
            value = self.action_truth(lit.predicate, slots[0])
        else:
            value = self.background(lit.predicate, slots)
        return not value if lit.negated else value

    def clause_fires(self, clause: Clause, head_slot: int) -> bool:
        return self.first_witness(clause, head_slot) is not None

    def first_witness(self, clause: Clause, head_slot: int) -> dict[str, int] | None:
        """First satisfying body substitution in lexicographic witness order."""
        head_var = clause.head.args[0]
        free = [v for v in clause.variables() if v != head_var]
        # Literals become checkable once all their variables are bound; checking
        # head-only literals before enumerating witnesses prunes most clauses.
        levels: list[list] = [[] for _ in range(len(free) + 1)]
        order = {v: i for i, v in enumerate(free, start=1)}
        order[head_var] = 0
        for lit in clause.body:
            levels[max(order[v] for v in lit.args)].append(lit)

        binding = {head_var: head_slot}
        if not all(self._literal(lit, binding) for lit in levels[0]):
            return None

        def descend(depth: int) -> dict[str, int] | None:
            if depth > len(free):
                return dict(binding)
            var = free[depth - 1]
            for slot in range(self.g.n_real):
                binding[var] = slot
                if all(self._literal(lit, binding) for lit in levels[depth]):
                    found = descend(depth + 1)
                    if found is not None:
                        return found
            del binding[var]
            return None

        return descend(1)


def resolve_actions(g: GroundingVector, rules: RuleSet) -> tuple[ActionVector, Derivation]:
    """Mandated one-hot action for the grounding's ego slot, with its support."""
    ev = _Evaluator(g, rules)
    decided = "Normal"
    for action in _PRECEDENCE:
        if ev.action_truth(action, 0):
            decided = action
            break
    fired: list[tuple[int, dict[str, int]]] = []
    for i, clause in enumerate(rules.clauses):
        witness = ev.first_witness(clause, 0)
        if witness is not None:
            fired.append((i, witness))
    return ActionVector.of(decided), Derivation(decided, tuple(fired))


def resolve_actions_exhaustive(g: GroundingVector, rules: RuleSet) -> ActionVector:
    """Model enumeration over the ego's four action atoms.

    Keeps the one-hot assignments under which every grounded clause instance is
    satisfied (body true implies head true) and returns the precedence-minimal
    one. Raises ``ConflictError`` when no assignment survives, which signals a
    conflicting rule set for this grounding.
    """
    ev = _Evaluator(g, rules)
    prepared: list[tuple[str, list, bool]] = []
    for clause in rules.clauses:
        head_var = clause.head.args[0]
        guards = []
        background = []
        for lit in clause.body:
            if lit.predicate in ev.action_names:
                if lit.args != (head_var,):
                    raise SolverError(
                        "exhaustive verification requires action literals to use the head variable"
                    )
                guards.append(lit)
            else:
                background.append(lit)
        bg_clause = Clause(clause.head, tuple(background))
        bg_sat = ev.first_witness(bg_clause, 0) is not None
        prepared.append((clause.head.predicate, guards, bg_sat))

    consistent: list[str] = []
    for bits in product((False, True), repeat=len(ACTIONS)):
        assign = dict(zip(ACTIONS, bits))
        if sum(bits) != 1:
            continue
        ok = True
        for head, guards, bg_sat in prepared:
            if not bg_sat:
                continue
            fires = all(
                (not assign[lit.predicate]) if lit.negated else assign[lit.predicate]
                for lit in guards
            )
            if fires and not assign[head]:
                ok = False
                break
        if ok:
            consistent.append(next(n for n, b in assign.items() if b))
    if not consistent:
        raise ConflictError("no one-hot action assignment satisfies the grounded rules")
    return ActionVector.of(min(consistent, key=_MODEL_RANK.__getitem__))


def check_violation(g: GroundingVector, executed: ActionVector, rules: RuleSet) -> list[int]:
    """Indices of clauses violated by the executed action.

    A clause is violated when its body holds for the ego slot (action literals
    evaluated against the stratified mandate) and the executed action differs
    from its head.
    """
    if not executed.is_one_hot():
        raise SolverError("executed action must be one-hot")
    ev = _Evaluator(g, rules)
    out = []
    for i, clause in enumerate(rules.clauses):
        if executed.name != clause.head.predicate and ev.clause_fires(clause, 0):
            out.append(i)
    return out
