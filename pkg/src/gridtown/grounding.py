"""Predicate evaluators and the per-agent grounding vector.

A grounding flattens every mode predicate over the (padded) field-of-view
agent slots: unary predicates contribute one value per slot, binary predicates
one value per ordered slot pair in row-major order, concatenated in registry
declaration order. Pad slots and the pair diagonal stay false (closed world).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .geom import chebyshev, side_of
from .rules import PredicateRegistry, RuleError
from .world import Fov, FovAgent


@dataclass(frozen=True)
class GeometryParams:
    """Thresholds behind the spatial predicate evaluators."""

    close_distance: int = 3  # IsClose: Chebyshev radius
    next_to_distance: int = 1  # NextTo: Chebyshev radius
    collide_lookahead: int = 3  # CollidingClose: other agent on my next cells
    cross_lookahead: int = 2  # CollidingClose: simultaneous path crossing


DEFAULT_GEOMETRY = GeometryParams()

SEMANTIC_UNARIES: frozenset[str] = frozenset(
    {
        "IsPedestrian",
        "IsCar",
        "IsAmbulance",
        "IsBus",
        "IsPolice",
        "IsTiro",
        "IsReckless",
        "IsOld",
        "IsYoung",
    }
)


def eval_unary(pred: str, agent: FovAgent, fov: Fov) -> bool:
    """Unary predicate on one in-window agent.

    Semantic predicates read the roster annotation; ``IsAtInter``/``IsInInter``
    come from the precomputed junction regions of the map.
    """
    if pred == "IsAtInter":
        return agent.at_inter
    if pred == "IsInInter":
        return agent.in_inter
    if pred in SEMANTIC_UNARIES:
        return pred in agent.concepts
    raise RuleError(f"no evaluator for unary predicate {pred}")


def eval_binary(
    pred: str,
    a: FovAgent,
    b: FovAgent,
    fov: Fov,
    params: GeometryParams = DEFAULT_GEOMETRY,
) -> bool:
    """Binary predicate between two in-window agents.

    All binaries are evaluated irreflexively: the (a, a) diagonal is false.
    ``LeftOf(A, B)``/``RightOf(A, B)`` test whether A lies strictly in the
    left/right half-plane of B's heading frame. ``CollidingClose(A, B)`` holds
    when B occupies one of A's next planned cells, or when their planned cells
    coincide at the same upcoming step and B has the right of way.
    """
    if a.id == b.id:
        return False
    if pred == "IsClose":
        return chebyshev(a.pos, b.pos) <= params.close_distance
    if pred == "NextTo":
        return chebyshev(a.pos, b.pos) <= params.next_to_distance
    if pred == "HigherPri":
        return a.priority > b.priority
    if pred == "LeftOf":
        return side_of(a.pos, b.pos, b.heading) > 0
    if pred == "RightOf":
        return side_of(a.pos, b.pos, b.heading) < 0
    if pred == "CollidingClose":
        ahead = a.next3[: params.collide_lookahead]
        if b.pos in ahead:
            return True
        if b.priority > a.priority:
            for k in range(min(params.cross_lookahead, len(a.next3), len(b.next3))):
                if a.next3[k] == b.next3[k]:
                    return True
        return False
    if pred == "Sees":
        return chebyshev(a.pos, b.pos) <= fov.radius
    raise RuleError(f"unknown binary predicate {pred}")


@dataclass(frozen=True)
class GroundingSchema:
    """Flat layout of one mode's predicates over padded agent slots."""

    mode: str
    n_slots: int
    predicates: tuple[tuple[str, int], ...]  # (name, arity) in declaration order
    offsets: dict[str, int] = field(compare=False, default_factory=dict)
    length: int = 0

    @staticmethod
    def build(registry: PredicateRegistry, mode: str, n_slots: int = 5) -> "GroundingSchema":
        if n_slots < 1:
            raise RuleError("n_slots must be >= 1")
        preds = tuple((d.name, d.arity) for d in registry.mode_predicates(mode))
        offsets: dict[str, int] = {}
        off = 0
        for name, arity in preds:
            offsets[name] = off
            off += n_slots**arity
        return GroundingSchema(mode, n_slots, preds, offsets, off)

    def index(self, pred: str, i: int, j: int | None = None) -> int:
        off = self.offsets[pred]
        if j is None:
            return off + i
        return off + i * self.n_slots + j

    def entries(self):
        """Yield (predicate, slot-tuple, flat index) over the whole layout."""
        for name, arity in self.predicates:
            if arity == 1:
                for i in range(self.n_slots):
                    yield name, (i,), self.index(name, i)
            else:
                for i in range(self.n_slots):
                    for j in range(self.n_slots):
                        yield name, (i, j), self.index(name, i, j)

    def to_json(self) -> str:
        rows = [
            {"predicate": p, "slots": list(t), "index": k} for p, t, k in self.entries()
        ]
        return json.dumps(
            {"mode": self.mode, "n_slots": self.n_slots, "length": self.length, "entries": rows},
            indent=2,
        )


@dataclass
class GroundingVector:
    values: np.ndarray  # flat bool array of schema.length
    schema: GroundingSchema
    n_real: int

    def __post_init__(self) -> None:
        if self.values.shape != (self.schema.length,):
            raise RuleError(
                f"grounding has {self.values.shape[0]} values, schema wants {self.schema.length}"
            )
        if not (1 <= self.n_real <= self.schema.n_slots):
            raise RuleError(f"n_real {self.n_real} out of range for {self.schema.n_slots} slots")

    def __len__(self) -> int:
        return int(self.schema.length)

    def get(self, pred: str, i: int, j: int | None = None) -> bool:
        return bool(self.values[self.schema.index(pred, i, j)])

    def as_floats(self) -> list[float]:
        return [1.0 if v else 0.0 for v in self.values.tolist()]

    def digest(self) -> str:
        packed = np.packbits(self.values.astype(np.uint8)).tobytes()
        return hashlib.sha256(packed + bytes([self.n_real])).hexdigest()[:16]

    def to_hex(self) -> str:
        return np.packbits(self.values.astype(np.uint8)).tobytes().hex()

    @staticmethod
    def from_hex(schema: GroundingSchema, hex_bits: str, n_real: int) -> "GroundingVector":
        packed = np.frombuffer(bytes.fromhex(hex_bits), dtype=np.uint8)
        values = np.unpackbits(packed)[: schema.length].astype(bool)
        return GroundingVector(values, schema, n_real)

    def padded(self, extra: int = 1) -> "GroundingVector":
        """Same grounding with ``extra`` additional all-false pad slots."""
        wide = _schema_with_slots(self.schema, self.schema.n_slots + extra)
        values = np.zeros(wide.length, dtype=bool)
        for name, arity in self.schema.predicates:
            off_src, off_dst = self.schema.offsets[name], wide.offsets[name]
            if arity == 1:
                values[off_dst : off_dst + self.schema.n_slots] = self.values[
                    off_src : off_src + self.schema.n_slots
                ]
            else:
                n, m = self.schema.n_slots, wide.n_slots
                src = self.values[off_src : off_src + n * n].reshape(n, n)
                dst = values[off_dst : off_dst + m * m].reshape(m, m)
                dst[:n, :n] = src
        return GroundingVector(values, wide, self.n_real)


def _schema_with_slots(schema: GroundingSchema, n_slots: int) -> GroundingSchema:
    offsets: dict[str, int] = {}
    off = 0
    for name, arity in schema.predicates:
        offsets[name] = off
        off += n_slots**arity
    return GroundingSchema(schema.mode, n_slots, schema.predicates, offsets, off)


def ground_fov(
    fov: Fov,
    registry: PredicateRegistry,
    mode: str,
    n_slots: int = 5,
    params: GeometryParams = DEFAULT_GEOMETRY,
) -> GroundingVector:
    """Evaluate every mode predicate over the window's agent slots.

    Slot 0 is the window owner. Only real (non-pad) slots are evaluated; the
    remainder of the vector keeps its closed-world false default.
    """
    schema = GroundingSchema.build(registry, mode, n_slots)
    agents = fov.visible[:n_slots]
    n = len(agents)
    values = np.zeros(schema.length, dtype=bool)
    for name, arity in schema.predicates:
        off = schema.offsets[name]
        if arity == 1:
            for i in range(n):
                if eval_unary(name, agents[i], fov):
                    values[off + i] = True
        else:
            for i in range(n):
                row = off + i * n_slots
                for j in range(n):
                    if i != j and eval_binary(name, agents[i], agents[j], fov, params):
                        values[row + j] = True
    return GroundingVector(values, schema, n)
