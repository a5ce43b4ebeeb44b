"""Static urban map, agent roster, and the full dynamic city state.

The static map is a stack of eight boolean layers in a fixed order. Junction
regions (used by the ``IsInInter``/``IsAtInter`` evaluators) are precomputed at
load time as the connected components of crossing cells unioned with cells
where two streets overlap; the surrounding one-cell band marks the approach.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geom import Cell, chebyshev, heading_of_step
from .rules import PredicateRegistry, RuleError

LAYER_NAMES: tuple[str, ...] = (
    "walking_street",
    "traffic_street",
    "crossing",
    "house",
    "office",
    "garage",
    "store",
    "gas_station",
)

PEDESTRIAN_GOAL_LAYERS: tuple[str, ...] = ("house", "office", "store")
CAR_GOAL_LAYERS: tuple[str, ...] = ("garage", "gas_station", "store")

AGENT_KINDS = ("pedestrian", "car")


class WorldError(ValueError):
    pass


@dataclass(frozen=True)
class StreetBand:
    orientation: str  # "h" rows lo..hi, "v" columns lo..hi
    lo: int
    hi: int


@dataclass
class StaticMap:
    width: int
    height: int
    layers: dict[str, np.ndarray]  # name -> bool[height, width]
    streets: tuple[StreetBand, ...] = ()
    # Derived at construction:
    region_id: np.ndarray = field(init=False)  # junction component per cell, -1 outside
    at_region_id: np.ndarray = field(init=False)  # adjacent-band region id, -1 outside
    n_regions: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        missing = [n for n in LAYER_NAMES if n not in self.layers]
        if missing:
            raise WorldError(f"map is missing layers: {missing}")
        for name, grid in self.layers.items():
            if grid.shape != (self.height, self.width):
                raise WorldError(f"layer {name} has shape {grid.shape}")
        self._frontage_cache: dict[str, list[Cell]] = {}
        self._label_regions()

    # -- masks ---------------------------------------------------------------

    @property
    def walkable(self) -> np.ndarray:
        return self.layers["walking_street"] | self.layers["crossing"]

    @property
    def drivable(self) -> np.ndarray:
        return self.layers["traffic_street"]

    def mask_for(self, kind: str) -> np.ndarray:
        return self.walkable if kind == "pedestrian" else self.drivable

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def frontage(self, kind: str) -> list[Cell]:
        """Legal start/goal cells: movable cells touching the kind's buildings."""
        cached = self._frontage_cache.get(kind)
        if cached is not None:
            return cached
        names = PEDESTRIAN_GOAL_LAYERS if kind == "pedestrian" else CAR_GOAL_LAYERS
        building = np.zeros((self.height, self.width), dtype=bool)
        for n in names:
            building |= self.layers[n]
        movable = self.mask_for(kind)
        out: list[Cell] = []
        for y in range(self.height):
            for x in range(self.width):
                if not movable[y, x]:
                    continue
                y0, y1 = max(0, y - 1), min(self.height, y + 2)
                x0, x1 = max(0, x - 1), min(self.width, x + 2)
                if building[y0:y1, x0:x1].any():
                    out.append((x, y))
        self._frontage_cache[kind] = out
        return out

    # -- junction regions ------------------------------------------------------

    def _label_regions(self) -> None:
        overlap = np.zeros((self.height, self.width), dtype=np.int8)
        for band in self.streets:
            m = np.zeros((self.height, self.width), dtype=bool)
            if band.orientation == "h":
                m[band.lo : band.hi + 1, :] = True
            else:
                m[:, band.lo : band.hi + 1] = True
            overlap += m.astype(np.int8)
        region_mask = self.layers["crossing"] | (overlap >= 2)

        region_id = np.full((self.height, self.width), -1, dtype=np.int32)
        next_id = 0
        for y in range(self.height):
            for x in range(self.width):
                if not region_mask[y, x] or region_id[y, x] >= 0:
                    continue
                stack = [(x, y)]
                region_id[y, x] = next_id
                while stack:
                    cx, cy = stack.pop()
                    for nx, ny in ((cx, cy - 1), (cx + 1, cy), (cx, cy + 1), (cx - 1, cy)):
                        if 0 <= nx < self.width and 0 <= ny < self.height:
                            if region_mask[ny, nx] and region_id[ny, nx] < 0:
                                region_id[ny, nx] = next_id
                                stack.append((nx, ny))
                next_id += 1

        at_id = np.full((self.height, self.width), -1, dtype=np.int32)
        for y in range(self.height):
            for x in range(self.width):
                if region_id[y, x] >= 0:
                    continue
                y0, y1 = max(0, y - 1), min(self.height, y + 2)
                x0, x1 = max(0, x - 1), min(self.width, x + 2)
                near = region_id[y0:y1, x0:x1]
                ids = near[near >= 0]
                if ids.size:
                    at_id[y, x] = int(ids.min())

        self.region_id = region_id
        self.at_region_id = at_id
        self.n_regions = next_id

    def in_intersection(self, cell: Cell) -> bool:
        return self.region_id[cell[1], cell[0]] >= 0

    def at_intersection(self, cell: Cell) -> bool:
        return self.at_region_id[cell[1], cell[0]] >= 0

    # -- serialization ---------------------------------------------------------

    @staticmethod
    def from_json(path: str | Path) -> "StaticMap":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        w, h = int(raw["width"]), int(raw["height"])
        layers: dict[str, np.ndarray] = {}
        for name in LAYER_NAMES:
            grid = np.zeros((h, w), dtype=bool)
            for run in raw["layers"].get(name, ()):
                x, y, length = run
                grid[y, x : x + length] = True
            layers[name] = grid
        streets = tuple(
            StreetBand(s["orientation"], int(s["lo"]), int(s["hi"]))
            for s in raw.get("streets", ())
        )
        return StaticMap(w, h, layers, streets)

    def to_json(self) -> str:
        enc: dict[str, list[list[int]]] = {}
        for name in LAYER_NAMES:
            grid = self.layers[name]
            runs: list[list[int]] = []
            for y in range(self.height):
                x = 0
                while x < self.width:
                    if grid[y, x]:
                        start = x
                        while x < self.width and grid[y, x]:
                            x += 1
                        runs.append([start, y, x - start])
                    else:
                        x += 1
            enc[name] = runs
        return json.dumps(
            {
                "width": self.width,
                "height": self.height,
                "layers": enc,
                "streets": [
                    {"orientation": s.orientation, "lo": s.lo, "hi": s.hi} for s in self.streets
                ],
            }
        )


@dataclass
class Agent:
    id: int
    kind: str
    concepts: frozenset[str]
    priority: float
    pos: Cell = (0, 0)
    heading: str = "E"
    size: tuple[int, int] = (1, 1)
    path: list[Cell] = field(default_factory=list)  # upcoming cells, pos excluded
    goal: Cell = (0, 0)
    goals_reached: int = 0

    def next_cells(self, k: int) -> tuple[Cell, ...]:
        return tuple(self.path[:k])

    def at_goal(self) -> bool:
        return not self.path and self.pos == self.goal


@dataclass
class CityState:
    static: StaticMap
    agents: list[Agent]
    t: int = 0
    road_graph: object | None = None  # planner.RoadGraph, built at load

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def agent(self, agent_id: int) -> Agent:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise WorldError(f"unknown agent id {agent_id}")

    def dynamic_layers(self) -> np.ndarray:
        """One boolean grid per agent: current cell plus remaining planned path."""
        out = np.zeros((len(self.agents), self.static.height, self.static.width), dtype=bool)
        for i, a in enumerate(self.agents):
            out[i, a.pos[1], a.pos[0]] = True
            for (x, y) in a.path:
                out[i, y, x] = True
        return out

    def full_shape(self) -> tuple[int, int, int]:
        return (self.static.width, self.static.height, len(LAYER_NAMES) + len(self.agents))

    def digest(self) -> str:
        payload = {
            "t": self.t,
            "agents": [
                [a.id, a.kind, sorted(a.concepts), a.priority, list(a.pos), a.heading,
                 list(a.goal), [list(c) for c in a.path]]
                for a in self.agents
            ],
        }
        data = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class FovAgent:
    """Snapshot of one agent as seen inside an observation window."""

    id: int
    kind: str
    concepts: frozenset[str]
    priority: float
    pos: Cell
    heading: str
    next3: tuple[Cell, ...]
    in_inter: bool
    at_inter: bool


@dataclass(frozen=True)
class Fov:
    owner: int
    center: Cell
    radius: int
    bounds: tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive
    visible: tuple[FovAgent, ...]  # owner first
    static: StaticMap

    @property
    def n_real(self) -> int:
        return len(self.visible)

    def window(self, layer: str) -> np.ndarray:
        x0, y0, x1, y1 = self.bounds
        return self.static.layers[layer][y0 : y1 + 1, x0 : x1 + 1]

    def contains(self, cell: Cell) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= cell[0] <= x1 and y0 <= cell[1] <= y1


def _snapshot(agent: Agent, static: StaticMap) -> FovAgent:
    # "At" a junction means about to enter it: the next planned cell is inside
    # a region while the agent itself is not. A band-adjacent agent that is
    # leaving or merely passing by does not count, otherwise agents stopped on
    # the outbound lane would freeze the agents still inside behind them.
    in_inter = static.in_intersection(agent.pos)
    at_inter = (
        not in_inter and bool(agent.path) and static.in_intersection(agent.path[0])
    )
    return FovAgent(
        id=agent.id,
        kind=agent.kind,
        concepts=agent.concepts,
        priority=agent.priority,
        pos=agent.pos,
        heading=agent.heading,
        next3=agent.next_cells(3),
        in_inter=in_inter,
        at_inter=at_inter,
    )


def crop_fov(state: CityState, agent_id: int, radius: int, max_agents: int) -> Fov:
    """Square observation window around an agent, owner always listed first.

    Other agents inside the window are ordered by Chebyshev distance with ties
    broken by id, then truncated to ``max_agents`` entries total.
    """
    if radius < 1:
        raise WorldError("fov radius must be >= 1")
    owner = state.agent(agent_id)
    cx, cy = owner.pos
    x0, y0 = max(0, cx - radius), max(0, cy - radius)
    x1 = min(state.static.width - 1, cx + radius)
    y1 = min(state.static.height - 1, cy + radius)
    others = [
        a
        for a in state.agents
        if a.id != agent_id and chebyshev(a.pos, owner.pos) <= radius
    ]
    others.sort(key=lambda a: (chebyshev(a.pos, owner.pos), a.id))
    kept = [owner, *others][:max_agents]
    views = tuple(_snapshot(a, state.static) for a in kept)
    return Fov(agent_id, owner.pos, radius, (x0, y0, x1, y1), views, state.static)


def apply_moves(state: CityState, moves: dict[int, list[Cell]], speed_bound: int = 3) -> CityState:
    """Advance agents along their planned paths, yielding on cell conflicts.

    Agents commit in descending priority order (ties by id). An agent walks its
    move cell by cell and halts before any cell still occupied, so two agents
    never share a cell and position swaps are impossible. Earlier movers vacate
    cells for later ones within the same tick.
    """
    for agent_id, move in moves.items():
        agent = state.agent(agent_id)
        if len(move) > speed_bound:
            raise WorldError(f"agent {agent_id}: move of {len(move)} exceeds speed bound {speed_bound}")
        if list(move) != agent.path[: len(move)]:
            raise WorldError(f"agent {agent_id}: move is not a prefix of its planned path")

    occupied = {a.pos for a in state.agents}
    order = sorted(state.agents, key=lambda a: (-a.priority, a.id))
    for agent in order:
        move = moves.get(agent.id, [])
        if not move:
            continue
        occupied.discard(agent.pos)
        taken = 0
        for cell in move:
            if cell in occupied:
                break
            taken += 1
        if taken:
            agent.heading = heading_of_step(move[taken - 2] if taken >= 2 else agent.pos, move[taken - 1])
            agent.pos = move[taken - 1]
            agent.path = agent.path[taken:]
        occupied.add(agent.pos)
    state.t += 1
    return state


# --- configuration loading ---------------------------------------------------


def load_roster(source: str | Path | dict, registry: PredicateRegistry) -> list[Agent]:
    raw = source if isinstance(source, dict) else json.loads(Path(source).read_text(encoding="utf-8"))
    semantic = set(registry.semantic_unaries())
    agents: list[Agent] = []
    priorities: set[float] = set()
    for i, spec in enumerate(raw["agents"]):
        kind = spec["kind"]
        if kind not in AGENT_KINDS:
            raise WorldError(f"agent {i}: unknown kind {kind!r}")
        concepts = set(spec.get("concepts", ()))
        unknown = concepts - semantic
        if unknown:
            raise WorldError(f"agent {i}: concepts not in registry: {sorted(unknown)}")
        kind_concept = "IsPedestrian" if kind == "pedestrian" else "IsCar"
        other = "IsCar" if kind == "pedestrian" else "IsPedestrian"
        if other in concepts:
            raise WorldError(f"agent {i}: concept {other} contradicts kind {kind}")
        concepts.add(kind_concept)
        p = float(spec["priority"])
        if not (0.0 <= p <= 1.0):
            raise WorldError(f"agent {i}: priority {p} outside [0, 1]")
        if p in priorities:
            raise WorldError(f"agent {i}: duplicate priority {p}; priorities must be distinct")
        priorities.add(p)
        size = tuple(spec.get("size", (1, 1)))
        agents.append(Agent(id=i, kind=kind, concepts=frozenset(concepts), priority=p, size=size))
    return agents


def load_config(
    map_file: str | Path,
    agents_file: str | Path | dict,
    registry: PredicateRegistry,
    seed: int,
    max_retries: int = 1000,
) -> CityState:
    """Load map and roster, place agents collision-free, and plan initial paths.

    Placement and goal choice draw from per-agent seeded streams, so the result
    is a pure function of (files, registry, seed).
    """
    from . import planner  # runtime import; planner only type-references this module

    static = StaticMap.from_json(map_file)
    agents = load_roster(agents_file, registry)
    graph = planner.build_road_graph(static)
    frontages = {k: static.frontage(k) for k in AGENT_KINDS}
    occupied: set[Cell] = set()
    for agent in agents:
        candidates = frontages[agent.kind]
        if not candidates:
            raise WorldError(f"no legal start cells for kind {agent.kind}")
        rng = np.random.default_rng([seed, 0, agent.id])
        placed = False
        for _ in range(max_retries):
            start = candidates[int(rng.integers(len(candidates)))]
            if start in occupied:
                continue
            goal = candidates[int(rng.integers(len(candidates)))]
            if goal == start:
                continue
            try:
                path = planner.plan(static, graph, agent.kind, start, goal)
            except planner.PlanError:
                continue
            agent.pos = start
            agent.goal = goal
            agent.path = path
            agent.heading = heading_of_step(start, path[0]) if path else agent.heading
            occupied.add(start)
            placed = True
            break
        if not placed:
            raise WorldError(f"could not place agent {agent.id} after {max_retries} retries")
    return CityState(static=static, agents=agents, t=0, road_graph=graph)
