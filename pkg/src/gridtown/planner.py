"""Global path construction.

Pedestrians take 4-connected A* over the movable region (walking streets plus
crossings) with a Manhattan heuristic. Cars drive a directed one-way road
graph built from the traffic street bands: each street carries two antiparallel
two-lane halves under right-hand traffic, junction boxes union both streets'
directions (which is what allows turns), and two-cell turnaround zones at the
map border close every street into a loop so the graph stays strongly
connected.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .geom import Cell, DELTA, manhattan, right_of_heading

if TYPE_CHECKING:  # pragma: no cover
    import numpy as np

    from .world import Agent, CityState, StaticMap


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class RoadGraph:
    directions: dict[Cell, frozenset[str]]
    edges: dict[Cell, tuple[Cell, ...]]

    @property
    def nodes(self) -> set[Cell]:
        return set(self.directions)

    def has_edge(self, u: Cell, v: Cell) -> bool:
        return v in self.edges.get(u, ())


def _lane_directions(static: "StaticMap") -> dict[Cell, set[str]]:
    dirs: dict[Cell, set[str]] = {}
    w, h = static.width, static.height
    for band in static.streets:
        lanes = band.hi - band.lo + 1
        half = lanes // 2
        if band.orientation == "h":
            for y in range(band.lo, band.hi + 1):
                d = "W" if y < band.lo + half else "E"
                lane_lo = band.lo if d == "W" else band.lo + half
                lane_hi = band.lo + half - 1 if d == "W" else band.hi
                for x in range(w):
                    cell = dirs.setdefault((x, y), set())
                    cell.add(d)
                    # Lane changes between same-direction sibling lanes.
                    if y < lane_hi:
                        cell.add("S")
                    if y > lane_lo:
                        cell.add("N")
            # Border turnarounds: westbound crosses to eastbound at x=0, and
            # eastbound back to westbound at x=w-1.
            for x in (0, 1):
                for y in range(band.lo, band.hi):
                    dirs.setdefault((x, y), set()).add("S")
            for x in (w - 2, w - 1):
                for y in range(band.lo + 1, band.hi + 1):
                    dirs.setdefault((x, y), set()).add("N")
        else:
            for x in range(band.lo, band.hi + 1):
                d = "S" if x < band.lo + half else "N"
                lane_lo = band.lo if d == "S" else band.lo + half
                lane_hi = band.lo + half - 1 if d == "S" else band.hi
                for y in range(h):
                    cell = dirs.setdefault((x, y), set())
                    cell.add(d)
                    if x < lane_hi:
                        cell.add("E")
                    if x > lane_lo:
                        cell.add("W")
            for y in (0, 1):
                for x in range(band.lo + 1, band.hi + 1):
                    dirs.setdefault((x, y), set()).add("W")
            for y in (h - 2, h - 1):
                for x in range(band.lo, band.hi):
                    dirs.setdefault((x, y), set()).add("E")
    return dirs


def build_road_graph(static: "StaticMap") -> RoadGraph:
    drivable = static.drivable
    dirs = _lane_directions(static)
    directions: dict[Cell, frozenset[str]] = {}
    edges: dict[Cell, tuple[Cell, ...]] = {}
    for (x, y), ds in dirs.items():
        if not drivable[y, x]:
            continue
        outs = []
        for d in sorted(ds):
            dx, dy = DELTA[d]
            nx, ny = x + dx, y + dy
            if 0 <= nx < static.width and 0 <= ny < static.height and drivable[ny, nx]:
                outs.append((nx, ny))
        directions[(x, y)] = frozenset(ds)
        edges[(x, y)] = tuple(outs)
    return RoadGraph(directions, edges)


def plan_car(graph: RoadGraph, start: Cell, goal: Cell) -> list[Cell]:
    """Minimum-cost directed path on the road graph, start and goal included."""
    if start not in graph.edges:
        raise PlanError(f"car start {start} is not on the road graph")
    if goal not in graph.edges:
        raise PlanError(f"car goal {goal} is not on the road graph")
    if start == goal:
        raise PlanError("start equals goal")
    dist: dict[Cell, int] = {start: 0}
    prev: dict[Cell, Cell] = {}
    counter = 0
    heap: list[tuple[int, int, Cell]] = [(0, counter, start)]
    while heap:
        d, _, u = heapq.heappop(heap)
        if u == goal:
            break
        if d > dist.get(u, 1 << 30):
            continue
        for v in graph.edges[u]:
            nd = d + 1
            if nd < dist.get(v, 1 << 30):
                dist[v] = nd
                prev[v] = u
                counter += 1
                heapq.heappush(heap, (nd, counter, v))
    if goal not in prev:
        raise PlanError(f"goal {goal} unreachable from {start} under one-way constraints")
    path = [goal]
    while path[-1] != start:
        path.append(prev[path[-1]])
    path.reverse()
    return path


def plan_pedestrian(static: "StaticMap", start: Cell, goal: Cell) -> list[Cell]:
    """Shortest 4-connected path over the movable region, start and goal included.

    Ties between equal-length paths are broken toward hugging the right-hand
    wall of the corridor, which keeps opposing pedestrian flows on different
    rows of two-cell-wide walkways. The tie-break weight is small enough that
    returned paths are always length-optimal.
    """
    movable = static.walkable
    for label, cell in (("start", start), ("goal", goal)):
        if not static.in_bounds(cell) or not movable[cell[1], cell[0]]:
            raise PlanError(f"pedestrian {label} {cell} is not on a walking street or crossing")
    if start == goal:
        raise PlanError("start equals goal")
    eps = 1.0 / (4.0 * static.width * static.height)
    best: dict[Cell, float] = {start: 0.0}
    prev: dict[Cell, Cell] = {}
    counter = 0
    heap: list[tuple[float, int, Cell]] = [(float(manhattan(start, goal)), counter, start)]
    closed: set[Cell] = set()
    while heap:
        _, _, u = heapq.heappop(heap)
        if u == goal:
            break
        if u in closed:
            continue
        closed.add(u)
        for d, (dx, dy) in DELTA.items():
            v = (u[0] + dx, u[1] + dy)
            if not static.in_bounds(v) or not movable[v[1], v[0]]:
                continue
            rx, ry = right_of_heading(d)
            inner = (v[0] + rx, v[1] + ry)
            off_wall = static.in_bounds(inner) and movable[inner[1], inner[0]]
            cost = best[u] + 1.0 + (eps if off_wall else 0.0)
            if cost < best.get(v, float("inf")):
                best[v] = cost
                prev[v] = u
                counter += 1
                heapq.heappush(heap, (cost + manhattan(v, goal), counter, v))
    if goal not in prev:
        raise PlanError(f"goal {goal} unreachable from {start} on foot")
    path = [goal]
    while path[-1] != start:
        path.append(prev[path[-1]])
    path.reverse()
    return path


def plan(static: "StaticMap", graph: RoadGraph, kind: str, start: Cell, goal: Cell) -> list[Cell]:
    """Plan for an agent kind; returns upcoming cells with the start excluded."""
    full = plan_pedestrian(static, start, goal) if kind == "pedestrian" else plan_car(graph, start, goal)
    return full[1:]


def resample_goal(state: "CityState", agent_id: int, rng: "np.random.Generator") -> Cell:
    """Uniform draw over the agent kind's legal goal cells, excluding its cell."""
    agent = state.agent(agent_id)
    if not agent.at_goal():
        raise PlanError(f"agent {agent_id} has not reached its goal")
    candidates = [c for c in state.static.frontage(agent.kind) if c != agent.pos]
    if not candidates:
        raise PlanError(f"no legal goal cells for kind {agent.kind}")
    return candidates[int(rng.integers(len(candidates)))]


def replan_after_goal(state: "CityState", agent: "Agent", rng: "np.random.Generator",
                      max_retries: int = 100) -> None:
    """Resample a reached agent's goal and plan a fresh path, retrying on draws
    that are unreachable from its current cell."""
    for _ in range(max_retries):
        goal = resample_goal(state, agent.id, rng)
        try:
            path = plan(state.static, state.road_graph, agent.kind, agent.pos, goal)
        except PlanError:
            continue
        agent.goal = goal
        agent.path = path
        return
    raise PlanError(f"agent {agent.id}: no reachable goal after {max_retries} draws")
