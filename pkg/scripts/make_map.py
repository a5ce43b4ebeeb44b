#!/usr/bin/env python3
"""Generate the shipped 60x60 demo map.

Layout: two vertical and two horizontal four-wide traffic streets under
right-hand, one-way lane discipline; two-wide walking streets flanking every
traffic street; zebra crossings where walkways meet streets (all adjacent to
the four junction boxes). Houses and offices sit inside the blocks against the
walkways; garages, stores, and gas stations occupy street-side walkway cells
(the cells stay walkable) so both pedestrians and cars can front them.

Run from the repo root:  python scripts/make_map.py
"""

from __future__ import annotations

import sys
from collections import deque
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from gridtown.planner import build_road_graph  # noqa: E402
from gridtown.world import LAYER_NAMES, StaticMap, StreetBand  # noqa: E402

W = H = 60
V_STREETS = [(14, 17), (42, 45)]
H_STREETS = [(14, 17), (42, 45)]
V_WALKS = [(12, 13), (18, 19), (40, 41), (46, 47)]
H_WALKS = [(12, 13), (18, 19), (40, 41), (46, 47)]

# y-windows (for vertical walkway strips) and x-windows (horizontal ones) where
# street-side businesses may sit; all are at least two cells from any crossing.
SPECIAL_WINDOWS = [(4, 5), (8, 9), (24, 25), (30, 31), (36, 37), (52, 53), (56, 57)]
SPECIAL_CYCLE = ("garage", "store", "gas_station")

# Inner-building windows along block edges, clear of walkway corner areas.
INNER_WINDOWS = [(2, 3), (6, 7), (24, 25), (28, 29), (34, 35), (50, 51), (54, 55)]


def build() -> StaticMap:
    layers = {name: np.zeros((H, W), dtype=bool) for name in LAYER_NAMES}
    traffic = layers["traffic_street"]
    for lo, hi in V_STREETS:
        traffic[:, lo : hi + 1] = True
    for lo, hi in H_STREETS:
        traffic[lo : hi + 1, :] = True

    walk_band = np.zeros((H, W), dtype=bool)
    for lo, hi in V_WALKS:
        walk_band[:, lo : hi + 1] = True
    for lo, hi in H_WALKS:
        walk_band[lo : hi + 1, :] = True
    layers["crossing"][:] = walk_band & traffic
    layers["walking_street"][:] = walk_band & ~traffic

    # Street-side businesses on the outer walkway strip of every vertical and
    # horizontal walkway band; the cells stay walkable.
    def outer_strips() -> list[tuple[str, int]]:
        strips: list[tuple[str, int]] = []
        for lo, hi in V_WALKS:
            outer = hi if traffic[:, hi + 1 : hi + 2].any() else lo
            strips.append(("v", outer))
        for lo, hi in H_WALKS:
            outer = hi if traffic[hi + 1 : hi + 2, :].any() else lo
            strips.append(("h", outer))
        return strips

    cycle = 0
    for axis, strip in outer_strips():
        for a0, a1 in SPECIAL_WINDOWS:
            name = SPECIAL_CYCLE[cycle % len(SPECIAL_CYCLE)]
            cycle += 1
            if axis == "v":
                if layers["walking_street"][a0, strip] and layers["walking_street"][a1, strip]:
                    layers[name][a0 : a1 + 1, strip] = True
            else:
                if layers["walking_street"][strip, a0] and layers["walking_street"][strip, a1]:
                    layers[name][strip, a0 : a1 + 1] = True

    # Houses and offices just inside the blocks, against the inner walkway strip.
    inner_cols = [lo - 1 for lo, _ in V_WALKS] + [hi + 1 for _, hi in V_WALKS]
    inner_rows = [lo - 1 for lo, _ in H_WALKS] + [hi + 1 for _, hi in H_WALKS]
    toggle = 0
    for x in inner_cols:
        for a0, a1 in INNER_WINDOWS:
            name = "house" if toggle % 2 == 0 else "office"
            toggle += 1
            block = ~walk_band & ~traffic
            if block[a0, x] and block[a1, x]:
                layers[name][a0 : a1 + 1, x] = True
    for y in inner_rows:
        for a0, a1 in INNER_WINDOWS:
            name = "house" if toggle % 2 == 0 else "office"
            toggle += 1
            block = ~walk_band & ~traffic
            if block[y, a0] and block[y, a1]:
                layers[name][y, a0 : a1 + 1] = True

    streets = tuple(
        [StreetBand("v", lo, hi) for lo, hi in V_STREETS]
        + [StreetBand("h", lo, hi) for lo, hi in H_STREETS]
    )
    return StaticMap(W, H, layers, streets)


def check(static: StaticMap) -> None:
    walkable = static.walkable
    cells = [(x, y) for y in range(H) for x in range(W) if walkable[y, x]]
    seen = {cells[0]}
    queue = deque([cells[0]])
    while queue:
        x, y = queue.popleft()
        for nx, ny in ((x, y - 1), (x + 1, y), (x, y + 1), (x - 1, y)):
            if 0 <= nx < W and 0 <= ny < H and walkable[ny, nx] and (nx, ny) not in seen:
                seen.add((nx, ny))
                queue.append((nx, ny))
    assert len(seen) == len(cells), f"walkable region disconnected: {len(seen)}/{len(cells)}"

    graph = build_road_graph(static)
    nodes = sorted(graph.edges)
    fwd = {nodes[0]}
    queue = deque([nodes[0]])
    while queue:
        u = queue.popleft()
        for v in graph.edges[u]:
            if v not in fwd:
                fwd.add(v)
                queue.append(v)
    assert len(fwd) == len(nodes), f"road graph not connected forward: {len(fwd)}/{len(nodes)}"
    rev: dict[tuple[int, int], list[tuple[int, int]]] = {u: [] for u in nodes}
    for u in nodes:
        for v in graph.edges[u]:
            rev[v].append(u)
    bwd = {nodes[0]}
    queue = deque([nodes[0]])
    while queue:
        u = queue.popleft()
        for v in rev[u]:
            if v not in bwd:
                bwd.add(v)
                queue.append(v)
    assert len(bwd) == len(nodes), f"road graph not connected backward: {len(bwd)}/{len(nodes)}"

    for kind in ("pedestrian", "car"):
        fr = static.frontage(kind)
        assert len(fr) >= 40, f"{kind} frontage too small: {len(fr)}"

    assert static.n_regions == 4, f"expected 4 junction regions, got {static.n_regions}"
    assert (static.layers["crossing"] & ~static.layers["traffic_street"]).sum() == 0


def main() -> None:
    static = build()
    check(static)
    out = Path(__file__).resolve().parents[1] / "src" / "gridtown" / "configs" / "map_60.json"
    out.write_text(static.to_json() + "\n", encoding="utf-8")
    n_cells = {name: int(static.layers[name].sum()) for name in LAYER_NAMES}
    print(f"wrote {out}")
    print(f"layer cells: {n_cells}")
    print(f"junction regions: {static.n_regions}")
    print(f"pedestrian frontage: {len(static.frontage('pedestrian'))} cells")
    print(f"car frontage: {len(static.frontage('car'))} cells")


if __name__ == "__main__":
    main()
