"""Grid geometry primitives shared by the map, planner, and predicate evaluators.

Coordinates are (x, y) cell tuples with x growing east and y growing south
(screen convention). Headings are the four cardinal directions.
"""

from __future__ import annotations

Cell = tuple[int, int]

HEADINGS: tuple[str, ...] = ("N", "E", "S", "W")

# Unit step per heading, screen coordinates (y grows downward).
DELTA: dict[str, Cell] = {"N": (0, -1), "E": (1, 0), "S": (0, 1), "W": (-1, 0)}

_HEADING_OF_DELTA = {v: k for k, v in DELTA.items()}


def heading_of_step(src: Cell, dst: Cell) -> str:
    """Heading that moves one cell from src to dst; raises for non-unit steps."""
    d = (dst[0] - src[0], dst[1] - src[1])
    try:
        return _HEADING_OF_DELTA[d]
    except KeyError:
        raise ValueError(f"not a unit grid step: {src} -> {dst}") from None


def chebyshev(a: Cell, b: Cell) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def manhattan(a: Cell, b: Cell) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def neighbors4(cell: Cell, width: int, height: int) -> list[Cell]:
    x, y = cell
    out = []
    for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0)):
        nx, ny = x + dx, y + dy
        if 0 <= nx < width and 0 <= ny < height:
            out.append((nx, ny))
    return out


def side_of(pos: Cell, origin: Cell, heading: str) -> int:
    """Signed side of ``pos`` relative to an observer at ``origin`` facing ``heading``.

    Positive means strictly left of the observer, negative strictly right,
    zero means on the line of travel (dead ahead or behind).
    """
    dx, dy = DELTA[heading]
    vx, vy = pos[0] - origin[0], pos[1] - origin[1]
    # With y pointing down, (vx*dy - vy*dx) > 0 lands in the left half-plane.
    return vx * dy - vy * dx


def right_of_heading(heading: str) -> Cell:
    dx, dy = DELTA[heading]
    return (-dy, dx)
