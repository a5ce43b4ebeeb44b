"""Deterministic tile compositor: grid states to RGB frames.

Icons come from a procedurally generated placeholder library by default; an
asset directory laid out as ``assets/<semantic>/<k>.png`` overrides it. Icon
choice per cell is a stable hash of (seed, cell, semantic), so frames are
reproducible for a seed yet vary across seeds and cells.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .world import CityState, LAYER_NAMES

# Agent icon semantics, most specific first; the first concept an agent carries
# decides its icon.
AGENT_SEMANTICS: tuple[str, ...] = (
    "ambulance",
    "bus",
    "police",
    "tiro",
    "reckless",
    "old",
    "young",
    "car",
    "pedestrian",
)

ALL_SEMANTICS: tuple[str, ...] = LAYER_NAMES + AGENT_SEMANTICS

_BASE_COLORS: dict[str, tuple[int, int, int]] = {
    "walking_street": (189, 183, 170),
    "traffic_street": (70, 70, 75),
    "crossing": (225, 225, 220),
    "house": (178, 110, 70),
    "office": (110, 130, 180),
    "garage": (120, 120, 95),
    "store": (200, 160, 70),
    "gas_station": (170, 80, 80),
    "pedestrian": (240, 220, 180),
    "car": (60, 110, 200),
    "ambulance": (250, 250, 250),
    "bus": (240, 200, 40),
    "police": (30, 40, 120),
    "tiro": (120, 220, 120),
    "reckless": (220, 60, 60),
    "old": (150, 150, 160),
    "young": (255, 170, 190),
}

GROUND_COLOR = (96, 128, 88)


class RenderError(ValueError):
    pass


def _stable_hash(*parts) -> int:
    data = ":".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "big")


def _make_icon(semantic: str, variant: int, tile: int) -> np.ndarray:
    base = np.array(_BASE_COLORS[semantic], dtype=np.int16)
    icon = np.zeros((tile, tile, 3), dtype=np.int16)
    icon[:, :] = base
    # Variant-keyed shading bands plus a darker rim; purely hash-driven.
    h = _stable_hash("icon", semantic, variant)
    shade = ((h >> 8) % 41) - 20
    icon[:: max(2, (h % 3) + 2), :] += shade
    icon[:, :: max(2, ((h >> 4) % 3) + 2)] += shade // 2
    rim = max(1, tile // 16)
    icon[:rim, :] -= 30
    icon[-rim:, :] -= 30
    icon[:, :rim] -= 30
    icon[:, -rim:] -= 30
    if semantic in AGENT_SEMANTICS:
        # Inset disc so agents read differently from ground tiles.
        yy, xx = np.mgrid[0:tile, 0:tile]
        c = (tile - 1) / 2.0
        disc = (yy - c) ** 2 + (xx - c) ** 2 <= (tile * 0.38) ** 2
        icon[~disc] = (icon[~disc] * 0.35).astype(np.int16)
    return np.clip(icon, 0, 255).astype(np.uint8)


@dataclass
class AssetLibrary:
    tile: int
    icons: dict[str, list[np.ndarray]]

    def __post_init__(self) -> None:
        for sem, variants in self.icons.items():
            if not variants:
                raise RenderError(f"semantic {sem!r} has no icons")
            for icon in variants:
                if icon.shape != (self.tile, self.tile, 3):
                    raise RenderError(
                        f"icon for {sem!r} has shape {icon.shape}, want ({self.tile},{self.tile},3)"
                    )

    def check_complete(self, semantics: tuple[str, ...] = ALL_SEMANTICS) -> None:
        missing = [s for s in semantics if s not in self.icons]
        if missing:
            raise RenderError(f"asset library is missing semantics: {missing}")

    @staticmethod
    def procedural(tile: int = 32, variants: int = 4) -> "AssetLibrary":
        icons = {
            sem: [_make_icon(sem, v, tile) for v in range(variants)] for sem in ALL_SEMANTICS
        }
        return AssetLibrary(tile, icons)

    @staticmethod
    def load(directory: str | Path) -> "AssetLibrary":
        from PIL import Image

        directory = Path(directory)
        icons: dict[str, list[np.ndarray]] = {}
        tile: int | None = None
        for sem_dir in sorted(p for p in directory.iterdir() if p.is_dir()):
            variants = []
            for f in sorted(sem_dir.glob("*.png")):
                arr = np.asarray(Image.open(f).convert("RGB"))
                if arr.shape[0] != arr.shape[1]:
                    raise RenderError(f"icon {f} is not square")
                if tile is None:
                    tile = arr.shape[0]
                elif arr.shape[0] != tile:
                    raise RenderError(f"icon {f} size {arr.shape[0]} != library size {tile}")
                variants.append(arr)
            if variants:
                icons[sem_dir.name] = variants
        if tile is None:
            raise RenderError(f"no icons found under {directory}")
        return AssetLibrary(tile, icons)


def agent_semantic(concepts: frozenset[str]) -> str:
    for sem in AGENT_SEMANTICS:
        if f"Is{sem.capitalize()}" in concepts:
            return sem
    return "pedestrian"


@dataclass(frozen=True)
class Frame:
    pixels: np.ndarray  # (H*tile, W*tile, 3) uint8
    tile: int
    provenance: tuple[tuple, ...]  # ("layer"|"agent", key, x, y, semantic, icon index)

    @property
    def size(self) -> tuple[int, int]:
        return (self.pixels.shape[1], self.pixels.shape[0])


def render_frame(
    state: CityState,
    assets: AssetLibrary,
    seed: int,
    draw_paths: bool = False,
) -> Frame:
    """Composite static layers (fixed z-order) then agents onto an RGB canvas."""
    assets.check_complete()
    static = state.static
    t = assets.tile
    pixels = np.empty((static.height * t, static.width * t, 3), dtype=np.uint8)
    pixels[:, :] = GROUND_COLOR
    provenance: list[tuple] = []
    for name in LAYER_NAMES:
        grid = state.static.layers[name]
        variants = assets.icons[name]
        for y in range(static.height):
            for x in range(static.width):
                if not grid[y, x]:
                    continue
                k = _stable_hash(seed, x, y, name) % len(variants)
                pixels[y * t : (y + 1) * t, x * t : (x + 1) * t] = variants[k]
                provenance.append(("layer", name, x, y, k))
    if draw_paths:
        for a in state.agents:
            for (x, y) in a.path:
                block = pixels[y * t : (y + 1) * t, x * t : (x + 1) * t]
                block[:] = (block * 0.7 + np.array((80, 20, 20)) * 0.3).astype(np.uint8)
    for a in state.agents:
        sem = agent_semantic(a.concepts)
        variants = assets.icons[sem]
        k = _stable_hash(seed, "agent", a.id, sem) % len(variants)
        x, y = a.pos
        w, h = a.size
        for dy in range(h):
            for dx in range(w):
                pixels[(y + dy) * t : (y + dy + 1) * t, (x + dx) * t : (x + dx + 1) * t] = variants[k]
        provenance.append(("agent", a.id, x, y, sem, k))
    return Frame(pixels, t, tuple(provenance))


def write_image(frame: Frame, path: str | Path, format: str = "ppm") -> None:
    """Write a frame; PPM output is canonical (P6, single-space header, maxval 255)."""
    path = Path(path)
    w, h = frame.size
    if format == "ppm":
        header = f"P6 {w} {h} 255\n".encode("ascii")
        path.write_bytes(header + frame.pixels.tobytes())
    elif format == "png":
        from PIL import Image

        Image.fromarray(frame.pixels).save(path, format="PNG")
    else:
        raise RenderError(f"unsupported image format {format!r}")


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise RenderError("not a P6 PPM file")
    w, h, maxval = int(m.group(1)), int(m.group(2)), int(m.group(3))
    if maxval != 255:
        raise RenderError("only maxval 255 supported")
    body = data[m.end() :]
    return np.frombuffer(body[: w * h * 3], dtype=np.uint8).reshape(h, w, 3)
