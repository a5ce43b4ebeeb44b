"""Visual-action-prediction dataset generation and scoring.

Each exported frame stores the rendered image reference, one 9-value feature
row per agent (box center, box size, one-hot heading, priority), the action
label the rule engine mandated for that agent, the agent's own field-of-view
grounding (hex bits, so labels re-derive from the file alone), and the global
predicate truth tables over all agents that the natural-language serializer
consumes.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geom import Cell
from .grounding import GroundingSchema, GroundingVector, eval_binary, eval_unary
from .modes import resolve_mode
from .render import AssetLibrary, render_frame, write_image
from .rules import ACTIONS, PredicateRegistry
from .sim import SimConfig, Simulation
from .solver import resolve_actions
from .spf import derive_seed
from .world import Fov, StaticMap, _snapshot

HEADING_ORDER = ("N", "E", "S", "W")

CAR_EXTRAS = ("IsAmbulance", "IsBus", "IsPolice", "IsTiro", "IsReckless")
PED_EXTRAS = ("IsOld", "IsYoung")


def agent_features(state, tile: int) -> list[list[float]]:
    """One [x, y, w, h, d(4), p] row per agent, image-space pixels."""
    rows = []
    for a in state.agents:
        w, h = a.size
        cx = (a.pos[0] + w / 2.0) * tile
        cy = (a.pos[1] + h / 2.0) * tile
        d = [1.0 if a.heading == hd else 0.0 for hd in HEADING_ORDER]
        rows.append([cx, cy, float(w * tile), float(h * tile), *d, float(a.priority)])
    return rows


def global_tables(state, registry: PredicateRegistry, mode: str, fov_radius: int,
                  include_sees: bool = True) -> dict:
    """Predicate truth tables over all N agents (not field-of-view limited)."""
    static = state.static
    views = [_snapshot(a, static) for a in state.agents]
    scene = Fov(
        owner=0,
        center=(0, 0),
        radius=fov_radius,
        bounds=(0, 0, static.width - 1, static.height - 1),
        visible=tuple(views),
        static=static,
    )
    preds = list(registry.mode_predicates(mode))
    if include_sees and registry.get("Sees") is not None:
        preds.append(registry.get("Sees"))
    unary: dict[str, list[int]] = {}
    binary: dict[str, list[list[int]]] = {}
    n = len(views)
    for decl in preds:
        if decl.arity == 1:
            unary[decl.name] = [int(eval_unary(decl.name, v, scene)) for v in views]
        else:
            pairs = []
            for i in range(n):
                for j in range(n):
                    if i != j and eval_binary(decl.name, views[i], views[j], scene):
                        pairs.append([i, j])
            binary[decl.name] = pairs
    return {"unary": unary, "binary": binary}


def generate_roster(rng: np.random.Generator, n_lo: int = 10, n_hi: int = 14) -> dict:
    """Random agent composition for one generated city."""
    n = int(rng.integers(n_lo, n_hi + 1))
    agents = []
    priorities: set[float] = set()

    def draw_priority(lo: float, hi: float) -> float:
        while True:
            p = round(float(rng.uniform(lo, hi)), 6)
            if p not in priorities:
                priorities.add(p)
                return p

    for _ in range(n):
        if rng.random() < 0.55:
            kind = "car"
            r = rng.random()
            if r < 0.34:
                concepts: list[str] = []
            elif r < 0.44:
                concepts = ["IsAmbulance"]
            elif r < 0.52:
                concepts = ["IsBus"]
            elif r < 0.68:
                concepts = ["IsPolice"]
            elif r < 0.84:
                concepts = ["IsTiro"]
            else:
                concepts = ["IsReckless"]
            lo, hi = (0.75, 1.0) if "IsAmbulance" in concepts else (0.2, 0.75)
        else:
            kind = "pedestrian"
            r = rng.random()
            concepts = [] if r < 0.3 else (["IsOld"] if r < 0.65 else ["IsYoung"])
            lo, hi = (0.0, 0.4)
        agents.append({"kind": kind, "concepts": concepts, "priority": draw_priority(lo, hi)})
    return {"agents": agents}


def export_dataset(
    mode: str,
    out: str | Path,
    cities: int = 100,
    steps: int = 100,
    burn_in: int = 10,
    seed: int = 0,
    config: str = "random",
    roster: str | Path = "test",
    tile: int = 32,
    image_format: str = "png",
    include_sees: bool = True,
    map_path: str | Path | None = None,
) -> dict:
    """Simulate ``cities`` rule-governed cities and export frames after burn-in."""
    if steps <= burn_in:
        raise ValueError("steps must exceed burn_in")
    if config not in ("fixed", "random"):
        raise ValueError("config must be 'fixed' or 'random'")
    preset = resolve_mode(mode, "vap")
    out = Path(out)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "data").mkdir(parents=True, exist_ok=True)
    assets = AssetLibrary.procedural(tile) if image_format != "none" else None

    action_counts = {a: 0 for a in ACTIONS}
    files: list[str] = []
    content = hashlib.sha256()
    schema_len = None
    for c in range(cities):
        city_seed = derive_seed(seed, "city", c)
        cfg = SimConfig.from_preset(preset.name, roster=roster, seed=city_seed, map_path=map_path)
        if config == "random":
            roster_rng = np.random.default_rng([seed, 3, c])
            cfg.roster_data = generate_roster(roster_rng)
        sim = Simulation(cfg, controlled=False)
        if schema_len is None:
            schema_len = GroundingSchema.build(cfg.registry, cfg.mode, cfg.n_fov_agents).length
        for _ in range(steps):
            t = sim.state.t
            keep = t >= burn_in
            image_ref = None
            if keep and image_format != "none":
                frame = render_frame(sim.state, assets, seed=city_seed)
                image_ref = f"frames/c{c:03d}_t{t:03d}.{image_format}"
                write_image(frame, out / image_ref, image_format)
            tables = global_tables(sim.state, cfg.registry, cfg.mode, cfg.fov_radius,
                                   include_sees) if keep else None
            features = agent_features(sim.state, tile) if keep else None
            report = sim.step()
            if not keep:
                continue
            labels = [a.index for a in report.executed]
            for a in report.executed:
                action_counts[a.name] += 1
            record = {
                "frame": f"c{c:03d}_t{t:03d}",
                "city": c,
                "t": t,
                "mode": cfg.mode,
                "image": image_ref,
                "tile": tile,
                "n_agents": len(labels),
                "features": features,
                "labels": labels,
                "fov_groundings": [
                    {"bits": g.to_hex(), "n_real": g.n_real} for g in report.groundings
                ],
                "global": tables,
                "roster": [
                    {"kind": a.kind, "concepts": sorted(a.concepts), "priority": a.priority}
                    for a in sim.state.agents
                ],
            }
            name = f"data/{record['frame']}.json"
            payload = json.dumps(record, sort_keys=True, separators=(",", ":"))
            (out / name).write_text(payload + "\n", encoding="utf-8")
            content.update(payload.encode())
            files.append(name)

    frame_ids = [Path(f).stem for f in files]
    per_city = (steps - burn_in) if cities else 0
    train_cut = int(cities * 0.8) * per_city
    val_cut = int(cities * 0.9) * per_city
    manifest = {
        "mode": preset.name,
        "config": config,
        "cities": cities,
        "steps": steps,
        "burn_in": burn_in,
        "seed": seed,
        "tile": tile,
        "image_format": image_format,
        "include_sees": include_sees,
        "frames": len(files),
        "obs_len": schema_len,
        "action_counts": action_counts,
        "files": files,
        "splits": {
            "train": frame_ids[:train_cut],
            "val": frame_ids[train_cut:val_cut],
            "test": frame_ids[val_cut:],
        },
        "content_hash": content.hexdigest(),
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return manifest


def load_frame(data_dir: str | Path, frame_id: str) -> dict:
    return json.loads((Path(data_dir) / "data" / f"{frame_id}.json").read_text(encoding="utf-8"))


def rederive_labels(record: dict, registry: PredicateRegistry, rules, n_slots: int = 5) -> list[int]:
    """Recompute every agent's action from the stored grounding bits alone."""
    schema = GroundingSchema.build(registry, record["mode"], n_slots)
    out = []
    for g in record["fov_groundings"]:
        vec = GroundingVector.from_hex(schema, g["bits"], g["n_real"])
        action, _ = resolve_actions(vec, rules)
        out.append(action.index)
    return out


# --- natural-language serialization ------------------------------------------


def serialize_scene_nl(record: dict, query_agent: int, registry: PredicateRegistry,
                       mode: str | None = None) -> str:
    """Render one frame as the scene-description question text.

    Entities are named Entity_0..Entity_{N-1}; only true grounded atoms are
    listed (closed world), unary predicates first, each predicate's atoms in
    entity index order.
    """
    n = record["n_agents"]
    if not 0 <= query_agent < n:
        raise ValueError(f"query agent {query_agent} out of range for {n} entities")
    tables = record["global"]
    names = [f"Entity_{i}" for i in range(n)]
    decls: list[tuple[str, int]] = []
    for d in registry.background():
        if d.name in tables["unary"] or d.name in tables["binary"]:
            decls.append((d.name, d.arity))
    pred_list = ", ".join(f"{name} (arity: {arity})" for name, arity in decls)
    atoms: list[str] = []
    for name, arity in decls:
        if arity == 1:
            atoms += [f"{name}({names[i]})" for i, v in enumerate(tables["unary"][name]) if v]
        else:
            atoms += [
                f"{name}({names[i]}, {names[j]})"
                for i, j in sorted(map(tuple, tables["binary"][name]))
            ]
    text = (
        f"In the scene you see a total of {n} entities, they are named as follows: "
        f"{', '.join(names)}. "
        f"There exist the following predicates as their attributes and relations: {pred_list}. "
        f"The truth value of these predicates grounded to the entities are as follows "
        f"(Only the ones that are True are provided, assume the rest are False): "
        f"{', '.join(atoms)}. "
        f"What is the next action of entity Entity_{query_agent}?"
    )
    return text + "\nOption: (A) Slow (B) Normal (C) Fast (D) Stop"


_NL_HEAD = re.compile(r"In the scene you see a total of (\d+) entities")
_NL_DECL = re.compile(r"([A-Za-z_][A-Za-z0-9_]*) \(arity: ([12])\)")
_NL_ATOM = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\(Entity_(\d+)(?:, Entity_(\d+))?\)")
_NL_QUERY = re.compile(r"What is the next action of entity Entity_(\d+)\?")


def parse_scene_nl(text: str) -> dict:
    """Inverse of the serializer: recover entity count, declarations, the true
    atom set, and the query entity."""
    m = _NL_HEAD.search(text)
    if m is None:
        raise ValueError("missing entity-count preamble")
    n = int(m.group(1))
    decl_section = text.split("attributes and relations:", 1)[1].split(
        "The truth value", 1
    )[0]
    decls = [(name, int(ar)) for name, ar in _NL_DECL.findall(decl_section)]
    atom_section = text.split("assume the rest are False):", 1)[1].split(
        "What is the next action", 1
    )[0]
    atoms = set()
    for name, i, j in _NL_ATOM.findall(atom_section):
        atoms.add((name, (int(i),) if j == "" else (int(i), int(j))))
    q = _NL_QUERY.search(text)
    if q is None:
        raise ValueError("missing query sentence")
    return {"n": n, "decls": decls, "atoms": atoms, "query": int(q.group(1))}


# --- metrics -------------------------------------------------------------------


def vap_metrics(preds: Sequence[int], labels: Sequence[int]) -> dict:
    """Per-action recall, plain accuracy, and inverse-frequency-weighted accuracy.

    Actions with zero support are excluded from the weighted-accuracy sums.
    """
    if len(preds) != len(labels):
        raise ValueError("predictions and labels differ in length")
    if not labels:
        raise ValueError("empty label set")
    counts = {a: 0 for a in ACTIONS}
    hits = {a: 0 for a in ACTIONS}
    correct = 0
    for p, l in zip(preds, labels):
        name = ACTIONS[l]
        counts[name] += 1
        if p == l:
            hits[name] += 1
            correct += 1
    recall = {a: hits[a] / counts[a] for a in ACTIONS if counts[a] > 0}
    num = sum(recall[a] / counts[a] for a in recall)
    den = sum(1.0 / counts[a] for a in recall)
    return {
        "recall": recall,
        "counts": {a: counts[a] for a in ACTIONS if counts[a] > 0},
        "aAcc": correct / len(labels),
        "wAcc": num / den,
    }


def score_predictions(pred_file: str | Path, data_dir: str | Path) -> dict:
    """Score a predictions file ({"predictions": {frame_id: [action indices]}})
    against an exported dataset's labels."""
    preds_doc = json.loads(Path(pred_file).read_text(encoding="utf-8"))
    preds_by_frame = preds_doc["predictions"]
    all_preds: list[int] = []
    all_labels: list[int] = []
    for frame_id, preds in sorted(preds_by_frame.items()):
        record = load_frame(data_dir, frame_id)
        if len(preds) != record["n_agents"]:
            raise ValueError(f"frame {frame_id}: {len(preds)} predictions for "
                             f"{record['n_agents']} agents")
        all_preds += [int(p) for p in preds]
        all_labels += record["labels"]
    return vap_metrics(all_preds, all_labels)
