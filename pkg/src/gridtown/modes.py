"""Shipped mode presets and reward constants.

Six presets are shipped: four sequential-decision modes (spf-easy through
spf-expert) and two one-step labeling modes (vap-easy, vap-hard). Each names a
predicate subset (see configs/registry.json), a rule file, and the test-time
reward constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib.resources import files
from pathlib import Path

# Cells advanced per tick along the global path, indexed by action
# (Slow, Normal, Fast, Stop).
SPEED_TABLE: dict[str, tuple[int, int, int, int]] = {
    "car": (1, 2, 3, 0),
    "pedestrian": (1, 1, 2, 0),
}


@dataclass(frozen=True)
class RewardConfig:
    violation_weight: float  # applied once per violated clause
    action_costs: tuple[float, float, float, float]  # (Slow, Normal, Fast, Stop)
    overtime_penalty: float = -3.0
    gamma: float = 0.99


_BASE_COSTS = (-2.0, 0.0, -2.0, -5.0)
_EXPERT_COSTS = (-2.0, -1.0, -2.0, -3.0)


@dataclass(frozen=True)
class ModePreset:
    name: str
    task: str  # "spf" or "vap"
    rule_file: str
    reward: RewardConfig
    n_fov_agents: int = 5
    fov_radius: int = 8


MODE_PRESETS: dict[str, ModePreset] = {
    "spf-easy": ModePreset("spf-easy", "spf", "spf_easy.rules", RewardConfig(-10.0, _BASE_COSTS)),
    "spf-medium": ModePreset(
        "spf-medium", "spf", "spf_medium.rules", RewardConfig(-10.0, _BASE_COSTS)
    ),
    "spf-hard": ModePreset("spf-hard", "spf", "spf_hard.rules", RewardConfig(-10.0, _BASE_COSTS)),
    "spf-expert": ModePreset(
        "spf-expert", "spf", "spf_expert.rules", RewardConfig(-5.0, _EXPERT_COSTS)
    ),
    "vap-easy": ModePreset("vap-easy", "vap", "vap_easy.rules", RewardConfig(-10.0, _BASE_COSTS)),
    "vap-hard": ModePreset("vap-hard", "vap", "vap_hard.rules", RewardConfig(-10.0, _BASE_COSTS)),
}


def resolve_mode(name: str, task: str | None = None) -> ModePreset:
    """Look up a preset; bare names like "hard" resolve through the task hint."""
    if name in MODE_PRESETS:
        return MODE_PRESETS[name]
    if task is not None and f"{task}-{name}" in MODE_PRESETS:
        return MODE_PRESETS[f"{task}-{name}"]
    raise KeyError(f"unknown mode {name!r}; shipped modes: {', '.join(sorted(MODE_PRESETS))}")


def config_dir() -> Path:
    return Path(str(files("gridtown") / "configs"))


def default_registry_path() -> Path:
    return config_dir() / "registry.json"


def default_map_path() -> Path:
    return config_dir() / "map_60.json"


def default_roster_path(which: str = "test") -> Path:
    return config_dir() / f"agents_{which}.json"


def rule_path(preset: ModePreset) -> Path:
    return config_dir() / "rules" / preset.rule_file
