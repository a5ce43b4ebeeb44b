"""Per-step engine: observe, ground, resolve, move, update.

All agents decide on the same pre-step state (synchronous update), then moves
are applied with priority yielding, then reached goals are resampled. Every
random draw comes from a named per-agent stream derived from the episode seed,
so a run is a pure function of (config, seed, ego action trace).

Non-controlled agents whose position has not changed for ``stall_patience``
consecutive steps abandon their current goal, draw a new one, and replan;
static paths cannot resolve a mutual blockage, so without this valve two
pedestrians meeting head-on on the same walkway strip would stand forever.
The controlled agent never reroutes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import planner
from .geom import Cell
from .grounding import DEFAULT_GEOMETRY, GeometryParams, GroundingVector, ground_fov
from .modes import MODE_PRESETS, SPEED_TABLE, ModePreset, RewardConfig, default_map_path, \
    default_registry_path, default_roster_path, resolve_mode, rule_path
from .rules import PredicateRegistry, RuleSet, parse_rules_file
from .solver import ActionVector, Derivation, check_violation, resolve_actions
from .world import CityState, crop_fov, load_config, apply_moves


@dataclass
class SimConfig:
    mode: str
    rules: RuleSet
    registry: PredicateRegistry
    map_path: Path
    roster_path: Path | None
    roster_data: dict | None = None  # overrides roster_path when set
    seed: int = 0
    n_fov_agents: int = 5
    fov_radius: int = 8
    speeds: dict[str, tuple[int, int, int, int]] = field(default_factory=lambda: dict(SPEED_TABLE))
    reward: RewardConfig | None = None
    geometry: GeometryParams = DEFAULT_GEOMETRY
    max_steps: int = 2000
    stall_patience: int = 12

    def __post_init__(self) -> None:
        if self.n_fov_agents < 1:
            raise ValueError("n_fov_agents must be >= 1")
        self.registry.mode_predicates(self.mode)  # raises for unknown modes

    @staticmethod
    def from_preset(
        mode: str,
        roster: str | Path = "test",
        seed: int = 0,
        map_path: str | Path | None = None,
        task: str | None = None,
    ) -> "SimConfig":
        preset = resolve_mode(mode, task)
        registry = PredicateRegistry.from_json(default_registry_path())
        rules = parse_rules_file(rule_path(preset), registry)
        roster_path = default_roster_path(roster) if roster in ("train", "test") else Path(roster)
        return SimConfig(
            mode=preset.name,
            rules=rules,
            registry=registry,
            map_path=Path(map_path) if map_path else default_map_path(),
            roster_path=roster_path,
            seed=seed,
            n_fov_agents=preset.n_fov_agents,
            fov_radius=preset.fov_radius,
            reward=preset.reward,
        )

    def config_hash(self) -> str:
        if self.roster_data is not None:
            roster_digest = hashlib.sha256(
                json.dumps(self.roster_data, sort_keys=True, separators=(",", ":")).encode()
            ).hexdigest()
        else:
            roster_digest = hashlib.sha256(Path(self.roster_path).read_bytes()).hexdigest()
        payload = {
            "mode": self.mode,
            "map": hashlib.sha256(Path(self.map_path).read_bytes()).hexdigest(),
            "roster": roster_digest,
            "rules": [c.render() for c in self.rules.clauses],
            "registry": [(d.name, d.arity, d.kind) for d in self.registry.decls],
            "n_fov_agents": self.n_fov_agents,
            "fov_radius": self.fov_radius,
            "speeds": {k: list(v) for k, v in sorted(self.speeds.items())},
            "reward": None
            if self.reward is None
            else [self.reward.violation_weight, list(self.reward.action_costs),
                  self.reward.overtime_penalty, self.reward.gamma],
            "geometry": [
                self.geometry.close_distance,
                self.geometry.next_to_distance,
                self.geometry.collide_lookahead,
                self.geometry.cross_lookahead,
            ],
            "stall_patience": self.stall_patience,
        }
        data = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(data).hexdigest()


@dataclass
class StepReport:
    t: int
    poses: list[tuple[int, int, str]]  # pre-move
    groundings: list[GroundingVector]
    mandated: list[ActionVector]
    derivations: list[Derivation]
    executed: list[ActionVector]
    ego_violations: list[int]
    reached_goals: list[int]
    ego_at_goal: bool

    @property
    def ego_constrained(self) -> bool:
        return self.derivations[0].constrained


def _canon(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class EpisodeLog:
    header: dict
    records: list[dict] = field(default_factory=list)

    def to_jsonl(self) -> str:
        lines = [_canon({"type": "header", **self.header})]
        lines += [_canon({"type": "step", **r}) for r in self.records]
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @staticmethod
    def read(path: str | Path) -> "EpisodeLog":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines:
            raise ValueError("empty episode log")
        header = json.loads(lines[0])
        if header.pop("type", None) != "header":
            raise ValueError("first log line is not a header")
        records = []
        for line in lines[1:]:
            rec = json.loads(line)
            if rec.pop("type", None) != "step":
                raise ValueError("malformed log record")
            records.append(rec)
        return EpisodeLog(header, records)


class Simulation:
    """One mutable city stepped synchronously; single-threaded per instance."""

    def __init__(
        self,
        cfg: SimConfig,
        controlled: bool = False,
        overtime_after: int | None = None,
    ):
        self.cfg = cfg
        self.controlled = controlled
        self.overtime_after = overtime_after
        roster = cfg.roster_data if cfg.roster_data is not None else cfg.roster_path
        self.state: CityState = load_config(cfg.map_path, roster, cfg.registry, cfg.seed)
        self._goal_rng = [np.random.default_rng([cfg.seed, 1, a.id]) for a in self.state.agents]
        self._stall = [0] * len(self.state.agents)
        self._ego_obs_cache: tuple[int, GroundingVector] | None = None
        self.ego_path_len = max(1, len(self.state.agents[0].path))
        self._leg_len = [max(1, len(a.path)) for a in self.state.agents]
        self.log = EpisodeLog(
            {
                "version": 1,
                "mode": cfg.mode,
                "seed": cfg.seed,
                "config_hash": cfg.config_hash(),
                "n_agents": len(self.state.agents),
                "controlled": controlled,
                "ego_path_len": self.ego_path_len,
                "overtime_after": overtime_after,
            }
        )

    # -- observation ------------------------------------------------------------

    def ground_agent(self, agent_id: int) -> GroundingVector:
        fov = crop_fov(self.state, agent_id, self.cfg.fov_radius, self.cfg.n_fov_agents)
        return ground_fov(fov, self.cfg.registry, self.cfg.mode, self.cfg.n_fov_agents,
                          self.cfg.geometry)

    def ego_observation(self) -> GroundingVector:
        cached = self._ego_obs_cache
        if cached is not None and cached[0] == self.state.t:
            return cached[1]
        g = self.ground_agent(0)
        self._ego_obs_cache = (self.state.t, g)
        return g

    # -- stepping ---------------------------------------------------------------

    def step(self, ego_action: ActionVector | None = None) -> StepReport:
        """One synchronous tick; a controlled simulation may pass the ego's
        action, otherwise every agent (ego included) follows its mandate."""
        if ego_action is not None and not self.controlled:
            raise ValueError("ego actions are only accepted on a controlled simulation")
        if ego_action is not None and not ego_action.is_one_hot():
            raise ValueError("ego action must be one-hot")
        state = self.state
        t = state.t
        poses = [(a.pos[0], a.pos[1], a.heading) for a in state.agents]

        groundings: list[GroundingVector] = []
        mandated: list[ActionVector] = []
        derivations: list[Derivation] = []
        for a in state.agents:
            g = self.ego_observation() if a.id == 0 else self.ground_agent(a.id)
            act, deriv = resolve_actions(g, self.cfg.rules)
            groundings.append(g)
            mandated.append(act)
            derivations.append(deriv)

        executed = list(mandated)
        if self.controlled and ego_action is not None:
            executed[0] = ego_action
        ego_violations = check_violation(groundings[0], executed[0], self.cfg.rules)

        moves: dict[int, list[Cell]] = {}
        for a, act in zip(state.agents, executed):
            k = self.cfg.speeds[a.kind][act.index]
            if k:
                moves[a.id] = a.path[:k]
        apply_moves(state, moves, speed_bound=max(max(v) for v in self.cfg.speeds.values()))

        for i, (a, before) in enumerate(zip(state.agents, poses)):
            self._stall[i] = 0 if (a.pos[0], a.pos[1]) != (before[0], before[1]) else self._stall[i] + 1

        reached: list[int] = []
        ego_at_goal = False
        for i, a in enumerate(state.agents):
            if not a.at_goal():
                continue
            reached.append(a.id)
            a.goals_reached += 1
            if self.controlled and a.id == 0:
                ego_at_goal = True
                continue
            planner.replan_after_goal(self.state, a, self._goal_rng[i])
            self._leg_len[i] = max(1, len(a.path))
            self._stall[i] = 0

        for i, a in enumerate(state.agents):
            if self.controlled and a.id == 0:
                continue
            if self._stall[i] >= self.cfg.stall_patience and not a.at_goal():
                self._reroute(i)
                self._stall[i] = 0

        report = StepReport(
            t=t,
            poses=poses,
            groundings=groundings,
            mandated=mandated,
            derivations=derivations,
            executed=executed,
            ego_violations=ego_violations,
            reached_goals=reached,
            ego_at_goal=ego_at_goal,
        )
        self._append_record(report)
        return report

    def _reroute(self, i: int) -> None:
        """Stall valve: draw a fresh goal and rebuild the path, preferring a
        first step whose cell is not occupied right now so a blocked agent
        actually changes course."""
        agent = self.state.agents[i]
        static = self.state.static
        rng = self._goal_rng[i]
        occupied = {a.pos for a in self.state.agents if a.id != agent.id}
        if agent.kind == "car":
            starts = list(self.state.road_graph.edges.get(agent.pos, ()))
        else:
            starts = [
                c
                for c in ((agent.pos[0], agent.pos[1] - 1), (agent.pos[0] + 1, agent.pos[1]),
                          (agent.pos[0], agent.pos[1] + 1), (agent.pos[0] - 1, agent.pos[1]))
                if static.in_bounds(c) and static.walkable[c[1], c[0]]
            ]
        free_starts = [s for s in starts if s not in occupied]
        candidates = [c for c in static.frontage(agent.kind) if c != agent.pos]
        for _ in range(100):
            goal = candidates[int(rng.integers(len(candidates)))]
            path: list[Cell] | None = None
            for s in free_starts:
                if s == goal:
                    path = [s]
                    break
                try:
                    path = [s] + planner.plan(static, self.state.road_graph, agent.kind, s, goal)
                    break
                except planner.PlanError:
                    continue
            if path is None:
                try:
                    path = planner.plan(static, self.state.road_graph, agent.kind, agent.pos, goal)
                except planner.PlanError:
                    continue
            if not path:
                continue
            agent.goal = goal
            agent.path = path
            self._leg_len[i] = max(1, len(path))
            return
        # Leave the agent in place; it will retry after another stall window.

    # -- logging ------------------------------------------------------------------

    def step_reward(self, report: StepReport) -> tuple[float, bool] | None:
        if self.cfg.reward is None:
            return None
        from .spf import compute_reward  # local import; spf builds on this module

        length = self.ego_path_len if self.controlled else self._leg_len[0]
        horizon = self.overtime_after if self.overtime_after is not None else report.t + 1
        r = compute_reward(report, self.cfg.reward, report.t, length, horizon)
        return r, (self.overtime_after is not None and report.t > self.overtime_after)

    def _append_record(self, report: StepReport) -> None:
        rec = {
            "t": report.t,
            "actions": [a.index for a in report.executed],
            "poses": [[x, y, h] for (x, y, h) in report.poses],
            "digests": [g.digest() for g in report.groundings],
            "ego": {
                "action": report.executed[0].index,
                "violations": report.ego_violations,
                "constrained": report.ego_constrained,
            },
        }
        reward = self.step_reward(report)
        if reward is not None:
            rec["ego"]["reward"] = reward[0]
            rec["ego"]["overtime"] = reward[1]
            rec["ego"]["L"] = self.ego_path_len if self.controlled else self._leg_len[0]
        self.log.records.append(rec)


Policy = Callable[[int, GroundingVector, "Simulation"], ActionVector]


def oracle_policy() -> Policy:
    """Ground-truth rule follower: execute the solver's mandate each step."""

    def act(t: int, obs: GroundingVector, sim: Simulation) -> ActionVector:
        action, _ = resolve_actions(obs, sim.cfg.rules)
        return action

    return act


def random_policy(seed: int) -> Policy:
    rng = np.random.default_rng([seed, 2])

    def act(t: int, obs: GroundingVector, sim: Simulation) -> ActionVector:
        return ActionVector.from_index(int(rng.integers(4)))

    return act


def run_episode(
    cfg: SimConfig,
    policy: Policy | None = None,
    horizon: int | None = None,
    overtime_after: int | None = None,
) -> EpisodeLog:
    """Drive a controlled episode until the ego reaches its goal or the horizon.

    ``policy`` defaults to the oracle. The returned log replays exactly under
    the same config and seed.
    """
    cap = horizon if horizon is not None else cfg.max_steps
    if cap < 1:
        raise ValueError("horizon must be >= 1")
    sim = Simulation(cfg, controlled=True, overtime_after=overtime_after)
    act = policy or oracle_policy()
    for _ in range(cap):
        obs = sim.ego_observation()
        report = sim.step(act(sim.state.t, obs, sim))
        if report.ego_at_goal:
            break
    return sim.log


def run_world(cfg: SimConfig, steps: int) -> EpisodeLog:
    """Uncontrolled world simulation: every agent, ego included, follows the rules
    and resamples its goal on arrival."""
    sim = Simulation(cfg, controlled=False)
    for _ in range(steps):
        sim.step()
    return sim.log


@dataclass(frozen=True)
class ReplayReport:
    exact: bool
    steps: int
    first_divergence: int | None = None
    detail: str = ""

    def __str__(self) -> str:
        if self.exact:
            return f"exact ({self.steps} steps)"
        return f"diverged at t={self.first_divergence}: {self.detail}"


def replay(log: EpisodeLog, cfg: SimConfig) -> ReplayReport:
    """Re-simulate a log under its config; report the first divergence if any."""
    if log.header.get("config_hash") != cfg.config_hash():
        raise ValueError("config hash mismatch between log and provided config")
    if log.header.get("seed") != cfg.seed:
        raise ValueError("seed mismatch between log and provided config")
    controlled = bool(log.header.get("controlled"))
    sim = Simulation(cfg, controlled=controlled,
                     overtime_after=log.header.get("overtime_after"))
    for i, rec in enumerate(log.records):
        ego = ActionVector.from_index(rec["ego"]["action"]) if controlled else None
        sim.step(ego)
        got = sim.log.records[-1]
        if got != rec:
            keys = [k for k in rec if got.get(k) != rec[k]]
            return ReplayReport(False, i, rec["t"], f"fields {keys} differ")
    return ReplayReport(True, len(log.records))
