"""Safe-path-following task: reward, metrics, environment handle, and server.

An episode controls the first roster agent. At reset the oracle is prerun on
the same seed to fix the episode's oracle step count; success means reaching
the goal within twice that count with zero rule violations, and the overtime
penalty applies beyond the same bound. Observations are the ego's grounding
vector flattened to floats; actions are indices 0..3 (Slow, Normal, Fast,
Stop).

The wire protocol speaks newline-delimited JSON over stdio or TCP:
``{"cmd":"hello"}``, ``{"cmd":"reset","seed":int}``,
``{"cmd":"step","action":0..3}``, ``{"cmd":"close"}``. Step replies carry
``{"obs":[float],"reward":float,"terminated":bool,"truncated":bool,"info":{}}``;
errors come back as ``{"error": str}`` and leave the session usable.
"""

from __future__ import annotations

import hashlib
import json
import socket
import socketserver
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from .modes import RewardConfig
from .sim import EpisodeLog, Policy, SimConfig, Simulation, StepReport, oracle_policy, \
    random_policy
from .solver import ActionVector, resolve_actions


def compute_reward(
    report: StepReport,
    cfg: RewardConfig,
    t: int,
    path_len: int,
    horizon: int,
) -> float:
    """Violation punishments plus the path-normalized action cost plus overtime."""
    if path_len < 1:
        raise ValueError("path length must be >= 1")
    r = cfg.violation_weight * len(report.ego_violations)
    r += cfg.action_costs[report.executed[0].index] / path_len
    if t > horizon:
        r += cfg.overtime_penalty
    return r


@dataclass(frozen=True)
class EpisodeOutcome:
    succ: bool
    dec: bool
    ret: float
    steps: int
    oracle_steps: int
    constrained_steps: int
    violations: int

    def to_json(self) -> dict:
        return {
            "succ": self.succ,
            "dec": self.dec,
            "return": self.ret,
            "steps": self.steps,
            "oracle_steps": self.oracle_steps,
            "constrained_steps": self.constrained_steps,
            "violations": self.violations,
        }


def compute_metrics(
    outcomes: Sequence[EpisodeOutcome], random_baseline_return: float
) -> dict[str, float]:
    """Trajectory success rate, decision success rate, and baseline-shifted score."""
    if not outcomes:
        raise ValueError("no outcomes to aggregate")
    n = len(outcomes)
    tsr = sum(o.succ for o in outcomes) / n
    dsr = sum(o.dec for o in outcomes) / n
    score = sum(o.ret for o in outcomes) / n - random_baseline_return
    return {"TSR": tsr, "DSR": dsr, "Score": score}


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary labeled parts."""
    data = ":".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "big") >> 1


class EnvHandle:
    """Single-session environment; call reset before step."""

    def __init__(self, cfg: SimConfig, default_seed: int | None = None):
        if cfg.reward is None:
            raise ValueError("environment config needs a reward preset")
        self.base_cfg = cfg
        self.default_seed = cfg.seed if default_seed is None else default_seed
        self.sim: Simulation | None = None
        self.horizon = 0
        self.truncate_at = 0
        self.oracle_steps = 0
        self.oracle_constrained = 0
        self._steps = 0
        self._obs_len = None
        self._prerun_cache: dict[int, tuple[int, int]] = {}

    @property
    def mode(self) -> str:
        return self.base_cfg.mode

    @property
    def obs_len(self) -> int:
        if self._obs_len is None:
            from .grounding import GroundingSchema

            schema = GroundingSchema.build(
                self.base_cfg.registry, self.base_cfg.mode, self.base_cfg.n_fov_agents
            )
            self._obs_len = schema.length
        return self._obs_len

    def oracle_prerun(self, cfg: SimConfig) -> tuple[int, int]:
        """Steps the rule-following agent needs for this episode, plus how many
        of those steps were rule-constrained. Cached per seed."""
        hit = self._prerun_cache.get(cfg.seed)
        if hit is not None:
            return hit
        sim = Simulation(cfg, controlled=True)
        constrained = 0
        for _ in range(cfg.max_steps):
            report = sim.step()  # controlled with no action given: follow the mandate
            constrained += report.ego_constrained
            if report.ego_at_goal:
                result = (sim.state.t, constrained)
                self._prerun_cache[cfg.seed] = result
                return result
        raise RuntimeError(
            f"oracle failed to reach the goal within {cfg.max_steps} steps (seed {cfg.seed})"
        )

    def reset(self, seed: int | None = None) -> np.ndarray:
        cfg = replace(self.base_cfg, seed=self.default_seed if seed is None else seed)
        self.oracle_steps, self.oracle_constrained = self.oracle_prerun(cfg)
        self.horizon = 2 * self.oracle_steps
        self.truncate_at = min(cfg.max_steps, max(4 * self.oracle_steps, 16))
        self.sim = Simulation(cfg, controlled=True, overtime_after=self.horizon)
        self._steps = 0
        return self._obs()

    def _obs(self) -> np.ndarray:
        assert self.sim is not None
        g = self.sim.ego_observation()
        return np.asarray(g.values, dtype=np.float32)

    def step(self, action: int) -> tuple[np.ndarray, float, bool, bool, dict]:
        if self.sim is None:
            raise RuntimeError("call reset before step")
        if not isinstance(action, int) or not 0 <= action <= 3:
            raise ValueError(f"action must be an integer in 0..3, got {action!r}")
        report = self.sim.step(ActionVector.from_index(action))
        self._steps += 1
        rec = self.sim.log.records[-1]["ego"]
        terminated = report.ego_at_goal
        truncated = not terminated and self._steps >= self.truncate_at
        info = {
            "t": self.sim.state.t,
            "violations": list(report.ego_violations),
            "constrained": report.ego_constrained,
            "ego_pos": list(self.sim.state.agents[0].pos),
        }
        return self._obs(), rec["reward"], terminated, truncated, info

    def outcome(self) -> EpisodeOutcome:
        assert self.sim is not None
        records = self.sim.log.records
        gamma = self.base_cfg.reward.gamma
        ret = sum(rec["ego"]["reward"] * gamma**i for i, rec in enumerate(records))
        violations = sum(len(rec["ego"]["violations"]) for rec in records)
        constrained = sum(1 for rec in records if rec["ego"]["constrained"])
        reached = self.sim.state.agents[0].at_goal()
        steps = len(records)
        succ = reached and steps <= self.horizon and violations == 0
        dec = constrained >= 1 and violations == 0
        return EpisodeOutcome(succ, dec, ret, steps, self.oracle_steps, constrained, violations)

    @property
    def log(self) -> EpisodeLog:
        assert self.sim is not None
        return self.sim.log


def make_env(
    mode: str,
    agent_roster: str | Path = "test",
    seed: int = 0,
    map_path: str | Path | None = None,
) -> EnvHandle:
    cfg = SimConfig.from_preset(mode, roster=agent_roster, seed=seed, map_path=map_path, task="spf")
    return EnvHandle(cfg)


def run_policy_episode(env: EnvHandle, policy: Policy, seed: int) -> EpisodeOutcome:
    env.reset(seed)
    while True:
        g = env.sim.ego_observation()
        action = policy(env.sim.state.t, g, env.sim)
        _, _, terminated, truncated, _ = env.step(action.index)
        if terminated or truncated:
            return env.outcome()


def curate_episode_seeds(
    env: EnvHandle, base_seed: int, episodes: int, min_ego_path: int = 55,
    max_candidates: int = 50000,
) -> list[int]:
    """Pick episode seeds whose oracle run is long enough and rule-constrained.

    Shipped evaluation episodes must exercise the rules at least once (the
    decision metric is undefined otherwise) and follow a lengthy path, so
    candidate seeds are screened on the oracle prerun.
    """
    seeds: list[int] = []
    i = 0
    while len(seeds) < episodes:
        if i >= max_candidates:
            raise RuntimeError("episode curation exhausted its candidate budget")
        s = derive_seed(base_seed, "episode", i)
        i += 1
        cfg = replace(env.base_cfg, seed=s)
        sim = Simulation(cfg)
        if sim.ego_path_len < min_ego_path:
            continue
        try:
            _, constrained = env.oracle_prerun(cfg)
        except RuntimeError:
            continue
        if constrained >= 1:
            seeds.append(s)
    return seeds


def evaluate_policy(
    mode: str,
    policy_name: str,
    episodes: int,
    seed: int,
    roster: str | Path = "test",
    map_path: str | Path | None = None,
    baseline_return: float | None = None,
    min_ego_path: int = 55,
) -> dict:
    """Run a policy over curated seeded episodes; the random baseline is
    computed on the same episode seeds when not supplied."""
    env = make_env(mode, roster, seed, map_path)
    seeds = curate_episode_seeds(env, seed, episodes, min_ego_path)

    def run(name: str) -> list[EpisodeOutcome]:
        out = []
        for s in seeds:
            policy = oracle_policy() if name == "oracle" else random_policy(s)
            out.append(run_policy_episode(env, policy, s))
        return out

    outcomes = run(policy_name)
    if baseline_return is None:
        if policy_name == "random":
            baseline_return = sum(o.ret for o in outcomes) / len(outcomes)
        else:
            baseline = run("random")
            baseline_return = sum(o.ret for o in baseline) / len(baseline)
    metrics = compute_metrics(outcomes, baseline_return)
    return {
        "mode": env.mode,
        "policy": policy_name,
        "episodes": episodes,
        "seed": seed,
        "baseline_return": baseline_return,
        "mean_return": sum(o.ret for o in outcomes) / len(outcomes),
        **metrics,
        "outcomes": [o.to_json() for o in outcomes],
    }


# --- wire protocol -------------------------------------------------------------


class EnvSession:
    """One protocol session mapped onto one EnvHandle."""

    def __init__(self, cfg: SimConfig, episode_log: str | Path | None = None):
        self.env = EnvHandle(cfg)
        self.episode_log = Path(episode_log) if episode_log else None
        self.closed = False

    def _dump_log(self) -> None:
        if self.episode_log is not None and self.env.sim is not None:
            self.env.log.write(self.episode_log)

    def handle_line(self, line: str) -> dict:
        line = line.strip()
        if not line:
            return {"error": "empty message"}
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as e:
            return {"error": f"malformed JSON: {e.msg}"}
        if not isinstance(msg, dict) or "cmd" not in msg:
            return {"error": "message must be an object with a cmd field"}
        cmd = msg["cmd"]
        try:
            if cmd == "hello":
                return {
                    "mode": self.env.mode,
                    "obs_len": self.env.obs_len,
                    "actions": 4,
                    "protocol": 1,
                }
            if cmd == "reset":
                self._dump_log()
                seed = msg.get("seed")
                if seed is not None and not isinstance(seed, int):
                    return {"error": "seed must be an integer"}
                obs = self.env.reset(seed)
                return {"obs": [float(v) for v in obs], "t": 0,
                        "info": {"mode": self.env.mode, "horizon": self.env.horizon}}
            if cmd == "step":
                if "action" not in msg:
                    return {"error": "step needs an action"}
                action = msg["action"]
                if not isinstance(action, int) or not 0 <= action <= 3:
                    return {"error": "action must be an integer in 0..3"}
                obs, reward, terminated, truncated, info = self.env.step(action)
                if terminated or truncated:
                    self._dump_log()
                return {
                    "obs": [float(v) for v in obs],
                    "reward": reward,
                    "terminated": terminated,
                    "truncated": truncated,
                    "info": info,
                }
            if cmd == "close":
                self._dump_log()
                self.closed = True
                return {"ok": True}
            return {"error": "unknown cmd"}
        except RuntimeError as e:
            return {"error": str(e)}
        except ValueError as e:
            return {"error": str(e)}


def serve_stdio(cfg: SimConfig, episode_log: str | Path | None = None,
                stdin: TextIO | None = None, stdout: TextIO | None = None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    session = EnvSession(cfg, episode_log)
    for line in stdin:
        reply = session.handle_line(line)
        stdout.write(json.dumps(reply, separators=(",", ":")) + "\n")
        stdout.flush()
        if session.closed:
            break


def serve_tcp(cfg: SimConfig, host: str, port: int,
              episode_log: str | Path | None = None) -> socketserver.ThreadingTCPServer:
    """Threaded TCP server; each connection gets an independent session."""

    class Handler(socketserver.StreamRequestHandler):
        def handle(self) -> None:
            session = EnvSession(cfg, episode_log)
            for raw in self.rfile:
                reply = session.handle_line(raw.decode("utf-8"))
                self.wfile.write((json.dumps(reply, separators=(",", ":")) + "\n").encode())
                if session.closed:
                    break

    server = socketserver.ThreadingTCPServer((host, port), Handler)
    server.daemon_threads = True
    return server


def serve_env(
    transport: str,
    cfg: SimConfig,
    host: str = "127.0.0.1",
    port: int = 5858,
    episode_log: str | Path | None = None,
) -> None:
    if transport == "stdio":
        serve_stdio(cfg, episode_log)
    elif transport == "tcp":
        server = serve_tcp(cfg, host, port, episode_log)
        with server:
            server.serve_forever()
    else:
        raise ValueError(f"unknown transport {transport!r}")
