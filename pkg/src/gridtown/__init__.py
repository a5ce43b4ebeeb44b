"""Deterministic urban grid simulator governed by first-order-logic rules."""

from .rules import ACTIONS, Clause, Literal, PredicateDecl, PredicateRegistry, RuleSet, \
    parse_rules, render_rules, validate_stratification
from .solver import ActionVector, ConflictError, Derivation, check_violation, \
    resolve_actions, resolve_actions_exhaustive
from .grounding import GroundingSchema, GroundingVector, ground_fov
from .world import Agent, CityState, Fov, StaticMap, apply_moves, crop_fov, load_config
from .sim import EpisodeLog, SimConfig, Simulation, replay, run_episode, run_world
from .spf import EnvHandle, EpisodeOutcome, compute_metrics, compute_reward, make_env

__version__ = "0.1.0"
