"""Command-line entry point.

Subcommands: validate, sim run, sim replay, spf run, spf serve, vap export,
vap nl, vap score, render. Every command that takes --seed is byte-for-byte
reproducible in its outputs. Exit codes: 0 success, 1 validation failure,
2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import vap as vap_mod
from .modes import MODE_PRESETS, default_map_path, default_registry_path, default_roster_path, \
    resolve_mode, rule_path
from .render import AssetLibrary, render_frame, write_image
from .rules import PredicateRegistry, RuleError, parse_rules_file, validate_stratification
from .sim import EpisodeLog, SimConfig, Simulation, replay, run_world
from .solver import ActionVector
from .spf import evaluate_policy, serve_env
from .world import StaticMap, WorldError, load_roster


def _build_cfg(args, task: str | None = None) -> SimConfig:
    return SimConfig.from_preset(
        args.mode,
        roster=getattr(args, "roster", "test"),
        seed=getattr(args, "seed", 0),
        map_path=getattr(args, "map", None),
        task=task,
    )


def cmd_validate(args) -> int:
    registry_path = args.registry or default_registry_path()
    problems: list[str] = []
    try:
        registry = PredicateRegistry.from_json(registry_path)
    except (RuleError, OSError, json.JSONDecodeError) as e:
        print(f"FAIL registry: {e}")
        return 1
    print(f"ok registry: {len(registry.decls)} predicates, {len(registry.mode_subsets)} modes")

    rule_sets = {}
    for name, preset in sorted(MODE_PRESETS.items()):
        path = Path(args.rules_dir) / preset.rule_file if args.rules_dir else rule_path(preset)
        try:
            rules = parse_rules_file(path, registry)
            rule_sets[name] = rules
            report = validate_stratification(rules)
            if not report.ok:
                problems.append(f"{name}: action dependency cycle {report.cycles[0]}")
            else:
                order = " < ".join(a for a in report.order if a in {c.head.predicate for c in rules.clauses})
                print(f"ok rules {name}: {len(rules)} clauses, strata {order or 'none'}")
        except RuleError as e:
            problems.append(f"{name}: {e}")

    def clause_set(name: str) -> set[str]:
        return {c.render() for c in rule_sets[name].clauses} if name in rule_sets else set()

    for lo, hi in (("spf-easy", "spf-medium"), ("spf-medium", "spf-hard"),
                   ("spf-hard", "spf-expert"), ("vap-easy", "vap-hard")):
        if lo in rule_sets and hi in rule_sets and not clause_set(lo) <= clause_set(hi):
            problems.append(f"{lo} is not a subset of {hi}")

    map_file = args.map or default_map_path()
    try:
        static = StaticMap.from_json(map_file)
        bad = (static.layers["crossing"] & ~(static.layers["traffic_street"]
                                             | static.layers["walking_street"])).sum()
        if bad:
            problems.append(f"map: {bad} crossing cells off any street")
        else:
            print(f"ok map: {static.width}x{static.height}, {static.n_regions} junction regions")
    except (WorldError, OSError, json.JSONDecodeError) as e:
        problems.append(f"map: {e}")

    compositions = {}
    for which in ("train", "test"):
        path = {"train": args.train_roster, "test": args.test_roster}[which]
        path = path or default_roster_path(which)
        try:
            agents = load_roster(path, registry)
            compositions[which] = {(a.kind, tuple(sorted(a.concepts))) for a in agents}
            print(f"ok roster {which}: {len(agents)} agents")
        except (WorldError, OSError, json.JSONDecodeError) as e:
            problems.append(f"roster {which}: {e}")
    if len(compositions) == 2 and not (compositions["test"] - compositions["train"]):
        problems.append("test roster adds no agent composition over the train roster")

    for p in problems:
        print(f"FAIL {p}")
    return 1 if problems else 0


def cmd_sim_run(args) -> int:
    cfg = _build_cfg(args)
    log = run_world(cfg, steps=args.steps)
    log.write(args.log)
    print(f"wrote {args.log} ({len(log.records)} steps, hash {log.hash()[:16]})")
    return 0


def cmd_sim_replay(args) -> int:
    log = EpisodeLog.read(args.log)
    cfg = SimConfig.from_preset(log.header["mode"], roster=getattr(args, "roster", "test"),
                                seed=log.header["seed"], map_path=getattr(args, "map", None))
    result = replay(log, cfg)
    print(result)
    return 0 if result.exact else 1


def cmd_spf_run(args) -> int:
    result = evaluate_policy(
        args.mode,
        args.policy,
        episodes=args.episodes,
        seed=args.seed,
        roster=args.roster,
        map_path=args.map,
        baseline_return=args.baseline_return,
    )
    out = Path(args.out)
    out.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{result['mode']} {args.policy}: TSR={result['TSR']:.2f} DSR={result['DSR']:.2f} "
          f"Score={result['Score']:.2f} -> {out}")
    return 0


def cmd_spf_serve(args) -> int:
    cfg = _build_cfg(args, task="spf")
    serve_env(args.transport, cfg, host=args.host, port=args.port,
              episode_log=args.episode_log)
    return 0


def cmd_vap_export(args) -> int:
    manifest = vap_mod.export_dataset(
        args.mode,
        args.out,
        cities=args.cities,
        steps=args.steps,
        burn_in=args.burn_in,
        seed=args.seed,
        config=args.config,
        roster=args.roster,
        tile=args.tile,
        image_format=args.images,
        map_path=args.map,
    )
    counts = " ".join(f"{k}={v}" for k, v in manifest["action_counts"].items())
    print(f"exported {manifest['frames']} frames to {args.out} ({counts})")
    return 0


def cmd_vap_nl(args) -> int:
    registry = PredicateRegistry.from_json(default_registry_path())
    record = vap_mod.load_frame(args.data, args.frame)
    print(vap_mod.serialize_scene_nl(record, args.agent, registry))
    return 0


def cmd_vap_score(args) -> int:
    metrics = vap_mod.score_predictions(args.pred, args.data)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def cmd_render(args) -> int:
    log = EpisodeLog.read(args.episode)
    cfg = SimConfig.from_preset(log.header["mode"], roster=args.roster, seed=log.header["seed"],
                                map_path=args.map)
    if log.header["config_hash"] != cfg.config_hash():
        print("FAIL config hash mismatch: pass the map/roster the log was produced with")
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    assets = AssetLibrary.load(args.assets) if args.assets else AssetLibrary.procedural(args.tile)
    sim = Simulation(cfg, controlled=bool(log.header.get("controlled")),
                     overtime_after=log.header.get("overtime_after"))
    for rec in log.records:
        frame = render_frame(sim.state, assets, seed=args.seed, draw_paths=args.paths)
        write_image(frame, out / f"t{rec['t']:04d}.{args.format}", args.format)
        ego = ActionVector.from_index(rec["ego"]["action"]) if log.header.get("controlled") else None
        sim.step(ego)
    print(f"rendered {len(log.records)} frames to {out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="gridtown",
                                     description="Rule-governed urban grid simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check shipped or custom configs")
    p.add_argument("--registry")
    p.add_argument("--rules-dir")
    p.add_argument("--map")
    p.add_argument("--train-roster")
    p.add_argument("--test-roster")
    p.set_defaults(func=cmd_validate)

    sim_p = sub.add_parser("sim", help="world simulation").add_subparsers(dest="sub", required=True)
    p = sim_p.add_parser("run", help="log an uncontrolled rule-governed simulation")
    p.add_argument("--mode", required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", required=True)
    p.add_argument("--roster", default="test")
    p.add_argument("--map")
    p.set_defaults(func=cmd_sim_run)
    p = sim_p.add_parser("replay", help="re-simulate a log and compare records")
    p.add_argument("--log", required=True)
    p.add_argument("--roster", default="test")
    p.add_argument("--map")
    p.set_defaults(func=cmd_sim_replay)

    spf_p = sub.add_parser("spf", help="safe-path-following task").add_subparsers(dest="sub", required=True)
    p = spf_p.add_parser("run", help="evaluate a policy over seeded episodes")
    p.add_argument("--mode", required=True)
    p.add_argument("--policy", choices=("oracle", "random"), default="oracle")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--roster", default="test")
    p.add_argument("--map")
    p.add_argument("--baseline-return", type=float, default=None)
    p.add_argument("--out", default="metrics.json")
    p.set_defaults(func=cmd_spf_run)
    p = spf_p.add_parser("serve", help="serve the environment over stdio or tcp")
    p.add_argument("--mode", required=True)
    p.add_argument("--transport", choices=("stdio", "tcp"), default="stdio")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=5858)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--roster", default="test")
    p.add_argument("--map")
    p.add_argument("--episode-log")
    p.set_defaults(func=cmd_spf_serve)

    vap_p = sub.add_parser("vap", help="visual-action-prediction dataset").add_subparsers(dest="sub", required=True)
    p = vap_p.add_parser("export", help="simulate cities and export frames")
    p.add_argument("--mode", required=True)
    p.add_argument("--config", choices=("fixed", "random"), default="random")
    p.add_argument("--cities", type=int, default=100)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--burn-in", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--roster", default="test")
    p.add_argument("--map")
    p.add_argument("--tile", type=int, default=32)
    p.add_argument("--images", choices=("png", "ppm", "none"), default="png")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_vap_export)
    p = vap_p.add_parser("nl", help="print one frame as a scene-description question")
    p.add_argument("--data", required=True)
    p.add_argument("--frame", required=True)
    p.add_argument("--agent", type=int, required=True)
    p.set_defaults(func=cmd_vap_nl)
    p = vap_p.add_parser("score", help="score a predictions file against a dataset")
    p.add_argument("--pred", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_vap_score)

    p = sub.add_parser("render", help="render an episode log to image frames")
    p.add_argument("--episode", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tile", type=int, default=32)
    p.add_argument("--format", choices=("png", "ppm"), default="png")
    p.add_argument("--assets")
    p.add_argument("--paths", action="store_true")
    p.add_argument("--roster", default="test")
    p.add_argument("--map")
    p.set_defaults(func=cmd_render)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (RuleError, WorldError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (RuntimeError, OSError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
