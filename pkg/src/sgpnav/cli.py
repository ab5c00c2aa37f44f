"""Command-line entry point: run, batch, generate-terrain, replay-metrics, dump-surfaces."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .errors import SgpNavError
from .harness import run_and_record, run_batch, run_dir_name
from .metrics import TrajectoryLog, evaluate_trial
from .navigator import cycle_seed, perceive_and_plan
from .perception import write_surface_csv, write_xyz
from .planner import SafetyLimits
from .scenario import load_scenario, terrain_from_spec
from .segmentation import write_segments_csv
from .simulator import pose_on_terrain, write_terrain_csv

log = logging.getLogger("sgpnav")

EXIT_OK = 0
EXIT_CONFIG = 2


def _load(path: str, seed: Optional[int]):
    sc = load_scenario(path)
    return sc if seed is None else sc.with_seed(seed)


def cmd_run(args) -> int:
    sc = _load(args.scenario, args.seed)
    out = Path(args.out) if args.out else Path("runs") / run_dir_name(sc)
    result = run_and_record(sc, out, trace=args.trace)
    print(result.metrics.to_json())
    log.info("wrote %s", out)
    return EXIT_OK


def cmd_batch(args) -> int:
    scenarios = [_load(p, args.seed) for p in args.scenario]
    out = Path(args.out) if args.out else Path("runs") / "batch"
    result = run_batch(scenarios, args.repetitions, out_dir=out, trace=args.trace, workers=args.workers)
    print(json.dumps(result.summary(), indent=2))
    log.info("wrote %s", out / "batch.csv")
    return EXIT_OK


def _parse_params(items: Sequence[str]) -> dict:
    params = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise SgpNavError(f"--param expects key=value, got {item!r}")
        params[key] = yaml.safe_load(value)
    return params


def cmd_generate_terrain(args) -> int:
    if args.scenario:
        sc = _load(args.scenario, None)
        terrain = sc.build_terrain()
    else:
        if not args.kind:
            raise SgpNavError("generate-terrain needs --scenario or --kind")
        params = _parse_params(args.param)
        if args.seed is not None:
            params["seed"] = args.seed
        terrain = terrain_from_spec(dict(params, generator=args.kind))
    out = Path(args.out or "terrain.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_terrain_csv(terrain, out)
    print(out)
    return EXIT_OK


def cmd_replay_metrics(args) -> int:
    traj = TrajectoryLog.read_csv(args.trajectory)
    if args.scenario:
        sc = _load(args.scenario, None)
        limits, goal, radius, max_time = sc.limits, sc.final_goal, sc.goal_radius, sc.sim.max_sim_time
    else:
        if args.goal is None:
            raise SgpNavError("replay-metrics needs --scenario or --goal X Y")
        limits, goal, radius, max_time = SafetyLimits(), tuple(args.goal), args.goal_radius, float("inf")
    metrics = evaluate_trial(traj, limits, goal, radius, max_time)
    text = metrics.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_dump_surfaces(args) -> int:
    sc = _load(args.scenario, args.seed)
    terrain = sc.validate()
    x, y, yaw = args.pose if args.pose is not None else sc.start_pose
    pose = pose_on_terrain(terrain, x, y, yaw, sc.footprint)
    result = perceive_and_plan(sc, terrain, pose, None, cycle_seed(sc.sim.seed, 0))
    out = Path(args.out or "surfaces")
    out.mkdir(parents=True, exist_ok=True)
    write_xyz(result.cloud, out / "cloud.xyz", header=f"{sc.name} sensor-frame scan")
    if result.surfaces is not None:
        write_surface_csv(result.surfaces, out / "surfaces.csv")
    if result.normalized is not None:
        write_surface_csv(result.normalized, out / "surfaces_normalized.csv")
    write_segments_csv(result.segments, out / "segments.csv")
    with open(out / "candidates.jsonl", "w") as fh:
        for i, c in enumerate(result.candidates):
            fh.write(json.dumps(dict(c.to_dict(), index=i, selected=i == result.selected)) + "\n")
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sgpnav", description="Sparse-GP mapless navigation simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one trial")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="run directory (default runs/<name>-seed<seed>)")
    r.add_argument("--trace", action="store_true", help="write per-cycle JSON lines")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("batch", help="run repeated trials of one or more scenarios")
    b.add_argument("--scenario", required=True, action="append", help="repeatable")
    b.add_argument("--repetitions", type=int, default=1)
    b.add_argument("--seed", type=int, help="base seed; trial k uses seed + k")
    b.add_argument("--out", help="batch directory (default runs/batch)")
    b.add_argument("--trace", action="store_true")
    b.add_argument("--workers", type=int, default=1, help="parallel trial processes")
    b.set_defaults(func=cmd_batch)

    g = sub.add_parser("generate-terrain", help="write a terrain heightmap CSV")
    g.add_argument("--scenario", help="use the scenario's terrain block")
    g.add_argument("--kind", help="generator name when no scenario is given")
    g.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="scenario terrain key such as extent_m=[0,20,0,20], value parsed as YAML (repeatable)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output CSV (default terrain.csv)")
    g.set_defaults(func=cmd_generate_terrain)

    m = sub.add_parser("replay-metrics", help="recompute metrics from a trajectory CSV")
    m.add_argument("--trajectory", required=True)
    m.add_argument("--scenario", help="take goal and limits from this scenario")
    m.add_argument("--goal", type=float, nargs=2, metavar=("X", "Y"))
    m.add_argument("--goal-radius", type=float, default=0.5)
    m.add_argument("--out", help="write metrics JSON here")
    m.set_defaults(func=cmd_replay_metrics)

    d = sub.add_parser("dump-surfaces", help="write scan, surfaces, segments and candidates for one pose")
    d.add_argument("--scenario", required=True)
    d.add_argument("--seed", type=int)
    d.add_argument("--pose", type=float, nargs=3, metavar=("X", "Y", "YAW"))
    d.add_argument("--out", help="output directory (default surfaces)")
    d.set_defaults(func=cmd_dump_surfaces)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SgpNavError, ValueError, OSError, yaml.YAMLError) as exc:
        print(f"sgpnav: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
