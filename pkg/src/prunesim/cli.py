"""Command line: ``prunesim <command> [options]``.

Exit status is 0 on success, 2 on a usage error, 1 when the command fails.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers


def _config(args) -> dict:
    if not args.config:
        return {}
    try:
        doc = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    return doc


def _need_out(args) -> Path:
    if not args.out:
        raise UsageError(f"{args.command}: --out is required")
    return Path(args.out)


def _env_config(cfg: dict):
    from .env import EnvConfig

    try:
        return EnvConfig.from_dict(cfg.get("env", {}))
    except TypeError as exc:
        raise UsageError(f"bad env section in config: {exc}") from None


def _spec(cfg: dict):
    from .treegen import TrellisSpec

    try:
        return TrellisSpec(**cfg.get("trellis", {}))
    except TypeError as exc:
        raise UsageError(f"bad trellis section in config: {exc}") from None


def _load(args):
    from .episodes import read_episodes
    from .treegen import load_bank

    bank = load_bank(args.bank)
    header, episodes = read_episodes(args.episodes)
    return bank, header, episodes


def _write_lines(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for r in rows:
            f.write(json.dumps(r, sort_keys=True) + "\n")


# ------------------------------------------------------------------ commands


def cmd_grow(args, cfg) -> int:
    from .treegen import generate_bank, index_hash, save_bank

    out = _need_out(args)
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    trees = generate_bank(args.count, args.seed, _spec(cfg), years=args.years)
    save_bank(trees, out, meshes=not args.no_meshes)
    warned = sum(1 for t in trees if t.warnings)
    print(f"{args.count} trees -> {out} (index sha256 {index_hash(out)}, {warned} with warnings)")
    return 0


def cmd_episodes(args, cfg) -> int:
    from .episodes import bank_digest, make_eval_set, make_training_episode, write_episodes
    from .policy import make_floated_set
    from .treegen import load_bank

    out = _need_out(args)
    bank = load_bank(args.bank)
    extra = {"kind_of_set": args.kind, "seed": args.seed}
    if args.kind == "eval":
        es = make_eval_set(bank, args.orientations, args.positions, seed=args.seed, spec=_spec(cfg))
        episodes = es.episodes
        extra["unmatched_orientations"] = es.unmatched
    elif args.kind == "train":
        rng = np.random.default_rng(args.seed)
        episodes = [make_training_episode(bank, rng=rng, seed=args.seed, ep_id=f"train-{k:05d}", spec=_spec(cfg))
                    for k in range(args.count)]
    else:
        episodes = make_floated_set(bank, args.count, args.seed)
    write_episodes(episodes, out, bank_digest(bank), extra)
    msg = f"{len(episodes)} episodes -> {out}"
    if args.kind == "eval":
        msg += f" ({len(extra['unmatched_orientations'])} of {args.orientations} orientations unmatched)"
    print(msg)
    return 0


def cmd_rollout(args, cfg) -> int:
    from .env import PruningEnv
    from .policy import PrivilegedServo, RemotePolicy, ZeroPolicy, run_rollouts, write_records

    out = _need_out(args)
    bank, _, episodes = _load(args)
    env_cfg = _env_config(cfg)
    if args.policy == "remote":
        policy = RemotePolicy(sys.stdin, sys.stderr)
    else:
        policy = PrivilegedServo() if args.policy == "servo" else ZeroPolicy()
    if args.limit:
        episodes = episodes[: args.limit]
    trace = open(args.trace, "w") if args.trace else None
    try:
        recs = run_rollouts(lambda: PruningEnv(bank, env_cfg, spec=_spec(cfg), trace=trace), policy, episodes,
                            horizon=env_cfg.horizon)
    finally:
        if trace:
            trace.close()
    write_records(recs, out)
    rate = np.mean([r.success for r in recs]) if recs else 0.0
    print(f"{len(recs)} rollouts ({policy.name}) -> {out}; success {rate:.1%}")
    return 0


def plan_record(ep, env, res) -> dict:
    from .env import check_success
    from .robot import forward_kinematics

    row = {"episode": ep.id, "method": "rrt", "status": res.status.value, "success": res.success,
           "steps": len(res.path), "iterations": res.iterations, "nodes": res.nodes, "goals": res.n_goals,
           "wall_time": res.wall_time, "collisions_small": 0, "collisions_rigid": 0, "reward_sum": 0.0, "error": ""}
    if res.success:
        rep = check_success(forward_kinematics(env.model, res.path[-1]), env.cut)
        row.update(final_distance=rep.distance, pointing_error_deg=rep.pointing_deg,
                   perpendicular_error_deg=rep.perpendicular_deg)
    else:
        row.update(final_distance=math.nan, pointing_error_deg=math.nan, perpendicular_error_deg=math.nan)
    return row


def cmd_plan(args, cfg) -> int:
    from dataclasses import replace

    from .env import EnvConfig, PruningEnv
    from .planner import PlanRequest, plan

    out = _need_out(args)
    bank, _, episodes = _load(args)
    try:
        req = PlanRequest(**cfg.get("planner", {}))
    except TypeError as exc:
        raise UsageError(f"bad planner section in config: {exc}") from None
    req = replace(req, n_goal_samples=args.goals, time_budget=args.budget, seed=args.seed)
    env = PruningEnv(bank, EnvConfig(render=False), spec=_spec(cfg))
    rows = []
    for ep in episodes[: args.limit or None]:
        env.reset(ep)
        res = plan(env.scene, env.cut, ep.start_q, env.model, req, target=(0, ep.branch))
        rows.append(plan_record(ep, env, res))
    _write_lines(out, rows)
    rate = np.mean([r["success"] for r in rows]) if rows else 0.0
    print(f"{len(rows)} plans -> {out}; success {rate:.1%}")
    return 0


def cmd_analyze(args, cfg) -> int:
    from .analysis import aggregate, emit_csv, emit_svg_heatmap
    from .episodes import read_episodes
    from .policy import read_records

    out = _need_out(args)
    _, episodes = read_episodes(args.episodes)
    rep = aggregate(read_records(args.results), episodes)
    out.mkdir(parents=True, exist_ok=True)
    emit_csv(rep, out)
    emit_svg_heatmap(rep, out)
    summary = {"method": rep.method, "episodes": rep.total, "successes": rep.successes,
               "success_rate": rep.global_rate, "distributions": rep.distributions}
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    print(f"{rep.total} records, success {rep.global_rate:.1%} -> {out}")
    return 0


def cmd_render(args, cfg) -> int:
    from .env import PruningEnv
    from .perception import flow_to_rgb, render_depth, write_flo, write_pgm, write_ppm
    from .policy import PrivilegedServo
    from .treegen import mesh_tree, write_obj

    out = _need_out(args)
    bank, _, episodes = _load(args)
    if args.episode:
        match = [ep for ep in episodes if ep.id == args.episode]
        if not match:
            raise UsageError(f"no episode {args.episode!r} in {args.episodes}")
        ep = match[0]
    elif episodes:
        ep = episodes[0]
    else:
        raise UsageError("episode file is empty")
    env = PruningEnv(bank, _env_config(cfg), spec=_spec(cfg))
    out.mkdir(parents=True, exist_ok=True)
    env.reset(ep)
    servo = PrivilegedServo()
    servo.reset(env)
    for _ in range(args.steps):
        res = env.step(servo(env))
        if res.terminated or res.truncated:
            break
    obs = env.last_observation
    depth, _ = render_depth(env.scene, env._camera_pose(env.q), env.camera)
    mm = np.where(np.isfinite(depth), np.minimum(depth * 1000.0, 65535), 0).astype(np.uint16)
    write_pgm(mm, out / "depth.pgm")
    write_pgm(obs.cutpoint_img[0], out / "cutpoint.pgm")
    flow = np.ascontiguousarray(obs.flow.transpose(1, 2, 0))
    write_flo(flow, out / "flow.flo")
    write_ppm(flow_to_rgb(flow), out / "flow.ppm")
    write_obj(mesh_tree(bank[ep.tree_id]), out / "tree.obj")
    print(f"episode {ep.id} after {env.steps} steps -> {out}")
    return 0


def cmd_serve(args, cfg) -> int:
    from .env import PruningEnv
    from .server import Session, serve_stream, serve_tcp

    bank, _, episodes = _load(args)
    env_cfg = _env_config(cfg)
    make = lambda: Session(PruningEnv(bank, env_cfg, spec=_spec(cfg)), episodes)  # noqa: E731
    if args.port is None:
        serve_stream(make())
    else:
        serve_tcp(make, args.host, args.port, ready=lambda p: print(f"listening on {args.host}:{p}", file=sys.stderr,
                                                                     flush=True))
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--config", help="JSON file with env / planner / trellis overrides")
    common.add_argument("--out", help="output file or directory")

    p = argparse.ArgumentParser(prog="prunesim", description="Simulated reaching for dormant pruning.",
                                parents=[common])
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    g = sub.add_parser("grow", parents=[common], help="grow a bank of trellis trees")
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--years", type=int, default=4)
    g.add_argument("--no-meshes", action="store_true", help="skip the OBJ files")
    g.set_defaults(func=cmd_grow)

    e = sub.add_parser("episodes", parents=[common], help="generate an episode file")
    e.add_argument("--bank", required=True)
    e.add_argument("--kind", choices=("train", "eval", "floated"), default="eval")
    e.add_argument("--count", type=int, default=100, help="train / floated episodes")
    e.add_argument("--orientations", type=int, default=1000, help="eval orientations")
    e.add_argument("--positions", type=int, default=3, help="eval positions per orientation")
    e.set_defaults(func=cmd_episodes)

    r = sub.add_parser("rollout", parents=[common], help="run a controller over episodes")
    r.add_argument("--bank", required=True)
    r.add_argument("--episodes", required=True)
    r.add_argument("--policy", choices=("servo", "zero", "remote"), default="servo")
    r.add_argument("--trace", help="per-step JSON lines log")
    r.add_argument("--limit", type=int, default=0)
    r.set_defaults(func=cmd_rollout)

    pl = sub.add_parser("plan", parents=[common], help="oracle RRT-Connect over episodes")
    pl.add_argument("--bank", required=True)
    pl.add_argument("--episodes", required=True)
    pl.add_argument("--goals", type=int, default=100)
    pl.add_argument("--budget", type=float, default=60.0, help="seconds per episode")
    pl.add_argument("--limit", type=int, default=0)
    pl.set_defaults(func=cmd_plan)

    a = sub.add_parser("analyze", parents=[common], help="success grid and error summaries")
    a.add_argument("--results", required=True)
    a.add_argument("--episodes", required=True)
    a.set_defaults(func=cmd_analyze)

    rd = sub.add_parser("render", parents=[common], help="write depth, flow and cutpoint images")
    rd.add_argument("--bank", required=True)
    rd.add_argument("--episodes", required=True)
    rd.add_argument("--episode")
    rd.add_argument("--steps", type=int, default=1)
    rd.set_defaults(func=cmd_render)

    s = sub.add_parser("serve", parents=[common], help="env server (stdio, or TCP with --port)")
    s.add_argument("--bank", required=True)
    s.add_argument("--episodes", required=True)
    s.add_argument("--port", type=int)
    s.add_argument("--host", default="127.0.0.1")
    s.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the synopsis
        return USAGE_ERROR if exc.code else 0
    try:
        cfg = _config(args)
        return args.func(args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"prunesim: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except KeyboardInterrupt:
        return RUNTIME_ERROR
    except Exception as exc:
        print(f"prunesim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
