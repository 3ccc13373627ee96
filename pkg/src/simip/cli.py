"""Command-line entry point: ``simip <subcommand> ...``.

Exit codes: 0 success, 1 domain error (bad scene, infeasible config,
incomplete plan with ``--require-complete``), 2 usage error. Every random
choice derives from ``--seed`` (default 0).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import yaml

from . import __version__


class DomainError(Exception):
    pass


def _read_yaml(path) -> dict:
    if path is None:
        return {}
    doc = yaml.safe_load(Path(path).read_text())
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise DomainError(f"{path}: expected a mapping")
    return doc


def _planner_cfg(args):
    from .planner import PlannerConfig

    d = _read_yaml(getattr(args, "config", None)).get("planner", {})
    cfg = PlannerConfig.from_dict(d)
    changes = {"seed": args.seed}
    if args.mode:
        changes["mode"] = args.mode
    if args.threshold is not None:
        changes["threshold"] = args.threshold
    if args.max_depth is not None:
        changes["max_depth"] = args.max_depth
    return dataclasses.replace(cfg, **changes)


def _belief(args):
    from .manifest import load_manifest
    from .perception import MILD, perceive, scaled

    scene, poses, _ = load_manifest(args.scene)
    corruption = None
    if args.corruption:
        corruption = scaled(MILD, args.corruption).with_seed(args.seed)
    return scene, perceive(scene, poses, corruption, not args.no_completion)


def _plan(args):
    from .planner import plan_scene

    scene, belief = _belief(args)
    tree, plan = plan_scene(belief.scene, belief.poses, _planner_cfg(args))
    return scene, belief, tree, plan


def _finish(plan, args, out: Path) -> int:
    from .symbolic import parse, to_listing, to_text

    splan = parse(plan)
    (out / "plan.txt").write_text(to_listing(splan))
    (out / "plan_text.txt").write_text(to_text(splan) + "\n")
    if len(plan) == 0 and plan.complete:
        print("nothing needs to be done")
    else:
        print(to_text(splan))
        if not plan.complete:
            print(f"incomplete plan: {len(plan)} steps, objects remain outside the box")
    if args.require_complete and not plan.complete:
        raise DomainError("no complete plan found")
    return 0


def cmd_generate(args) -> int:
    from .scenegen import GenConfig, generate_dataset

    d = _read_yaml(args.config)
    d = d.get("dataset", d)
    cfg = GenConfig.from_dict(d)
    changes = {"seed": args.seed}
    if args.size:
        changes["size"] = tuple(args.size)
    cfg = dataclasses.replace(cfg, **changes)
    steps = [int(s) for s in args.steps.split(",")] if args.steps else None
    paths = generate_dataset(cfg, args.n, args.out, steps=steps)
    for p in paths:
        print(p)
    return 0


def cmd_plan(args) -> int:
    from .render import render_plan_strip

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, _, tree, plan = _plan(args)
    render_plan_strip(plan, out / "strip.png")
    return _finish(plan, args, out)


def cmd_tree(args) -> int:
    from .planner import dump_tree

    out = Path(args.out)
    _, _, tree, plan = _plan(args)
    dump_tree(tree, out)
    print(f"{len(tree.nodes)} nodes, plan of {len(plan)} steps, complete={plan.complete}")
    if args.require_complete and not plan.complete:
        raise DomainError("no complete plan found")
    return 0


def cmd_symbolic(args) -> int:
    from .manifest import load_manifest, save_png
    from .symbolic import from_listing, replay, to_text

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.listing:
        scene, poses, _ = load_manifest(args.scene)
        splan = from_listing(Path(args.listing).read_text())
        final = replay(scene, splan, poses, args.threshold)
        save_png(out / "final.png", final.rendering.image)
        print(to_text(splan))
        return 0
    _, _, _, plan = _plan(args)
    return _finish(plan, args, out)


def cmd_evaluate(args) -> int:
    from .evaluation import ExperimentConfig, run, trend_check

    cfg = ExperimentConfig.load(args.config)
    cfg = dataclasses.replace(cfg, seed=args.seed, out_dir=args.out,
                              workers=args.workers or cfg.workers)
    report = run(cfg)
    print(report.to_text())
    if len(cfg.levels) >= 3:
        for t in trend_check(report):
            print(f"{'PASS' if t.passed else 'FAIL'} {t.name}: {t.detail}")
    return 0


def cmd_ipm(args) -> int:
    from .ipm import load_calibration, remap_and_merge
    from .manifest import load_png, save_png

    view, cams = load_calibration(args.calib)
    top, cov = remap_and_merge(((load_png(p), c) for p, c in cams), view)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_png(out / "topview.png", top)
    save_png(out / "coverage.png", cov)
    print(f"coverage {100.0 * cov.mean():.1f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simip", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"simip {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scene=True):
        sp.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")
        if scene:
            sp.add_argument("--scene", required=True, help="scene manifest or its directory")
            sp.add_argument("--config", help="YAML file with a 'planner' section")
            sp.add_argument("--mode", choices=("greedy", "exhaustive"))
            sp.add_argument("--threshold", type=int, help="conflict threshold in pixels")
            sp.add_argument("--max-depth", type=int)
            sp.add_argument("--corruption", type=float, default=0.0,
                            help="strength of simulated perception errors (0 = oracle)")
            sp.add_argument("--no-completion", action="store_true", help="disable object completion")
            sp.add_argument("--require-complete", action="store_true",
                            help="exit 1 when no complete plan is found")

    g = sub.add_parser("generate", help="generate a scene dataset")
    common(g, scene=False)
    g.add_argument("--config", help="YAML generator config (or experiment config with 'dataset')")
    g.add_argument("-n", "--n", type=int, default=1, help="number of scenes")
    g.add_argument("--size", type=int, nargs=2, metavar=("W", "H"))
    g.add_argument("--steps", help="comma-separated outside-object counts to cycle through")
    g.set_defaults(func=cmd_generate)

    for name, fn, text in (("plan", cmd_plan, "plan one scene, write plan and strip"),
                           ("tree", cmd_tree, "plan one scene and dump its planning tree"),
                           ("symbolic", cmd_symbolic, "symbolic plan of a scene or replay a listing")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        if name == "symbolic":
            sp.add_argument("--listing", help="replay this command listing instead of planning")
        sp.set_defaults(func=fn)

    e = sub.add_parser("evaluate", help="run an experiment config")
    common(e, scene=False)
    e.add_argument("--config", required=True)
    e.add_argument("--workers", type=int)
    e.set_defaults(func=cmd_evaluate)

    i = sub.add_parser("ipm", help="merge tilted camera views into a top view")
    common(i, scene=False)
    i.add_argument("--calib", required=True, help="YAML calibration file")
    i.set_defaults(func=cmd_ipm)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return args.func(args)
    except (DomainError, ValueError, KeyError, OSError) as e:
        msg = str(e).strip().splitlines()[0] if str(e).strip() else type(e).__name__
        print(f"simip {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
