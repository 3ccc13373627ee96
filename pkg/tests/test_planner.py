import dataclasses

import numpy as np
import pytest

from helpers import boxed_scene, obj, solid
from simip.imagination import ImaginationError, apply_move, make_move, move_flips, move_object, move_rotation
from simip.planner import (
    PlannerConfig,
    baseline_plan,
    dump_tree,
    placement_regions,
    plan,
    plan_scene,
)
from simip.perception import make_perceiver
from simip.scene import ClassLabel, Pose, PoseDictionary, outside_box
from simip.scenegen import GenConfig, generate_scene
from simip.validation import goal_reached, validate

SMALL = GenConfig(size=(512, 384))


def gen(seed, **kw):
    return generate_scene(dataclasses.replace(SMALL, seed=seed, **kw))


def test_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(rotation_step=7)
    with pytest.raises(ValueError):
        PlannerConfig(max_depth=-1)
    with pytest.raises(ValueError):
        PlannerConfig(mode="astar")


def test_packed_scene_gives_empty_complete_plan():
    g = generate_scene(dataclasses.replace(SMALL, seed=1, initial_in_box=(2, 3)), n_outside=0)
    for mode in ("greedy", "exhaustive"):
        tree, p = plan_scene(g.scene, g.poses, PlannerConfig(mode=mode))
        assert p.complete and len(p) == 0
        assert len(tree.nodes) == 1 and tree.root.move is None


def slot_scene():
    """A 10x30 bar on the table and a single 14x36 upright slot in the box."""
    bar = solid(10, 30, (30, 60, 220))
    square = solid(20, 20, (30, 60, 220))
    poses = PoseDictionary()
    poses.add("blue_cuboid", ClassLabel.CUBOID, Pose.HORIZONTAL, bar)
    poses.add("blue_cuboid", ClassLabel.CUBOID, Pose.VERTICAL, square)
    s = boxed_scene(size=(256, 192), box=(190, 30, 224, 86), compartments=[(200, 40, 214, 76)],
                    objects=[obj(1, bar, (60, 100), name="blue_cuboid")])
    return s, poses


def test_only_quarter_turns_fit_the_slot():
    s, poses = slot_scene()
    cfg = PlannerConfig(placement_samples=0, threshold=3)
    regions, _ = placement_regions(s, 1)
    assert len(regions) == 1
    target = regions[0].target
    valid = set()
    for angle in range(0, 360, 15):
        for flip in (False, True):
            try:
                post = apply_move(s, make_move(1, target, regions[0].name, angle, flip), poses)
            except ImaginationError:
                continue
            if validate(post, 1, 3).valid:
                valid.add((angle, flip))
    assert valid == {(90, False), (270, False)}
    for mode in ("greedy", "exhaustive"):
        _, p = plan_scene(s, poses, dataclasses.replace(cfg, mode=mode))
        assert p.complete and len(p) == 1
        m = p.moves[0]
        assert (move_rotation(m), move_flips(m)) == (90, False)


def test_flip_is_used_when_only_the_other_pose_fits():
    bar = solid(10, 30)
    small = solid(12, 12)
    poses = PoseDictionary()
    poses.add("red_cuboid", ClassLabel.CUBOID, Pose.HORIZONTAL, bar)
    poses.add("red_cuboid", ClassLabel.CUBOID, Pose.VERTICAL, small)
    s = boxed_scene(size=(256, 192), box=(190, 30, 224, 86), compartments=[(200, 40, 214, 56)],
                    objects=[obj(1, bar, (60, 100), name="red_cuboid")])
    _, p = plan_scene(s, poses, PlannerConfig(placement_samples=0, threshold=3))
    assert p.complete and move_flips(p.moves[0])


@pytest.mark.parametrize("seed", range(6))
def test_plan_steps_revalidate_and_complete_plans_reach_goal(seed):
    g = gen(seed, stack_prob=0.4, overlap_prob=0.4, initial_in_box=(0, 1))
    cfg = PlannerConfig(seed=seed)
    _, p = plan_scene(g.scene, g.poses, cfg)
    cur = g.scene
    for node in p.nodes[1:]:
        cur = apply_move(cur, node.move, g.poses)
        r = validate(cur, move_object(node.move))
        assert r.valid and r == node.validation
        assert np.array_equal(cur.rendering.image, node.scene.rendering.image)
    assert p.complete == goal_reached(p.final)
    assert len(p) <= cfg.max_depth
    for a, b in zip(p.nodes, p.nodes[1:]):
        assert b.parent is a and b.depth == a.depth + 1


def test_planning_is_deterministic():
    g = gen(4, stack_prob=0.5, overlap_prob=0.5)
    cfg = PlannerConfig(seed=7)
    t1, p1 = plan_scene(g.scene, g.poses, cfg)
    t2, p2 = plan_scene(g.scene, g.poses, cfg)
    assert len(t1.nodes) == len(t2.nodes)
    assert [n.move for n in t1.nodes] == [n.move for n in t2.nodes]
    assert p1.moves == p2.moves


def test_exhaustive_matches_certificates():
    for seed in range(10):
        g = gen(seed, stack_prob=0.3, overlap_prob=0.3)
        _, p = plan_scene(g.scene, g.poses, PlannerConfig(mode="exhaustive", seed=seed))
        assert p.complete


def test_five_object_scene_packs_all_five():
    g = gen(2, n_objects=(5, 5), spare_compartments=0)
    assert len(outside_box(g.scene)) == 5
    _, p = plan(g.scene, make_perceiver(g.poses), PlannerConfig(mode="exhaustive"))
    assert p.complete and len(p) == 5
    assert sorted(move_object(m) for m in p.moves) == sorted(o.id for o in g.scene.objects)


def test_max_depth_truncates():
    g = gen(3, n_objects=(4, 4))
    _, p = plan_scene(g.scene, g.poses, PlannerConfig(max_depth=2))
    assert len(p) == 2 and not p.complete


def test_baseline_zero_outside_is_empty():
    g = generate_scene(dataclasses.replace(SMALL, seed=1), n_outside=0)
    p = baseline_plan(g.scene, PlannerConfig(), g.poses)
    assert len(p) == 0


def test_baseline_steps_are_scored_afterwards():
    g = gen(5, n_objects=(4, 4))
    p = baseline_plan(g.scene, PlannerConfig(seed=1), g.poses)
    assert len(p) <= 4
    for node in p.nodes[1:]:
        assert node.validation == validate(node.scene, move_object(node.move))
    assert p.complete == (len(p) == 4 and goal_reached(p.final) and p.all_valid)


def big_compartment_scene():
    s = boxed_scene(size=(256, 192), box=(150, 30, 230, 110), compartments=[(160, 40, 220, 100)],
                    objects=[obj(1, solid(16, 16), (60, 100))])
    return s


def test_baseline_success_matches_acceptance_ratio():
    s = big_compartment_scene()
    cfg = PlannerConfig(threshold=5)
    regions, _ = placement_regions(s, 1)
    free = regions[0].mask
    ys, xs = np.nonzero(free)
    ok = 0
    for x, y in zip(xs, ys):
        post = apply_move(s, make_move(1, (int(x), int(y))))
        ok += validate(post, 1, 5).valid and not outside_box(post)
    analytic = ok / len(xs)
    wins = sum(baseline_plan(s, dataclasses.replace(cfg, seed=k)).complete for k in range(1000))
    assert 0.3 < analytic < 0.9
    assert abs(wins / 1000 - analytic) <= 0.03


def test_dump_tree_single_node(tmp_path):
    g = generate_scene(dataclasses.replace(SMALL, seed=1), n_outside=0)
    tree, _ = plan_scene(g.scene, g.poses)
    dump_tree(tree, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["node_0.png", "tree.txt"]
    lines = (tmp_path / "tree.txt").read_text().splitlines()
    assert len(lines) == 2 and lines[1].startswith("0 -1 0 *")


def test_dump_tree_numbers_plan_nodes_first(tmp_path):
    g = gen(2, n_objects=(5, 5), spare_compartments=0)
    tree, p = plan_scene(g.scene, g.poses, PlannerConfig(mode="exhaustive"))
    assert len(p) == 5
    dump_tree(tree, tmp_path)
    rows = [ln.split() for ln in (tmp_path / "tree.txt").read_text().splitlines()[1:]]
    flagged = [r for r in rows if r[3] == "*"]
    assert [int(r[0]) for r in flagged] == list(range(6))
    assert all(r[4] == "true" for r in flagged[1:])
    for k in range(len(tree.nodes)):
        assert (tmp_path / f"node_{k}.png").exists()
    # flagged nodes chain parent to child
    assert [int(r[1]) for r in flagged] == [-1, 0, 1, 2, 3, 4]
