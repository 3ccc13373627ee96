import dataclasses
from collections import Counter

import numpy as np
import pytest

from simip.manifest import (
    ManifestError,
    load_certificate,
    load_manifest,
    save_generated,
    scenes_equal,
)
from simip.planner import PlannerConfig, plan_scene
from simip.scene import outside_box
from simip.scenegen import (
    GenConfig,
    InfeasibleConfig,
    generate_dataset,
    generate_scene,
    replay_certificate,
    scene_seeds,
)
from simip.validation import default_threshold, goal_reached, validate

SMALL = GenConfig(size=(512, 384))


def test_zero_objects_gives_empty_box():
    g = generate_scene(dataclasses.replace(SMALL, seed=3, n_objects=(0, 0)))
    assert g.scene.objects == ()
    assert outside_box(g.scene) == set()
    assert g.scene.box_region.any() and g.scene.compartments


def test_same_seed_is_bit_identical():
    cfg = dataclasses.replace(SMALL, seed=11, stack_prob=0.5, overlap_prob=0.5)
    a, b = generate_scene(cfg), generate_scene(cfg)
    assert scenes_equal(a.scene, b.scene)
    assert a.certificate == b.certificate
    c = generate_scene(dataclasses.replace(cfg, seed=12))
    assert not scenes_equal(a.scene, c.scene)


def independent_replay(gen):
    """Replay certificate moves one by one through the validator."""
    from simip.imagination import apply_move

    cur = gen.scene
    t = default_threshold(cur.width, cur.height)
    for step in gen.certificate:
        cur = apply_move(cur, step.move(), gen.poses)
        r = validate(cur, step.object_id, t)
        assert r.valid, (step, r)
    return cur


@pytest.mark.parametrize("seed", range(8))
def test_certificate_replays_to_goal(seed):
    cfg = dataclasses.replace(SMALL, seed=seed, n_objects=(5, 5), stack_prob=0.3,
                              rotate_prob=0.5, flip_prob=0.5)
    g = generate_scene(cfg)
    final = independent_replay(g)
    assert goal_reached(final)
    assert replay_certificate(g.scene, g.poses, g.certificate) is not None
    assert len(g.certificate) == len(outside_box(g.scene))


def test_forced_outside_count():
    for k in range(0, 8):
        g = generate_scene(dataclasses.replace(SMALL, seed=100 + k, initial_in_box=(0, 1)), n_outside=k)
        assert len(outside_box(g.scene)) == k


def test_scene_invariants_hold():
    for seed in range(6):
        g = generate_scene(dataclasses.replace(SMALL, seed=seed, stack_prob=0.6, overlap_prob=0.6))
        g.scene.check()
        g.poses.check()
        _ = g.scene.rendering


def test_impossible_config_raises():
    cfg = GenConfig(size=(128, 96), n_objects=(12, 12), max_retries=5)
    with pytest.raises(InfeasibleConfig):
        generate_scene(cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        GenConfig(n_objects=(3, 1))
    with pytest.raises(ValueError):
        GenConfig(classes=("spoon",))
    with pytest.raises(ValueError):
        GenConfig.from_dict({"colour": 1})
    cfg = GenConfig(seed=4, size=(640, 480), stack_prob=0.2)
    assert GenConfig.from_dict(cfg.to_dict()) == cfg


def test_dataset_manifests_round_trip(tmp_path):
    cfg = dataclasses.replace(SMALL, seed=5)
    paths = generate_dataset(cfg, 3, tmp_path, steps=[0, 2, 4])
    assert len(paths) == 3 and all(p.exists() for p in paths)
    gens = generate_dataset(cfg, 3, steps=[0, 2, 4])
    for p, g in zip(paths, gens):
        scene, poses, doc = load_manifest(p)
        assert scenes_equal(scene, g.scene)
        assert len(poses) == len(g.poses)
        for key, lay in g.poses.items():
            assert lay.same_as(poses.get(*key))
        assert load_certificate(doc) == g.certificate
    assert [len(outside_box(g.scene)) for g in gens] == [0, 2, 4]


def test_single_manifest_round_trip(tmp_path):
    g = generate_scene(dataclasses.replace(SMALL, seed=9, stack_prob=1.0, rotate_prob=1.0))
    p = save_generated(g, tmp_path / "one")
    scene, _, _ = load_manifest(tmp_path / "one")
    assert scenes_equal(scene, g.scene)
    assert np.array_equal(scene.rendering.image, g.scene.rendering.image)


def test_bad_manifest(tmp_path):
    with pytest.raises(ManifestError):
        load_manifest(tmp_path)
    (tmp_path / "manifest.yaml").write_text("format: other\n")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path)


def test_scene_seeds_are_stable_and_distinct():
    a = scene_seeds(7, 50)
    assert a == scene_seeds(7, 50)
    assert len(set(a)) == 50
    assert scene_seeds(7, 10) == a[:10]


def test_plan_lengths_follow_stratification():
    steps = list(range(8))
    gens = generate_dataset(dataclasses.replace(SMALL, seed=21, initial_in_box=(0, 1)), 8, steps=steps)
    lengths = Counter()
    for g in gens:
        _, p = plan_scene(g.scene, g.poses, PlannerConfig(mode="exhaustive"))
        assert p.complete
        lengths[len(p)] += 1
    want = Counter(steps)
    for k in steps:
        assert abs(lengths[k] - want[k]) <= 1
