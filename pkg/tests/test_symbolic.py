import dataclasses

import numpy as np
import pytest

from helpers import boxed_scene, obj, solid
from simip.planner import PlannerConfig, plan_scene
from simip.raster import BBox
from simip.render import render_plan_strip
from simip.scene import ClassLabel, Pose, PoseDictionary
from simip.scenegen import GenConfig, generate_scene
from simip.symbolic import (
    Flip,
    Grasp,
    PlaceAt,
    ReplayError,
    Rotate,
    SymbolicError,
    SymbolicPlan,
    from_listing,
    parse,
    replay,
    signed_angle,
    to_listing,
    to_text,
)

SMALL = GenConfig(size=(512, 384))


def planned(seed=2, **kw):
    kw.setdefault("n_objects", (5, 5))
    kw.setdefault("spare_compartments", 0)
    g = generate_scene(dataclasses.replace(SMALL, seed=seed, **kw))
    _, p = plan_scene(g.scene, g.poses, PlannerConfig(mode="exhaustive"))
    assert p.complete
    return g, p


def test_empty_plan():
    g = generate_scene(dataclasses.replace(SMALL, seed=1), n_outside=0)
    _, p = plan_scene(g.scene, g.poses)
    sp = parse(p)
    assert sp.commands == []
    assert to_text(sp) == "nothing needs to be done"
    assert replay(g.scene, sp, g.poses) is g.scene


def test_five_step_plan_structure():
    g, p = planned()
    sp = parse(p)
    blocks = sp.blocks()
    assert len(blocks) == 5
    extra = sum(isinstance(c, (Rotate, Flip)) for c in sp.commands)
    assert len(sp) == 10 + extra
    assert sp.image_refs == [f"image_{k}" for k in range(1, 6)]
    first = sp.commands[0]
    assert isinstance(first, Grasp) and first.image == "image_1"
    obj0 = p.initial.get(p.moves[0][0].object_id)
    assert (first.label, first.name, first.bbox) == (obj0.label.value, obj0.name, obj0.bbox)
    for b in blocks:
        assert isinstance(b[0], Grasp) and isinstance(b[-1], PlaceAt)
        assert b[-1].label in ("compartment", "box") or b[-1].label in [c.value for c in ClassLabel]
    lines = to_text(sp).splitlines()
    assert sum(ln.startswith("pick ") for ln in lines) == 5
    assert sum(ln.startswith("place ") for ln in lines) == 5


def test_command_counts_match_actions():
    g, p = planned(seed=5, rotate_prob=1.0)
    sp = parse(p)
    # each pick & place becomes Grasp + Place_at; rotations and flips map one to one
    assert len(sp) == len(p.actions) + len(p)


def test_round_trip_replay_is_bit_exact():
    for seed in range(5):
        g, p = planned(seed=seed, n_objects=(1, 5), spare_compartments=1, stack_prob=0.4,
                       rotate_prob=0.5, flip_prob=0.5)
        sp = parse(p)
        final = replay(g.scene, sp, g.poses)
        assert np.array_equal(final.rendering.image, p.final.rendering.image)
        again = from_listing(to_listing(sp))
        assert again.commands == sp.commands


def flip_scene():
    bar = solid(10, 30)
    small = solid(12, 12)
    poses = PoseDictionary()
    poses.add("red_cuboid", ClassLabel.CUBOID, Pose.HORIZONTAL, bar)
    poses.add("red_cuboid", ClassLabel.CUBOID, Pose.VERTICAL, small)
    s = boxed_scene(size=(256, 192), box=(190, 30, 224, 86), compartments=[(200, 40, 214, 56)],
                    objects=[obj(1, bar, (60, 100), name="red_cuboid")])
    return s, poses


def test_flip_precedes_place_at():
    s, poses = flip_scene()
    _, p = plan_scene(s, poses, PlannerConfig(placement_samples=0, threshold=3))
    sp = parse(p)
    kinds = [type(c) for c in sp.commands]
    assert Flip in kinds
    assert kinds.index(Flip) < kinds.index(PlaceAt)
    assert kinds[0] is Grasp and kinds[-1] is PlaceAt
    final = replay(s, sp, poses, 3)
    assert np.array_equal(final.rendering.image, p.final.rendering.image)


def test_corrupted_bbox_is_reported_at_its_step():
    g, p = planned()
    sp = parse(p)
    idx = [i for i, c in enumerate(sp.commands) if isinstance(c, Grasp)][2]
    c = sp.commands[idx]
    bad = dataclasses.replace(c, bbox=BBox(c.bbox.x0 + 3, c.bbox.y0, c.bbox.x1 + 3, c.bbox.y1))
    cmds = list(sp.commands)
    cmds[idx] = bad
    with pytest.raises(ReplayError) as e:
        replay(g.scene, SymbolicPlan(cmds), g.poses)
    assert e.value.step == 3


def test_bad_place_target_fails_validation_at_its_step():
    g, p = planned()
    sp = parse(p)
    idx = [i for i, c in enumerate(sp.commands) if isinstance(c, PlaceAt)][1]
    c = sp.commands[idx]
    cmds = list(sp.commands)
    # drop the second object onto the first one's spot
    first = [x for x in sp.commands if isinstance(x, PlaceAt)][0]
    cmds[idx] = dataclasses.replace(c, at=first.at)
    with pytest.raises(ReplayError) as e:
        replay(g.scene, SymbolicPlan(cmds), g.poses)
    assert e.value.step == 2


def test_parse_refuses_unvalidated_steps():
    g, p = planned()
    p.nodes[2].validation = None
    with pytest.raises(SymbolicError):
        parse(p)


def test_text_template():
    sp = SymbolicPlan([Grasp("can", "black_can", BBox(364, 257, 460, 353), "image_1"),
                       Rotate("black_can", 60),
                       PlaceAt("compartment", "compartment_4", BBox(10, 10, 50, 70), "image_1", (30, 40))])
    lines = to_text(sp).splitlines()
    assert lines[0] == "pick an object with label can at (412,305), diameter 96 px"
    assert lines[1] == "rotate black_can by 60 deg"
    assert lines[2] == "place it on compartment at (30,40), diameter 60 px"


def test_listing_format_and_errors():
    sp = SymbolicPlan([Grasp("can", "black_can", BBox(1, 2, 3, 4), "image_1"),
                       Rotate("black_can", -45), Flip("black_can"),
                       PlaceAt("compartment", "compartment_4", BBox(5, 6, 7, 8), "image_1", (6, 7))])
    text = to_listing(sp)
    assert text.splitlines()[0].startswith('Grasp("can", Bbox("black_can", "image_1"))')
    assert from_listing(text).commands == sp.commands
    with pytest.raises(SymbolicError):
        from_listing("Jump()\n")
    with pytest.raises(SymbolicError):
        SymbolicPlan([Rotate("x", 15)]).blocks()


def test_signed_angle():
    assert [signed_angle(a) for a in (0, 60, 180, 195, 345)] == [0, 60, 180, -165, -15]


def test_strip_panels_and_circles():
    g, p = planned()
    img, markers = render_plan_strip(p)
    H, W = g.scene.shape
    assert img.shape == (H, 6 * W + 5 * 6, 3)
    assert [m.panel for m in markers] == [1, 2, 3, 4, 5]
    for m, node in zip(markers, p.nodes[1:]):
        b = node.scene.get(node.move[0].object_id).bbox
        assert b.x0 <= m.center[0] < b.x1 and b.y0 <= m.center[1] < b.y1


def test_strip_of_empty_plan_is_one_panel():
    g = generate_scene(dataclasses.replace(SMALL, seed=1), n_outside=0)
    _, p = plan_scene(g.scene, g.poses)
    img, markers = render_plan_strip(p)
    assert img.shape == (g.scene.height, g.scene.width, 3) and markers == []
