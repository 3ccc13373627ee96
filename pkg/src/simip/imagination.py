"""Imagined actions: pick & place, rotate and flip applied to layered scenes.

Every function returns a new :class:`~simip.scene.Scene`; inputs are never
modified. A planning step is a :data:`Move`, a short tuple of primitive
actions applied in order (the pick & place first, then flip and rotation
about the placed object's centre).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .raster import _trig, local_overlap, union_local
from .scene import (
    Affordance,
    Composite,
    ObjectInstance,
    PoseDictionary,
    Scene,
    composite,
)

CONTAINMENT_FRACTION = 0.9


class ImaginationError(ValueError):
    """An action cannot be imagined on the given scene."""


class PreconditionFailed(ImaginationError):
    pass


class OutOfBounds(ImaginationError):
    pass


class MissingPose(ImaginationError):
    pass


@dataclass(frozen=True)
class PickPlace:
    object_id: int
    target: tuple[int, int]
    region: str = ""

    def __post_init__(self):
        object.__setattr__(self, "target", (int(self.target[0]), int(self.target[1])))


@dataclass(frozen=True)
class Rotate:
    object_id: int
    angle: int

    def __post_init__(self):
        if self.angle % 15 != 0 or not 15 <= self.angle <= 345:
            raise ValueError(f"rotation must be one of 15, 30, ..., 345 degrees, got {self.angle}")


@dataclass(frozen=True)
class Flip:
    object_id: int


Action = Union[PickPlace, Rotate, Flip]
Move = tuple  # tuple[Action, ...]


def make_move(object_id: int, target, region: str = "", angle: int = 0,
              flip: bool = False) -> Move:
    """Bundle one planning step: place ``object_id`` at ``target``, optionally
    flipping it and rotating it by ``angle`` degrees."""
    actions: list = [PickPlace(object_id, target, region)]
    if flip:
        actions.append(Flip(object_id))
    if angle % 360:
        actions.append(Rotate(object_id, angle % 360))
    return tuple(actions)


def move_object(move: Move) -> int:
    return move[0].object_id


def move_rotation(move: Move) -> int:
    return sum(a.angle for a in move if isinstance(a, Rotate)) % 360


def move_flips(move: Move) -> bool:
    return sum(isinstance(a, Flip) for a in move) % 2 == 1


def move_target(move: Move):
    for a in move:
        if isinstance(a, PickPlace):
            return a
    return None


def _rotate_offset(v, angle: int):
    c, s = _trig(angle)
    return c * v[0] - s * v[1], s * v[0] + c * v[1]


def transform_subtree(scene: Scene, oid: int, *, target=None, dangle: int = 0,
                      flip_to=None) -> dict[int, ObjectInstance]:
    """Geometry of moving ``oid`` with its descendants.

    ``target`` is the new anchor of ``oid``; ``dangle`` rotates the whole
    subtree about that anchor; ``flip_to`` is an optional ``(pose, layer)``
    replacing the root's canonical rasters. Containment and stacking order are
    left untouched.
    """
    root = scene.get(oid)
    old = root.anchor
    new = tuple(target) if target is not None else old
    out = {}
    for i in scene.subtree(oid):
        obj = scene.get(i)
        changes = {}
        if i == oid:
            changes["anchor"] = new
            if flip_to is not None:
                changes["pose"], changes["canonical"] = flip_to
        else:
            v = (obj.anchor[0] - old[0], obj.anchor[1] - old[1])
            if dangle % 360:
                v = _rotate_offset(v, dangle)
            changes["anchor"] = (new[0] + int(math.floor(v[0] + 0.5)),
                                 new[1] + int(math.floor(v[1] + 0.5)))
        if dangle % 360:
            changes["angle"] = (obj.angle + dangle) % 360
        out[i] = obj.moved(**changes)
    return out


def subtree_footprint(objects) -> tuple[np.ndarray, int, int]:
    return union_local((o.mask,) + o.offset for o in objects)


def in_bounds(objects, width: int, height: int) -> bool:
    for o in objects:
        b = o.bbox
        if b.x0 < 0 or b.y0 < 0 or b.x1 > width or b.y1 > height:
            return False
    return True


def find_support(scene: Scene, oid: int, exclude=None) -> int | None:
    """Topmost object whose hole/place-on pixels hold >=90% of ``oid``'s footprint."""
    skip = set(scene.subtree(oid)) if exclude is None else set(exclude)
    f, fx, fy = subtree_footprint(scene.get(i) for i in scene.subtree(oid))
    total = int(np.count_nonzero(f))
    for obj in reversed(scene.draw_order()):
        if obj.id in skip:
            continue
        aff = obj.affordances
        support = aff[..., Affordance.HOLE] | aff[..., Affordance.PLACE_ON]
        x0, y0 = obj.offset
        if local_overlap(f, fx, fy, support, x0, y0) >= CONTAINMENT_FRACTION * total:
            return obj.id
    return None


def settle(scene: Scene, oid: int) -> Scene:
    """Re-derive the containment parent of ``oid`` and put it on top of its siblings."""
    parent = find_support(scene, oid)
    obj = scene.get(oid).moved(parent=parent, z=scene.next_z())
    return scene.replace_objects({oid: obj})


def _visible_grasp(scene: Scene, oid: int, rendering: Composite) -> bool:
    b = scene.get(oid).bbox
    sl = (slice(b.y0, b.y1), slice(b.x0, b.x1))
    mine = rendering.owner[sl] == oid
    return bool((mine & rendering.affordances[sl][..., Affordance.GRASP]).any())


def apply_action(scene: Scene, action: Action, poses: PoseDictionary | None = None,
                 rendering: Composite | None = None) -> Scene:
    """Imagine a single primitive action and return the post-action scene.

    ``rendering`` may pass a precomputed composite of ``scene``; it is used for
    the grasp precondition only.
    """
    oid = action.object_id
    obj = scene.get(oid)
    rendering = rendering if rendering is not None else scene.rendering
    if not _visible_grasp(scene, oid, rendering):
        raise PreconditionFailed(f"{obj.name} shows no grasp affordance")

    if isinstance(action, PickPlace):
        tx, ty = action.target
        if not (0 <= tx < scene.width and 0 <= ty < scene.height):
            raise OutOfBounds(f"target {action.target} is outside the scene")
        base = composite(scene, exclude=scene.subtree(oid)).affordances[ty, tx]
        if base[Affordance.OBSTRUCT] or not (base[Affordance.PLACE_ON] or base[Affordance.HOLE]):
            raise PreconditionFailed(f"target {action.target} offers no free place-on or hole")
        moved = transform_subtree(scene, oid, target=action.target)
    elif isinstance(action, Rotate):
        moved = transform_subtree(scene, oid, dangle=action.angle)
    elif isinstance(action, Flip):
        if scene.children(oid):
            raise PreconditionFailed(f"{obj.name} carries other objects and cannot be flipped")
        layer = poses.get(obj.name, obj.pose.other) if poses is not None else None
        if layer is None:
            raise MissingPose(f"no {obj.pose.other.value} pose stored for {obj.name}")
        moved = transform_subtree(scene, oid, flip_to=(obj.pose.other, layer))
    else:
        raise TypeError(f"not an action: {action!r}")

    if not in_bounds(moved.values(), scene.width, scene.height):
        raise OutOfBounds(f"{obj.name} would leave the scene")
    return settle(scene.replace_objects(moved), oid)


def apply_move(scene: Scene, move: Move, poses: PoseDictionary | None = None) -> Scene:
    """Apply the primitive actions of one planning step in order."""
    for action in move:
        scene = apply_action(scene, action, poses)
    return scene


def render(scene: Scene) -> Composite:
    """Post-action image and affordance map of an imagined scene."""
    return scene.rendering
