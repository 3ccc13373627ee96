"""Layered top-view scenes: objects, affordance channels, containment, compositing.

A :class:`Scene` is an immutable snapshot. Objects store a canonical (0 degree)
bbox-local :class:`Layer` plus an accumulated rotation and an integer anchor
(the centre of the current bounding box), so translating an object is a
metadata change and repeated rotations never resample an already rotated
raster.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

from .raster import BBox, mask_bbox, place, rotate_arrays, union_local

REFERENCE_SIZE = (1024, 768)


class Affordance(enum.IntEnum):
    GRASP = 0
    PLACE_ON = 1
    OBSTRUCT = 2
    HOLE = 3


class ClassLabel(str, enum.Enum):
    CAN = "can"
    CUP = "cup"
    PLATE = "plate"
    BOWL = "bowl"
    APPLE = "apple"
    BOX = "box"
    CUBOID = "cuboid"
    COMPARTMENT = "compartment"


class Pose(str, enum.Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"

    @property
    def other(self) -> "Pose":
        return Pose.VERTICAL if self is Pose.HORIZONTAL else Pose.HORIZONTAL


class SceneError(ValueError):
    """A scene violates one of its structural invariants."""


class AmbiguousOrder(SceneError):
    """Two overlapping siblings share the same stacking order."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.flags.writeable:
        a = a.copy()
        a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Layer:
    """Bbox-local rasters of one object: mask, colour patch and affordances."""

    mask: np.ndarray
    appearance: np.ndarray
    affordances: np.ndarray

    def __post_init__(self):
        mask = _readonly(np.asarray(self.mask, dtype=bool))
        app = _readonly(np.asarray(self.appearance, dtype=np.uint8))
        aff = _readonly(np.asarray(self.affordances, dtype=bool))
        if mask.ndim != 2 or not mask.any():
            raise SceneError("layer mask must be a non-empty 2-D array")
        if app.shape != mask.shape + (3,) or aff.shape != mask.shape + (4,):
            raise SceneError("appearance/affordance shapes must match the mask")
        if (aff & ~mask[..., None]).any():
            raise SceneError("affordances must lie on the object's own pixels")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "appearance", app)
        object.__setattr__(self, "affordances", aff)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def is_tight(self) -> bool:
        box = mask_bbox(self.mask)
        return box == BBox(0, 0, self.mask.shape[1], self.mask.shape[0])

    def same_as(self, other: "Layer") -> bool:
        return (self.mask.shape == other.mask.shape
                and np.array_equal(self.mask, other.mask)
                and np.array_equal(self.appearance, other.appearance)
                and np.array_equal(self.affordances, other.affordances))


@functools.lru_cache(maxsize=8192)
def rotated(layer: Layer, angle: int) -> Layer:
    """``layer`` rotated clockwise by ``angle`` degrees (cached per layer object)."""
    if angle % 360 == 0:
        return layer
    m, a, f = rotate_arrays(layer.mask, layer.appearance, layer.affordances, angle)
    return Layer(m, a, f)


@dataclass(frozen=True)
class ObjectInstance:
    """One movable object.

    The current rasters are derived from ``canonical`` rotated by ``angle`` and
    positioned so the bounding-box centre sits on ``anchor``.
    """

    id: int
    name: str
    label: ClassLabel
    pose: Pose
    canonical: Layer
    anchor: tuple[int, int]
    angle: int = 0
    z: int = 0
    parent: int | None = None

    def __post_init__(self):
        if self.label in (ClassLabel.COMPARTMENT, ClassLabel.BOX):
            raise SceneError(f"{self.label.value} cannot be a movable layer")
        if self.angle % 15 != 0 or not 0 <= self.angle < 360:
            raise SceneError(f"rotation must be a multiple of 15 in [0, 360): {self.angle}")
        object.__setattr__(self, "anchor", (int(self.anchor[0]), int(self.anchor[1])))

    @property
    def rotation(self) -> int:
        return self.angle

    @cached_property
    def layer(self) -> Layer:
        return rotated(self.canonical, self.angle)

    @property
    def mask(self) -> np.ndarray:
        return self.layer.mask

    @property
    def appearance(self) -> np.ndarray:
        return self.layer.appearance

    @property
    def affordances(self) -> np.ndarray:
        return self.layer.affordances

    @property
    def offset(self) -> tuple[int, int]:
        h, w = self.layer.shape
        return self.anchor[0] - w // 2, self.anchor[1] - h // 2

    @property
    def bbox(self) -> BBox:
        x0, y0 = self.offset
        h, w = self.layer.shape
        return BBox(x0, y0, x0 + w, y0 + h)

    def affordance(self, kind: Affordance) -> np.ndarray:
        return self.layer.affordances[..., int(kind)]

    def moved(self, **changes) -> "ObjectInstance":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Compartment:
    name: str
    mask: np.ndarray
    label: ClassLabel = ClassLabel.COMPARTMENT

    def __post_init__(self):
        object.__setattr__(self, "mask", _readonly(np.asarray(self.mask, dtype=bool)))

    @cached_property
    def bbox(self) -> BBox:
        return mask_bbox(self.mask)


@dataclass(frozen=True)
class Composite:
    """Result of overlaying all layers: image, affordance map and owner ids.

    ``owner`` holds the id of the topmost object at each pixel or -1 for
    background.
    """

    image: np.ndarray
    affordances: np.ndarray
    owner: np.ndarray

    def channel(self, kind: Affordance) -> np.ndarray:
        return self.affordances[..., int(kind)]


@dataclass(frozen=True, eq=False)
class Scene:
    """Immutable snapshot of the table: background, box and object layers."""

    background: np.ndarray
    background_affordances: np.ndarray
    box_region: np.ndarray
    compartments: tuple[Compartment, ...] = ()
    objects: tuple[ObjectInstance, ...] = ()
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "background", _readonly(np.asarray(self.background, dtype=np.uint8)))
        object.__setattr__(self, "background_affordances",
                           _readonly(np.asarray(self.background_affordances, dtype=bool)))
        object.__setattr__(self, "box_region", _readonly(np.asarray(self.box_region, dtype=bool)))
        object.__setattr__(self, "compartments", tuple(self.compartments))
        object.__setattr__(self, "objects", tuple(self.objects))
        H, W = self.background.shape[:2]
        if H < 1 or W < 1 or self.background.shape != (H, W, 3):
            raise SceneError("background must be an (H, W, 3) image")
        if self.background_affordances.shape != (H, W, 4) or self.box_region.shape != (H, W):
            raise SceneError("background affordances and box region must match the scene size")
        by_id = {}
        for obj in self.objects:
            if obj.id in by_id:
                raise SceneError(f"duplicate object id {obj.id}")
            by_id[obj.id] = obj
        object.__setattr__(self, "_by_id", by_id)
        for obj in self.objects:
            if obj.parent is not None and obj.parent not in by_id:
                raise SceneError(f"object {obj.id} has unknown parent {obj.parent}")
            b = obj.bbox
            if b.x0 < 0 or b.y0 < 0 or b.x1 > W or b.y1 > H:
                raise SceneError(f"object {obj.name!r} leaves the scene extent")
        for obj in self.objects:
            seen = {obj.id}
            p = obj.parent
            while p is not None:
                if p in seen:
                    raise SceneError(f"containment cycle through object {obj.id}")
                seen.add(p)
                p = by_id[p].parent

    # -- structure ---------------------------------------------------------

    @property
    def width(self) -> int:
        return self.background.shape[1]

    @property
    def height(self) -> int:
        return self.background.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.background.shape[:2]

    def get(self, oid: int) -> ObjectInstance:
        try:
            return self._by_id[oid]
        except KeyError:
            raise KeyError(f"unknown object id {oid}") from None

    def has(self, oid: int) -> bool:
        return oid in self._by_id

    def by_name(self, name: str) -> ObjectInstance:
        for obj in self.objects:
            if obj.name == name:
                return obj
        raise KeyError(f"no object named {name!r}")

    def compartment(self, name: str) -> Compartment:
        for c in self.compartments:
            if c.name == name:
                return c
        raise KeyError(f"no compartment named {name!r}")

    @cached_property
    def _children(self) -> dict:
        kids: dict = {None: []}
        for obj in self.objects:
            kids.setdefault(obj.id, [])
        for obj in self.objects:
            kids[obj.parent].append(obj)
        for k in kids:
            kids[k].sort(key=lambda o: (o.z, o.id))
        return kids

    def children(self, oid: int | None) -> list[ObjectInstance]:
        """Direct children of ``oid`` (``None`` gives the roots), by stacking order."""
        return list(self._children.get(oid, []))

    def roots(self) -> list[ObjectInstance]:
        return self.children(None)

    def subtree(self, oid: int) -> list[int]:
        """Ids of ``oid`` and all its containment descendants, preorder."""
        self.get(oid)
        out = []
        stack = [oid]
        while stack:
            cur = stack.pop()
            out.append(cur)
            stack.extend(o.id for o in reversed(self._children[cur]))
        return out

    def root_of(self, oid: int) -> int:
        obj = self.get(oid)
        while obj.parent is not None:
            obj = self.get(obj.parent)
        return obj.id

    def depth(self, oid: int) -> int:
        d = 0
        obj = self.get(oid)
        while obj.parent is not None:
            obj = self.get(obj.parent)
            d += 1
        return d

    def draw_order(self) -> list[ObjectInstance]:
        """Objects bottom to top: roots by ``z``, each followed by its subtree."""
        out = []

        def visit(parent):
            for obj in self._children[parent]:
                out.append(obj)
                visit(obj.id)

        visit(None)
        return out

    def next_z(self) -> int:
        return max((o.z for o in self.objects), default=-1) + 1

    def with_objects(self, objects: Iterable[ObjectInstance]) -> "Scene":
        return Scene(self.background, self.background_affordances, self.box_region,
                     self.compartments, tuple(objects))

    def replace_objects(self, updated: Mapping[int, ObjectInstance]) -> "Scene":
        return self.with_objects(updated.get(o.id, o) for o in self.objects)

    def without(self, ids: Iterable[int]) -> "Scene":
        """Scene with the given objects removed; orphaned children become roots."""
        drop = set(ids)
        objs = []
        for o in self.objects:
            if o.id in drop:
                continue
            if o.parent in drop:
                o = o.moved(parent=None)
            objs.append(o)
        return self.with_objects(objs)

    def check(self) -> None:
        """Full invariant check (compartments inside the box, sibling orders)."""
        for c in self.compartments:
            if c.mask.shape != self.shape:
                raise SceneError(f"compartment {c.name!r} has the wrong size")
            if (c.mask & ~self.box_region).any():
                raise SceneError(f"compartment {c.name!r} extends outside the box")
        for parent, kids in self._children.items():
            zs = [k.z for k in kids]
            if len(zs) != len(set(zs)):
                raise SceneError(f"siblings under {parent} share a stacking order")

    @cached_property
    def rendering(self) -> Composite:
        """Cached :func:`composite` of this snapshot."""
        return composite(self)


def _check_order(scene: Scene) -> None:
    for kids in scene._children.values():
        by_z: dict = {}
        for k in kids:
            by_z.setdefault(k.z, []).append(k)
        for group in by_z.values():
            for i, a in enumerate(group):
                for b in group[i + 1:]:
                    if _overlap(a, b):
                        raise AmbiguousOrder(
                            f"{a.name!r} and {b.name!r} overlap with equal stacking order {a.z}")


def _overlap(a: ObjectInstance, b: ObjectInstance) -> bool:
    ba, bb = a.bbox, b.bbox
    x0, y0 = max(ba.x0, bb.x0), max(ba.y0, bb.y0)
    x1, y1 = min(ba.x1, bb.x1), min(ba.y1, bb.y1)
    if x1 <= x0 or y1 <= y0:
        return False
    ma = a.mask[y0 - ba.y0:y1 - ba.y0, x0 - ba.x0:x1 - ba.x0]
    mb = b.mask[y0 - bb.y0:y1 - bb.y0, x0 - bb.x0:x1 - bb.x0]
    return bool((ma & mb).any())


def composite(scene: Scene, exclude: Iterable[int] = ()) -> Composite:
    """Overlay object layers on the background, topmost layer winning per pixel.

    Objects listed in ``exclude`` (and nothing else) are left out, which is
    how the planner obtains the map a moved object is checked against.
    """
    _check_order(scene)
    skip = set(exclude)
    image = scene.background.copy()
    aff = scene.background_affordances.copy()
    owner = np.full(scene.shape, -1, dtype=np.int32)
    for obj in scene.draw_order():
        if obj.id in skip:
            continue
        x0, y0 = obj.offset
        h, w = obj.layer.shape
        m = obj.mask
        sl = (slice(y0, y0 + h), slice(x0, x0 + w))
        image[sl][m] = obj.appearance[m]
        aff[sl][m] = obj.affordances[m]
        owner[sl][m] = obj.id
    return Composite(image, aff, owner)


def footprint_local(scene: Scene, oid: int):
    """``(mask, x0, y0)`` union of ``oid`` and its descendants."""
    return union_local((o.mask,) + o.offset for o in (scene.get(i) for i in scene.subtree(oid)))


def footprint(scene: Scene, oid: int) -> np.ndarray:
    """Scene-sized union of the masks of ``oid`` and all its descendants."""
    m, x0, y0 = footprint_local(scene, oid)
    return place(scene.shape, m, x0, y0)


def inside_box(scene: Scene, oid: int) -> bool:
    m, x0, y0 = footprint_local(scene, oid)
    h, w = m.shape
    region = scene.box_region[y0:y0 + h, x0:x0 + w]
    return region.shape == m.shape and not (m & ~region).any()


def outside_box(scene: Scene) -> set[int]:
    """Ids of root objects whose footprint is not contained in the box region."""
    return {o.id for o in scene.roots()
            if o.label is not ClassLabel.BOX and not inside_box(scene, o.id)}


class PoseDictionary:
    """Canonical rasters per object kind and pose, used to imagine flips.

    Entries are keyed by the object name (``"blue_cuboid"``); every unique
    object is its own kind, so two cups of different size never share an
    entry.
    """

    def __init__(self, entries: Mapping[tuple[str, Pose], Layer] | None = None,
                 labels: Mapping[str, ClassLabel] | None = None):
        self._entries: dict[tuple[str, Pose], Layer] = {}
        self._labels: dict[str, ClassLabel] = dict(labels or {})
        for (name, pose), layer in (entries or {}).items():
            self.add(name, self._labels.get(name), pose, layer)

    def add(self, name: str, label: ClassLabel | None, pose: Pose, layer: Layer) -> None:
        if not layer.is_tight():
            raise SceneError(f"dictionary entry for {name}/{pose.value} is not bbox-tight")
        self._entries[(name, Pose(pose))] = layer
        if label is not None:
            self._labels[name] = ClassLabel(label)

    def get(self, name: str, pose: Pose) -> Layer | None:
        return self._entries.get((name, Pose(pose)))

    def __contains__(self, key) -> bool:
        return (key[0], Pose(key[1])) in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def label(self, name: str) -> ClassLabel | None:
        return self._labels.get(name)

    def check(self) -> None:
        for name, pose in self._entries:
            if pose is Pose.VERTICAL and (name, Pose.HORIZONTAL) not in self._entries:
                raise SceneError(f"{name} has a vertical entry without a horizontal one")
