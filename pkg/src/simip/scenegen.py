"""Procedural top-view packing scenes with ground-truth layers and affordances.

Scenes are built constructively: every object (or nested stack) that has to
be packed is first assigned its own compartment, the compartment is sized to
fit the object at the assigned orientation, and only then are the objects
scattered on the table. The assignment doubles as a feasibility certificate.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .imagination import apply_move, make_move
from .raster import BBox, centered_disc, centroid_pixel, disc, rounded_rect
from .scene import (
    Affordance,
    ClassLabel,
    Compartment,
    Layer,
    ObjectInstance,
    Pose,
    PoseDictionary,
    Scene,
    outside_box,
)
from .validation import default_threshold, validate

MOVABLE = ("can", "cup", "plate", "bowl", "apple", "cuboid")

# diameters (or cuboid edge lengths) in pixels at the 1024x768 reference size
SIZES = {
    "apple": (52, 66),
    "cup": (66, 84),
    "can": (78, 94),
    "bowl": (104, 124),
    "plate": (112, 132),
}
CUBOID_EDGES = ((112, 140), (56, 70), (26, 34))
INTERIOR = {"cup": 0.70, "can": 0.78, "bowl": 0.80, "plate": 0.76}
CONTAINERS = ("cup", "can", "bowl", "plate")
NESTABLE = ("apple", "cup")

COLORS = {
    "red": (200, 40, 40),
    "blue": (40, 70, 200),
    "yellow": (230, 200, 40),
    "black": (40, 40, 40),
    "green": (50, 160, 60),
    "white": (235, 235, 228),
    "orange": (240, 140, 30),
    "purple": (130, 60, 160),
}
TABLE = (205, 180, 135)
WALL = (120, 80, 40)
FLOOR = (165, 120, 75)


class InfeasibleConfig(ValueError):
    """The generator could not lay out the requested scene."""


@dataclass(frozen=True)
class GenConfig:
    """Knobs of the scene generator.

    Counts are in packing units: a container together with what is nested in
    it counts once. Sizes in ``margin`` are reference pixels (1024x768) and
    scale with the scene.
    """

    seed: int = 0
    size: tuple[int, int] = (1024, 768)
    n_objects: tuple[int, int] = (1, 5)
    initial_in_box: tuple[int, int] = (0, 0)
    classes: tuple[str, ...] = MOVABLE
    spare_compartments: int = 1
    stack_prob: float = 0.0
    overlap_prob: float = 0.0
    rotate_prob: float = 0.25
    flip_prob: float = 0.25
    margin: tuple[int, int] = (8, 16)
    guarantee_feasible: bool = True
    max_retries: int = 300

    def __post_init__(self):
        object.__setattr__(self, "size", tuple(int(v) for v in self.size))
        object.__setattr__(self, "n_objects", tuple(int(v) for v in self.n_objects))
        object.__setattr__(self, "initial_in_box", tuple(int(v) for v in self.initial_in_box))
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "margin", tuple(int(v) for v in self.margin))
        lo, hi = self.n_objects
        if lo < 0 or hi < lo:
            raise ValueError(f"bad object count range {self.n_objects}")
        lo, hi = self.initial_in_box
        if lo < 0 or hi < lo:
            raise ValueError(f"bad initial_in_box range {self.initial_in_box}")
        if self.spare_compartments < 0:
            raise ValueError("spare_compartments must be >= 0")
        for c in self.classes:
            if c not in MOVABLE:
                raise ValueError(f"unknown object class {c!r}")
        if not self.classes:
            raise ValueError("class palette is empty")
        for p in (self.stack_prob, self.overlap_prob, self.rotate_prob, self.flip_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.size[0] < 128 or self.size[1] < 96:
            raise ValueError("scene too small for the object palette")

    @property
    def scale(self) -> float:
        return min(self.size[0] / 1024, self.size[1] / 768)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v
                for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generator keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class CertificateStep:
    """One move of the constructive packing: which object goes where, how."""

    object_id: int
    compartment: str
    target: tuple[int, int]
    angle: int = 0
    flip: bool = False

    def move(self):
        return make_move(self.object_id, self.target, self.compartment, self.angle, self.flip)


@dataclass
class GeneratedScene:
    scene: Scene
    poses: PoseDictionary
    certificate: list[CertificateStep] | None
    seed: int
    config: GenConfig
    meta: dict = field(default_factory=dict)


# -- object rasters ---------------------------------------------------------

def _texture(rng, mask, color, shade=None):
    h, w = mask.shape
    base = np.asarray(color, dtype=np.float64)
    noise = rng.normal(0.0, 10.0, size=(h, w, 1))
    img = np.broadcast_to(base, (h, w, 3)) + noise
    if shade is not None:
        img = img * np.where(shade, 0.78, 1.0)[..., None]
    img = np.clip(img, 0, 255).astype(np.uint8)
    img[~mask] = 0
    return img


def _aff(mask, grasp=None, place_on=None, obstruct=None, hole=None):
    out = np.zeros(mask.shape + (4,), dtype=bool)
    for kind, m in ((Affordance.GRASP, grasp), (Affordance.PLACE_ON, place_on),
                    (Affordance.OBSTRUCT, obstruct), (Affordance.HOLE, hole)):
        if m is not None:
            out[..., kind] = m & mask
    return out


def _disc_layer(rng, label: str, diameter: int, color) -> Layer:
    mask = disc(diameter)
    if label == "apple":
        return Layer(mask, _texture(rng, mask, color), _aff(mask, grasp=mask, obstruct=mask))
    inner = centered_disc(diameter, diameter, diameter * INTERIOR[label]) & mask
    rim = mask & ~inner
    app = _texture(rng, mask, color, shade=rim)
    if label == "plate":
        return Layer(mask, app, _aff(mask, grasp=rim, place_on=inner))
    return Layer(mask, app, _aff(mask, grasp=rim, obstruct=rim, place_on=inner, hole=inner))


def _solid_rect(rng, height: int, width: int, color, radius: int) -> Layer:
    mask = rounded_rect(height, width, radius)
    return Layer(mask, _texture(rng, mask, color), _aff(mask, grasp=mask, obstruct=mask))


@dataclass
class _Item:
    label: str
    name: str
    poses: dict  # Pose -> Layer
    interior: float = 0.0  # diameter of the hole/place-on disc, 0 if none
    children: list = field(default_factory=list)

    @property
    def horizontal(self) -> Layer:
        return self.poses[Pose.HORIZONTAL]


def _make_item(rng, label: str, name: str, color, s: float) -> _Item:
    def sz(lo, hi):
        return max(5, int(round(rng.uniform(lo, hi) * s)))

    if label == "cuboid":
        a = sz(*CUBOID_EDGES[0])
        b = sz(*CUBOID_EDGES[1])
        c = sz(*CUBOID_EDGES[2])
        r = max(1, int(round(4 * s)))
        return _Item(label, name, {Pose.HORIZONTAL: _solid_rect(rng, b, a, color, r),
                                   Pose.VERTICAL: _solid_rect(rng, c, b, color, r)})
    d = sz(*SIZES[label])
    poses = {Pose.HORIZONTAL: _disc_layer(rng, label, d, color)}
    if label == "can":
        poses[Pose.VERTICAL] = _solid_rect(rng, d, int(round(1.5 * d)), color, max(1, d // 6))
    return _Item(label, name, poses, interior=d * INTERIOR.get(label, 0.0))


# -- layout -----------------------------------------------------------------

def _oriented_layer(item: _Item, mode: str) -> Layer:
    from .scene import rotated

    if mode == "flip":
        return item.poses[Pose.VERTICAL]
    if mode == "rotate":
        return rotated(item.horizontal, 90)
    return item.horizontal


def _arrange(interiors, wall: int, max_width: int):
    """Pack compartment rectangles into rows; returns positions and box size."""
    rows, row, width = [], [], wall
    for i, (w, h) in enumerate(interiors):
        if row and width + w + wall > max_width:
            rows.append(row)
            row, width = [], wall
        row.append(i)
        width += w + wall
    if row:
        rows.append(row)
    pos = [None] * len(interiors)
    y = wall
    box_w = 0
    for r in rows:
        x = wall
        rh = max(interiors[i][1] for i in r)
        for i in r:
            w, h = interiors[i]
            pos[i] = (x, y + (rh - h) // 2)
            x += w + wall
        box_w = max(box_w, x)
        y += rh + wall
    return pos, (box_w, y)


def _background(rng, W, H, box: BBox, comps):
    img = np.broadcast_to(np.asarray(TABLE, dtype=np.float64), (H, W, 3)).copy()
    aff = np.zeros((H, W, 4), dtype=bool)
    aff[..., Affordance.PLACE_ON] = True
    box_region = np.zeros((H, W), dtype=bool)
    box_region[box.y0:box.y1, box.x0:box.x1] = True
    img[box_region] = WALL
    aff[box_region, Affordance.PLACE_ON] = False
    aff[box_region, Affordance.OBSTRUCT] = True
    for c in comps:
        img[c.mask] = FLOOR
        aff[c.mask, Affordance.OBSTRUCT] = False
        aff[c.mask, Affordance.PLACE_ON] = True
        aff[c.mask, Affordance.HOLE] = True
    img += rng.normal(0.0, 6.0, size=(H, W, 1))
    return np.clip(img, 0, 255).astype(np.uint8), aff, box_region


def _clear(occupied: np.ndarray, x0: int, y0: int, w: int, h: int) -> bool:
    H, W = occupied.shape
    if x0 < 0 or y0 < 0 or x0 + w > W or y0 + h > H:
        return False
    return not occupied[y0:y0 + h, x0:x0 + w].any()


def generate_scene(config: GenConfig, n_outside: int | None = None) -> GeneratedScene:
    """Generate one scene; deterministic in ``config.seed``.

    ``n_outside`` forces the number of packing units left on the table.
    """
    rng = np.random.default_rng(config.seed)
    for _ in range(20):
        try:
            return _generate(config, rng, n_outside)
        except _Retry:
            continue
    raise InfeasibleConfig(
        f"could not place the objects without overlap (seed {config.seed}); "
        "reduce the object count or enlarge the scene")


class _Retry(Exception):
    pass


def _generate(config: GenConfig, rng, n_outside):
    W, H = config.size
    s = config.scale
    if n_outside is None:
        total = int(rng.integers(config.n_objects[0], config.n_objects[1] + 1))
        inside = min(total, int(rng.integers(config.initial_in_box[0], config.initial_in_box[1] + 1)))
        outside = total - inside
    else:
        outside = int(n_outside)
        inside = int(rng.integers(config.initial_in_box[0], config.initial_in_box[1] + 1))
    n_units = outside + inside

    used = set()

    def new_item(label):
        free = [c for c in COLORS if (c, label) not in used]
        color = free[int(rng.integers(len(free)))]
        used.add((color, label))
        return _make_item(rng, label, f"{color}_{label}", COLORS[color], s)

    units = []
    for _ in range(n_units):
        label = config.classes[int(rng.integers(len(config.classes)))]
        item = new_item(label)
        if label in CONTAINERS and rng.random() < config.stack_prob:
            kinds = [k for k in NESTABLE if k in config.classes or k == "apple"]
            kind = kinds[int(rng.integers(len(kinds)))]
            child = new_item(kind)
            cd = child.horizontal.shape[0]
            if cd + max(2, 4 * s) <= item.interior:
                item.children.append(child)
            else:
                used.discard((child.name.split("_", 1)[0], kind))
        units.append(item)

    # orientation each unit needs in its compartment
    modes = []
    for item in units:
        mode = "plain"
        if item.label == "cuboid":
            u = rng.random()
            if u < config.flip_prob:
                mode = "flip"
            elif u < config.flip_prob + config.rotate_prob:
                mode = "rotate"
        modes.append(mode)

    lo, hi = (max(3, int(round(m * s))) for m in config.margin)
    hi = max(lo, hi)
    interiors = []
    for item, mode in zip(units, modes):
        lay = _oriented_layer(item, mode)
        h, w = lay.shape
        if mode == "flip":
            b = item.horizontal.shape[0]
            c = lay.shape[0]
            mh = max(3, min(hi, (b - c) // 2 - 1))
            m = int(rng.integers(3, mh + 1)) if mh > 3 else 3
            interiors.append((w + 2 * m, h + 2 * m))
        else:
            mx = int(rng.integers(lo, hi + 1))
            my = int(rng.integers(lo, hi + 1))
            interiors.append((w + 2 * mx, h + 2 * my))
    n_spare = config.spare_compartments if (n_units or config.spare_compartments) else 1
    for _ in range(n_spare):
        label = config.classes[int(rng.integers(len(config.classes)))]
        probe = _make_item(np.random.default_rng(int(rng.integers(2**31))), label, "spare", (0, 0, 0), s)
        h, w = probe.horizontal.shape
        m = int(rng.integers(lo, hi + 1))
        interiors.append((w + 2 * m, h + 2 * m))

    order = rng.permutation(len(interiors))
    wall = max(2, int(round(8 * s)))
    pos_sorted, (bw, bh) = _arrange([interiors[i] for i in order], wall, int(W * 0.62))
    positions = [None] * len(interiors)
    for k, i in enumerate(order):
        positions[i] = pos_sorted[k]
    border = max(2, int(round(6 * s)))
    if bw + 2 * border > W or bh + 2 * border > H:
        raise InfeasibleConfig("the box does not fit in the scene; use fewer objects")
    bx = int(rng.integers(border, W - bw - border + 1))
    by = int(rng.integers(border, H - bh - border + 1))
    box = BBox(bx, by, bx + bw, by + bh)

    comps = []
    for k, ((w, h), (px, py)) in enumerate(zip(interiors, positions)):
        m = np.zeros((H, W), dtype=bool)
        m[by + py:by + py + h, bx + px:bx + px + w] = True
        comps.append(Compartment(f"compartment_{k + 1}", m))
    # number compartments left to right, top to bottom
    comps.sort(key=lambda c: (c.bbox.y0 // max(1, wall * 4), c.bbox.x0))
    renamed = {id(c): f"compartment_{k + 1}" for k, c in enumerate(comps)}
    comp_of_unit = [renamed[id(c)] for c in
                    (next(c for c in comps if c.bbox.x0 == bx + positions[i][0]
                          and c.bbox.y0 == by + positions[i][1]) for i in range(len(units)))]
    comps = [Compartment(renamed[id(c)], c.mask) for c in comps]
    background, bg_aff, box_region = _background(rng, W, H, box, comps)

    # scatter the table units, optionally letting some overlap an earlier one
    gap = max(2, int(round(8 * s)))
    occupied = np.zeros((H, W), dtype=bool)
    occupied[max(0, box.y0 - gap):box.y1 + gap, max(0, box.x0 - gap):box.x1 + gap] = True
    in_box_idx = set(int(i) for i in rng.permutation(n_units)[:inside])
    table_idx = [i for i in range(n_units) if i not in in_box_idx]
    anchors = {}
    occluded_by = {}
    placed_rects = {}
    for i in table_idx:
        h, w = units[i].horizontal.shape
        done = False
        if placed_rects and rng.random() < config.overlap_prob:
            cand = [j for j in placed_rects if j not in occluded_by and j not in occluded_by.values()]
            if cand:
                j = cand[int(rng.integers(len(cand)))]
                done = _overlap_place(rng, i, j, units, anchors, placed_rects, occupied, occluded_by, gap)
        tries = 0
        while not done:
            tries += 1
            if tries > config.max_retries:
                raise _Retry()
            x0 = int(rng.integers(1, W - w))
            y0 = int(rng.integers(1, H - h))
            if _clear(occupied, x0 - gap, y0 - gap, w + 2 * gap, h + 2 * gap) or \
                    _clear(occupied, x0, y0, w, h) and gap == 0:
                anchors[i] = (x0 + w // 2, y0 + h // 2)
                placed_rects[i] = BBox(x0, y0, x0 + w, y0 + h)
                occupied[y0:y0 + h, x0:x0 + w] = True
                done = True

    # assemble ground-truth objects
    poses = PoseDictionary()
    objects = []
    z = 0
    next_id = 0
    unit_root = {}
    order_units = sorted(in_box_idx) + [i for i in table_idx if i not in occluded_by.values()] + \
        [i for i in table_idx if i in occluded_by.values()]
    for i in order_units:
        item = units[i]
        mode = modes[i]
        for p, lay in item.poses.items():
            poses.add(item.name, ClassLabel(item.label), p, lay)
        if i in in_box_idx:
            comp = next(c for c in comps if c.name == comp_of_unit[i])
            anchor = centroid_pixel(comp.mask)
            pose = Pose.VERTICAL if mode == "flip" else Pose.HORIZONTAL
            angle = 90 if mode == "rotate" else 0
        else:
            anchor = anchors[i]
            pose, angle = Pose.HORIZONTAL, 0
        root = ObjectInstance(next_id, item.name, ClassLabel(item.label), pose,
                              item.poses[pose], anchor, angle, z)
        unit_root[i] = next_id
        objects.append(root)
        next_id += 1
        z += 1
        for child in item.children:
            for p, lay in child.poses.items():
                poses.add(child.name, ClassLabel(child.label), p, lay)
            objects.append(ObjectInstance(next_id, child.name, ClassLabel(child.label), Pose.HORIZONTAL,
                                          child.horizontal, anchor, 0, z, parent=root.id))
            next_id += 1
            z += 1
    scene = Scene(background, bg_aff, box_region, tuple(comps), tuple(objects))
    scene.check()
    poses.check()

    certificate = []
    for i in (int(k) for k in rng.permutation(n_units)):
        if i in in_box_idx:
            continue
        comp = next(c for c in comps if c.name == comp_of_unit[i])
        mode = modes[i]
        certificate.append(CertificateStep(unit_root[i], comp.name, centroid_pixel(comp.mask),
                                           90 if mode == "rotate" else 0, mode == "flip"))
    if config.guarantee_feasible and replay_certificate(scene, poses, certificate) is None:
        raise _Retry()
    meta = {"occlusions": len(occluded_by), "stacks": sum(len(u.children) for u in units),
            "outside": len(table_idx), "inside": len(in_box_idx)}
    return GeneratedScene(scene, poses, certificate if config.guarantee_feasible else None,
                          config.seed, config, meta)


def _overlap_place(rng, i, j, units, anchors, placed_rects, occupied, occluded_by, gap):
    """Put unit ``i`` partly on top of unit ``j`` (20-45% of ``j``'s width)."""
    H, W = occupied.shape
    h, w = units[i].horizontal.shape
    other = placed_rects[j]
    for _ in range(24):
        theta = rng.uniform(0, 2 * math.pi)
        frac = rng.uniform(0.2, 0.45)
        reach = (other.width + w) / 2 - frac * other.width
        ax = int(round(other.center[0] + reach * math.cos(theta)))
        ay = int(round(other.center[1] + reach * math.sin(theta)))
        x0, y0 = ax - w // 2, ay - h // 2
        if x0 < 1 or y0 < 1 or x0 + w >= W or y0 + h >= H:
            continue
        # must not touch anything except the unit it occludes
        probe = occupied.copy()
        probe[other.y0:other.y1, other.x0:other.x1] = False
        if not _clear(probe, x0 - gap, y0 - gap, w + 2 * gap, h + 2 * gap):
            continue
        anchors[i] = (ax, ay)
        placed_rects[i] = BBox(x0, y0, x0 + w, y0 + h)
        occupied[y0:y0 + h, x0:x0 + w] = True
        occluded_by[i] = j
        return True
    return False


def replay_certificate(scene: Scene, poses: PoseDictionary, certificate, threshold=None):
    """Apply the certificate move by move, validating each; ``None`` on failure."""
    if threshold is None:
        threshold = default_threshold(scene.width, scene.height)
    cur = scene
    for step in certificate:
        try:
            cur = apply_move(cur, step.move(), poses)
        except ValueError:
            return None
        if not validate(cur, step.object_id, threshold).valid:
            return None
    if outside_box(cur):
        return None
    return cur


def scene_seeds(master_seed: int, n: int) -> list[int]:
    """Independent per-scene seeds derived from a master seed."""
    state = np.random.SeedSequence(master_seed).generate_state(max(n, 1), dtype=np.uint32)
    return [int(v) for v in state[:n]]


def generate_dataset(config: GenConfig, n_scenes: int, out_dir=None,
                     steps: Sequence[int] | None = None):
    """Generate ``n_scenes`` scenes; write manifests when ``out_dir`` is given.

    ``steps`` optionally stratifies the number of units left on the table:
    scene ``i`` gets ``steps[i % len(steps)]`` of them. Returns the manifest
    paths when writing, else the :class:`GeneratedScene` list.
    """
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    from .manifest import save_generated

    out = []
    for i, seed in enumerate(scene_seeds(config.seed, n_scenes)):
        cfg = dataclasses.replace(config, seed=seed)
        k = None if not steps else int(steps[i % len(steps)])
        gen = generate_scene(cfg, n_outside=k)
        if out_dir is None:
            out.append(gen)
        else:
            out.append(save_generated(gen, Path(out_dir) / f"scene_{i:04d}"))
    return out
