"""Planning trees of imagined scenes: greedy DFS, exhaustive oracle, random baseline."""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .imagination import (
    ImaginationError,
    apply_move,
    in_bounds,
    make_move,
    move_flips,
    move_object,
    move_rotation,
    move_target,
    subtree_footprint,
    transform_subtree,
)
from .raster import centroid_pixel, components, window_count
from .scene import Affordance, Pose, PoseDictionary, Scene, composite, outside_box
from .validation import ValidationResult, default_threshold, judge, validate


@dataclass(frozen=True)
class PlannerConfig:
    """Search settings.

    ``placement_samples`` adds that many seeded random pixels of each region to
    its centroid as placement targets. ``max_nodes`` bounds the exhaustive
    search; hitting it returns an incomplete plan flagged as truncated.
    """

    seed: int = 0
    rotation_step: int = 15
    allow_flip: bool = True
    allow_stacking: bool = True
    allow_repack: bool = False
    max_depth: int = 12
    mode: str = "greedy"
    placement_samples: int = 2
    min_region_fraction: float = 0.25
    threshold: int | None = None
    max_nodes: int = 5000

    def __post_init__(self):
        if self.rotation_step <= 0 or 360 % self.rotation_step or self.rotation_step % 15:
            raise ValueError("rotation_step must be a multiple of 15 dividing 360")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.mode not in ("greedy", "exhaustive"):
            raise ValueError(f"unknown planner mode {self.mode!r}")
        if self.placement_samples < 0:
            raise ValueError("placement_samples must be >= 0")
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("threshold must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown planner keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class PlanNode:
    id: int
    scene: Scene | None
    move: tuple | None = None
    validation: ValidationResult | None = None
    parent: "PlanNode | None" = field(default=None, repr=False)
    children: list = field(default_factory=list, repr=False)
    depth: int = 0
    region: str = ""
    on_plan: bool = False

    @property
    def action(self):
        return self.move


@dataclass
class PlanningTree:
    root: PlanNode
    nodes: list = field(default_factory=list)

    def add(self, parent: PlanNode | None, scene, move=None, validation=None, region="") -> PlanNode:
        depth = 0 if parent is None else parent.depth + 1
        node = PlanNode(len(self.nodes), scene, move, validation, parent, [], depth, region)
        self.nodes.append(node)
        if parent is not None:
            parent.children.append(node)
        return node

    @classmethod
    def start(cls, scene: Scene) -> "PlanningTree":
        root = PlanNode(0, scene)
        return cls(root, [root])


@dataclass
class Plan:
    """Root-to-leaf path of a planning tree."""

    nodes: list
    complete: bool
    truncated: bool = False
    poses: PoseDictionary | None = None

    @property
    def moves(self) -> list:
        return [n.move for n in self.nodes[1:]]

    @property
    def actions(self) -> list:
        return [a for m in self.moves for a in m]

    @property
    def validations(self) -> list:
        return [n.validation for n in self.nodes[1:]]

    @property
    def scenes(self) -> list:
        return [n.scene for n in self.nodes]

    def __len__(self) -> int:
        return len(self.nodes) - 1

    @property
    def initial(self) -> Scene:
        return self.nodes[0].scene

    @property
    def final(self) -> Scene:
        return self.nodes[-1].scene

    @property
    def all_valid(self) -> bool:
        return all(v is not None and v.valid for v in self.validations)


# -- move generation --------------------------------------------------------

@dataclass(frozen=True)
class Region:
    name: str
    label: str
    mask: np.ndarray
    target: tuple[int, int]


def _angle_sweep(step: int) -> list[int]:
    out = [0]
    for k in range(1, 180 // step + 1):
        a = k * step
        out.append(a)
        if a != 180:
            out.append(-a)
    return out


def graspable(scene: Scene, oid: int) -> bool:
    r = scene.rendering
    b = scene.get(oid).bbox
    sl = (slice(b.y0, b.y1), slice(b.x0, b.x1))
    return bool(((r.owner[sl] == oid) & r.affordances[sl][..., Affordance.GRASP]).any())


def _region_name(scene: Scene, owner: np.ndarray, mask: np.ndarray, target) -> tuple[str, str]:
    o = int(owner[target[1], target[0]])
    if o >= 0:
        obj = scene.get(o)
        return obj.name, obj.label.value
    best, name = 0, "box"
    for c in scene.compartments:
        n = int(np.count_nonzero(c.mask & mask))
        if n > best:
            best, name = n, c.name
    return name, "compartment" if name != "box" else "box"


def placement_regions(scene: Scene, oid: int, allow_stacking: bool = True,
                      min_area: int = 1) -> tuple[list[Region], np.ndarray]:
    """Free hole/place-on components inside the box with ``oid`` lifted out.

    Returns the regions and the obstruct channel of the same map.
    """
    comp = composite(scene, exclude=scene.subtree(oid))
    aff = comp.affordances
    free = ((aff[..., Affordance.HOLE] | aff[..., Affordance.PLACE_ON])
            & ~aff[..., Affordance.OBSTRUCT] & scene.box_region)
    if not allow_stacking:
        free &= comp.owner < 0
    labels, n = components(free)
    regions = []
    if n:
        sizes = np.bincount(labels.ravel(), minlength=n + 1)
        for k in range(1, n + 1):
            if sizes[k] < min_area:
                continue
            m = labels == k
            t = centroid_pixel(m)
            if not m[t[1], t[0]]:
                ys, xs = np.nonzero(m)
                i = int(np.argmin((xs - t[0]) ** 2 + (ys - t[1]) ** 2))
                t = (int(xs[i]), int(ys[i]))
            name, label = _region_name(scene, comp.owner, m, t)
            regions.append(Region(name, label, m, t))
    return regions, comp.channel(Affordance.OBSTRUCT)


@dataclass
class Candidate:
    move: tuple
    region: Region
    conflict: int


def _targets(region: Region, rng, samples: int):
    yield region.target
    if samples:
        ys, xs = np.nonzero(region.mask)
        for i in rng.choice(len(xs), size=min(samples, len(xs)), replace=False):
            t = (int(xs[i]), int(ys[i]))
            if t != region.target:
                yield t


def region_candidates(scene: Scene, oid: int, region: Region, obstruct: np.ndarray,
                      poses: PoseDictionary | None, cfg: PlannerConfig, rng,
                      threshold: int) -> Iterator[Candidate]:
    """Orientation sweep over the targets of one region, cheapest check first.

    Yields every distinct candidate in sweep order with its conflict count;
    the caller stops at the first one below the threshold.
    """
    obj = scene.get(oid)
    W, H = scene.width, scene.height
    flips = [False]
    if cfg.allow_flip and poses is not None and not scene.children(oid) \
            and poses.get(obj.name, obj.pose.other) is not None:
        flips.append(True)
    sweep = _angle_sweep(cfg.rotation_step)
    for target in _targets(region, rng, cfg.placement_samples):
        seen = set()
        for flip in flips:
            flip_to = (obj.pose.other, poses.get(obj.name, obj.pose.other)) if flip else None
            base = transform_subtree(scene, oid, target=target, flip_to=flip_to)
            if not in_bounds(base.values(), W, H):
                continue
            for angle in sweep:
                moved = transform_subtree(scene, oid, target=target, dangle=angle % 360,
                                          flip_to=flip_to) if angle else base
                if angle and not in_bounds(moved.values(), W, H):
                    continue
                f, x0, y0 = subtree_footprint(moved.values())
                key = (x0, y0, f.shape, f.tobytes())
                if key in seen:
                    continue
                seen.add(key)
                conflict = window_count(f, x0, y0, obstruct)
                yield Candidate(make_move(oid, target, region.name, angle % 360, flip),
                                region, conflict)


def _state_key(scene: Scene):
    return tuple(sorted((o.id, o.anchor, o.angle, o.pose.value, o.parent) for o in scene.objects))


class _Search:
    def __init__(self, scene: Scene, poses, cfg: PlannerConfig):
        self.cfg = cfg
        self.poses = poses
        self.rng = np.random.default_rng(cfg.seed)
        self.tree = PlanningTree.start(scene)
        self.threshold = cfg.threshold if cfg.threshold is not None else \
            default_threshold(scene.width, scene.height)
        self.visited = set()
        self.truncated = False

    def movable(self, scene: Scene) -> list[int]:
        ids = sorted(outside_box(scene))
        if self.cfg.allow_repack:
            ids += sorted(o.id for o in scene.roots() if o.id not in set(ids))
        return [i for i in ids if graspable(scene, i)]

    def expand(self, node: PlanNode, oid: int) -> Iterator[PlanNode]:
        """Children of ``node`` moving ``oid``, one per region that admits a valid move."""
        scene = node.scene
        fp, _, _ = subtree_footprint(scene.get(i) for i in scene.subtree(oid))
        min_area = max(1, int(self.cfg.min_region_fraction * np.count_nonzero(fp)))
        regions, obstruct = placement_regions(scene, oid, self.cfg.allow_stacking, min_area)
        outside = oid in outside_box(scene)
        for k in self.rng.permutation(len(regions)):
            region = regions[int(k)]
            if not outside and region.mask[scene.get(oid).anchor[1], scene.get(oid).anchor[0]]:
                continue  # a repack move must go somewhere else
            best = None
            for cand in region_candidates(scene, oid, region, obstruct, self.poses,
                                          self.cfg, self.rng, self.threshold):
                if cand.conflict < self.threshold:
                    try:
                        post = apply_move(scene, cand.move, self.poses)
                    except ImaginationError:
                        continue
                    result = validate(post, oid, self.threshold)
                    if result.valid:
                        yield self.tree.add(node, post, cand.move, result, region.name)
                        best = None
                        break
                if best is None or cand.conflict < best.conflict:
                    best = cand
            if best is not None:
                self._record_failure(node, best)

    def _record_failure(self, node, cand: Candidate):
        try:
            post = apply_move(node.scene, cand.move, self.poses)
        except ImaginationError:
            post = None
        self.tree.add(node, post, cand.move,
                      judge(cand.conflict, self.threshold), cand.region.name)

    def greedy(self) -> list[PlanNode]:
        node = self.tree.root
        path = [node]
        while outside_box(node.scene):
            if node.depth >= self.cfg.max_depth:
                self.truncated = True
                break
            nxt = None
            ids = self.movable(node.scene)
            for k in self.rng.permutation(len(ids)):
                nxt = next(self.expand(node, ids[int(k)]), None)
                if nxt is not None:
                    break
            if nxt is None:
                break
            node = nxt
            path.append(node)
        return path

    def exhaustive(self, node: PlanNode) -> list[PlanNode] | None:
        if not outside_box(node.scene):
            return [node]
        if node.depth >= self.cfg.max_depth or len(self.tree.nodes) >= self.cfg.max_nodes:
            self.truncated = True
            return None
        key = _state_key(node.scene)
        if key in self.visited:
            return None
        self.visited.add(key)
        ids = self.movable(node.scene)
        for k in self.rng.permutation(len(ids)):
            for child in self.expand(node, ids[int(k)]):
                sub = self.exhaustive(child)
                if sub is not None:
                    return [node] + sub
                if len(self.tree.nodes) >= self.cfg.max_nodes:
                    self.truncated = True
                    return None
        return None


def plan_scene(scene: Scene, poses: PoseDictionary | None, cfg: PlannerConfig | None = None):
    """Search on an already perceived scene; returns ``(tree, plan)``."""
    cfg = cfg or PlannerConfig()
    s = _Search(scene, poses, cfg)
    if cfg.mode == "greedy":
        path = s.greedy()
    else:
        path = s.exhaustive(s.tree.root)
        if path is None:
            path = [s.tree.root]
    for n in path:
        n.on_plan = True
    complete = not outside_box(path[-1].scene)
    return s.tree, Plan(path, complete, truncated=s.truncated and not complete, poses=poses)


def plan(initial: Scene, perceive: Callable | None = None, cfg: PlannerConfig | None = None,
         poses: PoseDictionary | None = None):
    """Plan the packing of ``initial``.

    ``perceive`` maps the scene to the planner's belief: either a scene or an
    object with ``scene`` and ``poses`` attributes. Without it the planner
    works on ``initial`` directly.
    """
    scene = initial
    if perceive is not None:
        belief = perceive(initial)
        if isinstance(belief, Scene):
            scene = belief
        else:
            scene = belief.scene
            poses = belief.poses if getattr(belief, "poses", None) is not None else poses
    return plan_scene(scene, poses, cfg)


# -- random baseline --------------------------------------------------------

def baseline_plan(initial: Scene, cfg: PlannerConfig | None = None,
                  poses: PoseDictionary | None = None) -> Plan:
    """Random placements, one per object outside the box, scored afterwards.

    Each step moves a random object still outside to a uniformly drawn free
    placement pixel in the box without rotating it. Steps are not checked
    while building; every node carries its after-the-fact validation.
    """
    cfg = cfg or PlannerConfig()
    rng = np.random.default_rng(cfg.seed)
    threshold = cfg.threshold if cfg.threshold is not None else \
        default_threshold(initial.width, initial.height)
    tree = PlanningTree.start(initial)
    node = tree.root
    path = [node]
    n_steps = len(outside_box(initial))
    for _ in range(n_steps):
        scene = node.scene
        ids = sorted(outside_box(scene))
        if not ids:
            break
        oid = ids[int(rng.integers(len(ids)))]
        comp = composite(scene, exclude=scene.subtree(oid))
        aff = comp.affordances
        free = ((aff[..., Affordance.HOLE] | aff[..., Affordance.PLACE_ON])
                & ~aff[..., Affordance.OBSTRUCT] & scene.box_region)
        ys, xs = np.nonzero(free)
        if xs.size == 0:
            break
        i = int(rng.integers(xs.size))
        move = make_move(oid, (int(xs[i]), int(ys[i])), "random")
        try:
            post = apply_move(scene, move, poses)
        except ImaginationError:
            break
        node = tree.add(node, post, move, validate(post, oid, threshold), "random")
        path.append(node)
    for n in path:
        n.on_plan = True
    ok = len(path) - 1 == n_steps and not outside_box(path[-1].scene) and \
        all(n.validation.valid for n in path[1:])
    return Plan(path, ok, poses=poses)


# -- dumps ------------------------------------------------------------------

def describe_move(scene: Scene, move) -> str:
    oid = move_object(move)
    pp = move_target(move)
    name = scene.get(oid).name if scene is not None and scene.has(oid) else str(oid)
    parts = [f"pick {name} place {pp.region or '-'}@{pp.target[0]},{pp.target[1]}"]
    if move_flips(move):
        parts.append("flip")
    if move_rotation(move):
        parts.append(f"rotate {move_rotation(move)}")
    return " ".join(parts)


def dump_tree(tree: PlanningTree, out_dir) -> Path:
    """Write ``node_<k>.png`` per node and ``tree.txt`` with the structure.

    Plan nodes are numbered first, consecutively from the root; the remaining
    nodes follow in creation order.
    """
    from .manifest import save_png

    if not tree.nodes:
        raise ValueError("empty tree")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ordered = [n for n in tree.nodes if n.on_plan] + [n for n in tree.nodes if not n.on_plan]
    number = {n.id: k for k, n in enumerate(ordered)}
    lines = ["# node parent depth plan valid conflict threshold action"]
    for n in ordered:
        k = number[n.id]
        if n.scene is not None:
            save_png(out / f"node_{k}.png", n.scene.rendering.image)
        parent = number[n.parent.id] if n.parent is not None else -1
        if n.validation is None:
            val = "- - -"
        else:
            val = f"{str(n.validation.valid).lower()} {n.validation.conflict_pixels} {n.validation.threshold_used}"
        src = n.parent.scene if n.parent is not None else None
        act = describe_move(src, n.move) if n.move is not None else "initial"
        lines.append(f"{k} {parent} {n.depth} {'*' if n.on_plan else '-'} {val} {act}")
    (out / "tree.txt").write_text("\n".join(lines) + "\n")
    return out
