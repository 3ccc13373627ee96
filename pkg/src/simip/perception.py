"""The planner's view of a scene.

Perception is simulated: an oracle reads the ground truth, a seeded
corruption model injects the kinds of errors a detector and a segmentation
network make, and object completion restores occluded parts from the pose
dictionary. :func:`build_belief` turns a report back into a layered scene the
planner can imagine on.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .raster import BBox, iou, mask_bbox, morph, resize_nearest
from .scene import (
    Affordance,
    ClassLabel,
    Layer,
    ObjectInstance,
    Pose,
    PoseDictionary,
    Scene,
    rotated,
)
from .imagination import find_support

OBJECT_CLASSES = (ClassLabel.CAN, ClassLabel.CUP, ClassLabel.PLATE, ClassLabel.BOWL,
                  ClassLabel.APPLE, ClassLabel.CUBOID)


@dataclass(frozen=True, eq=False)
class Detection:
    """One detected entity.

    ``mask`` is scene-sized; ``bbox`` bounds it. ``amodal`` is the predicted
    extent of the whole object including hidden parts, used by completion.
    ``order`` is the position in the perceived stacking order (higher is on
    top) and ``source_id`` the ground-truth object it came from.
    """

    id: int
    name: str
    label: ClassLabel
    pose: Pose
    mask: np.ndarray
    confidence: float = 1.0
    completed: bool = False
    source_id: int | None = None
    order: int = 0
    angle: int = 0
    amodal: BBox | None = None
    appearance: np.ndarray | None = None
    affordances: np.ndarray | None = None

    @property
    def bbox(self) -> BBox:
        return mask_bbox(self.mask)

    @property
    def is_compartment(self) -> bool:
        return self.label is ClassLabel.COMPARTMENT


@dataclass(frozen=True, eq=False)
class PerceptionReport:
    detections: tuple
    affordances: np.ndarray
    image: np.ndarray

    @property
    def objects(self) -> list[Detection]:
        return [d for d in self.detections if not d.is_compartment]

    @property
    def compartments(self) -> list[Detection]:
        return [d for d in self.detections if d.is_compartment]

    def replace(self, **changes) -> "PerceptionReport":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class CorruptionConfig:
    """Error rates of simulated perception.

    Jitters are in pixels and may be fractional: a jitter of 1.5 erodes or
    dilates by 1 pixel, plus one more with probability one half.
    """

    miss_prob: float = 0.0
    split_prob: float = 0.0
    misclass_prob: float = 0.0
    boundary_jitter: float = 0.0
    affordance_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("miss_prob", "split_prob", "misclass_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("boundary_jitter", "affordance_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def is_identity(self) -> bool:
        return not (self.miss_prob or self.split_prob or self.misclass_prob
                    or self.boundary_jitter or self.affordance_jitter)

    def with_seed(self, seed: int) -> "CorruptionConfig":
        return dataclasses.replace(self, seed=int(seed))

    @classmethod
    def from_dict(cls, d: dict) -> "CorruptionConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown corruption keys: {sorted(unknown)}")
        return cls(**d)


# mix scaled by a single strength knob when calibrating
MILD = CorruptionConfig(miss_prob=0.01, split_prob=0.02, misclass_prob=0.01,
                        boundary_jitter=0.35, affordance_jitter=0.35)


def scaled(base: CorruptionConfig, strength: float) -> CorruptionConfig:
    s = max(0.0, float(strength))
    return CorruptionConfig(min(1.0, base.miss_prob * s), min(1.0, base.split_prob * s),
                            min(1.0, base.misclass_prob * s), base.boundary_jitter * s,
                            base.affordance_jitter * s, base.seed)


# -- oracle -----------------------------------------------------------------

def perceive_oracle(scene: Scene) -> PerceptionReport:
    """Exact detections of every visible object and of every compartment."""
    comp = scene.rendering
    dets = []
    for k, obj in enumerate(scene.draw_order()):
        visible = comp.owner == obj.id
        if not visible.any():
            continue
        dets.append(Detection(obj.id, obj.name, obj.label, obj.pose, visible, 1.0, False,
                              obj.id, k, obj.angle, obj.bbox))
    for c in scene.compartments:
        dets.append(Detection(-1, c.name, ClassLabel.COMPARTMENT, Pose.HORIZONTAL, c.mask.copy(),
                              1.0, False, None, -1, 0, c.bbox))
    return PerceptionReport(tuple(dets), comp.affordances.copy(), comp.image.copy())


# -- corruption -------------------------------------------------------------

def _jitter_amount(rng, amount: float) -> int:
    if amount <= 0:
        return 0
    base = int(math.floor(amount))
    frac = amount - base
    r = base + (1 if rng.random() < frac else 0)
    return r if rng.random() < 0.5 else -r


def _jitter_segment(aff: np.ndarray, segment: np.ndarray, amounts, grow: np.ndarray | None = None):
    """Erode/dilate each affordance channel inside one segment in place."""
    area = segment if grow is None else (segment | grow)
    for k, r in enumerate(amounts):
        if r == 0:
            continue
        ch = aff[..., k] & segment
        moved = morph(ch, r) & area
        aff[..., k] = (aff[..., k] & ~area) | moved


def _split(mask: np.ndarray):
    b = mask_bbox(mask)
    a = np.zeros_like(mask)
    if b.width >= b.height:
        cut = b.x0 + b.width // 2
        a[:, :cut] = True
    else:
        cut = b.y0 + b.height // 2
        a[:cut, :] = True
    first, second = mask & a, mask & ~a
    if not first.any() or not second.any():
        return None
    return first, second


def corrupt(report: PerceptionReport, cfg: CorruptionConfig) -> PerceptionReport:
    """Seeded, per-detection corruption of a report; compartments are kept.

    Each error type draws from its own random stream, so enabling one never
    changes the draws of another.
    """
    if cfg.is_identity:
        return report
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(5)]
    r_miss, r_split, r_cls, r_bound, r_aff = streams
    next_id = max([d.id for d in report.detections] + [0]) + 1
    aff = report.affordances.copy()
    out = []
    for det in report.detections:
        if det.is_compartment:
            out.append(det)
            continue
        drop = r_miss.random() < cfg.miss_prob
        do_split = r_split.random() < cfg.split_prob
        do_cls = r_cls.random() < cfg.misclass_prob
        new_label = OBJECT_CLASSES[int(r_cls.integers(len(OBJECT_CLASSES)))]
        if drop:
            continue
        pieces = [det]
        if do_split:
            parts = _split(det.mask)
            if parts is not None:
                conf = float(r_split.uniform(0.3, 0.9))
                first = dataclasses.replace(det, mask=parts[0], confidence=conf, amodal=mask_bbox(parts[0]))
                second = dataclasses.replace(det, id=next_id, name=f"{det.name}_{next_id}",
                                             mask=parts[1], confidence=conf, amodal=mask_bbox(parts[1]))
                next_id += 1
                pieces = [first, second]
        if do_cls and new_label is not det.label:
            color = det.name.split("_", 1)[0]
            pieces = [dataclasses.replace(p, label=new_label, name=f"{color}_{new_label.value}"
                                          + p.name[len(det.name):], confidence=min(p.confidence, 0.6))
                      for p in pieces]
        for p in pieces:
            r = _jitter_amount(r_bound, cfg.boundary_jitter)
            if r:
                grown = morph(p.mask, r)
                if grown.any():
                    _jitter_segment(aff, p.mask, [r] * 4, grow=grown if r > 0 else None)
                    p = dataclasses.replace(p, mask=grown,
                                            amodal=_grow_box(p.amodal, r, aff.shape[1], aff.shape[0]))
            out.append(p)
    if cfg.affordance_jitter > 0:
        covered = np.zeros(aff.shape[:2], dtype=bool)
        for p in out:
            if p.is_compartment:
                continue
            seg = p.mask & ~covered
            covered |= p.mask
            _jitter_segment(aff, seg, [_jitter_amount(r_aff, cfg.affordance_jitter) for _ in range(4)])
        _jitter_segment(aff, ~covered, [_jitter_amount(r_aff, cfg.affordance_jitter) for _ in range(4)])
    return report.replace(detections=tuple(out), affordances=aff)


def _grow_box(b: BBox | None, r: int, W: int, H: int) -> BBox | None:
    if b is None:
        return None
    return BBox(max(0, b.x0 - r), max(0, b.y0 - r), min(W, b.x1 + r), min(H, b.y1 + r))


# -- completion -------------------------------------------------------------

def complete_objects(scene: Scene, report: PerceptionReport, enabled: bool,
                     poses: PoseDictionary | None) -> PerceptionReport:
    """Restore the hidden parts of detections from the pose dictionary.

    A detection's hidden pixels are those covered by detections stacked above
    it. The dictionary entry for its name and pose is turned to the detected
    angle, fitted to the predicted full extent and used to fill exactly those
    pixels, including their colour and affordances. Detections without an
    entry stay as they are and are flagged incomplete.
    """
    image = report.image
    dets = sorted(report.objects, key=lambda d: d.order)
    out = []
    above = np.zeros(image.shape[:2], dtype=bool)
    hidden_of = {}
    for d in reversed(dets):
        hidden_of[d.id] = above.copy()
        above |= d.mask
    for d in dets:
        app = np.where(d.mask[..., None], image, 0).astype(np.uint8)
        aff = report.affordances & d.mask[..., None]
        if not enabled or poses is None:
            out.append(dataclasses.replace(d, completed=False, appearance=app, affordances=aff))
            continue
        entry = poses.get(d.name, d.pose)
        box = d.amodal if d.amodal is not None else d.bbox
        if entry is None or box is None or box.width < 1 or box.height < 1:
            out.append(dataclasses.replace(d, completed=False, appearance=app, affordances=aff))
            continue
        tmpl = rotated(entry, d.angle % 360) if d.angle % 15 == 0 else entry
        m = resize_nearest(tmpl.mask, box.height, box.width)
        a = resize_nearest(tmpl.appearance, box.height, box.width)
        f = resize_nearest(tmpl.affordances, box.height, box.width)
        full = np.zeros_like(d.mask)
        sl = (slice(box.y0, box.y1), slice(box.x0, box.x1))
        full[sl] = m
        restore = full & hidden_of[d.id] & ~d.mask
        mask = d.mask | restore
        r = restore[sl]
        app[sl][r] = a[r]
        aff[sl][r] = f[r]
        out.append(dataclasses.replace(d, mask=mask, completed=True, appearance=app, affordances=aff))
    return report.replace(detections=tuple(out) + tuple(report.compartments))


# -- belief scene -----------------------------------------------------------

@dataclass
class Belief:
    """Scene as perceived, with the report it came from."""

    scene: Scene
    poses: PoseDictionary | None
    report: PerceptionReport
    source: dict = field(default_factory=dict)  # belief id -> ground-truth id


def build_belief(truth: Scene, report: PerceptionReport, poses: PoseDictionary | None) -> Belief:
    """Layered scene built from a (completed) report.

    The box geometry is known; background affordances come from the report
    where the background is seen and from the ground truth where it is hidden.
    Containment is re-derived from the perceived layers.
    """
    if any(d.appearance is None for d in report.objects):
        report = complete_objects(truth, report, False, poses)
    dets = sorted(report.objects, key=lambda d: d.order)
    seen_bg = np.ones(truth.shape, dtype=bool)
    for d in dets:
        seen_bg &= ~d.mask
    bg_aff = np.where(seen_bg[..., None], report.affordances, truth.background_affordances)
    objs = []
    source = {}
    for z, d in enumerate(dets):
        b = d.bbox
        if b is None:
            continue
        sl = (slice(b.y0, b.y1), slice(b.x0, b.x1))
        m = d.mask[sl]
        layer = Layer(m, d.appearance[sl] * m[..., None], d.affordances[sl] & m[..., None])
        objs.append(ObjectInstance(d.id, d.name, d.label, d.pose, layer, b.center, 0, z))
        source[d.id] = d.source_id
    scene = Scene(truth.background, bg_aff, truth.box_region, truth.compartments, tuple(objs))
    # containment bottom-up in stacking order
    for obj in list(scene.draw_order()):
        parent = find_support(scene, obj.id, exclude={obj.id} | {o.id for o in scene.objects if o.z >= obj.z})
        if parent is not None:
            scene = scene.replace_objects({obj.id: scene.get(obj.id).moved(parent=parent)})
    return Belief(scene, poses, report, source)


def perceive(scene: Scene, poses: PoseDictionary | None = None,
             corruption: CorruptionConfig | None = None, completion: bool = True) -> Belief:
    """Oracle perception, optional corruption, object completion, belief scene."""
    report = perceive_oracle(scene)
    if corruption is not None:
        report = corrupt(report, corruption)
    report = complete_objects(scene, report, completion, poses)
    return build_belief(scene, report, poses)


def make_perceiver(poses=None, corruption=None, completion=True):
    """Perception function for :func:`simip.planner.plan`."""
    def run(scene: Scene) -> Belief:
        return perceive(scene, poses, corruption, completion)
    return run


# -- quality ----------------------------------------------------------------

@dataclass(frozen=True)
class PerceptionQuality:
    affordance_miou: float
    instance_miou: float
    detection_score: float


def perception_quality(report: PerceptionReport, truth: Scene) -> PerceptionQuality:
    """Affordance mIoU, per-class instance mIoU and matched-detection rate."""
    if report.affordances.shape[:2] != truth.shape:
        raise ValueError("report and scene differ in size")
    comp = truth.rendering
    aff_scores = [v for v in (iou(report.affordances[..., k], comp.affordances[..., k])
                              for k in range(4)) if v is not None]
    inst = []
    for label in OBJECT_CLASSES:
        pred = np.zeros(truth.shape, dtype=bool)
        gt = np.zeros(truth.shape, dtype=bool)
        for d in report.objects:
            if d.label is label:
                pred |= d.mask
        for o in truth.objects:
            if o.label is label:
                gt |= comp.owner == o.id
        v = iou(pred, gt)
        if v is not None:
            inst.append(v)
    matched, total = 0, 0
    for o in truth.objects:
        vis = comp.owner == o.id
        if not vis.any():
            continue
        total += 1
        if any(d.label is o.label and (iou(d.mask, vis) or 0.0) >= 0.5 for d in report.objects):
            matched += 1
    return PerceptionQuality(float(np.mean(aff_scores)) if aff_scores else 1.0,
                             float(np.mean(inst)) if inst else 1.0,
                             matched / total if total else 1.0)


def mean_affordance_miou(scenes, cfg: CorruptionConfig) -> float:
    vals = []
    for i, s in enumerate(scenes):
        rep = corrupt(perceive_oracle(s), cfg.with_seed(cfg.seed + i))
        vals.append(perception_quality(rep, s).affordance_miou)
    return float(np.mean(vals))


def calibrate(target_miou: float, scenes, base: CorruptionConfig = MILD,
              tol: float = 0.005, max_iter: int = 30) -> tuple[CorruptionConfig, float]:
    """Strength multiplier of ``base`` whose mean affordance mIoU hits the target.

    Bisection on the strength; returns the scaled config and its mIoU.
    """
    if not 0.0 < target_miou <= 1.0:
        raise ValueError("target mIoU must lie in (0, 1]")
    if target_miou >= 1.0:
        cfg = scaled(base, 0.0)
        return cfg, mean_affordance_miou(scenes, cfg)
    lo, hi = 0.0, 1.0
    while mean_affordance_miou(scenes, scaled(base, hi)) > target_miou:
        hi *= 2
        if hi > 64:
            break
    best = (scaled(base, hi), mean_affordance_miou(scenes, scaled(base, hi)))
    for _ in range(max_iter):
        mid = (lo + hi) / 2
        cfg = scaled(base, mid)
        v = mean_affordance_miou(scenes, cfg)
        if abs(v - target_miou) < abs(best[1] - target_miou):
            best = (cfg, v)
        if abs(v - target_miou) <= tol:
            break
        if v > target_miou:
            lo = mid
        else:
            hi = mid
    return best
