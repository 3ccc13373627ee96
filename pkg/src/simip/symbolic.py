"""Visual plans to symbolic robot commands and back.

The text form mirrors a function-call listing::

    Grasp("can", Bbox("black_can", "image_1"))  # bbox=[x0, y0, x1, y1]
    Rotate("black_can", 60)
    Place_at("compartment", Bbox("compartment_4", "image_1"))  # bbox=[...] at=[x, y]

Bounding boxes are read from the scene of the referenced plan image
(``image_k`` is the scene before step ``k``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .imagination import ImaginationError, apply_move, make_move, move_flips, move_object, move_rotation, move_target
from .raster import BBox, mask_bbox
from .scene import PoseDictionary, Scene
from .validation import default_threshold, validate


class SymbolicError(ValueError):
    pass


class ReplayError(SymbolicError):
    """Replay stopped; ``step`` is the 1-based pick & place block that failed."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class Grasp:
    label: str
    name: str
    bbox: BBox
    image: str


@dataclass(frozen=True)
class Rotate:
    name: str
    angle: int


@dataclass(frozen=True)
class Flip:
    name: str


@dataclass(frozen=True)
class PlaceAt:
    label: str
    name: str
    bbox: BBox
    image: str
    at: tuple[int, int]


@dataclass
class SymbolicPlan:
    commands: list = field(default_factory=list)

    @property
    def image_refs(self) -> list[str]:
        refs = []
        for c in self.commands:
            if isinstance(c, (Grasp, PlaceAt)) and c.image not in refs:
                refs.append(c.image)
        return refs

    def blocks(self) -> list[list]:
        """Commands grouped per manipulated object: Grasp ... Place_at."""
        out, cur = [], None
        for c in self.commands:
            if isinstance(c, Grasp):
                if cur is not None:
                    raise SymbolicError("Grasp before the previous object was placed")
                cur = [c]
            elif cur is None:
                raise SymbolicError(f"{type(c).__name__} outside a Grasp ... Place_at block")
            else:
                cur.append(c)
                if isinstance(c, PlaceAt):
                    out.append(cur)
                    cur = None
        if cur is not None:
            raise SymbolicError("plan ends with an object still grasped")
        return out

    def __len__(self) -> int:
        return len(self.commands)


def signed_angle(a: int) -> int:
    """Equivalent angle in (-180, 180]."""
    a %= 360
    return a - 360 if a > 180 else a


def region_bbox(scene: Scene, name: str) -> tuple[str, BBox]:
    """Class label and bbox of a placement target named in a plan."""
    for c in scene.compartments:
        if c.name == name:
            return "compartment", c.bbox
    for o in scene.objects:
        if o.name == name:
            return o.label.value, o.bbox
    if name == "box":
        return "box", mask_bbox(scene.box_region)
    raise SymbolicError(f"unknown placement target {name!r}")


def parse(plan) -> SymbolicPlan:
    """Symbolic command list of a validated visual plan."""
    cmds = []
    for k, node in enumerate(plan.nodes[1:], start=1):
        if node.validation is None or not node.validation.valid:
            raise SymbolicError(f"step {k} was not validated")
        pre = plan.nodes[k - 1].scene
        move = node.move
        obj = pre.get(move_object(move))
        image = f"image_{k}"
        cmds.append(Grasp(obj.label.value, obj.name, obj.bbox, image))
        rot = move_rotation(move)
        if rot:
            cmds.append(Rotate(obj.name, signed_angle(rot)))
        if move_flips(move):
            cmds.append(Flip(obj.name))
        pp = move_target(move)
        label, box = region_bbox(pre, pp.region)
        cmds.append(PlaceAt(label, pp.region, box, image, pp.target))
    return SymbolicPlan(cmds)


def replay(initial: Scene, splan: SymbolicPlan, poses: PoseDictionary | None = None,
           threshold: int | None = None) -> Scene:
    """Execute the commands through imagination, checking every parameter.

    Each Grasp/Place_at bbox must equal the bbox in the replayed scene and
    each step must pass validation; otherwise :class:`ReplayError` names the
    offending step.
    """
    if threshold is None:
        threshold = default_threshold(initial.width, initial.height)
    scene = initial
    for k, block in enumerate(splan.blocks(), start=1):
        grasp, place = block[0], block[-1]
        try:
            obj = scene.by_name(grasp.name)
        except KeyError:
            raise ReplayError(k, f"no object named {grasp.name!r}") from None
        if obj.label.value != grasp.label:
            raise ReplayError(k, f"{grasp.name} is a {obj.label.value}, not a {grasp.label}")
        if obj.bbox != grasp.bbox:
            raise ReplayError(k, f"{grasp.name} bbox {obj.bbox.as_list()} != {grasp.bbox.as_list()}")
        try:
            label, box = region_bbox(scene, place.name)
        except SymbolicError as e:
            raise ReplayError(k, str(e)) from None
        if box != place.bbox or label != place.label:
            raise ReplayError(k, f"{place.name} bbox {box.as_list()} != {place.bbox.as_list()}")
        angle = sum(c.angle for c in block if isinstance(c, Rotate)) % 360
        flips = sum(isinstance(c, Flip) for c in block) % 2 == 1
        for c in block[1:-1]:
            if c.name != grasp.name:
                raise ReplayError(k, f"{type(c).__name__} names {c.name}, not the grasped {grasp.name}")
        try:
            scene = apply_move(scene, make_move(obj.id, place.at, place.name, angle, flips), poses)
        except ImaginationError as e:
            raise ReplayError(k, str(e)) from None
        res = validate(scene, obj.id, threshold)
        if not res.valid:
            raise ReplayError(k, f"conflict of {res.conflict_pixels} px (threshold {res.threshold_used})")
    return scene


# -- text forms -------------------------------------------------------------

def _box(b: BBox) -> str:
    return "[" + ", ".join(str(v) for v in b.as_list()) + "]"


def to_listing(splan: SymbolicPlan) -> str:
    """Function-call listing, parameters in trailing comments."""
    lines = []
    for c in splan.commands:
        if isinstance(c, Grasp):
            lines.append(f'Grasp("{c.label}", Bbox("{c.name}", "{c.image}"))  # bbox={_box(c.bbox)}')
        elif isinstance(c, Rotate):
            lines.append(f'Rotate("{c.name}", {c.angle})')
        elif isinstance(c, Flip):
            lines.append(f'Flip("{c.name}")')
        else:
            lines.append(f'Place_at("{c.label}", Bbox("{c.name}", "{c.image}"))'
                         f"  # bbox={_box(c.bbox)} at=[{c.at[0]}, {c.at[1]}]")
    return "\n".join(lines) + ("\n" if lines else "")


_INT_LIST = r"\[\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*\]"
_GRASP = re.compile(r'^Grasp\("([^"]+)",\s*Bbox\("([^"]+)",\s*"([^"]+)"\)\)\s*#\s*bbox=' + _INT_LIST + r"\s*$")
_PLACE = re.compile(r'^Place_at\("([^"]+)",\s*Bbox\("([^"]+)",\s*"([^"]+)"\)\)\s*#\s*bbox=' + _INT_LIST
                    + r"\s*at=\[\s*(-?\d+)\s*,\s*(-?\d+)\s*\]\s*$")
_ROTATE = re.compile(r'^Rotate\("([^"]+)",\s*(-?\d+)\)\s*$')
_FLIP = re.compile(r'^Flip\("([^"]+)"\)\s*$')


def from_listing(text: str) -> SymbolicPlan:
    cmds = []
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if m := _GRASP.match(line):
            cmds.append(Grasp(m[1], m[2], BBox(*(int(m[i]) for i in range(4, 8))), m[3]))
        elif m := _PLACE.match(line):
            cmds.append(PlaceAt(m[1], m[2], BBox(*(int(m[i]) for i in range(4, 8))), m[3],
                                (int(m[8]), int(m[9]))))
        elif m := _ROTATE.match(line):
            cmds.append(Rotate(m[1], int(m[2])))
        elif m := _FLIP.match(line):
            cmds.append(Flip(m[1]))
        else:
            raise SymbolicError(f"line {n}: cannot parse {raw!r}")
    return SymbolicPlan(cmds)


def to_text(splan: SymbolicPlan) -> str:
    """Natural-language listing, one line per command."""
    if not splan.commands:
        return "nothing needs to be done"
    lines = []
    for c in splan.commands:
        if isinstance(c, Grasp):
            x, y = c.bbox.center
            lines.append(f"pick an object with label {c.label} at ({x},{y}), diameter {c.bbox.max_side} px")
        elif isinstance(c, Rotate):
            lines.append(f"rotate {c.name} by {c.angle} deg")
        elif isinstance(c, Flip):
            lines.append(f"flip {c.name}")
        else:
            lines.append(f"place it on {c.label} at ({c.at[0]},{c.at[1]}), diameter {c.bbox.max_side} px")
    return "\n".join(lines)
