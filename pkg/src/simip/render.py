"""Plan strips: the initial scene followed by one panel per imagined step."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .imagination import move_object, move_target

CIRCLE = (230, 20, 20)
POINTER = (20, 120, 230)


@dataclass(frozen=True)
class Marker:
    panel: int
    center: tuple[int, int]
    radius: int
    target: tuple[int, int]


def render_plan_strip(plan, out=None, gap: int = 6):
    """Side-by-side panels with the moved object circled and its target marked.

    Panel ``k`` shows the scene after step ``k``; the circle surrounds the
    object moved by that step and a cross with a pointer from its previous
    position marks the placement. Returns ``(image, markers)`` and writes a
    PNG when ``out`` is given.
    """
    scenes = plan.scenes
    if not scenes:
        raise ValueError("empty plan")
    H, W = scenes[0].shape
    strip = Image.new("RGB", (len(scenes) * W + (len(scenes) - 1) * gap, H), (255, 255, 255))
    draw = ImageDraw.Draw(strip)
    markers = []
    for k, scene in enumerate(scenes):
        x_off = k * (W + gap)
        strip.paste(Image.fromarray(np.ascontiguousarray(scene.rendering.image)), (x_off, 0))
        if k == 0:
            continue
        move = plan.nodes[k].move
        oid = move_object(move)
        box = scene.get(oid).bbox
        cx, cy = box.center
        r = int(math.ceil(box.max_side / 2 * 1.15)) + 2
        draw.ellipse([x_off + cx - r, cy - r, x_off + cx + r, cy + r], outline=CIRCLE, width=2)
        tx, ty = move_target(move).target
        prev = plan.nodes[k - 1].scene.get(oid).bbox.center
        draw.line([x_off + prev[0], prev[1], x_off + tx, ty], fill=POINTER, width=2)
        draw.line([x_off + tx - 4, ty, x_off + tx + 4, ty], fill=POINTER, width=2)
        draw.line([x_off + tx, ty - 4, x_off + tx, ty + 4], fill=POINTER, width=2)
        markers.append(Marker(k, (cx, cy), r, (tx, ty)))
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        strip.save(out)
    return np.asarray(strip), markers
