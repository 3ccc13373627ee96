"""Obstruct-conflict checking of imagined actions and the packing goal test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .raster import window_count
from .scene import REFERENCE_SIZE, Affordance, Scene, composite, footprint_local, outside_box

REFERENCE_THRESHOLD = 30


@dataclass(frozen=True)
class ValidationResult:
    valid: bool
    conflict_pixels: int
    threshold_used: int

    def __post_init__(self):
        if self.valid != (self.conflict_pixels < self.threshold_used):
            raise ValueError("valid must equal conflict_pixels < threshold_used")


def default_threshold(width: int, height: int) -> int:
    """Conflict threshold scaled by pixel area from 30 px at 1024x768."""
    ref = REFERENCE_SIZE[0] * REFERENCE_SIZE[1]
    return int(math.floor(REFERENCE_THRESHOLD * width * height / ref + 0.5))


def obstruct_without(scene: Scene, oid: int) -> np.ndarray:
    """Obstruct channel of the scene with the subtree of ``oid`` removed."""
    return composite(scene, exclude=scene.subtree(oid)).channel(Affordance.OBSTRUCT)


def count_conflict(mask: np.ndarray, x0: int, y0: int, obstruct: np.ndarray) -> int:
    """Pixels of a placed local footprint that land on obstruct pixels."""
    return window_count(mask, x0, y0, obstruct)


def conflict_area(post_scene: Scene, moved_id: int) -> int:
    """Pixels of the moved subtree's footprint lying on obstruct affordance.

    The subtree's own obstruct pixels are excluded from the map first,
    otherwise every obstruct-bearing object would conflict with itself.
    """
    f, x0, y0 = footprint_local(post_scene, moved_id)
    return count_conflict(f, x0, y0, obstruct_without(post_scene, moved_id))


def validate(post_scene: Scene, moved_id: int, threshold: int | None = None) -> ValidationResult:
    """Accept the imagined action iff the conflict area is below ``threshold``."""
    if threshold is None:
        threshold = default_threshold(post_scene.width, post_scene.height)
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    c = conflict_area(post_scene, moved_id)
    return ValidationResult(c < threshold, c, threshold)


def judge(conflict: int, threshold: int) -> ValidationResult:
    return ValidationResult(conflict < threshold, conflict, threshold)


def goal_reached(scene: Scene) -> bool:
    """True when no object is left outside the box."""
    return not outside_box(scene)
