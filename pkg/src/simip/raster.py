"""Low-level raster helpers shared by the scene, perception and planning code.

Every function here works on plain numpy arrays. Binary masks are ``bool``
arrays indexed ``[y, x]``; appearance patches are ``uint8`` arrays of shape
``(h, w, 3)``; affordance stacks are ``bool`` arrays of shape ``(h, w, 4)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box, ``x1``/``y1`` exclusive."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def center(self) -> tuple[int, int]:
        # Integer centre used as the placement origin everywhere.
        return self.x0 + self.width // 2, self.y0 + self.height // 2

    @property
    def max_side(self) -> int:
        return max(self.width, self.height)

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    def union(self, other: "BBox") -> "BBox":
        return BBox(min(self.x0, other.x0), min(self.y0, other.y0),
                    max(self.x1, other.x1), max(self.y1, other.y1))


def mask_bbox(mask: np.ndarray) -> BBox | None:
    """Tight bounds of the true pixels of ``mask`` or ``None`` if it is empty."""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return BBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def crop_to_mask(mask, *arrays):
    """Crop ``mask`` and companion arrays to the tight bounds of ``mask``.

    Returns ``(bbox, mask, *arrays)`` where ``bbox`` is relative to the input.
    """
    box = mask_bbox(mask)
    if box is None:
        raise ValueError("cannot crop an empty mask")
    sl = (slice(box.y0, box.y1), slice(box.x0, box.x1))
    return (box, mask[sl]) + tuple(a[sl] for a in arrays)


def _trig(angle: float) -> tuple[float, float]:
    # Exact values on the axes keep quarter turns lossless.
    a = angle % 360
    exact = {0: (1.0, 0.0), 90: (0.0, 1.0), 180: (-1.0, 0.0), 270: (0.0, -1.0)}
    if a in exact:
        return exact[a]
    r = math.radians(a)
    return math.cos(r), math.sin(r)


def rotation_grid(height: int, width: int, angle: float):
    """Inverse-map an output grid for a rotation of ``angle`` degrees.

    Rotation is about the array centre and is clockwise on screen (x right,
    y down). Returns ``(src_x, src_y)`` float arrays with the output shape.
    """
    c, s = _trig(angle)
    hw = (width - 1) / 2.0
    hh = (height - 1) / 2.0
    ex = abs(c) * hw + abs(s) * hh
    ey = abs(s) * hw + abs(c) * hh
    out_w = int(math.ceil(2 * ex - 1e-9)) + 3
    out_h = int(math.ceil(2 * ey - 1e-9)) + 3
    ox = (out_w - 1) / 2.0
    oy = (out_h - 1) / 2.0
    dx = np.arange(out_w, dtype=np.float64) - ox
    dy = np.arange(out_h, dtype=np.float64) - oy
    gx, gy = np.meshgrid(dx, dy)
    # inverse of p' = R p with R = [[c, -s], [s, c]]
    src_x = c * gx + s * gy + hw
    src_y = -s * gx + c * gy + hh
    return src_x, src_y


def _nearest(src_x, src_y, width, height):
    ix = np.floor(src_x + 0.5).astype(np.int64)
    iy = np.floor(src_y + 0.5).astype(np.int64)
    inside = (ix >= 0) & (ix < width) & (iy >= 0) & (iy < height)
    return np.clip(ix, 0, width - 1), np.clip(iy, 0, height - 1), inside


SAMPLE_EPS = 1e-6


def bilinear_sample(image: np.ndarray, src_x: np.ndarray, src_y: np.ndarray):
    """Bilinear lookup of ``image`` (h, w[, c]) at float coordinates.

    Returns ``(values, valid)``; ``valid`` marks samples whose footprint lies
    inside the image, allowing ``SAMPLE_EPS`` of round-off at the border.
    Invalid samples are zero.
    """
    h, w = image.shape[:2]
    e = SAMPLE_EPS
    valid = (src_x >= -e) & (src_x <= w - 1 + e) & (src_y >= -e) & (src_y <= h - 1 + e)
    x = np.clip(src_x, 0, w - 1)
    y = np.clip(src_y, 0, h - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    img = image.astype(np.float64)
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    out = top * (1 - fy) + bottom * fy
    mask = valid[..., None] if img.ndim == 3 else valid
    return np.where(mask, out, 0.0), valid


def rotate_arrays(mask, appearance, affordances, angle: float):
    """Rotate a bbox-local layer by ``angle`` degrees.

    The binary mask and affordances use nearest-neighbour sampling; the
    appearance uses bilinear sampling restricted to the rotated mask. The
    result is cropped to the tight bounds of the rotated mask.
    """
    h, w = mask.shape
    if angle % 360 == 0:
        return mask.copy(), appearance.copy(), affordances.copy()
    src_x, src_y = rotation_grid(h, w, angle)
    ix, iy, inside = _nearest(src_x, src_y, w, h)
    new_mask = mask[iy, ix] & inside
    new_aff = affordances[iy, ix] & new_mask[..., None]
    app, _ = bilinear_sample(appearance, src_x, src_y)
    # bilinear taps can straddle the silhouette edge, fall back to nearest there
    near = appearance[iy, ix].astype(np.float64)
    app = np.where(new_mask[..., None], app, 0.0)
    edge = new_mask & ~(ndimage.binary_erosion(mask, border_value=0)[iy, ix] & inside)
    app[edge] = near[edge]
    app = np.clip(np.floor(app + 0.5), 0, 255).astype(np.uint8)
    app[~new_mask] = 0
    _, m, a, f = crop_to_mask(new_mask, app, new_aff)
    return m, a, f


def resize_nearest(array: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resize of the two leading axes."""
    h, w = array.shape[:2]
    if (h, w) == (height, width):
        return array.copy()
    ys = np.minimum((np.arange(height) * h) // height, h - 1)
    xs = np.minimum((np.arange(width) * w) // width, w - 1)
    return array[ys][:, xs]


def disc(diameter: int) -> np.ndarray:
    """Filled disc of the given pixel diameter."""
    r = diameter / 2.0
    c = (diameter - 1) / 2.0
    yy, xx = np.mgrid[0:diameter, 0:diameter]
    return (xx - c) ** 2 + (yy - c) ** 2 <= r * r - 0.25 * r


def centered_disc(height: int, width: int, diameter: float) -> np.ndarray:
    """Disc of ``diameter`` centred in an ``height`` x ``width`` array."""
    r = diameter / 2.0
    yy, xx = np.mgrid[0:height, 0:width]
    return (xx - (width - 1) / 2.0) ** 2 + (yy - (height - 1) / 2.0) ** 2 <= r * r - 0.25 * r


def rounded_rect(height: int, width: int, radius: int) -> np.ndarray:
    """Rectangle with quarter-circle corners of ``radius`` pixels."""
    m = np.ones((height, width), dtype=bool)
    radius = max(0, min(radius, height // 2, width // 2))
    if radius == 0:
        return m
    yy, xx = np.mgrid[0:height, 0:width]
    cx = np.clip(xx, radius - 0.5, width - radius - 0.5)
    cy = np.clip(yy, radius - 0.5, height - radius - 0.5)
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius


def place(canvas_shape, local: np.ndarray, x0: int, y0: int) -> np.ndarray:
    """Paste a bbox-local boolean mask into a fresh scene-sized mask.

    Pixels falling outside the canvas are dropped.
    """
    H, W = canvas_shape
    out = np.zeros((H, W), dtype=bool)
    h, w = local.shape
    sx0, sy0 = max(0, -x0), max(0, -y0)
    dx0, dy0 = max(0, x0), max(0, y0)
    dx1, dy1 = min(W, x0 + w), min(H, y0 + h)
    if dx1 > dx0 and dy1 > dy0:
        out[dy0:dy1, dx0:dx1] = local[sy0:sy0 + dy1 - dy0, sx0:sx0 + dx1 - dx0]
    return out


def window_count(local: np.ndarray, x0: int, y0: int, scene_mask: np.ndarray) -> int:
    """Count pixels where a placed local mask overlaps a scene-sized mask."""
    H, W = scene_mask.shape
    h, w = local.shape
    sx0, sy0 = max(0, -x0), max(0, -y0)
    dx0, dy0 = max(0, x0), max(0, y0)
    dx1, dy1 = min(W, x0 + w), min(H, y0 + h)
    if dx1 <= dx0 or dy1 <= dy0:
        return 0
    a = local[sy0:sy0 + dy1 - dy0, sx0:sx0 + dx1 - dx0]
    b = scene_mask[dy0:dy1, dx0:dx1]
    return int(np.count_nonzero(a & b))


def union_local(parts):
    """Union of ``(mask, x0, y0)`` parts as one ``(mask, x0, y0)`` triple."""
    parts = list(parts)
    x0 = min(p[1] for p in parts)
    y0 = min(p[2] for p in parts)
    x1 = max(p[1] + p[0].shape[1] for p in parts)
    y1 = max(p[2] + p[0].shape[0] for p in parts)
    out = np.zeros((y1 - y0, x1 - x0), dtype=bool)
    for m, px, py in parts:
        out[py - y0:py - y0 + m.shape[0], px - x0:px - x0 + m.shape[1]] |= m
    return out, x0, y0


def morph(mask: np.ndarray, pixels: int) -> np.ndarray:
    """Dilate (``pixels`` > 0) or erode (``pixels`` < 0) with a 3x3 element."""
    if pixels == 0:
        return mask.copy()
    st = ndimage.generate_binary_structure(2, 1)
    if pixels > 0:
        return ndimage.binary_dilation(mask, st, iterations=pixels)
    return ndimage.binary_erosion(mask, st, iterations=-pixels, border_value=0)


def components(mask: np.ndarray):
    """Label 4-connected components; returns ``(labels, count)``."""
    return ndimage.label(mask)


def centroid_pixel(mask: np.ndarray) -> tuple[int, int]:
    """Rounded centroid ``(x, y)`` of a non-empty mask."""
    ys, xs = np.nonzero(mask)
    return int(math.floor(xs.mean() + 0.5)), int(math.floor(ys.mean() + 0.5))


def iou(a: np.ndarray, b: np.ndarray) -> float | None:
    """Intersection over union of two masks; ``None`` when the union is empty."""
    union = np.count_nonzero(a | b)
    if union == 0:
        return None
    return np.count_nonzero(a & b) / union


def local_overlap(a: np.ndarray, ax: int, ay: int, b: np.ndarray, bx: int, by: int) -> int:
    """Count common pixels of two bbox-local masks placed at their offsets."""
    x0, y0 = max(ax, bx), max(ay, by)
    x1 = min(ax + a.shape[1], bx + b.shape[1])
    y1 = min(ay + a.shape[0], by + b.shape[0])
    if x1 <= x0 or y1 <= y0:
        return 0
    pa = a[y0 - ay:y1 - ay, x0 - ax:x1 - ax]
    pb = b[y0 - by:y1 - by, x0 - bx:x1 - bx]
    return int(np.count_nonzero(pa & pb))
