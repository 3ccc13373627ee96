"""Top view of the table from tilted cameras by inverse perspective mapping.

World frame: X right, Y down along the table, Z pointing into the table, so
the table is the plane Z = 0 and a camera above it sits at negative Z. A
camera maps world points by ``x_cam = R @ X + t`` followed by the pinhole
intrinsics. Content above the table plane is distorted; nothing corrects it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .raster import bilinear_sample


class CameraError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray
    size: tuple[int, int]  # (width, height)

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise CameraError("rotation must be 3x3")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9 or np.linalg.det(R) < 0:
            raise CameraError("rotation is not orthonormal")
        if self.fx <= 0 or self.fy <= 0:
            raise CameraError("focal lengths must be positive")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "size", (int(self.size[0]), int(self.size[1])))

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def project(self, points) -> np.ndarray:
        """Pixel coordinates of world points (N, 3)."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        cam = p @ self.R.T + self.t
        if (cam[:, 2] <= 0).any():
            raise CameraError("point behind the camera")
        uv = cam @ self.K.T
        return uv[:, :2] / uv[:, 2:3]

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "R": self.R.tolist(), "t": self.t.tolist(), "size": list(self.size)}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   np.asarray(d["R"], dtype=np.float64), np.asarray(d["t"], dtype=np.float64),
                   tuple(d["size"]))


def look_at(position, target, fx: float, fy: float, size, cx=None, cy=None,
            down=(0.0, 1.0, 0.0)) -> CameraModel:
    """Camera at ``position`` looking at ``target``; image y follows ``down``."""
    pos = np.asarray(position, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - pos
    z /= np.linalg.norm(z)
    d = np.asarray(down, dtype=np.float64)
    x = np.cross(d, z)
    if np.linalg.norm(x) < 1e-9:
        raise CameraError("viewing direction parallel to the image-down hint")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    W, H = size
    return CameraModel(fx, fy, (W - 1) / 2 if cx is None else cx, (H - 1) / 2 if cy is None else cy,
                       R, -R @ pos, (W, H))


@dataclass(frozen=True)
class TopView:
    """Output grid: pixel (u, v) is the table point origin + mpp * (u, v)."""

    mpp: float
    width: int
    height: int
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.mpp <= 0 or self.width < 1 or self.height < 1:
            raise ValueError("bad top-view grid")

    @property
    def S(self) -> np.ndarray:
        return np.array([[self.mpp, 0.0, self.origin[0]], [0.0, self.mpp, self.origin[1]], [0.0, 0.0, 1.0]])

    def to_pixel(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        return (xy - np.asarray(self.origin)) / self.mpp


def ground_homography(cam: CameraModel, view: TopView) -> np.ndarray:
    """3x3 map from top-view pixels to source-image pixels via the table plane."""
    P = cam.K @ np.column_stack([cam.R[:, 0], cam.R[:, 1], cam.t])
    if abs(cam.center[2]) < 1e-12:
        raise CameraError("camera centre lies in the table plane")
    H = P @ view.S
    if abs(np.linalg.det(H)) < 1e-12 * max(1.0, np.abs(H).max() ** 3):
        raise CameraError("degenerate camera pose: table plane not imaged")
    return H / H[2, 2] if abs(H[2, 2]) > 1e-12 else H


def apply_homography(H: np.ndarray, pts) -> np.ndarray:
    p = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    q = np.column_stack([p, np.ones(len(p))]) @ H.T
    return q[:, :2] / q[:, 2:3]


def warp(image: np.ndarray, H: np.ndarray, view: TopView):
    """Sample ``image`` on the top-view grid; returns ``(values, valid)``."""
    u, v = np.meshgrid(np.arange(view.width, dtype=np.float64), np.arange(view.height, dtype=np.float64))
    den = H[2, 0] * u + H[2, 1] * v + H[2, 2]
    ahead = den > 1e-12
    den = np.where(ahead, den, 1.0)
    sx = (H[0, 0] * u + H[0, 1] * v + H[0, 2]) / den
    sy = (H[1, 0] * u + H[1, 1] * v + H[1, 2]) / den
    vals, valid = bilinear_sample(image, sx, sy)
    valid &= ahead
    return vals, valid


def remap_and_merge(views, view: TopView):
    """Warp every ``(image, camera)`` pair and average where they overlap.

    Returns ``(top_view_uint8, coverage_mask)``.
    """
    views = list(views)
    if not views:
        raise CameraError("need at least one camera")
    acc = None
    count = np.zeros((view.height, view.width), dtype=np.int64)
    for image, cam in views:
        vals, valid = warp(np.asarray(image), ground_homography(cam, view), view)
        if acc is None:
            acc = np.zeros(vals.shape, dtype=np.float64)
        acc += np.where(valid[..., None], vals, 0.0) if vals.ndim == 3 else np.where(valid, vals, 0.0)
        count += valid
    coverage = count > 0
    if not coverage.any():
        raise CameraError("no camera sees any part of the top-view grid")
    c = np.maximum(count, 1)
    out = acc / (c[..., None] if acc.ndim == 3 else c)
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8), coverage


# -- synthetic renders and checkerboard oracle ------------------------------

def render_plane(cam: CameraModel, texture, supersample: int = 3) -> np.ndarray:
    """Image of the textured table seen by ``cam``.

    ``texture(X, Y)`` returns intensities for world coordinates in metres.
    Pixels whose ray misses the table stay 0.
    """
    W, H = cam.size
    P = cam.K @ np.column_stack([cam.R[:, 0], cam.R[:, 1], cam.t])
    Pinv = np.linalg.inv(P)
    s = supersample
    offs = (np.arange(s) + 0.5) / s - 0.5
    acc = np.zeros((H, W), dtype=np.float64)
    x, y = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    for dy in offs:
        for dx in offs:
            q = np.stack([x + dx, y + dy, np.ones_like(x)], axis=-1) @ Pinv.T
            ok = np.abs(q[..., 2]) > 1e-12
            w = np.where(ok, q[..., 2], 1.0)
            X, Y = q[..., 0] / w, q[..., 1] / w
            # keep rays that hit the plane in front of the camera
            Xw = np.stack([X, Y, np.zeros_like(X)], axis=-1)
            depth = Xw @ cam.R[2] + cam.t[2]
            acc += np.where(ok & (depth > 0), texture(X, Y), 0.0)
    return np.clip(np.floor(acc / (s * s) + 0.5), 0, 255).astype(np.uint8)


def checkerboard(square: float, origin=(0.0, 0.0), dark: float = 30.0, light: float = 225.0):
    """Texture function of an infinite checkerboard with ``square`` metre cells."""
    def tex(X, Y):
        i = np.floor((X - origin[0]) / square).astype(np.int64)
        j = np.floor((Y - origin[1]) / square).astype(np.int64)
        return np.where((i + j) % 2 == 0, light, dark)
    return tex


def _crossing(profile: np.ndarray, level: float) -> float | None:
    p = profile.astype(np.float64) - level
    idx = np.flatnonzero(np.sign(p[:-1]) * np.sign(p[1:]) < 0)
    if idx.size != 1:
        return None
    i = int(idx[0])
    return i + p[i] / (p[i] - p[i + 1])


def locate_corner(image: np.ndarray, guess, window: int = 6, gap: int = 2, level: float = 127.5):
    """Sub-pixel checker corner near ``guess`` from mid-grey edge crossings.

    The vertical edge is found along rows above and below the corner, the
    horizontal edge along columns left and right of it.
    """
    img = image.astype(np.float64)
    if img.ndim == 3:
        img = img.mean(axis=2)
    gx, gy = int(round(guess[0])), int(round(guess[1]))
    h, w = img.shape
    xs, ys = [], []
    for dy in list(range(-window, -gap + 1)) + list(range(gap, window + 1)):
        r = gy + dy
        x0, x1 = gx - window, gx + window + 1
        if 0 <= r < h and x0 >= 0 and x1 <= w:
            c = _crossing(img[r, x0:x1], level)
            if c is not None:
                xs.append(x0 + c)
    for dx in list(range(-window, -gap + 1)) + list(range(gap, window + 1)):
        col = gx + dx
        y0, y1 = gy - window, gy + window + 1
        if 0 <= col < w and y0 >= 0 and y1 <= h:
            c = _crossing(img[y0:y1, col], level)
            if c is not None:
                ys.append(y0 + c)
    if not xs or not ys:
        return None
    return float(np.mean(xs)), float(np.mean(ys))


def checker_corners(view: TopView, square: float, origin=(0.0, 0.0), border: int = 8):
    """Expected top-view pixel positions of the interior checker corners.

    Pixel ``u`` samples the table at ``origin + mpp * u``, so a corner at
    table coordinate X lies at the fractional pixel ``(X - origin) / mpp``.
    """
    out = []
    xmax = view.origin[0] + view.mpp * (view.width - 1)
    ymax = view.origin[1] + view.mpp * (view.height - 1)
    i0 = int(np.ceil((view.origin[0] - origin[0]) / square))
    j0 = int(np.ceil((view.origin[1] - origin[1]) / square))
    i = i0
    while origin[0] + i * square <= xmax:
        j = j0
        while origin[1] + j * square <= ymax:
            u, v = view.to_pixel((origin[0] + i * square, origin[1] + j * square))[0]
            if border <= u <= view.width - 1 - border and border <= v <= view.height - 1 - border:
                out.append((u, v))
            j += 1
        i += 1
    return out


# -- calibration files ------------------------------------------------------

def load_calibration(path):
    """Read ``{topview: {...}, cameras: [{..., image: file}]}``; returns (view, [(path, cam)])."""
    p = Path(path)
    doc = yaml.safe_load(p.read_text())
    if not isinstance(doc, dict) or "cameras" not in doc or "topview" not in doc:
        raise CameraError(f"{path}: expected 'topview' and 'cameras' keys")
    tv = doc["topview"]
    view = TopView(float(tv["mpp"]), int(tv["width"]), int(tv["height"]),
                   tuple(tv.get("origin", (0.0, 0.0))))
    cams = []
    for c in doc["cameras"]:
        cams.append((p.parent / c["image"], CameraModel.from_dict(c)))
    return view, cams


def save_calibration(path, view: TopView, cams) -> None:
    doc = {"topview": {"mpp": view.mpp, "width": view.width, "height": view.height,
                       "origin": list(view.origin)},
           "cameras": [dict(cam.to_dict(), image=str(img)) for img, cam in cams]}
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))
