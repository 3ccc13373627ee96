"""Hand-built scenes for unit tests."""

import numpy as np

from simip.raster import disc, place
from simip.scene import Affordance, ClassLabel, Compartment, Layer, ObjectInstance, Pose, Scene


def layer(mask, color=(200, 40, 40), grasp=None, place_on=None, obstruct=None, hole=None):
    mask = np.asarray(mask, dtype=bool)
    app = np.zeros(mask.shape + (3,), dtype=np.uint8)
    app[mask] = color
    aff = np.zeros(mask.shape + (4,), dtype=bool)
    for kind, m in ((Affordance.GRASP, grasp), (Affordance.PLACE_ON, place_on),
                    (Affordance.OBSTRUCT, obstruct), (Affordance.HOLE, hole)):
        if m is not None:
            aff[..., kind] = np.asarray(m, dtype=bool) & mask
    return Layer(mask, app, aff)


def solid(h, w, color=(200, 40, 40)):
    """Solid block: graspable and obstructing everywhere."""
    m = np.ones((h, w), dtype=bool)
    return layer(m, color, grasp=m, obstruct=m)


def cup(d, inner, color=(230, 200, 30)):
    """Disc with an obstructing rim and a hole/place-on interior."""
    m = disc(d)
    yy, xx = np.mgrid[:d, :d]
    c = (d - 1) / 2
    i = ((xx - c) ** 2 + (yy - c) ** 2 <= (inner / 2) ** 2) & m
    rim = m & ~i
    return layer(m, color, grasp=rim, obstruct=rim, place_on=i, hole=i)


def obj(oid, layer_, anchor, z=0, parent=None, label=ClassLabel.CUBOID, name=None,
        pose=Pose.HORIZONTAL, angle=0):
    return ObjectInstance(oid, name or f"obj{oid}_{label.value}", label, pose, layer_, anchor,
                          angle, z, parent)


def boxed_scene(size=(128, 96), box=(64, 8, 120, 88), compartments=(), objects=(), wall_color=(120, 80, 40)):
    """Table (place-on) with an obstructing box; compartments are (x0, y0, x1, y1)."""
    W, H = size
    bg = np.full((H, W, 3), 90, dtype=np.uint8)
    aff = np.zeros((H, W, 4), dtype=bool)
    aff[..., Affordance.PLACE_ON] = True
    region = np.zeros((H, W), dtype=bool)
    if box is not None:
        x0, y0, x1, y1 = box
        region[y0:y1, x0:x1] = True
        bg[region] = wall_color
        aff[region, Affordance.PLACE_ON] = False
        aff[region, Affordance.OBSTRUCT] = True
    comps = []
    for k, (x0, y0, x1, y1) in enumerate(compartments, start=1):
        m = np.zeros((H, W), dtype=bool)
        m[y0:y1, x0:x1] = True
        bg[m] = (165, 120, 75)
        aff[m, Affordance.OBSTRUCT] = False
        aff[m, Affordance.PLACE_ON] = True
        aff[m, Affordance.HOLE] = True
        comps.append(Compartment(f"compartment_{k}", m))
    return Scene(bg, aff, region, tuple(comps), tuple(objects))


def scene_mask(scene, local, x0, y0):
    return place(scene.shape, local, x0, y0)


def brute_composite(scene, exclude=()):
    """Per-pixel oracle: walk every object at every pixel, topmost wins."""

    def order_key(o):
        chain = []
        while o is not None:
            chain.append(o.z)
            o = scene.get(o.parent) if o.parent is not None else None
        return tuple(reversed(chain))

    ranked = sorted(scene.objects, key=order_key)
    H, W = scene.shape
    img = scene.background.copy()
    aff = scene.background_affordances.copy()
    owner = np.full((H, W), -1)
    for y in range(H):
        for x in range(W):
            for o in ranked:
                if o.id in exclude:
                    continue
                b = o.bbox
                if b.x0 <= x < b.x1 and b.y0 <= y < b.y1 and o.mask[y - b.y0, x - b.x0]:
                    img[y, x] = o.appearance[y - b.y0, x - b.x0]
                    aff[y, x] = o.affordances[y - b.y0, x - b.x0]
                    owner[y, x] = o.id
    return img, aff, owner


def random_conflict_case(rng, size=(48, 40)):
    """Random obstruct background plus one random object placed on it.

    Returns ``(scene, object_id)``; the object's own obstruct pixels are
    random too so self-exclusion is exercised.
    """
    W, H = size
    bg = np.zeros((H, W, 3), dtype=np.uint8)
    aff = np.zeros((H, W, 4), dtype=bool)
    aff[..., Affordance.PLACE_ON] = True
    aff[..., Affordance.OBSTRUCT] = rng.random((H, W)) < rng.uniform(0.05, 0.6)
    region = np.zeros((H, W), dtype=bool)
    h, w = int(rng.integers(2, 16)), int(rng.integers(2, 16))
    m = rng.random((h, w)) < 0.7
    m[h // 2, w // 2] = True
    lay = layer(m, grasp=m, obstruct=m & (rng.random((h, w)) < 0.5))
    x = int(rng.integers(w // 2, W - w + w // 2 + 1))
    y = int(rng.integers(h // 2, H - h + h // 2 + 1))
    objs = [obj(1, lay, (x, y), z=1)]
    if rng.random() < 0.5:
        oh, ow = int(rng.integers(2, 10)), int(rng.integers(2, 10))
        om = rng.random((oh, ow)) < 0.8
        om[oh // 2, ow // 2] = True
        other = layer(om, grasp=om, obstruct=om & (rng.random((oh, ow)) < 0.7))
        ox = int(rng.integers(ow // 2, W - ow + ow // 2 + 1))
        oy = int(rng.integers(oh // 2, H - oh + oh // 2 + 1))
        objs.append(obj(2, other, (ox, oy), z=0))
    return Scene(bg, aff, region, (), tuple(objs)), 1


def brute_conflict(scene, oid):
    """Double loop over all pixels: moved footprint AND obstruct of the rest."""
    sub = set(scene.subtree(oid))
    _, aff, _ = brute_composite(scene, exclude=sub)
    H, W = scene.shape
    n = 0
    for y in range(H):
        for x in range(W):
            mine = False
            for i in sub:
                o = scene.get(i)
                b = o.bbox
                if b.x0 <= x < b.x1 and b.y0 <= y < b.y1 and o.mask[y - b.y0, x - b.x0]:
                    mine = True
            if mine and aff[y, x, Affordance.OBSTRUCT]:
                n += 1
    return n


def checker_rig(square=0.04, size=(640, 480), f=500.0):
    """Top-view grid and four tilted cameras around a checkerboard table."""
    from simip.ipm import TopView, checkerboard, look_at, render_plane

    view = TopView(0.002, 320, 240)
    cx, cy = 0.32, 0.24
    tex = checkerboard(square)
    rig = []
    for px, py in ((cx - 0.45, cy), (cx + 0.45, cy), (cx, cy - 0.4), (cx, cy + 0.4)):
        cam = look_at((px, py, -0.7), (cx, cy, 0.0), f, f, size)
        rig.append((render_plane(cam, tex), cam))
    return view, rig
