"""Scene manifests: a YAML key/value tree plus PNG rasters next to it.

Layout of ``manifest.yaml``::

    format: simip-scene/1
    size: [W, H]
    background: {image: background.png, affordances: {grasp: ..., place_on: ..., ...}}
    box_region: box_region.png
    compartments: [{name, mask}]
    objects: [{id, name, class, pose, anchor, angle, z, parent, position,
               mask, appearance, affordances}]
    poses: [{name, class, pose, mask, appearance, affordances}]
    certificate: [{object_id, compartment, target, angle, flip}]   # optional
    generator: {...}                                               # optional

Object rasters are the unrotated (canonical) layer; ``angle`` says how far it
is turned and ``anchor`` is the integer bbox centre in the scene. Masks are
8-bit PNGs holding 0 or 255.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .scene import Affordance, ClassLabel, Compartment, Layer, ObjectInstance, Pose, PoseDictionary, Scene

FORMAT = "simip-scene/1"
CHANNELS = {a.name.lower(): a for a in Affordance}


class ManifestError(ValueError):
    pass


def save_png(path, array: np.ndarray) -> None:
    a = np.asarray(array)
    if a.dtype == bool:
        a = a.astype(np.uint8) * 255
    Image.fromarray(np.ascontiguousarray(a)).save(path, optimize=False)


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im)


def load_mask(path) -> np.ndarray:
    a = load_png(path)
    if a.ndim == 3:
        a = a[..., 0]
    if not np.isin(a, (0, 1, 255)).all():
        raise ManifestError(f"{path} is not a binary mask")
    return a > 0


def _write_layer(d: Path, stem: str, layer: Layer) -> dict:
    save_png(d / f"{stem}_mask.png", layer.mask)
    save_png(d / f"{stem}_rgb.png", layer.appearance)
    aff = {}
    for key, kind in CHANNELS.items():
        fn = f"{stem}_{key}.png"
        save_png(d / fn, layer.affordances[..., kind])
        aff[key] = fn
    return {"mask": f"{stem}_mask.png", "appearance": f"{stem}_rgb.png", "affordances": aff}


def _read_layer(d: Path, entry: dict) -> Layer:
    mask = load_mask(d / entry["mask"])
    app = load_png(d / entry["appearance"])
    aff = np.zeros(mask.shape + (4,), dtype=bool)
    for key, fn in entry["affordances"].items():
        aff[..., CHANNELS[key]] = load_mask(d / fn)
    return Layer(mask, app, aff)


def save_scene(scene: Scene, out_dir, poses: PoseDictionary | None = None,
               certificate=None, generator: dict | None = None) -> Path:
    """Write ``scene`` (and optional extras) under ``out_dir``; returns the manifest path."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    save_png(d / "background.png", scene.background)
    bg_aff = {}
    for key, kind in CHANNELS.items():
        save_png(d / f"background_{key}.png", scene.background_affordances[..., kind])
        bg_aff[key] = f"background_{key}.png"
    save_png(d / "box_region.png", scene.box_region)
    comps = []
    for c in scene.compartments:
        fn = f"{c.name}.png"
        save_png(d / fn, c.mask)
        comps.append({"name": c.name, "mask": fn})
    objs = []
    for o in scene.objects:
        entry = {"id": o.id, "name": o.name, "class": o.label.value, "pose": o.pose.value,
                 "anchor": list(o.anchor), "angle": o.angle, "z": o.z, "parent": o.parent,
                 "position": list(o.offset)}
        entry.update(_write_layer(d, f"object_{o.id}", o.canonical))
        objs.append(entry)
    doc = {"format": FORMAT, "size": [scene.width, scene.height],
           "background": {"image": "background.png", "affordances": bg_aff},
           "box_region": "box_region.png", "compartments": comps, "objects": objs}
    if poses is not None:
        plist = []
        for (name, pose), layer in sorted(poses.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
            label = poses.label(name)
            entry = {"name": name, "class": label.value if label else None, "pose": pose.value}
            entry.update(_write_layer(d, f"pose_{name}_{pose.value}", layer))
            plist.append(entry)
        doc["poses"] = plist
    if certificate is not None:
        doc["certificate"] = [{"object_id": s.object_id, "compartment": s.compartment,
                               "target": list(s.target), "angle": s.angle, "flip": bool(s.flip)}
                              for s in certificate]
    if generator is not None:
        doc["generator"] = generator
    path = d / "manifest.yaml"
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path


def save_generated(gen, out_dir) -> Path:
    return save_scene(gen.scene, out_dir, gen.poses, gen.certificate,
                      {"seed": int(gen.seed), "config": gen.config.to_dict(), "meta": gen.meta})


def _resolve(path) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.yaml"
    if not p.exists():
        raise ManifestError(f"no scene manifest at {path}")
    return p


def load_manifest(path):
    """Read a manifest; returns ``(scene, poses, doc)``.

    ``poses`` is ``None`` when the manifest stores no pose dictionary.
    """
    p = _resolve(path)
    d = p.parent
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as e:
        raise ManifestError(f"{p}: {e}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ManifestError(f"{p} is not a {FORMAT} manifest")
    try:
        bg = load_png(d / doc["background"]["image"])
        aff = np.zeros(bg.shape[:2] + (4,), dtype=bool)
        for key, fn in doc["background"]["affordances"].items():
            aff[..., CHANNELS[key]] = load_mask(d / fn)
        box = load_mask(d / doc["box_region"])
        comps = tuple(Compartment(c["name"], load_mask(d / c["mask"])) for c in doc.get("compartments", []))
        objs = []
        for o in doc.get("objects", []):
            objs.append(ObjectInstance(int(o["id"]), o["name"], ClassLabel(o["class"]), Pose(o["pose"]),
                                       _read_layer(d, o), tuple(o["anchor"]), int(o.get("angle", 0)),
                                       int(o.get("z", 0)), o.get("parent")))
        scene = Scene(bg, aff, box, comps, tuple(objs))
        poses = None
        if "poses" in doc:
            poses = PoseDictionary()
            for e in doc["poses"]:
                label = ClassLabel(e["class"]) if e.get("class") else None
                poses.add(e["name"], label, Pose(e["pose"]), _read_layer(d, e))
    except (KeyError, TypeError) as e:
        raise ManifestError(f"{p}: malformed manifest ({e})") from None
    if list(doc["size"]) != [scene.width, scene.height]:
        raise ManifestError(f"{p}: size does not match the background raster")
    return scene, poses, doc


def load_scene(path) -> Scene:
    return load_manifest(path)[0]


def load_certificate(doc: dict):
    from .scenegen import CertificateStep

    if doc.get("certificate") is None:
        return None
    return [CertificateStep(int(s["object_id"]), s["compartment"], tuple(s["target"]),
                            int(s["angle"]), bool(s["flip"])) for s in doc["certificate"]]


def scenes_equal(a: Scene, b: Scene) -> bool:
    """Bit-level equality of two scenes (rasters and object metadata)."""
    if a.shape != b.shape:
        return False
    for x, y in ((a.background, b.background), (a.background_affordances, b.background_affordances),
                 (a.box_region, b.box_region)):
        if not np.array_equal(x, y):
            return False
    if [(c.name, c.mask.tobytes()) for c in a.compartments] != \
            [(c.name, c.mask.tobytes()) for c in b.compartments]:
        return False
    if len(a.objects) != len(b.objects):
        return False
    for o, p in zip(a.objects, b.objects):
        if (o.id, o.name, o.label, o.pose, o.anchor, o.angle, o.z, o.parent) != \
                (p.id, p.name, p.label, p.pose, p.anchor, p.angle, p.z, p.parent):
            return False
        if not o.canonical.same_as(p.canonical):
            return False
    return True
