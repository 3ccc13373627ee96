import numpy as np
import pytest

from helpers import checker_rig
from simip.ipm import (
    CameraError,
    CameraModel,
    TopView,
    apply_homography,
    checker_corners,
    ground_homography,
    load_calibration,
    locate_corner,
    look_at,
    remap_and_merge,
    save_calibration,
    warp,
)
from simip.manifest import save_png


def nadir(h=1.0, f=400.0, size=(160, 120), at=(0.5, 0.4)):
    return look_at((at[0], at[1], -h), (at[0], at[1], 0.0), f, f, size)


def test_nadir_homography_is_scale_and_shift():
    cam = nadir()
    H = ground_homography(cam, TopView(0.001, 100, 80))
    assert abs(H[0, 1]) < 1e-12 and abs(H[1, 0]) < 1e-12
    assert abs(H[2, 0]) < 1e-12 and abs(H[2, 1]) < 1e-12
    assert H[0, 0] == pytest.approx(H[1, 1], rel=1e-12)


def nadir_view(cam, h=1.0, step=1):
    """Top-view grid whose pixels land exactly on every ``step``-th camera pixel."""
    mpp = h / cam.fx * step
    # table point seen by camera pixel (0, 0)
    x0 = 0.5 - cam.cx * h / cam.fx
    y0 = 0.4 - cam.cy * h / cam.fy
    W, H = cam.size
    return TopView(mpp, (W - 1) // step + 1, (H - 1) // step + 1, (x0, y0))


@pytest.mark.parametrize("step", [1, 2])
def test_nadir_remap_is_identity_up_to_scale(step):
    cam = nadir()
    img = np.random.default_rng(0).integers(0, 256, size=(120, 160, 3), dtype=np.uint8)
    view = nadir_view(cam, step=step)
    top, cov = remap_and_merge([(img, cam)], view)
    assert cov.all()
    diff = np.abs(top.astype(int) - img[::step, ::step].astype(int))
    assert diff.max() <= 1


def test_fiducials_project_through_the_homography():
    cam = look_at((0.1, -0.3, -0.8), (0.3, 0.25, 0.0), 520.0, 520.0, (640, 480))
    view = TopView(0.002, 300, 300, (0.0, 0.0))
    H = ground_homography(cam, view)
    pts = np.array([(0.1, 0.1), (0.5, 0.1), (0.5, 0.45), (0.12, 0.4)])
    analytic = cam.project(np.column_stack([pts, np.zeros(4)]))
    via_h = apply_homography(H, view.to_pixel(pts))
    assert np.abs(analytic - via_h).max() <= 0.5
    assert np.abs(analytic - via_h).max() < 1e-6


def test_homography_inverse():
    cam = look_at((0.8, 0.2, -0.6), (0.3, 0.3, 0.0), 450.0, 450.0, (320, 240))
    H = ground_homography(cam, TopView(0.003, 200, 200))
    I = H @ np.linalg.inv(H)
    assert np.abs(I - np.eye(3)).max() < 1e-6


def test_lines_stay_lines():
    cam = look_at((0.8, 0.2, -0.6), (0.3, 0.3, 0.0), 450.0, 450.0, (320, 240))
    H = ground_homography(cam, TopView(0.003, 200, 200))
    p = apply_homography(H, [(10, 20), (60, 70), (150, 160)])
    a, b = p[1] - p[0], p[2] - p[0]
    assert abs(a[0] * b[1] - a[1] * b[0]) / (np.linalg.norm(a) * np.linalg.norm(b)) < 1e-9


def test_disjoint_cameras_cover_the_union():
    view = TopView(0.005, 200, 100)
    a = look_at((0.2, 0.25, -0.5), (0.2, 0.25, 0.0), 200.0, 200.0, (80, 80))
    b = look_at((0.8, 0.25, -0.5), (0.8, 0.25, 0.0), 200.0, 200.0, (80, 80))
    ia = np.full((80, 80), 50, np.uint8)
    ib = np.full((80, 80), 200, np.uint8)
    _, va = warp(ia, ground_homography(a, view), view)
    _, vb = warp(ib, ground_homography(b, view), view)
    assert not (va & vb).any()
    top, cov = remap_and_merge([(ia, a), (ib, b)], view)
    assert np.array_equal(cov, va | vb)
    assert (top[va] == 50).all() and (top[vb] == 200).all() and (top[~cov] == 0).all()


def test_merge_order_does_not_matter():
    view, rig = checker_rig()
    a, ca = remap_and_merge(rig, view)
    b, cb = remap_and_merge(list(reversed(rig)), view)
    assert np.array_equal(ca, cb)
    assert np.abs(a.astype(int) - b.astype(int)).max() <= 1


def test_checkerboard_corners_after_merge():
    view, rig = checker_rig()
    top, cov = remap_and_merge(rig, view)
    assert cov.all()
    corners = checker_corners(view, 0.04)
    assert len(corners) > 100
    errs = []
    for u, v in corners:
        found = locate_corner(top, (u, v))
        assert found is not None
        errs.append(np.hypot(found[0] - u, found[1] - v))
    assert max(errs) <= 1.0


def test_camera_validation():
    with pytest.raises(CameraError):
        CameraModel(500, 500, 0, 0, np.diag([1, 1, 2]), np.zeros(3), (10, 10))
    side = look_at((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 100, 100, (10, 10), down=(0, 0, 1))
    with pytest.raises(CameraError):
        ground_homography(side, TopView(0.01, 10, 10))
    with pytest.raises(CameraError):
        remap_and_merge([], TopView(0.01, 10, 10))


def test_calibration_file_round_trip(tmp_path):
    view, rig = checker_rig()
    entries = []
    for k, (img, cam) in enumerate(rig):
        save_png(tmp_path / f"cam{k}.png", img)
        entries.append((f"cam{k}.png", cam))
    save_calibration(tmp_path / "calib.yaml", view, entries)
    v2, cams = load_calibration(tmp_path / "calib.yaml")
    assert v2 == view
    for (name, cam), (path, c2) in zip(entries, cams):
        assert path == tmp_path / name
        assert np.allclose(cam.R, c2.R) and np.allclose(cam.t, c2.t)
