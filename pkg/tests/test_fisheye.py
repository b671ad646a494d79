import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from skygnss.errors import BehindCamera, OutsideValidCircle
from skygnss.fisheye import FisheyeIntrinsics, PixelCoord, project, project_many, unproject, unproject_many

# step-by-step Kannala-Brandt evaluation at 30 digits (mpmath); OpenCV's
# cv2.fisheye.projectPoints gives the same pixel
ORACLE_PIXEL = (406.27757551299792911, 180.56433686882364883)


@pytest.fixture
def intr():
    return FisheyeIntrinsics(fx=300, fy=310, cx=320, cy=240, k1=-0.01, k2=0.002,
                             image_width=640, image_height=480, valid_radius=400)


def test_optical_axis(intr):
    px = project(intr, [0, 0, 1])
    assert (px.u, px.v) == (intr.cx, intr.cy)


def test_zero_distortion_45_degrees():
    plain = FisheyeIntrinsics(fx=300, fy=300, cx=320, cy=256)
    px = project(plain, [1, 0, 1])
    assert px.u == pytest.approx(320 + 300 * math.pi / 4, abs=1e-9)
    assert px.u == pytest.approx(555.6194, abs=1e-4)
    assert px.v == pytest.approx(256)


def test_distorted_point_matches_oracle(intr):
    px = project(intr, [0.3, -0.2, 1.0])
    assert (px.u, px.v) == pytest.approx(ORACLE_PIXEL, abs=1e-9)


def test_opencv_cross_check(intr):
    cv2 = pytest.importorskip("cv2")
    rng = np.random.default_rng(3)
    pts = rng.uniform([-1, -1, 0.2], [1, 1, 2], size=(50, 3))
    k = np.array([[intr.fx, 0, intr.cx], [0, intr.fy, intr.cy], [0, 0, 1.0]])
    ref, _ = cv2.fisheye.projectPoints(pts[None], np.zeros(3), np.zeros(3), k,
                                       np.array(intr.k, dtype=float))
    np.testing.assert_allclose(project_many(intr, pts), ref[0], atol=1e-6)


def test_behind_camera(intr):
    with pytest.raises(BehindCamera):
        project(intr, [0, 0, -1])
    assert np.all(np.isnan(project_many(intr, np.array([[0, 0, -1.0]]))))


def test_unproject_center(intr):
    assert unproject(intr, PixelCoord(intr.cx, intr.cy)) == pytest.approx([0, 0, 1])


def test_outside_circle(intr):
    with pytest.raises(OutsideValidCircle):
        unproject(intr, PixelCoord(intr.cx + intr.valid_radius + 1, intr.cy))


def test_beyond_hemisphere_raises():
    wide = FisheyeIntrinsics(fx=100, fy=100, cx=500, cy=500, image_width=1000, image_height=1000,
                             valid_radius=500)
    # distort(pi/2) * 100 = 157 px, so 300 px from the centre is past 90 degrees
    with pytest.raises(OutsideValidCircle):
        unproject(wide, PixelCoord(800, 500))


def test_round_trip_1000_pixels(intr):
    rng = np.random.default_rng(9)
    r = intr.valid_radius * np.sqrt(rng.uniform(0, 1, 1000))
    a = rng.uniform(0, 2 * np.pi, 1000)
    u, v = intr.cx + r * np.cos(a), intr.cy + r * np.sin(a)
    rays = unproject_many(intr, u, v)
    np.testing.assert_allclose(np.linalg.norm(rays, axis=1), 1.0, atol=1e-12)
    back = project_many(intr, rays)
    assert np.max(np.hypot(back[:, 0] - u, back[:, 1] - v)) < 1e-6


@given(st.floats(0.0, 1.5), st.floats(0, 2 * math.pi), st.floats(-0.3, 0.3))
def test_ray_round_trip_with_skew(theta, phi, alpha):
    intr = FisheyeIntrinsics(fx=250, fy=260, cx=300, cy=280, alpha=alpha, k1=-0.02, k2=0.003,
                             image_width=600, image_height=560, valid_radius=600)
    ray = np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])
    px = project(intr, ray)
    np.testing.assert_allclose(unproject(intr, px), ray, atol=1e-9)


def test_invalid_intrinsics():
    with pytest.raises(ValueError):
        FisheyeIntrinsics(fx=-1, fy=1, cx=0, cy=0)
