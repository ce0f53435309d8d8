"""Tests for the distortion model, image/box remapping and calibration IO."""

import numpy as np
import pytest

from signpatch.camera import (
    BBox,
    CameraModel,
    DegenerateBoxError,
    DimensionMismatchError,
    NonConvergenceError,
    ParseError,
    ValidationError,
    distort_point,
    load_calibration,
    normalized_to_pixel,
    pixel_to_normalized,
    remap_bbox,
    remap_image,
    save_calibration,
    undistort_point,
)


def make_cam(**kw):
    base = dict(fx=600.0, fy=600.0, cx=320.0, cy=240.0, width=640, height=480)
    base.update(kw)
    return CameraModel(**base)


class TestDistortPoint:
    def test_pure_radial_hand_value(self):
        # r2 = 0.25, x_d = 0.5 * (1 + 0.1 * 0.25) = 0.5125
        cam = make_cam(k1=0.1)
        xd, yd = distort_point(cam, 0.5, 0.0)
        assert xd == pytest.approx(0.5125, abs=1e-12)
        assert yd == pytest.approx(0.0, abs=1e-12)

    def test_zero_coefficients_identity(self):
        cam = make_cam()
        xs = np.array([-0.4, 0.0, 0.3])
        ys = np.array([0.1, -0.2, 0.25])
        xd, yd = distort_point(cam, xs, ys)
        np.testing.assert_array_equal(xd, xs)
        np.testing.assert_array_equal(yd, ys)

    def test_radial_plus_tangential_frozen_oracle(self):
        # Scalar evaluation of the model, frozen from a scratch script:
        # (x, y) = (0.3, 0.4), k1 = 0.05, p1 = 0.01 -> (0.30615, 0.4107)
        cam = make_cam(k1=0.05, p1=0.01)
        xd, yd = distort_point(cam, 0.3, 0.4)
        assert xd == pytest.approx(0.30615, abs=1e-12)
        assert yd == pytest.approx(0.4107, abs=1e-12)

    def test_origin_fixed(self):
        cam = make_cam(k1=-0.2, k2=0.05, k3=0.01, p1=0.003, p2=-0.002)
        xd, yd = distort_point(cam, 0.0, 0.0)
        assert xd == 0.0 and yd == 0.0

    def test_monotone_radius_for_positive_k1(self):
        cam = make_cam(k1=0.15)
        radii = np.linspace(0.01, 0.7, 120)
        xd, _ = distort_point(cam, radii, np.zeros_like(radii))
        assert np.all(np.diff(xd) > 0)


class TestUndistortPoint:
    def test_inverts_hand_value(self):
        cam = make_cam(k1=0.1)
        x, y = undistort_point(cam, 0.5125, 0.0)
        assert x == pytest.approx(0.5, abs=1e-6)
        assert y == pytest.approx(0.0, abs=1e-6)

    def test_zero_coefficients_identity(self):
        cam = make_cam()
        x, y = undistort_point(cam, 0.37, -0.21)
        assert x == 0.37 and y == -0.21

    def test_grid_round_trip_under_a_pixel_thousandth(self):
        # Working-range coefficients, central 90% of frame.
        cam = make_cam(k1=-0.2, k2=0.05)
        us = np.linspace(0.05 * 640, 0.95 * 640, 9)
        vs = np.linspace(0.05 * 480, 0.95 * 480, 9)
        uu, vv = np.meshgrid(us, vs)
        x, y = pixel_to_normalized(cam, uu, vv)
        xu, yu = undistort_point(cam, x, y)
        xb, yb = distort_point(cam, xu, yu)
        ub, vb = normalized_to_pixel(cam, xb, yb)
        assert np.max(np.abs(ub - uu)) < 1e-3
        assert np.max(np.abs(vb - vv)) < 1e-3

    def test_non_convergence_raises(self):
        cam = make_cam(k1=-3.5)
        with pytest.raises(NonConvergenceError):
            undistort_point(cam, 0.9, 0.6)


class TestRemapImage:
    def test_zero_coefficients_bit_identical(self):
        cam = make_cam()
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(480, 640, 3), dtype=np.uint8)
        out = remap_image(img, cam, "distort")
        np.testing.assert_array_equal(out, img)
        imgf = rng.random((480, 640, 3))
        np.testing.assert_array_equal(remap_image(imgf, cam, "undistort"), imgf)

    def test_uniform_field_preserved_in_interior(self):
        cam = make_cam(k1=0.08, p1=0.002)
        img = np.full((480, 640, 3), 128, dtype=np.uint8)
        out = remap_image(img, cam, "distort")
        np.testing.assert_array_equal(out[100:380, 150:490], 128)

    def test_single_bright_pixel_lands_at_mapped_location(self):
        cam = make_cam(k1=0.1)
        img = np.zeros((480, 640), dtype=np.float64)
        src_u, src_v = 420, 160
        img[src_v, src_u] = 1.0
        out = remap_image(img, cam, "distort")
        total = out.sum()
        assert total > 0
        vv, uu = np.meshgrid(np.arange(480), np.arange(640), indexing="ij")
        cu = (out * uu).sum() / total
        cv = (out * vv).sum() / total
        x, y = pixel_to_normalized(cam, src_u, src_v)
        xd, yd = distort_point(cam, x, y)
        eu, ev = normalized_to_pixel(cam, xd, yd)
        assert abs(cu - eu) < 1.0
        assert abs(cv - ev) < 1.0

    def test_dimension_mismatch(self):
        cam = make_cam()
        with pytest.raises(DimensionMismatchError):
            remap_image(np.zeros((100, 100, 3), dtype=np.uint8), cam, "distort")


class TestRemapBBox:
    def test_zero_coefficients_identity(self):
        cam = make_cam()
        box = BBox(14, 0.4, 0.6, 0.2, 0.15)
        out = remap_bbox(box, cam, "distort")
        assert out.cx == pytest.approx(box.cx, abs=1e-9)
        assert out.cy == pytest.approx(box.cy, abs=1e-9)
        assert out.w == pytest.approx(box.w, abs=1e-9)
        assert out.h == pytest.approx(box.h, abs=1e-9)

    def test_barrel_shrinks_centered_box(self):
        cam = make_cam(k1=-0.25)
        box = BBox(14, 0.5, 0.5, 0.4, 0.4)
        out = remap_bbox(box, cam, "distort")
        assert out.w < box.w
        assert out.h < box.h

    def test_hull_covers_mapped_interior(self):
        # Dense-sampling oracle: the 32-point boundary hull must contain
        # >= 99% of 1000 independently mapped interior points.
        cam = make_cam(k1=0.1)
        box = BBox(14, 0.7, 0.7, 0.2, 0.2)
        hull = remap_bbox(box, cam, "distort")
        rng = np.random.default_rng(7)
        x0, y0, x1, y1 = box.corners()
        px = rng.uniform(x0, x1, 1000) * cam.width
        py = rng.uniform(y0, y1, 1000) * cam.height
        nx, ny = pixel_to_normalized(cam, px, py)
        mx, my = distort_point(cam, nx, ny)
        mu, mv = normalized_to_pixel(cam, mx, my)
        gx0, gy0, gx1, gy1 = hull.corners()
        eps = 1e-9
        inside = ((mu / cam.width >= gx0 - eps) & (mu / cam.width <= gx1 + eps)
                  & (mv / cam.height >= gy0 - eps) & (mv / cam.height <= gy1 + eps))
        assert inside.mean() >= 0.99

    def test_point_sized_box_commutes_with_point_map(self):
        cam = make_cam(k1=0.12, p1=0.004)
        tiny = 1e-9
        box = BBox(14, 0.62, 0.31, tiny, tiny)
        out = remap_bbox(box, cam, "distort")
        x, y = pixel_to_normalized(cam, 0.62 * cam.width, 0.31 * cam.height)
        xd, yd = distort_point(cam, x, y)
        u, v = normalized_to_pixel(cam, xd, yd)
        assert out.cx == pytest.approx(u / cam.width, abs=1e-6)
        assert out.cy == pytest.approx(v / cam.height, abs=1e-6)

    def test_degenerate_box_raises(self):
        cam = make_cam()
        box = BBox(14, 0.5, 0.5, 0.2, 0.2)
        box.w = 0.0  # bypass validate() to hit the hull check
        with pytest.raises((DegenerateBoxError, ValidationError)):
            remap_bbox(box, cam, "distort")


class TestCalibrationIO:
    def test_round_trip(self, tmp_path):
        cam = make_cam(k1=-0.21, k2=0.043, p1=0.0011, p2=-0.0007, k3=0.002, skew=0.5)
        path = tmp_path / "cam.json"
        save_calibration(cam, path)
        assert load_calibration(path) == cam

    def test_missing_field_names_it(self, tmp_path):
        path = tmp_path / "cam.json"
        path.write_text('{"fy": 600, "cx": 320, "cy": 240, "k1": 0, "k2": 0, '
                        '"p1": 0, "p2": 0, "width": 640, "height": 480}')
        with pytest.raises(ParseError, match="fx"):
            load_calibration(path)

    def test_invalid_focal_rejected(self, tmp_path):
        path = tmp_path / "cam.json"
        path.write_text('{"fx": -1, "fy": 600, "cx": 320, "cy": 240, "k1": 0, '
                        '"k2": 0, "p1": 0, "p2": 0, "width": 640, "height": 480}')
        with pytest.raises(ValidationError):
            load_calibration(path)

    def test_skew_and_k3_optional(self, tmp_path):
        path = tmp_path / "cam.json"
        path.write_text('{"fx": 600, "fy": 600, "cx": 320, "cy": 240, "k1": 0.1, '
                        '"k2": 0, "p1": 0, "p2": 0, "width": 640, "height": 480}')
        cam = load_calibration(path)
        assert cam.skew == 0.0 and cam.k3 == 0.0

    def test_non_numeric_field_rejected(self, tmp_path):
        path = tmp_path / "cam.json"
        path.write_text('{"fx": "six hundred", "fy": 600, "cx": 320, "cy": 240, '
                        '"k1": 0, "k2": 0, "p1": 0, "p2": 0, "width": 640, "height": 480}')
        with pytest.raises(ParseError, match="fx"):
            load_calibration(path)
