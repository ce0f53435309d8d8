"""Pinhole camera model with radial-tangential lens distortion.

Pixel <-> camera-normalized coordinates:

    u = fx * x + skew * y + cx          x = (u - cx - skew * y) / fx
    v = fy * y + cy                     y = (v - cy) / fy

Forward distortion on normalized coordinates (radial k1, k2, k3 plus
tangential p1, p2):

    r2  = x^2 + y^2
    rad = 1 + k1 r2 + k2 r2^2 + k3 r2^3
    x_d = x * rad + 2 p1 x y + p2 (r2 + 2 x^2)
    y_d = y * rad + p1 (r2 + 2 y^2) + 2 p2 x y

The inverse has no closed form and is recovered by fixed-point iteration
on x <- (x_d - tangential(x)) / radial(x).  Image and bounding-box
remapping both ride on these two point maps.
"""

import json
from dataclasses import dataclass, asdict
from functools import lru_cache
from pathlib import Path

import numpy as np

from .imageops import bilinear_sample, round_half_up

UNDISTORT_MAX_ITER = 50
UNDISTORT_TOL = 1e-9
UNDISTORT_FAIL_TOL = 1e-6
BBOX_BOUNDARY_SAMPLES = 32


class ValidationError(ValueError):
    """A model or box violates one of its invariants."""


class ParseError(ValueError):
    """A calibration file is missing a field or holds a non-numeric value."""


class NonConvergenceError(RuntimeError):
    """Inverse distortion failed to converge within the iteration cap."""


class DimensionMismatchError(ValueError):
    """An image does not match the camera's sensor resolution."""


class DegenerateBoxError(ValueError):
    """A remapped bounding box collapsed to zero area."""


_CALIBRATION_REQUIRED = ("fx", "fy", "cx", "cy", "k1", "k2", "p1", "p2", "width", "height")
_CALIBRATION_OPTIONAL = ("skew", "k3")


@dataclass(frozen=True)
class CameraModel:
    """Intrinsics plus distortion coefficients; immutable and hashable so
    derived remap grids can be cached per model."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    skew: float = 0.0
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"resolution must be positive, got {self.width}x{self.height}")

    @property
    def has_distortion(self) -> bool:
        return any((self.k1, self.k2, self.k3, self.p1, self.p2))


@dataclass
class BBox:
    """Axis-aligned box, center/size normalized to [0, 1] of the image."""

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def validate(self):
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValidationError(f"box center ({self.cx}, {self.cy}) outside unit square")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ValidationError(f"box size ({self.w}, {self.h}) must be in (0, 1]")
        return self

    def clamped(self) -> "BBox":
        """Clamp the box extent to the unit square, preserving class."""
        x0 = max(0.0, self.cx - self.w / 2)
        x1 = min(1.0, self.cx + self.w / 2)
        y0 = max(0.0, self.cy - self.h / 2)
        y1 = min(1.0, self.cy + self.h / 2)
        return BBox(self.class_id, (x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    def corners(self):
        """(x0, y0, x1, y1) in normalized image coordinates."""
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)


def pixel_to_normalized(cam: CameraModel, u, v):
    """Pixel coordinates -> camera-normalized coordinates."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    y = (v - cam.cy) / cam.fy
    x = (u - cam.cx - cam.skew * y) / cam.fx
    return x, y


def normalized_to_pixel(cam: CameraModel, x, y):
    """Camera-normalized coordinates -> pixel coordinates."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return cam.fx * x + cam.skew * y + cam.cx, cam.fy * y + cam.cy


def _radial(cam: CameraModel, x, y):
    r2 = x * x + y * y
    return 1.0 + cam.k1 * r2 + cam.k2 * r2 * r2 + cam.k3 * r2 * r2 * r2


def _tangential(cam: CameraModel, x, y):
    r2 = x * x + y * y
    tx = 2.0 * cam.p1 * x * y + cam.p2 * (r2 + 2.0 * x * x)
    ty = cam.p1 * (r2 + 2.0 * y * y) + 2.0 * cam.p2 * x * y
    return tx, ty


def distort_point(cam: CameraModel, x, y):
    """Apply the forward distortion model to normalized coordinates.

    Identity when all coefficients are zero. Accepts scalars or arrays.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rad = _radial(cam, x, y)
    tx, ty = _tangential(cam, x, y)
    return x * rad + tx, y * rad + ty


def _undistort_raw(cam: CameraModel, xd, yd):
    """Fixed-point inverse of `distort_point`; returns (x, y, residual)."""
    xd = np.asarray(xd, dtype=np.float64)
    yd = np.asarray(yd, dtype=np.float64)
    x, y = xd.copy(), yd.copy()
    for _ in range(UNDISTORT_MAX_ITER):
        tx, ty = _tangential(cam, x, y)
        rad = _radial(cam, x, y)
        x_new = (xd - tx) / rad
        y_new = (yd - ty) / rad
        shift = np.maximum(np.abs(x_new - x), np.abs(y_new - y))
        x, y = x_new, y_new
        if np.all(shift <= UNDISTORT_TOL):
            break
    bx, by = distort_point(cam, x, y)
    residual = np.maximum(np.abs(bx - xd), np.abs(by - yd))
    return x, y, residual


def undistort_point(cam: CameraModel, xd, yd):
    """Invert the distortion model on normalized coordinates.

    Raises NonConvergenceError when the iteration cannot bring the
    round-trip residual under 1e-6 (extreme coefficients, or a point far
    outside the calibrated field of view).
    """
    x, y, residual = _undistort_raw(cam, xd, yd)
    if np.any(~np.isfinite(residual)) or np.any(residual > UNDISTORT_FAIL_TOL):
        worst = float(np.nanmax(residual))
        raise NonConvergenceError(
            f"inverse distortion residual {worst:.3e} exceeds {UNDISTORT_FAIL_TOL}")
    return x, y


@lru_cache(maxsize=16)
def _source_grid(cam: CameraModel, direction: str):
    """Per-destination-pixel source coordinates for `remap_image`.

    Destination pixels that cannot be inverted (non-converged fixed point)
    are pushed far out of frame so sampling fills them with black.
    """
    us, vs = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    x, y = pixel_to_normalized(cam, us, vs)
    if direction == "distort":
        sx, sy, residual = _undistort_raw(cam, x, y)
        bad = ~np.isfinite(residual) | (residual > UNDISTORT_FAIL_TOL)
        if np.any(bad):
            sx = np.where(bad, -1e9, sx)
            sy = np.where(bad, -1e9, sy)
    else:
        sx, sy = distort_point(cam, x, y)
    su, sv = normalized_to_pixel(cam, sx, sy)
    su.setflags(write=False)
    sv.setflags(write=False)
    return su, sv


def remap_image(img, cam: CameraModel, direction: str):
    """Warp a full image through the distortion model.

    direction="distort" produces the lens-distorted view of an undistorted
    input; "undistort" removes the lens effect. Each destination pixel is
    bilinearly sampled at its inverse-mapped source location; sources
    outside the frame come out black. uint8 input yields uint8 output
    (rounded half-up); float stays float.
    """
    if direction not in ("distort", "undistort"):
        raise ValueError(f"direction must be 'distort' or 'undistort', got {direction!r}")
    img = np.asarray(img)
    if img.shape[0] != cam.height or img.shape[1] != cam.width:
        raise DimensionMismatchError(
            f"image is {img.shape[1]}x{img.shape[0]}, camera expects {cam.width}x{cam.height}")
    if not cam.has_distortion:
        return img.copy()
    su, sv = _source_grid(cam, direction)
    out = bilinear_sample(img, su, sv, fill=0.0)
    if img.dtype == np.uint8:
        return np.clip(round_half_up(out), 0, 255).astype(np.uint8)
    return out.astype(img.dtype, copy=False)


def _boundary_points(box: BBox, n: int):
    """n points traced around the box boundary in normalized image coords."""
    x0, y0, x1, y1 = box.corners()
    per_side = max(n // 4, 2)
    t = np.linspace(0.0, 1.0, per_side, endpoint=False)
    xs = np.concatenate([x0 + (x1 - x0) * t, np.full_like(t, x1),
                         x1 - (x1 - x0) * t, np.full_like(t, x0)])
    ys = np.concatenate([np.full_like(t, y0), y0 + (y1 - y0) * t,
                         np.full_like(t, y1), y1 - (y1 - y0) * t])
    return xs, ys


def remap_bbox(box: BBox, cam: CameraModel, direction: str, n_boundary: int = BBOX_BOUNDARY_SAMPLES):
    """Map a bounding box through the distortion model.

    Samples the box boundary densely, pushes every point through the point
    map for `direction`, and returns the axis-aligned hull clamped to the
    unit square. Boundary sampling (not just corners) matters because
    distortion curves straight edges.
    """
    if direction not in ("distort", "undistort"):
        raise ValueError(f"direction must be 'distort' or 'undistort', got {direction!r}")
    box.validate()
    bx, by = _boundary_points(box, n_boundary)
    u = bx * cam.width
    v = by * cam.height
    x, y = pixel_to_normalized(cam, u, v)
    if direction == "distort":
        mx, my = distort_point(cam, x, y)
    else:
        mx, my = undistort_point(cam, x, y)
    mu, mv = normalized_to_pixel(cam, mx, my)
    nx = mu / cam.width
    ny = mv / cam.height
    hull = BBox(box.class_id,
                (nx.min() + nx.max()) / 2, (ny.min() + ny.max()) / 2,
                nx.max() - nx.min(), ny.max() - ny.min()).clamped()
    if hull.w <= 0.0 or hull.h <= 0.0:
        raise DegenerateBoxError("mapped box hull has zero area")
    return hull


def load_calibration(path) -> CameraModel:
    """Read a camera model from a JSON calibration file.

    Raises ParseError naming the offending field when one is missing or
    non-numeric, and ValidationError when the values break an invariant.
    """
    raw = json.loads(Path(path).read_text())
    fields = {}
    for key in _CALIBRATION_REQUIRED:
        if key not in raw:
            raise ParseError(f"calibration missing required field '{key}'")
        fields[key] = raw[key]
    for key in _CALIBRATION_OPTIONAL:
        fields[key] = raw.get(key, 0.0)
    for key, value in fields.items():
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ParseError(f"calibration field '{key}' is not a number: {value!r}")
    fields["width"] = int(fields["width"])
    fields["height"] = int(fields["height"])
    return CameraModel(**fields)


def save_calibration(cam: CameraModel, path):
    """Write a camera model as JSON; round-trips losslessly."""
    Path(path).write_text(json.dumps(asdict(cam), indent=2, sort_keys=True) + "\n")
