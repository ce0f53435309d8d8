"""Shared image primitives: dtype conversion, bilinear sampling/resizing.

All images are numpy arrays, (H, W) or (H, W, C).  uint8 images carry
channel values in [0, 255]; float images in [0, 1].  The resize here is a
plain linear operator so the optimizer can use its exact adjoint.
"""

import numpy as np


def round_half_up(x):
    """Round with .5 going up (numpy's default rounds half to even)."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def to_float(img):
    """uint8 [0,255] -> float64 [0,1]; float input is passed through as float64."""
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64)


def to_uint8(img):
    """float [0,1] -> uint8, rounding half-up; uint8 input is returned unchanged."""
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img
    return np.clip(round_half_up(img * 255.0), 0, 255).astype(np.uint8)


def _axis_coords(n_out, n_in):
    """Source coordinates, lower indices and fractions for a 1-D resize axis.

    Half-pixel-center convention with edge clamping; the same-size case maps
    every output pixel exactly onto its source pixel.
    """
    if n_out == n_in:
        src = np.arange(n_out, dtype=np.float64)
    else:
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.minimum(src.astype(np.int64), max(n_in - 2, 0))
    frac = src - lo
    return lo, frac


def bilinear_resize(img, out_h, out_w):
    """Resize (H, W[, C]) to (out_h, out_w[, C]) with bilinear interpolation.

    Linear in the pixel values; `bilinear_resize_adjoint` is its exact
    transpose. Same-shape calls are exact identities.
    """
    img = np.asarray(img, dtype=np.float64)
    in_h, in_w = img.shape[:2]
    y0, fy = _axis_coords(out_h, in_h)
    x0, fx = _axis_coords(out_w, in_w)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)

    wy = fy.reshape(-1, 1)
    wx = fx.reshape(1, -1)
    if img.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]

    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def bilinear_resize_adjoint(grad, in_h, in_w):
    """Transpose of `bilinear_resize`: pull (out_h, out_w[, C]) gradients back
    onto an (in_h, in_w[, C]) grid."""
    grad = np.asarray(grad, dtype=np.float64)
    out_h, out_w = grad.shape[:2]
    y0, fy = _axis_coords(out_h, in_h)
    x0, fx = _axis_coords(out_w, in_w)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)

    wy = fy.reshape(-1, 1)
    wx = fx.reshape(1, -1)
    if grad.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]

    out_shape = (in_h, in_w) + grad.shape[2:]
    acc = np.zeros(out_shape, dtype=np.float64)
    gy0 = np.broadcast_to(y0.reshape(-1, 1), (out_h, out_w))
    gy1 = np.broadcast_to(y1.reshape(-1, 1), (out_h, out_w))
    gx0 = np.broadcast_to(x0.reshape(1, -1), (out_h, out_w))
    gx1 = np.broadcast_to(x1.reshape(1, -1), (out_h, out_w))
    np.add.at(acc, (gy0, gx0), grad * (1 - wy) * (1 - wx))
    np.add.at(acc, (gy0, gx1), grad * (1 - wy) * wx)
    np.add.at(acc, (gy1, gx0), grad * wy * (1 - wx))
    np.add.at(acc, (gy1, gx1), grad * wy * wx)
    return acc


def bilinear_sample(img, xs, ys, fill=0.0):
    """Sample a (H, W[, C]) image at float pixel coordinates.

    Pixel centers sit at integer coordinates. Neighbours falling outside the
    image contribute `fill`. Returns float64 with the shape of xs (plus the
    channel axis when present).
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)

    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0

    out_shape = xs.shape + img.shape[2:]
    acc = np.zeros(out_shape, dtype=np.float64)
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            if img.ndim == 3:
                vals = np.where(valid[..., None], vals, fill)
            else:
                vals = np.where(valid, vals, fill)
            acc += wy * wx * vals
    return acc
