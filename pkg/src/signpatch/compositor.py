"""Composite dataset generation: paste sign crops onto undistorted platform
backgrounds with randomized position/scale, brightness matching, camera
re-distortion and label emission.

Output layout (per dataset directory):
    images/<id>.png
    labels/<id>.txt      one "class_id cx cy w h" line, 6-decimal fixed point
    manifest.json        [{id, seed, sign_source, background_source,
                           brightness_ratio, scale, class_id}, ...]
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import camera
from .camera import BBox, CameraModel
from .imageops import bilinear_resize, round_half_up

DARK_RETRY_LIMIT = 10


class EmptyImageError(ValueError):
    pass


class EmptyPoolError(ValueError):
    pass


class ZeroBrightnessError(ValueError):
    pass


class ConfigInfeasibleError(ValueError):
    """Scale plus margins cannot fit the frame."""


class TooDarkError(RuntimeError):
    """A sample stayed below the darkness threshold after all retries."""


class InsufficientSourcesError(ValueError):
    """A class has a positive target count but no sign instances."""


def mean_rgb(img) -> float:
    """Scalar mean over all pixels and channels, in [0, 255]."""
    img = np.asarray(img)
    if img.size == 0:
        raise EmptyImageError("cannot take the mean of an empty image")
    return float(np.mean(img, dtype=np.float64))


@dataclass
class SignInstance:
    pixels: np.ndarray  # uint8 RGB crop
    class_id: int
    source_id: str
    mean_rgb: float

    @classmethod
    def from_pixels(cls, pixels, class_id, source_id):
        pixels = np.asarray(pixels, dtype=np.uint8)
        return cls(pixels, class_id, source_id, mean_rgb(pixels))

    def validate(self):
        if abs(self.mean_rgb - mean_rgb(self.pixels)) > 1e-9:
            raise ValueError(f"stored mean_rgb for sign '{self.source_id}' is stale")
        return self


@dataclass
class Background:
    pixels: np.ndarray  # uint8 RGB frame at platform resolution
    source_id: str
    mean_rgb: float
    undistorted: bool = False

    @classmethod
    def from_pixels(cls, pixels, source_id, undistorted=False):
        pixels = np.asarray(pixels, dtype=np.uint8)
        return cls(pixels, source_id, mean_rgb(pixels), undistorted)


@dataclass
class CompositeConfig:
    """Knobs for sample synthesis. Scale is a fraction of frame height,
    margin a fraction of each frame dimension kept clear on every side."""

    scale_min: float = 0.05
    scale_max: float = 0.4
    margin: float = 0.02
    dark_threshold: float = 25.0
    class_targets: dict = field(default_factory=dict)
    seed: int = 0

    def validate(self):
        if not (0.0 < self.scale_min <= self.scale_max < 1.0):
            raise ValueError(
                f"need 0 < scale_min <= scale_max < 1, got [{self.scale_min}, {self.scale_max}]")
        if not (0.0 <= self.dark_threshold <= 255.0):
            raise ValueError(f"dark_threshold must be in [0, 255], got {self.dark_threshold}")
        return self


@dataclass
class Provenance:
    seed: int
    sign_source: str
    background_source: str
    scale: float
    paste_x: int
    paste_y: int
    paste_w: int
    paste_h: int
    brightness_ratio: float
    reused: bool
    dark_retries: int


@dataclass
class CompositeSample:
    image: np.ndarray
    label: BBox
    provenance: Provenance


def select_background(sign: SignInstance, pool) -> Background:
    """Background whose mean RGB is closest to the sign's; ties go to the
    lowest pool index."""
    pool = list(pool)
    if not pool:
        raise EmptyPoolError("background pool is empty")
    gaps = [abs(bg.mean_rgb - sign.mean_rgb) for bg in pool]
    return pool[int(np.argmin(gaps))]


def rescale_brightness(sign: SignInstance, bg: Background):
    """Multiply the sign by the background/sign mean-RGB ratio, round
    half-up, clamp to [0, 255]."""
    if sign.mean_rgb <= 0.0:
        raise ZeroBrightnessError(f"sign '{sign.source_id}' has zero mean RGB")
    ratio = bg.mean_rgb / sign.mean_rgb
    scaled = round_half_up(sign.pixels.astype(np.float64) * ratio)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def is_too_dark(img, dark_threshold: float) -> bool:
    """True iff the image mean RGB is strictly below the threshold."""
    return mean_rgb(img) < dark_threshold


def _resized_sign_shape(sign_pixels, scale, frame_h):
    sh, sw = sign_pixels.shape[:2]
    h_px = int(round_half_up(scale * frame_h))
    w_px = int(round_half_up(h_px * sw / sh))
    return h_px, w_px


def paste_sign(bg: Background, sign_pixels, rng, cfg: CompositeConfig,
               scale=None, position=None):
    """Paste a sign crop onto the background at a drawn scale and position.

    Scale is drawn uniformly from [scale_min, scale_max] of the frame
    height (aspect preserved); the top-left corner is drawn uniformly over
    integer positions keeping the crop inside the margins. Pass `scale` /
    `position` (top-left pixel) to pin either for tests.

    Returns (composite image, tight BBox in normalized coordinates).
    """
    if not bg.undistorted:
        raise ValueError(f"background '{bg.source_id}' must be undistorted before compositing")
    frame = bg.pixels
    fh, fw = frame.shape[:2]
    if scale is None:
        scale = float(rng.uniform(cfg.scale_min, cfg.scale_max))
    h_px, w_px = _resized_sign_shape(sign_pixels, scale, fh)
    mx = int(round_half_up(cfg.margin * fw))
    my = int(round_half_up(cfg.margin * fh))
    x_lo, x_hi = mx, fw - mx - w_px
    y_lo, y_hi = my, fh - my - h_px
    if x_hi < x_lo or y_hi < y_lo or h_px < 1 or w_px < 1:
        raise ConfigInfeasibleError(
            f"sign of {w_px}x{h_px} px cannot fit a {fw}x{fh} frame with margin {cfg.margin}")
    if position is None:
        x0 = int(rng.integers(x_lo, x_hi + 1))
        y0 = int(rng.integers(y_lo, y_hi + 1))
    else:
        x0, y0 = position
    resized = np.clip(round_half_up(bilinear_resize(sign_pixels, h_px, w_px)), 0, 255)
    out = frame.copy()
    out[y0:y0 + h_px, x0:x0 + w_px] = resized.astype(np.uint8)
    box = BBox(0, (x0 + w_px / 2) / fw, (y0 + h_px / 2) / fh, w_px / fw, h_px / fh)
    return out, box, (scale, x0, y0, w_px, h_px)


def generate_sample(sign: SignInstance, pool, cam: CameraModel,
                    cfg: CompositeConfig, seed: int, reused: bool = False) -> CompositeSample:
    """One composite: background choice, optional brightness matching for
    reused signs, paste, re-distortion, label remap and darkness check.

    Too-dark results are retried with a derived seed up to 10 times before
    raising TooDarkError. Fully determined by (inputs, seed).
    """
    cfg.validate()
    bg = select_background(sign, pool)
    pixels = rescale_brightness(sign, bg) if reused else sign.pixels
    ratio = bg.mean_rgb / sign.mean_rgb if reused else 1.0

    for retry in range(DARK_RETRY_LIMIT + 1):
        draw_seed = (seed + retry) & 0xFFFFFFFFFFFFFFFF
        rng = np.random.default_rng(draw_seed)
        pasted, box, (scale, x0, y0, w_px, h_px) = paste_sign(bg, pixels, rng, cfg)
        box.class_id = sign.class_id
        image = camera.remap_image(pasted, cam, "distort")
        label = camera.remap_bbox(box, cam, "distort")
        if not is_too_dark(image, cfg.dark_threshold):
            prov = Provenance(draw_seed, sign.source_id, bg.source_id, scale,
                              x0, y0, w_px, h_px, ratio, reused, retry)
            return CompositeSample(image, label, prov)
    raise TooDarkError(
        f"sample for sign '{sign.source_id}' stayed below {cfg.dark_threshold} "
        f"mean RGB after {DARK_RETRY_LIMIT} retries")


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


def sample_seed(master_seed: int, index: int) -> int:
    """Stable per-sample seed derived from the master seed and sample index."""
    return _splitmix64((master_seed & 0xFFFFFFFFFFFFFFFF) ^ _splitmix64(index))


def label_line(box: BBox) -> str:
    return f"{box.class_id} {box.cx:.6f} {box.cy:.6f} {box.w:.6f} {box.h:.6f}\n"


def generate_dataset(signs, pool, cam: CameraModel, cfg: CompositeConfig, out_dir):
    """Emit a dataset meeting `cfg.class_targets` by cycling sign instances.

    Instances beyond a class's first pass count as reuse and get brightness
    rescaling. Writes images/, labels/ and manifest.json under `out_dir`;
    returns the manifest list. Byte-identical across runs for the same
    inputs and master seed.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)

    by_class = {}
    for sign in signs:
        by_class.setdefault(sign.class_id, []).append(sign)

    manifest = []
    index = 0
    for class_id in sorted(cfg.class_targets):
        target = cfg.class_targets[class_id]
        if target <= 0:
            continue
        instances = by_class.get(class_id, [])
        if not instances:
            raise InsufficientSourcesError(f"no sign instances for class {class_id}")
        for i in range(target):
            sign = instances[i % len(instances)]
            reused = i >= len(instances)
            seed = sample_seed(cfg.seed, index)
            sample = generate_sample(sign, pool, cam, cfg, seed, reused=reused)
            sample_id = f"{index:06d}"
            Image.fromarray(sample.image).save(out_dir / "images" / f"{sample_id}.png")
            (out_dir / "labels" / f"{sample_id}.txt").write_text(label_line(sample.label))
            manifest.append({
                "id": sample_id,
                "seed": sample.provenance.seed,
                "sign_source": sample.provenance.sign_source,
                "background_source": sample.provenance.background_source,
                "brightness_ratio": sample.provenance.brightness_ratio,
                "scale": sample.provenance.scale,
                "class_id": sign.class_id,
            })
            index += 1
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
