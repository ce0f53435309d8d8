"""Detector and generator contracts plus desk-scale toy implementations.

Adapters move gradients by explicit methods instead of a shared autodiff
graph, so real models can attach from any framework or process:

  * DetectorAdapter:  detect(image) -> [Detection], stop_confidence(image),
    and, when supports_gradients, input_gradient(image, upstream) giving
    d stop_confidence / d pixels scaled by the upstream scalar.
  * GeneratorAdapter: generate(z) -> patch in [0, 1] and, when
    supports_gradients, latent_gradient(z, patch_grad).

Images at this boundary are float arrays in [0, 1], shaped (H, W, 3).

External detectors speak newline-delimited JSON over stdio or a local TCP
socket:

    {"op": "probe"}
        -> {"supports_gradients": bool, "width": int, "height": int,
            "class_map": {"14": "stop"}}
    {"op": "detect", "image": "<base64 PNG>"}
        -> {"detections": [{"class_id": 14, "confidence": 0.93,
                            "bbox": [cx, cy, w, h]}]}
    {"op": "grad", "image": "<base64 PNG>", "upstream": 1.0}
        -> {"gradient": "<base64 little-endian float32>", "shape": [h, w, c]}

Any reply may instead be {"error": "<message>"}.
"""

import base64
import io
import json
import socket
import subprocess
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np
from PIL import Image

from .camera import BBox
from .imageops import to_float, to_uint8

STOP_CLASS_ID = 14


class ResolutionMismatchError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class NoGradientSupportError(RuntimeError):
    pass


class UnreachableError(RuntimeError):
    """The external detector process or socket cannot be reached."""


class ProtocolError(RuntimeError):
    """The external detector replied with something other than the protocol."""


@dataclass
class Detection:
    bbox: BBox
    class_id: int
    confidence: float


@runtime_checkable
class DetectorAdapter(Protocol):
    supports_gradients: bool

    def detect(self, image) -> list: ...

    def stop_confidence(self, image) -> float: ...

    def input_gradient(self, image, upstream: float): ...


@runtime_checkable
class GeneratorAdapter(Protocol):
    latent_dim: int
    supports_gradients: bool

    def generate(self, z): ...

    def latent_gradient(self, z, patch_grad): ...


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class ToyDetector:
    """Shallow differentiable stand-in for a real detector.

    Features are the per-cell means of (R - (G + B)/2) over a grid x grid
    tiling; the STOP confidence is sigmoid(w . features + b). One pooled
    layer plus an affine map keeps every gradient hand-checkable.
    """

    supports_gradients = True

    def __init__(self, width, height, grid=8, weights=None, bias=0.0,
                 stop_class_id=STOP_CLASS_ID, detect_threshold=0.0):
        if width % grid or height % grid:
            raise ValueError(f"resolution {width}x{height} must divide into a {grid}x{grid} grid")
        self.width = int(width)
        self.height = int(height)
        self.grid = int(grid)
        self.stop_class_id = int(stop_class_id)
        self.detect_threshold = float(detect_threshold)
        if weights is None:
            weights = np.zeros(grid * grid)
        self.weights = np.asarray(weights, dtype=np.float64).reshape(grid * grid)
        self.bias = float(bias)

    @classmethod
    def default(cls, width, height, grid=8, seed=0):
        rng = np.random.default_rng(seed)
        w = rng.normal(0.0, 1.0, grid * grid)
        return cls(width, height, grid=grid, weights=w, bias=0.0)

    def _check(self, image):
        image = np.asarray(image, dtype=np.float64)
        if image.shape != (self.height, self.width, 3):
            raise ResolutionMismatchError(
                f"image shape {image.shape} does not match "
                f"({self.height}, {self.width}, 3)")
        return image

    def features(self, image):
        image = self._check(image)
        signal = image[..., 0] - 0.5 * (image[..., 1] + image[..., 2])
        g = self.grid
        cells = signal.reshape(g, self.height // g, g, self.width // g)
        return cells.mean(axis=(1, 3)).reshape(-1)

    def stop_confidence(self, image) -> float:
        return float(_sigmoid(self.weights @ self.features(image) + self.bias))

    def stop_confidence_batch(self, images):
        """Vectorized scoring for (N, H, W, 3) stacks."""
        images = np.asarray(images, dtype=np.float64)
        signal = images[..., 0] - 0.5 * (images[..., 1] + images[..., 2])
        g = self.grid
        cells = signal.reshape(len(images), g, self.height // g, g, self.width // g)
        feats = cells.mean(axis=(2, 4)).reshape(len(images), -1)
        return _sigmoid(feats @ self.weights + self.bias)

    def detect(self, image):
        conf = self.stop_confidence(image)
        if conf < self.detect_threshold:
            return []
        box = BBox(self.stop_class_id, 0.5, 0.5, 0.5, 0.5)
        return [Detection(box, self.stop_class_id, conf)]

    def input_gradient(self, image, upstream: float):
        image = self._check(image)
        feats = self.features(image)
        s = _sigmoid(self.weights @ feats + self.bias)
        dfeat = upstream * s * (1.0 - s) * self.weights
        g = self.grid
        ch, cw = self.height // g, self.width // g
        per_cell = dfeat.reshape(g, g) / (ch * cw)
        spread = np.repeat(np.repeat(per_cell, ch, axis=0), cw, axis=1)
        grad = np.empty((self.height, self.width, 3))
        grad[..., 0] = spread
        grad[..., 1] = -0.5 * spread
        grad[..., 2] = -0.5 * spread
        return grad

    def fit(self, positives, negatives, iters=300, lr=1.0):
        """Logistic-regression fit of (weights, bias) on labelled images."""
        x = np.stack([self.features(img) for img in positives]
                     + [self.features(img) for img in negatives])
        y = np.concatenate([np.ones(len(positives)), np.zeros(len(negatives))])
        w = self.weights.copy()
        b = self.bias
        for _ in range(iters):
            p = _sigmoid(x @ w + b)
            err = p - y
            w -= lr * (x.T @ err) / len(y)
            b -= lr * err.mean()
        self.weights = w
        self.bias = float(b)
        return self


class ToyGenerator:
    """Linear generator: patch = reshape(B @ z). The Jacobian is exactly B,
    so the adjoint is exact; output range is unconstrained by design."""

    supports_gradients = True

    def __init__(self, patch_side=32, latent_dim=16, seed=0, basis=None):
        self.latent_dim = int(latent_dim)
        self.patch_shape = (patch_side, patch_side, 3)
        n = patch_side * patch_side * 3
        if basis is None:
            rng = np.random.default_rng(seed)
            basis = rng.normal(0.0, 1.0, (n, self.latent_dim)) / np.sqrt(self.latent_dim)
        self.basis = np.asarray(basis, dtype=np.float64).reshape(n, self.latent_dim)

    def _check(self, z):
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if z.shape[0] != self.latent_dim:
            raise DimensionMismatchError(
                f"latent has {z.shape[0]} entries, generator expects {self.latent_dim}")
        return z

    def generate(self, z):
        z = self._check(z)
        return (self.basis @ z).reshape(self.patch_shape)

    def latent_gradient(self, z, patch_grad):
        self._check(z)
        patch_grad = np.asarray(patch_grad, dtype=np.float64).reshape(-1)
        if patch_grad.shape[0] != self.basis.shape[0]:
            raise DimensionMismatchError(
                f"patch gradient has {patch_grad.shape[0]} entries, expected {self.basis.shape[0]}")
        return self.basis.T @ patch_grad


class ToyGeneratorSigmoid(ToyGenerator):
    """Sigmoid-squashed variant; output always lands in [0, 1]."""

    def generate(self, z):
        z = self._check(z)
        patch = _sigmoid(self.basis @ z).reshape(self.patch_shape)
        assert patch.min() >= 0.0 and patch.max() <= 1.0
        return patch

    def latent_gradient(self, z, patch_grad):
        z = self._check(z)
        patch_grad = np.asarray(patch_grad, dtype=np.float64).reshape(-1)
        s = _sigmoid(self.basis @ z)
        return self.basis.T @ (patch_grad * s * (1.0 - s))


def encode_image_b64(image) -> str:
    """Float [0,1] or uint8 image -> base64 PNG string."""
    buf = io.BytesIO()
    Image.fromarray(to_uint8(image)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image_b64(data: str):
    """base64 PNG string -> float image in [0, 1]."""
    raw = base64.b64decode(data.encode("ascii"))
    return to_float(np.asarray(Image.open(io.BytesIO(raw)).convert("RGB")))


class _StdioTransport:
    def __init__(self, command):
        try:
            self.proc = subprocess.Popen(
                command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
        except OSError as exc:
            raise UnreachableError(f"cannot start detector process {command!r}: {exc}") from exc

    def round_trip(self, line: str) -> str:
        if self.proc.poll() is not None:
            raise UnreachableError("detector process has exited")
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
            reply = self.proc.stdout.readline()
        except OSError as exc:
            raise UnreachableError(f"detector process pipe broke: {exc}") from exc
        if not reply:
            raise UnreachableError("detector process closed its output")
        return reply

    def close(self):
        if self.proc.poll() is None:
            self.proc.stdin.close()
            self.proc.wait(timeout=5)


class _SocketTransport:
    def __init__(self, host, port):
        try:
            self.sock = socket.create_connection((host, port), timeout=10)
        except OSError as exc:
            raise UnreachableError(f"cannot connect to {host}:{port}: {exc}") from exc
        self.reader = self.sock.makefile("r")
        self.writer = self.sock.makefile("w")

    def round_trip(self, line: str) -> str:
        try:
            self.writer.write(line + "\n")
            self.writer.flush()
            reply = self.reader.readline()
        except OSError as exc:
            raise UnreachableError(f"detector socket broke: {exc}") from exc
        if not reply:
            raise UnreachableError("detector socket closed")
        return reply

    def close(self):
        self.sock.close()


class ExternalDetector:
    """Client side of the wire protocol; satisfies DetectorAdapter."""

    def __init__(self, transport):
        self._transport = transport
        self.capabilities = self.probe()
        self.supports_gradients = bool(self.capabilities.get("supports_gradients", False))
        self.stop_class_id = STOP_CLASS_ID

    @classmethod
    def from_command(cls, command):
        return cls(_StdioTransport(command))

    @classmethod
    def from_socket(cls, host, port):
        return cls(_SocketTransport(host, port))

    def _call(self, request: dict) -> dict:
        reply_line = self._transport.round_trip(json.dumps(request))
        try:
            reply = json.loads(reply_line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"reply is not JSON: {reply_line!r}") from exc
        if not isinstance(reply, dict):
            raise ProtocolError(f"reply is not an object: {reply!r}")
        if "error" in reply:
            raise ProtocolError(f"detector error: {reply['error']}")
        return reply

    def probe(self) -> dict:
        reply = self._call({"op": "probe"})
        for key in ("supports_gradients", "width", "height", "class_map"):
            if key not in reply:
                raise ProtocolError(f"probe reply missing '{key}': {reply}")
        return reply

    def detect(self, image):
        reply = self._call({"op": "detect", "image": encode_image_b64(image)})
        if "detections" not in reply or not isinstance(reply["detections"], list):
            raise ProtocolError(f"detect reply missing detections list: {reply}")
        out = []
        try:
            for d in reply["detections"]:
                cx, cy, w, h = d["bbox"]
                out.append(Detection(BBox(int(d["class_id"]), cx, cy, w, h),
                                     int(d["class_id"]), float(d["confidence"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed detection entry: {exc}") from exc
        return out

    def stop_confidence(self, image) -> float:
        stops = [d.confidence for d in self.detect(image) if d.class_id == self.stop_class_id]
        return max(stops) if stops else 0.0

    def input_gradient(self, image, upstream: float):
        if not self.supports_gradients:
            raise NoGradientSupportError("external detector does not expose gradients")
        reply = self._call({"op": "grad", "image": encode_image_b64(image),
                            "upstream": float(upstream)})
        try:
            raw = base64.b64decode(reply["gradient"].encode("ascii"))
            shape = tuple(int(s) for s in reply["shape"])
            return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed gradient reply: {exc}") from exc

    def close(self):
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
