"""Loopback detector server: wraps a ToyDetector behind the newline-JSON
wire protocol on stdio so the external-adapter path can be exercised
without a real model.

    python -m signpatch.detector_server --width 640 --height 480
"""

import argparse
import json
import sys

import numpy as np

from .adapters import ToyDetector, decode_image_b64


def build_detector(args) -> ToyDetector:
    weights = None
    bias = args.bias
    if args.weights:
        with open(args.weights) as fh:
            blob = json.load(fh)
        weights = np.asarray(blob["weights"], dtype=np.float64)
        bias = float(blob.get("bias", bias))
    return ToyDetector(args.width, args.height, grid=args.grid,
                       weights=weights, bias=bias)


def handle(detector: ToyDetector, request: dict) -> dict:
    op = request.get("op")
    if op == "probe":
        return {
            "supports_gradients": False,
            "width": detector.width,
            "height": detector.height,
            "class_map": {str(detector.stop_class_id): "stop"},
        }
    if op == "detect":
        image = decode_image_b64(request["image"])
        detections = detector.detect(image)
        return {"detections": [
            {"class_id": d.class_id, "confidence": d.confidence,
             "bbox": [d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h]}
            for d in detections
        ]}
    return {"error": f"unsupported op: {op!r}"}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Serve a toy detector over stdio")
    parser.add_argument("--width", type=int, default=640)
    parser.add_argument("--height", type=int, default=480)
    parser.add_argument("--grid", type=int, default=8)
    parser.add_argument("--weights", help="JSON file with {weights: [...], bias: x}")
    parser.add_argument("--bias", type=float, default=0.0)
    args = parser.parse_args(argv)
    detector = build_detector(args)

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            reply = handle(detector, request)
        except Exception as exc:  # reply with the failure, keep serving
            reply = {"error": str(exc)}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
