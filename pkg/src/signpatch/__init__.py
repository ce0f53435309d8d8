"""Composite traffic-sign dataset generation, latent-space patch
optimization, and camera-simulated distance-sweep evaluation."""

__version__ = "0.1.0"

from .camera import BBox, CameraModel, load_calibration, save_calibration

__all__ = ["BBox", "CameraModel", "load_calibration", "save_calibration", "__version__"]
