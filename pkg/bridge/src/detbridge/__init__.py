"""detbridge: wrap a detector callable behind a fixed wire protocol.

A harness talks to the bridge either over the child's stdin/stdout
(one JSON object per line) or over HTTP POST /detect. The bridge knows
nothing about scenes or test campaigns; it loads a PNG, runs one
detector callable, and reports labeled boxes.

Two detector modes ship built in: `dummy` returns a fixed fractional
box (for protocol-level integration tests), and `plugin` imports a user
module exposing

    detect(image) -> list of (label, confidence, x_min, y_min, x_max, y_max)

where `image` is an (H, W, 3) uint8 RGB array. Wrapping a real model
is a few lines: decode its outputs into those tuples.
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

__version__ = "0.1.0"

DetectorFn = Callable[[np.ndarray], List[Tuple[str, float, float, float, float, float]]]


@dataclass(frozen=True)
class BridgeConfig:
    """Which detector to serve and how the dummy behaves."""

    mode: str = "dummy"
    plugin_path: Optional[str] = None
    dummy_box: tuple[float, float, float, float] = (0.25, 0.25, 0.75, 0.75)
    dummy_confidence: float = 0.9

    def __post_init__(self):
        if self.mode not in ("dummy", "plugin"):
            raise ValueError(f"mode must be 'dummy' or 'plugin', got {self.mode!r}")
        if self.mode == "plugin" and not self.plugin_path:
            raise ValueError("plugin mode requires plugin_path")
        x0, y0, x1, y1 = self.dummy_box
        if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
            raise ValueError(f"dummy_box must be a fractional box inside [0,1]: {self.dummy_box}")
        if not 0.0 <= self.dummy_confidence <= 1.0:
            raise ValueError(f"dummy_confidence must lie in [0, 1]: {self.dummy_confidence}")


def dummy_detector(config: BridgeConfig) -> DetectorFn:
    """One 'car' box at fixed fractional coordinates of the image."""

    def detect(image: np.ndarray):
        h, w = image.shape[:2]
        x0, y0, x1, y1 = config.dummy_box
        return [("car", config.dummy_confidence, x0 * w, y0 * h, x1 * w, y1 * h)]

    return detect


def load_plugin(plugin_path: str) -> DetectorFn:
    """Import `plugin_path` and return its detect callable."""
    module = importlib.import_module(plugin_path)
    detect = getattr(module, "detect", None)
    if not callable(detect):
        raise ValueError(f"plugin module {plugin_path!r} does not expose a detect() callable")
    return detect


def build_detector(config: BridgeConfig) -> DetectorFn:
    if config.mode == "dummy":
        return dummy_detector(config)
    return load_plugin(config.plugin_path)
