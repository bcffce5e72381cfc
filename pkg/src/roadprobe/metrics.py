"""Detection quality metrics: IOU, best-match selection, trial score.

The trial score collapses one detection run against the ground truth
into a single number in [0, 1] that the falsifier minimizes; by default
it is the matched detection's confidence times its IOU, so both missed
boxes and badly localized ones pull the score down.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .errors import ConfigError
from .render import BoundingBox

SCORE_MODES = ("product", "iou", "confidence")


@dataclass(frozen=True)
class Detection:
    """One labeled, scored box returned by a detector."""

    label: str
    confidence: float
    box: BoundingBox

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ConfigError(f"confidence must lie in [0, 1], got {self.confidence}")

    def to_dict(self) -> dict:
        return {"label": self.label, "confidence": self.confidence, "bbox": self.box.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Detection":
        return cls(str(d["label"]), float(d["confidence"]), BoundingBox.from_dict(d["bbox"]))


@dataclass(frozen=True)
class DetectionSet:
    """Possibly empty tuple of detections for one image."""

    detections: tuple[Detection, ...] = ()

    def __len__(self) -> int:
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)

    def to_list(self) -> list[dict]:
        return [d.to_dict() for d in self.detections]

    @classmethod
    def from_list(cls, items: Iterable[dict]) -> "DetectionSet":
        return cls(tuple(Detection.from_dict(d) for d in items))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area; 0 for disjoint boxes."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def match_best(gt: BoundingBox, ds: DetectionSet,
               car_labels: Iterable[str] = ("car",)) -> tuple[Optional[Detection], float]:
    """Best car-labeled detection by IOU against the ground truth.

    Ties break toward higher confidence, then lower index. Returns
    (None, 0.0) when no detection carries a car label. Label comparison
    is case-insensitive.
    """
    labels = {l.lower() for l in car_labels}
    best: Optional[Detection] = None
    best_iou = 0.0
    for det in ds:
        if det.label.lower() not in labels:
            continue
        v = iou(gt, det.box)
        if best is None or v > best_iou or (v == best_iou and det.confidence > best.confidence):
            best = det
            best_iou = v
    return best, best_iou if best is not None else 0.0


def compute_score(gt: BoundingBox, ds: DetectionSet, car_labels: Iterable[str] = ("car",),
                  mode: str = "product") -> float:
    """Scalar trial score in [0, 1]; 0.0 when the car was missed entirely."""
    if mode not in SCORE_MODES:
        raise ConfigError(f"score mode must be one of {SCORE_MODES}, got {mode!r}")
    best, best_iou = match_best(gt, ds, car_labels)
    if best is None:
        return 0.0
    if mode == "iou":
        return best_iou
    if mode == "confidence":
        return best.confidence
    return best.confidence * best_iou
