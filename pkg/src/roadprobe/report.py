"""Visual reports over a finished campaign store.

Emits the per-trial CSV (car center, IOU, confidence, score, point),
the overlay PNG with one marker per trial superimposed on the scene
background (marker size encodes IOU, color encodes confidence), and an
aggregated pixel-grid CSV. Every report is a pure function of the
store and scene: re-running writes byte-identical files.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Union

import numpy as np

from .errors import SceneMismatch
from .harness import ResultStore
from .render import SceneConfig, png_bytes

MARKER_R_MIN = 2.0
MARKER_R_MAX = 10.0
COLOR_LOW = (0, 0, 255)    # confidence 0: blue
COLOR_HIGH = (255, 0, 0)   # confidence 1: red


def _rows(store: ResultStore):
    for record in store.records:
        if record.error is not None:
            continue
        cx, cy = record.gt_box.center
        yield record, cx, cy


def export_csv(store: ResultStore, path: Union[str, Path]) -> int:
    """Write one row per non-errored trial; returns the row count."""
    header = "trial,center_x,center_y,iou,confidence,score"
    n_dims = len(store.records[0].point) if store.records else len(store.metadata.get("space", []))
    header += "".join(f",m{j}" for j in range(n_dims))
    lines = [header]
    for record, cx, cy in _rows(store):
        cells = [str(record.index)] + [f"{v:.6f}" for v in
                                       (cx, cy, record.iou, record.confidence, record.score)]
        cells += [f"{c:.6f}" for c in record.point]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(lines) - 1


def _check_scene(store: ResultStore, scene: SceneConfig):
    meta = store.metadata.get("scene", {})
    bg_hash = hashlib.sha256(scene.background.tobytes()).hexdigest()
    if meta.get("background_sha256") is not None and meta["background_sha256"] != bg_hash:
        raise SceneMismatch("store was recorded against a different background")
    if meta.get("id") is not None and meta["id"] != scene.scene_id:
        raise SceneMismatch(f"store scene id {meta['id']!r} != {scene.scene_id!r}")


def render_overlay(store: ResultStore, scene: SceneConfig, path: Union[str, Path]) -> None:
    """Superimpose one filled circle per trial on the background.

    Radius scales linearly with IOU from MARKER_R_MIN to MARKER_R_MAX;
    fill color interpolates blue (confidence 0) to red (confidence 1).
    Markers are drawn in trial order. An empty store reproduces the
    background byte for byte.
    """
    _check_scene(store, scene)
    canvas = scene.background.copy()
    height, width = canvas.shape[:2]
    for record, cx, cy in _rows(store):
        radius = MARKER_R_MIN + record.iou * (MARKER_R_MAX - MARKER_R_MIN)
        color = np.array([round(lo + record.confidence * (hi - lo))
                          for lo, hi in zip(COLOR_LOW, COLOR_HIGH)], dtype=np.uint8)
        x0 = max(int(np.floor(cx - radius)), 0)
        x1 = min(int(np.ceil(cx + radius)) + 1, width)
        y0 = max(int(np.floor(cy - radius)), 0)
        y1 = min(int(np.ceil(cy + radius)) + 1, height)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius ** 2
        canvas[y0:y1, x0:x1][mask] = color
    Path(path).write_bytes(png_bytes(canvas))


def export_heatmap_grid(store: ResultStore, scene: SceneConfig, gx: int, gy: int,
                        path: Union[str, Path]) -> None:
    """Aggregate trials over a gx-by-gy grid in image pixel space.

    Per cell: trial count, mean IOU, mean confidence, min score. Rows
    come out ordered by (cell_y, cell_x); empty cells keep count 0 and
    empty aggregate fields.
    """
    _check_scene(store, scene)
    width, height = scene.width, scene.height
    counts = np.zeros((gy, gx), dtype=np.int64)
    iou_sum = np.zeros((gy, gx))
    conf_sum = np.zeros((gy, gx))
    score_min = np.full((gy, gx), np.inf)
    for record, cx, cy in _rows(store):
        ix = min(int(cx / width * gx), gx - 1)
        iy = min(int(cy / height * gy), gy - 1)
        counts[iy, ix] += 1
        iou_sum[iy, ix] += record.iou
        conf_sum[iy, ix] += record.confidence
        score_min[iy, ix] = min(score_min[iy, ix], record.score)
    lines = ["cell_x,cell_y,count,mean_iou,mean_confidence,min_score"]
    for iy in range(gy):
        for ix in range(gx):
            c = counts[iy, ix]
            if c:
                lines.append(f"{ix},{iy},{c},{iou_sum[iy, ix] / c:.6f},"
                             f"{conf_sum[iy, ix] / c:.6f},{score_min[iy, ix]:.6f}")
            else:
                lines.append(f"{ix},{iy},0,,,")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
