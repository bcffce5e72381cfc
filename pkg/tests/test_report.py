import numpy as np
import pytest

from conftest import campaign_tree, make_scene
from roadprobe.config import campaign_from_dict
from roadprobe.errors import SceneMismatch
from roadprobe.harness import ResultStore, build_metadata, run_campaign
from roadprobe.report import export_csv, export_heatmap_grid, render_overlay
from roadprobe.render import load_rgb


def small_store(tmp_path, **tree_over):
    tree = campaign_tree(tmp_path, **tree_over)
    cfg = campaign_from_dict(tree)
    store = run_campaign(cfg.scene, cfg.space, cfg.sampler_spec, cfg.endpoint, cfg.halt,
                         tmp_path / "out", score=cfg.score, raw_config=cfg.raw)
    return store, cfg


def test_export_csv_rows_and_format(tmp_path):
    store, cfg = small_store(tmp_path, halt={"max_trials": 7})
    rows = export_csv(store, tmp_path / "report.csv")
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert rows == 7
    assert lines[0] == "trial,center_x,center_y,iou,confidence,score,m0,m1"
    assert len(lines) == 8
    first = lines[1].split(",")
    assert first[0] == "0"
    cx, cy = store.records[0].gt_box.center
    assert first[1] == f"{cx:.6f}"
    assert first[5] == f"{store.records[0].score:.6f}"
    assert first[6] == f"{store.records[0].point[0]:.6f}"


def test_export_csv_skips_errored_trials(tmp_path, monkeypatch):
    import roadprobe.harness as harness
    from roadprobe.errors import ProtocolError
    from roadprobe.metrics import Detection, DetectionSet

    class Flaky:
        def __init__(self):
            self.n = 0

        def detect(self, sample, image_path=None):
            self.n += 1
            if self.n == 2:
                raise ProtocolError("boom", payload=b"")
            return DetectionSet((Detection("car", 0.9, sample.gt_box),))

        def close(self):
            pass

    class Guard:
        def __enter__(self):
            return Flaky()

        def __exit__(self, *exc):
            return False

    monkeypatch.setattr(harness, "open_session", lambda e, s: Guard())
    store, _ = small_store(tmp_path, halt={"max_trials": 5})
    rows = export_csv(store, tmp_path / "r.csv")
    assert rows == 4
    errored = sum(1 for r in store.records if r.error is not None)
    assert rows + errored == len(store.records)


def test_overlay_empty_store_is_background_bytes(tmp_path):
    tree = campaign_tree(tmp_path)
    cfg = campaign_from_dict(tree)
    store = ResultStore.create(tmp_path / "out", build_metadata(
        cfg.scene, cfg.space, cfg.sampler_spec, cfg.endpoint, cfg.halt, cfg.score,
        raw_config=cfg.raw))
    store.finalize("max_trials")
    render_overlay(store, cfg.scene, tmp_path / "overlay.png")
    assert (tmp_path / "overlay.png").read_bytes() == (tmp_path / "background.png").read_bytes()
    # and the CSV projection of an empty store is just the header
    assert export_csv(store, tmp_path / "empty.csv") == 0
    assert (tmp_path / "empty.csv").read_text().splitlines() == [
        "trial,center_x,center_y,iou,confidence,score,m0,m1"]


def test_overlay_marker_geometry_and_color(tmp_path):
    store, cfg = small_store(tmp_path, halt={"max_trials": 1})
    record = store.records[0]
    assert record.iou == 1.0 and record.confidence == 1.0
    render_overlay(store, cfg.scene, tmp_path / "overlay.png")
    img = load_rgb(tmp_path / "overlay.png")
    cx, cy = record.gt_box.center
    # confidence 1, iou 1: red marker of radius 10
    assert tuple(img[int(cy), int(cx)]) == (255, 0, 0)
    assert tuple(img[int(cy), int(cx) - 9]) == (255, 0, 0)
    bg = cfg.scene.background
    far = (int(cy) - 14, int(cx) - 14)
    assert tuple(img[far]) == tuple(bg[far])
    assert img.shape == bg.shape


def test_overlay_blue_marker_for_missed_car(tmp_path):
    store, cfg = small_store(
        tmp_path,
        detector={"kind": "mock", "mock": {"blind_boxes": [[[0.0, 0.0], [1.0, 1.0]]]}},
        halt={"max_trials": 1})
    record = store.records[0]
    assert record.confidence == 0.0 and record.iou == 0.0
    render_overlay(store, cfg.scene, tmp_path / "overlay.png")
    img = load_rgb(tmp_path / "overlay.png")
    cx, cy = record.gt_box.center
    assert tuple(img[int(cy), int(cx)]) == (0, 0, 255)  # radius 2 blue dot
    assert tuple(img[int(cy) + 4, int(cx)]) == tuple(cfg.scene.background[int(cy) + 4, int(cx)])


def test_overlay_scene_mismatch(tmp_path):
    store, cfg = small_store(tmp_path, halt={"max_trials": 1})
    other = make_scene(width=320, height=180, sprite_w=32, sprite_h=24,
                       vanish=(160.0, 60.0), y_near=160.0, x_left_near=30.0,
                       x_right_near=290.0, w_near=64.0, t_far=0.9, scene_id="other")
    with pytest.raises(SceneMismatch):
        render_overlay(store, other, tmp_path / "overlay.png")


def test_reports_are_deterministic(tmp_path):
    store, cfg = small_store(tmp_path, halt={"max_trials": 6})
    export_csv(store, tmp_path / "a.csv")
    export_csv(store, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    render_overlay(store, cfg.scene, tmp_path / "a.png")
    render_overlay(store, cfg.scene, tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    export_heatmap_grid(store, cfg.scene, 4, 3, tmp_path / "a.grid.csv")
    export_heatmap_grid(store, cfg.scene, 4, 3, tmp_path / "b.grid.csv")
    assert (tmp_path / "a.grid.csv").read_bytes() == (tmp_path / "b.grid.csv").read_bytes()


def test_heatmap_single_cell_matches_store_means(tmp_path):
    store, cfg = small_store(
        tmp_path,
        detector={"kind": "mock", "mock": {"base_confidence": 0.9, "depth_decay": 0.5}},
        halt={"max_trials": 9})
    export_heatmap_grid(store, cfg.scene, 1, 1, tmp_path / "grid.csv")
    lines = (tmp_path / "grid.csv").read_text().splitlines()
    assert lines[0] == "cell_x,cell_y,count,mean_iou,mean_confidence,min_score"
    assert len(lines) == 2
    cells = lines[1].split(",")
    assert cells[:3] == ["0", "0", "9"]
    assert float(cells[3]) == pytest.approx(np.mean([r.iou for r in store.records]), abs=1e-6)
    assert float(cells[4]) == pytest.approx(np.mean([r.confidence for r in store.records]), abs=1e-6)
    assert float(cells[5]) == pytest.approx(min(r.score for r in store.records), abs=1e-6)


def test_heatmap_surfaces_planted_blind_spot(tmp_path):
    """The grid aggregate localizes the blind region in image space."""
    from roadprobe.render import place_car

    theta = 0.5
    blind = [[0.35, 0.0], [0.65, 0.3]]  # mid-road, shallow depth
    store, cfg = small_store(
        tmp_path,
        detector={"kind": "mock",
                  "mock": {"base_confidence": 1.0, "blind_boxes": [blind]}},
        halt={"max_trials": 80})
    gx = gy = 5
    export_heatmap_grid(store, cfg.scene, gx, gy, tmp_path / "grid.csv")
    rows = {}
    for line in (tmp_path / "grid.csv").read_text().splitlines()[1:]:
        cx, cy, count, _, _, min_score = line.split(",")
        rows[(int(cx), int(cy))] = (int(count), float(min_score) if min_score else None)

    # locate the blind spot's image-space cell from the placement geometry
    p = place_car(cfg.scene, 0.5, 0.15)
    center_x = p.bottom_center_x
    center_y = p.bottom_center_y - p.height / 2.0
    blind_cell = (min(int(center_x / cfg.scene.width * gx), gx - 1),
                  min(int(center_y / cfg.scene.height * gy), gy - 1))
    count, min_score = rows[blind_cell]
    assert count > 0 and min_score < theta

    # cells from trials at far lateral positions stay healthy
    p_far = place_car(cfg.scene, 0.0, 0.0)
    far_cell = (max(int(p_far.bottom_center_x / cfg.scene.width * gx), 0),
                min(int((p_far.bottom_center_y - p_far.height / 2) / cfg.scene.height * gy),
                    gy - 1))
    count, min_score = rows[far_cell]
    assert count > 0 and min_score >= theta


def test_heatmap_empty_cells_emitted(tmp_path):
    store, cfg = small_store(tmp_path, halt={"max_trials": 2})
    export_heatmap_grid(store, cfg.scene, 4, 4, tmp_path / "grid.csv")
    lines = (tmp_path / "grid.csv").read_text().splitlines()[1:]
    assert len(lines) == 16
    empties = [l for l in lines if l.split(",")[2] == "0"]
    assert empties and all(l.endswith(",,,") for l in empties)
    total = sum(int(l.split(",")[2]) for l in lines)
    assert total == 2
