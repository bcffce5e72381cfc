"""Shared fixtures: deterministic synthetic scenes and campaign configs."""

from __future__ import annotations

import numpy as np
import pytest

from roadprobe.render import SceneConfig, save_png


def make_background(width: int, height: int) -> np.ndarray:
    """Deterministic textured gradient; no RNG, stable across runs."""
    yy, xx = np.mgrid[0:height, 0:width]
    r = (xx * 255 // max(width - 1, 1)).astype(np.uint8)
    g = (yy * 255 // max(height - 1, 1)).astype(np.uint8)
    b = ((xx * 7 + yy * 13) % 256).astype(np.uint8)
    return np.stack([r, g, b], axis=2)


def make_sprite(width: int, height: int, margin: int = 0) -> np.ndarray:
    """Opaque mid-gray rectangle, optionally inside a transparent margin."""
    sprite = np.zeros((height, width, 4), dtype=np.uint8)
    sprite[:, :, 0] = 170
    sprite[:, :, 1] = 40
    sprite[:, :, 2] = 40
    if margin:
        sprite[margin:height - margin, margin:width - margin, 3] = 255
    else:
        sprite[:, :, 3] = 255
    return sprite


def make_scene(width=700, height=400, sprite_w=64, sprite_h=48, margin=0, **kwargs) -> SceneConfig:
    defaults = dict(
        vanish=(width / 2.0, height * 0.375),
        y_near=float(height - 50),
        x_left_near=width * 0.1,
        x_right_near=width * 0.9,
        w_near=width * 0.28,
        t_far=0.95,
        scene_id="testscene",
    )
    defaults.update(kwargs)
    return SceneConfig(background=make_background(width, height),
                       sprite=make_sprite(sprite_w, sprite_h, margin=margin), **defaults)


@pytest.fixture
def scene() -> SceneConfig:
    return make_scene()


@pytest.fixture
def small_scene() -> SceneConfig:
    # 320x180 background keeps campaign tests fast
    return make_scene(width=320, height=180, sprite_w=32, sprite_h=24,
                      vanish=(160.0, 60.0), y_near=160.0, x_left_near=30.0,
                      x_right_near=290.0, w_near=64.0, t_far=0.9)


def write_scene_files(dirpath, width=320, height=180, sprite_w=32, sprite_h=24):
    """Persist the small scene's images; returns (background_path, sprite_path)."""
    from PIL import Image

    bg_path = dirpath / "background.png"
    sp_path = dirpath / "car.png"
    save_png(make_background(width, height), bg_path)
    Image.fromarray(make_sprite(sprite_w, sprite_h), "RGBA").save(sp_path, format="PNG")
    return bg_path, sp_path


def campaign_tree(dirpath, **sections) -> dict:
    """Config tree for the small scene with mock detector; sections override."""
    bg_path, sp_path = write_scene_files(dirpath)
    tree = {
        "scene": {
            "background": str(bg_path), "sprite": str(sp_path),
            "vanish": [160.0, 60.0], "y_near": 160.0,
            "x_left_near": 30.0, "x_right_near": 290.0,
            "w_near": 64.0, "t_far": 0.9, "id": "smallscene",
        },
        "space": {"dims": ["car_x", "car_depth"]},
        "sampler": {"kind": "halton"},
        "detector": {"kind": "mock", "mock": {"base_confidence": 1.0}},
        "halt": {"max_trials": 10},
        "gp": {},
        "score": {},
    }
    for key, value in sections.items():
        if isinstance(value, dict) and key in tree and isinstance(tree[key], dict):
            tree[key] = {**tree[key], **value}
        else:
            tree[key] = value
    return tree


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" in nodeid:
                name = nodeid.split("::")[-1]
                verdict = "PASS" if status == "passed" else "FAIL"
                lines.append((name, verdict))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, verdict in sorted(lines):
            terminalreporter.write_line(f"[{verdict}] {name}")
