"""Scene rendering: maps a modification point to an image with ground truth.

The car sprite is placed on the road using the vanishing-point
construction: the two near-baseline corners converge linearly toward
the vanishing point, and the sprite shrinks with the same perspective
ratio, preserving its aspect. The composed image then passes through
the photometric chain (saturation, contrast, brightness).

Everything here is a pure function of immutable inputs; rendering the
same point twice produces bit-identical images.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from .errors import ConfigError, DegeneratePlacement
from .modspace import ModificationPoint, ModificationSpace

# Resized sprite pixels with alpha below this (out of 255) are treated as
# anti-aliasing halo and excluded from the ground-truth box.
ALPHA_THRESHOLD = 8

PNG_COMPRESS_LEVEL = 6


def iround(x: float) -> int:
    """Round half up; avoids the half-to-even surprises of round()."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box, half-open on the max edges."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ConfigError(f"degenerate box {self!r}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "y_min": self.y_min, "x_max": self.x_max, "y_max": self.y_max}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundingBox":
        return cls(float(d["x_min"]), float(d["y_min"]), float(d["x_max"]), float(d["y_max"]))


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SceneConfig:
    """Background, car sprite, and the road geometry used for placement.

    vanish is the vanishing point (vx, vy); y_near is the pixel row of the
    near placement baseline; x_left_near/x_right_near bound the car's
    bottom-center at that baseline; w_near is the sprite width in pixels
    when placed there; t_far caps how far toward the vanishing point the
    car may travel (depth 1 maps to t_far, keeping the sprite non-empty).
    """

    background: np.ndarray
    sprite: np.ndarray
    vanish: tuple[float, float]
    y_near: float
    x_left_near: float
    x_right_near: float
    w_near: float
    t_far: float = 0.95
    scene_id: str = "scene"
    background_path: Optional[str] = None
    sprite_path: Optional[str] = None

    def __post_init__(self):
        bg = np.asarray(self.background)
        sp = np.asarray(self.sprite)
        if bg.ndim != 3 or bg.shape[2] != 3 or bg.dtype != np.uint8:
            raise ConfigError("background must be an 8-bit RGB array (H, W, 3)")
        if sp.ndim != 3 or sp.shape[2] != 4 or sp.dtype != np.uint8:
            raise ConfigError("sprite must be an 8-bit RGBA array (h, w, 4)")
        if not (sp[:, :, 3] > 0).any():
            raise ConfigError("sprite is fully transparent")
        h, w = bg.shape[:2]
        vx, vy = self.vanish
        if not vy < self.y_near <= h - 1:
            raise ConfigError(f"need vanish y < y_near <= {h - 1}, got vy={vy}, y_near={self.y_near}")
        if not 0 <= self.x_left_near < self.x_right_near <= w - 1:
            raise ConfigError(
                f"need 0 <= x_left_near < x_right_near <= {w - 1}, "
                f"got {self.x_left_near}, {self.x_right_near}"
            )
        if self.w_near < 8:
            raise ConfigError(f"w_near must be >= 8 px, got {self.w_near}")
        if not 0.0 < self.t_far < 1.0:
            raise ConfigError(f"t_far must lie in (0, 1), got {self.t_far}")
        object.__setattr__(self, "background", _readonly(bg.copy()))
        object.__setattr__(self, "sprite", _readonly(sp.copy()))

    @property
    def width(self) -> int:
        return self.background.shape[1]

    @property
    def height(self) -> int:
        return self.background.shape[0]

    def geometry_dict(self) -> dict:
        return {
            "vanish": [float(self.vanish[0]), float(self.vanish[1])],
            "y_near": float(self.y_near),
            "x_left_near": float(self.x_left_near),
            "x_right_near": float(self.x_right_near),
            "w_near": float(self.w_near),
            "t_far": float(self.t_far),
        }


@dataclass(frozen=True)
class Placement:
    """Where the sprite's bottom-center lands and its on-image size."""

    bottom_center_x: float
    bottom_center_y: float
    width: float
    height: float


@dataclass(frozen=True)
class RenderedSample:
    """One composed image with its ground-truth car box."""

    image: np.ndarray
    gt_box: BoundingBox
    point: ModificationPoint
    scene_id: str
    sample_index: int


def place_car(scene: SceneConfig, mx: float, mdepth: float) -> Placement:
    """Perspective placement of the car for lateral mx and depth mdepth.

    The bottom row moves from the near baseline toward the vanishing
    point by t = mdepth * t_far; the similar-triangles ratio
    r = (y_b - vy) / (y_near - vy) scales both the lateral bounds and
    the sprite width, so the car shrinks consistently with depth.
    """
    vx, vy = scene.vanish
    t = mdepth * scene.t_far
    y_b = scene.y_near + t * (vy - scene.y_near)
    r = (y_b - vy) / (scene.y_near - vy)
    x_left = vx + (scene.x_left_near - vx) * r
    x_right = vx + (scene.x_right_near - vx) * r
    x_c = x_left + mx * (x_right - x_left)
    width = scene.w_near * r
    sprite_h, sprite_w = scene.sprite.shape[:2]
    height = width * (sprite_h / sprite_w)
    return Placement(x_c, y_b, width, height)


def composite(scene: SceneConfig, placement: Placement) -> tuple[np.ndarray, BoundingBox]:
    """Alpha-composite the resized sprite over the background.

    The sprite is resized bilinearly to the rounded placement size and
    anchored bottom-center. The ground-truth box is the tight box over
    sprite pixels with alpha >= ALPHA_THRESHOLD, clamped to the image.
    """
    w_px = iround(placement.width)
    h_px = iround(placement.height)
    if w_px < 2 or h_px < 2:
        raise DegeneratePlacement(f"sprite would collapse to {w_px}x{h_px} px")
    sprite_img = Image.fromarray(scene.sprite, "RGBA").resize((w_px, h_px), Image.Resampling.BILINEAR)
    sprite = np.asarray(sprite_img, dtype=np.uint8)

    y1 = iround(placement.bottom_center_y)
    y0 = y1 - h_px
    x0 = iround(placement.bottom_center_x - w_px / 2.0)
    x1 = x0 + w_px
    height, width = scene.background.shape[:2]

    out = scene.background.copy()
    ox0, oy0 = max(x0, 0), max(y0, 0)
    ox1, oy1 = min(x1, width), min(y1, height)
    if ox0 < ox1 and oy0 < oy1:
        src = sprite[oy0 - y0:oy1 - y0, ox0 - x0:ox1 - x0].astype(np.float64)
        dst = out[oy0:oy1, ox0:ox1].astype(np.float64)
        alpha = src[:, :, 3:4] / 255.0
        blended = alpha * src[:, :, :3] + (1.0 - alpha) * dst
        out[oy0:oy1, ox0:ox1] = np.floor(blended + 0.5).astype(np.uint8)

    ys, xs = np.nonzero(sprite[:, :, 3] >= ALPHA_THRESHOLD)
    if ys.size == 0:
        raise DegeneratePlacement("resized sprite has no pixels above the alpha threshold")
    bx0 = max(x0 + int(xs.min()), 0)
    bx1 = min(x0 + int(xs.max()) + 1, width)
    by0 = max(y0 + int(ys.min()), 0)
    by1 = min(y0 + int(ys.max()) + 1, height)
    if bx0 >= bx1 or by0 >= by1:
        raise DegeneratePlacement("ground-truth box empty after clamping to image bounds")
    return out, BoundingBox(float(bx0), float(by0), float(bx1), float(by1))


def apply_photometric(image: np.ndarray, brightness: float, contrast: float,
                      saturation: float) -> np.ndarray:
    """Saturation, then contrast, then brightness, each clamped to [0, 255].

    All three parameters live in [0, 1] with 0.5 the identity:
    saturation scales chroma around the luma by 2*ms, contrast applies
    gain 2^(2*mc - 1) around mid-gray 128, brightness adds the rounded
    offset (2*mb - 1) * 64.
    """
    for name, v in (("brightness", brightness), ("contrast", contrast), ("saturation", saturation)):
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"{name} must lie in [0, 1], got {v}")
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ConfigError("photometric input must be an 8-bit RGB array")
    work = img.astype(np.float64)

    luma = work[:, :, 0] * 0.299 + work[:, :, 1] * 0.587 + work[:, :, 2] * 0.114
    work = luma[:, :, None] + 2.0 * saturation * (work - luma[:, :, None])
    work = np.clip(work, 0.0, 255.0)

    gain = 2.0 ** (2.0 * contrast - 1.0)
    work = gain * (work - 128.0) + 128.0
    work = np.clip(work, 0.0, 255.0)

    work = work + round((2.0 * brightness - 1.0) * 64.0)
    work = np.clip(work, 0.0, 255.0)
    return np.floor(work + 0.5).astype(np.uint8)


def generate_image(scene: SceneConfig, space: ModificationSpace, point: ModificationPoint,
                   sample_index: int = 0) -> RenderedSample:
    """Render the sample for a modification point (the generation function).

    Dimension bindings: car_x/car_depth drive placement (defaults 0.5
    and 0.0 when absent); brightness and saturation bind directly; the
    contrast coordinate is inverted (1 - mc) before the photometric
    stage so that coordinate 1 means low contrast.
    """
    coords = dict(zip(space.names, point.coords))
    mx = coords.get("car_x", 0.5)
    mdepth = coords.get("car_depth", 0.0)
    brightness = coords.get("brightness", 0.5)
    saturation = coords.get("saturation", 0.5)
    contrast = 0.5 if "contrast" not in coords else 1.0 - coords["contrast"]

    placement = place_car(scene, mx, mdepth)
    image, gt_box = composite(scene, placement)
    image = apply_photometric(image, brightness, contrast, saturation)
    return RenderedSample(_readonly(image), gt_box, point, scene.scene_id, sample_index)


def load_rgb(path: Union[str, Path]) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load RGB image {path}: {exc}") from exc


def load_rgba(path: Union[str, Path]) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGBA"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load RGBA image {path}: {exc}") from exc


def png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image), "RGB").save(buf, format="PNG", compress_level=PNG_COMPRESS_LEVEL)
    return buf.getvalue()


def save_png(image: np.ndarray, path: Union[str, Path]) -> None:
    Path(path).write_bytes(png_bytes(image))


def content_sha256(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_scene(background: Union[str, Path], sprite: Union[str, Path], vanish: tuple[float, float],
               y_near: float, x_left_near: float, x_right_near: float, w_near: float,
               t_far: float = 0.95, scene_id: Optional[str] = None) -> SceneConfig:
    """Build a SceneConfig from image files on disk."""
    bg_path, sp_path = Path(background), Path(sprite)
    return SceneConfig(
        background=load_rgb(bg_path),
        sprite=load_rgba(sp_path),
        vanish=(float(vanish[0]), float(vanish[1])),
        y_near=float(y_near),
        x_left_near=float(x_left_near),
        x_right_near=float(x_right_near),
        w_near=float(w_near),
        t_far=float(t_far),
        scene_id=scene_id if scene_id is not None else bg_path.stem,
        background_path=str(bg_path),
        sprite_path=str(sp_path),
    )
