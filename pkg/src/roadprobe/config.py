"""Campaign configuration: a TOML tree bound to runtime objects.

Sections: [scene], [space], [sampler], [detector], [halt], [gp],
[score]. Paths are resolved against the config file's directory and
rewritten absolute, so the tree embedded in a store stays valid when
the campaign is resumed from elsewhere.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .detector import DetectorEndpoint, MockSpec
from .errors import ConfigError
from .falsifier import GPConfig
from .harness import HaltCondition, ScoreConfig
from .modspace import ModificationSpace
from .render import SceneConfig, load_scene
from .samplers import SamplerSpec


@dataclass(frozen=True)
class CampaignConfig:
    """Parsed campaign: the raw tree plus every built component."""

    raw: dict
    scene: SceneConfig
    space: ModificationSpace
    sampler_spec: SamplerSpec
    endpoint: DetectorEndpoint
    halt: HaltCondition
    score: ScoreConfig
    gp: GPConfig


def _require(table: dict, key: str, section: str):
    if key not in table:
        raise ConfigError(f"[{section}] is missing required key {key!r}")
    return table[key]


def _check_keys(table: dict, allowed: set[str], section: str):
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"[{section}] has unknown keys {sorted(unknown)}; allowed: {sorted(allowed)}")


def _scene_from(table: dict, base: Path) -> tuple[SceneConfig, dict]:
    _check_keys(table, {"background", "sprite", "vanish", "y_near", "x_left_near",
                        "x_right_near", "w_near", "t_far", "id"}, "scene")
    bg = (base / str(_require(table, "background", "scene"))).resolve()
    sp = (base / str(_require(table, "sprite", "scene"))).resolve()
    vanish = _require(table, "vanish", "scene")
    if not (isinstance(vanish, (list, tuple)) and len(vanish) == 2):
        raise ConfigError("[scene] vanish must be a [vx, vy] pair")
    scene = load_scene(
        background=bg, sprite=sp, vanish=(float(vanish[0]), float(vanish[1])),
        y_near=float(_require(table, "y_near", "scene")),
        x_left_near=float(_require(table, "x_left_near", "scene")),
        x_right_near=float(_require(table, "x_right_near", "scene")),
        w_near=float(_require(table, "w_near", "scene")),
        t_far=float(table.get("t_far", 0.95)),
        scene_id=table.get("id"),
    )
    resolved = dict(table)
    resolved["background"] = str(bg)
    resolved["sprite"] = str(sp)
    return scene, resolved


def _sampler_from(table: dict) -> SamplerSpec:
    _check_keys(table, {"kind", "seed", "m_points", "korobov_a", "skip"}, "sampler")
    return SamplerSpec(
        kind=str(_require(table, "kind", "sampler")),
        seed=int(table.get("seed", 0)),
        m_points=table.get("m_points"),
        korobov_a=int(table.get("korobov_a", 3)),
        skip=int(table.get("skip", 0)),
    )


def _detector_from(table: dict) -> DetectorEndpoint:
    _check_keys(table, {"kind", "command", "url", "timeout_ms", "halt_on_error", "mock"},
                "detector")
    kind = str(_require(table, "kind", "detector"))
    mock_spec = None
    if kind == "mock":
        mock = table.get("mock", {})
        _check_keys(mock, {"blind_boxes", "base_confidence", "depth_decay", "jitter_px", "seed"},
                    "detector.mock")
        mock_spec = MockSpec(
            blind_boxes=tuple((tuple(lo), tuple(hi)) for lo, hi in mock.get("blind_boxes", [])),
            base_confidence=float(mock.get("base_confidence", 0.95)),
            depth_decay=float(mock.get("depth_decay", 0.0)),
            jitter_px=int(mock.get("jitter_px", 0)),
            seed=int(mock.get("seed", 0)),
        )
    command = table.get("command")
    return DetectorEndpoint(
        kind=kind,
        command=tuple(str(c) for c in command) if command else None,
        url=table.get("url"),
        timeout_ms=int(table.get("timeout_ms", 30000)),
        mock_spec=mock_spec,
        halt_on_error=bool(table.get("halt_on_error", False)),
    )


def _halt_from(table: dict) -> HaltCondition:
    _check_keys(table, {"theta", "max_trials", "coverage_target", "coverage_bins"}, "halt")
    return HaltCondition(
        theta=None if table.get("theta") is None else float(table["theta"]),
        max_trials=None if table.get("max_trials") is None else int(table["max_trials"]),
        coverage_target=(None if table.get("coverage_target") is None
                         else float(table["coverage_target"])),
        coverage_bins=None if table.get("coverage_bins") is None else int(table["coverage_bins"]),
    )


def _gp_from(table: dict) -> GPConfig:
    _check_keys(table, {"signal_variance", "length_scale", "noise_variance", "jitter",
                        "beta", "candidate_count"}, "gp")
    defaults = GPConfig()
    return GPConfig(
        signal_variance=float(table.get("signal_variance", defaults.signal_variance)),
        length_scale=float(table.get("length_scale", defaults.length_scale)),
        noise_variance=float(table.get("noise_variance", defaults.noise_variance)),
        jitter=float(table.get("jitter", defaults.jitter)),
        beta=float(table.get("beta", defaults.beta)),
        candidate_count=int(table.get("candidate_count", defaults.candidate_count)),
    )


def _score_from(table: dict) -> ScoreConfig:
    _check_keys(table, {"mode", "car_labels"}, "score")
    return ScoreConfig(
        mode=str(table.get("mode", "product")),
        car_labels=tuple(table.get("car_labels", ["car"])),
    )


def campaign_from_dict(tree: dict, base_dir: Union[str, Path] = ".") -> CampaignConfig:
    """Build a CampaignConfig from a config tree (the parsed TOML)."""
    _check_keys(tree, {"scene", "space", "sampler", "detector", "halt", "gp", "score"},
                "campaign")
    base = Path(base_dir)
    if "scene" not in tree:
        raise ConfigError("campaign config needs a [scene] section")
    if "space" not in tree or "dims" not in tree["space"]:
        raise ConfigError("campaign config needs [space] with a dims list")
    _check_keys(tree["space"], {"dims"}, "space")
    scene, scene_resolved = _scene_from(tree["scene"], base)
    space = ModificationSpace.from_names(tree["space"]["dims"])
    sampler_spec = _sampler_from(tree.get("sampler", {"kind": "halton"}))
    endpoint = _detector_from(_require(tree, "detector", "campaign"))
    halt = _halt_from(_require(tree, "halt", "campaign"))
    gp = _gp_from(tree.get("gp", {}))
    score = _score_from(tree.get("score", {}))

    raw = {
        "scene": scene_resolved,
        "space": {"dims": list(space.names)},
        "sampler": dict(tree.get("sampler", {"kind": "halton"})),
        "detector": dict(tree["detector"]),
        "halt": dict(tree["halt"]),
        "gp": dict(tree.get("gp", {})),
        "score": dict(tree.get("score", {})),
    }
    if endpoint.kind == "mock" and "mock" in raw["detector"]:
        raw["detector"]["mock"] = dict(raw["detector"]["mock"])
    return CampaignConfig(raw=raw, scene=scene, space=space, sampler_spec=sampler_spec,
                          endpoint=endpoint, halt=halt, score=score, gp=gp)


def load_campaign(path: Union[str, Path]) -> CampaignConfig:
    """Parse a TOML campaign file; relative paths resolve beside it."""
    path = Path(path)
    try:
        tree = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return campaign_from_dict(tree, base_dir=path.parent)


def apply_overrides(cfg: CampaignConfig, *, trials: Optional[int] = None,
                    seed: Optional[int] = None) -> CampaignConfig:
    """CLI-level overrides; returns a rebuilt config with raw kept in sync."""
    tree = {k: dict(v) for k, v in cfg.raw.items()}
    if trials is not None:
        tree["halt"]["max_trials"] = trials
    if seed is not None:
        tree["sampler"]["seed"] = seed
    return campaign_from_dict(tree, base_dir=".")
