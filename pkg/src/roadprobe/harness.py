"""Campaign driver: the sample -> render -> detect -> record loop.

A campaign owns a result store on disk: `campaign.json` (immutable
metadata including the full resolved config), `records.ndjson` (one
trial per line, flushed before the next trial starts, so a killed run
loses at most the in-flight trial), and `images/` with one PNG per
trial. All samplers are index-addressable, which makes resumed and
worker-parallel campaigns reproduce the sequential run exactly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from queue import Queue
from typing import Optional, Union

from . import __version__
from .detector import DetectorEndpoint, open_session
from .errors import (ConfigError, CorruptStore, DetectorTimeout, ProcessExit,
                     ProtocolError, RequestFailed)
from .metrics import DetectionSet, SCORE_MODES, compute_score, match_best
from .modspace import ModificationPoint, ModificationSpace, validate_point
from .render import BoundingBox, SceneConfig, generate_image, save_png
from .samplers import SamplerSpec, build_sampler

logger = logging.getLogger(__name__)

METADATA_FILE = "campaign.json"
RECORDS_FILE = "records.ndjson"
STATUS_FILE = "status.json"
IMAGES_DIR = "images"


@dataclass(frozen=True)
class ScoreConfig:
    """How a detection run is collapsed into the scalar trial score."""

    mode: str = "product"
    car_labels: tuple[str, ...] = ("car",)

    def __post_init__(self):
        if self.mode not in SCORE_MODES:
            raise ConfigError(f"score mode must be one of {SCORE_MODES}, got {self.mode!r}")
        if not self.car_labels:
            raise ConfigError("car_labels must not be empty")
        object.__setattr__(self, "car_labels", tuple(str(l) for l in self.car_labels))

    def to_dict(self) -> dict:
        return {"mode": self.mode, "car_labels": list(self.car_labels)}


@dataclass(frozen=True)
class HaltCondition:
    """Disjunction of stopping rules; the first satisfied one halts.

    theta enables the counterexample rule (halt when a trial score drops
    below it), max_trials caps the budget, and coverage_target (with
    coverage_bins cells per dimension) stops once the sampled points
    occupy that fraction of grid cells.
    """

    theta: Optional[float] = None
    max_trials: Optional[int] = None
    coverage_target: Optional[float] = None
    coverage_bins: Optional[int] = None

    def __post_init__(self):
        if self.theta is None and self.max_trials is None and self.coverage_target is None:
            raise ConfigError("at least one halting condition is required")
        if self.max_trials is not None and self.max_trials < 1:
            raise ConfigError(f"max_trials must be >= 1, got {self.max_trials}")
        if self.coverage_target is not None:
            if not 0.0 < self.coverage_target <= 1.0:
                raise ConfigError(f"coverage_target must lie in (0, 1], got {self.coverage_target}")
            if self.coverage_bins is None or self.coverage_bins < 1:
                raise ConfigError("coverage_target requires coverage_bins >= 1")

    def with_max_trials(self, trials: int) -> "HaltCondition":
        return replace(self, max_trials=trials)

    def to_dict(self) -> dict:
        return {k: v for k, v in (
            ("theta", self.theta), ("max_trials", self.max_trials),
            ("coverage_target", self.coverage_target), ("coverage_bins", self.coverage_bins),
        ) if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "HaltCondition":
        return cls(theta=d.get("theta"), max_trials=d.get("max_trials"),
                   coverage_target=d.get("coverage_target"), coverage_bins=d.get("coverage_bins"))


class HaltTracker:
    """Incremental evaluation of the halting conditions over a record stream."""

    def __init__(self, halt: HaltCondition, n_dims: int):
        self.halt = halt
        self.n = n_dims
        self.trials = 0
        self.counterexample = False
        self.cells: set[tuple[int, ...]] = set()

    def observe(self, record: "TrialRecord"):
        self.trials += 1
        if (self.halt.theta is not None and record.score is not None
                and record.score < self.halt.theta):
            self.counterexample = True
        if self.halt.coverage_target is not None:
            g = self.halt.coverage_bins
            self.cells.add(tuple(min(int(c * g), g - 1) for c in record.point))

    def reason(self) -> Optional[str]:
        if self.counterexample:
            return "counterexample"
        if self.halt.max_trials is not None and self.trials >= self.halt.max_trials:
            return "max_trials"
        if self.halt.coverage_target is not None:
            if len(self.cells) / self.halt.coverage_bins ** self.n >= self.halt.coverage_target:
                return "coverage"
        return None


@dataclass(frozen=True)
class TrialRecord:
    """One loop iteration: the point, what was rendered, what came back."""

    index: int
    point: tuple[float, ...]
    image_path: str
    gt_box: BoundingBox
    detections: DetectionSet
    iou: float
    confidence: float
    score: Optional[float]
    error: Optional[str]
    elapsed_ms: int

    def to_json_line(self) -> str:
        obj = {
            "index": self.index,
            "point": list(self.point),
            "image_path": self.image_path,
            "gt_box": self.gt_box.to_dict(),
            "detections": self.detections.to_list(),
            "iou": self.iou,
            "confidence": self.confidence,
            "score": self.score,
            "error": self.error,
            "elapsed_ms": self.elapsed_ms,
        }
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_json_obj(cls, obj: dict) -> "TrialRecord":
        return cls(
            index=int(obj["index"]),
            point=tuple(float(c) for c in obj["point"]),
            image_path=str(obj["image_path"]),
            gt_box=BoundingBox.from_dict(obj["gt_box"]),
            detections=DetectionSet.from_list(obj["detections"]),
            iou=float(obj["iou"]),
            confidence=float(obj["confidence"]),
            score=None if obj["score"] is None else float(obj["score"]),
            error=obj.get("error"),
            elapsed_ms=int(obj["elapsed_ms"]),
        )


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")).hexdigest()


def scene_content_hashes(scene: SceneConfig) -> dict:
    return {
        "background_sha256": hashlib.sha256(scene.background.tobytes()).hexdigest(),
        "sprite_sha256": hashlib.sha256(scene.sprite.tobytes()).hexdigest(),
    }


def build_metadata(scene: SceneConfig, space: ModificationSpace,
                   sampler_spec: Optional[SamplerSpec], endpoint: DetectorEndpoint,
                   halt: HaltCondition, score: ScoreConfig, *,
                   gp=None, raw_config: Optional[dict] = None, active: bool = False) -> dict:
    sampler_meta: dict = {"kind": "gp-lcb"} if active else dict(sampler_spec.to_dict())
    if not active:
        sampler_meta["algorithm"] = build_sampler(sampler_spec, space.n).algorithm
    meta = {
        "tool": "roadprobe",
        "tool_version": __version__,
        "schema": 1,
        "mode": "active" if active else "passive",
        "scene": {
            "id": scene.scene_id,
            "background_path": scene.background_path,
            "sprite_path": scene.sprite_path,
            "width": scene.width,
            "height": scene.height,
            "geometry": scene.geometry_dict(),
            **scene_content_hashes(scene),
        },
        "space": list(space.names),
        "sampler": sampler_meta,
        "detector": endpoint.to_dict(),
        "halt": halt.to_dict(),
        "score": score.to_dict(),
        "gp": gp.to_dict() if gp is not None else None,
        "config": raw_config,
        "config_hash": config_hash(raw_config) if raw_config is not None else None,
    }
    return meta


class ResultStore:
    """Append-only NDJSON record log plus immutable campaign metadata."""

    def __init__(self, root: Path, metadata: dict, records: list[TrialRecord],
                 halt_reason: Optional[str], fh=None):
        self.root = Path(root)
        self.metadata = metadata
        self.records = records
        self.halt_reason = halt_reason
        self._fh = fh

    @classmethod
    def create(cls, root: Union[str, Path], metadata: dict) -> "ResultStore":
        root = Path(root)
        if (root / METADATA_FILE).exists():
            raise ConfigError(f"{root} already holds a campaign (use resume instead)")
        (root / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
        (root / METADATA_FILE).write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
        (root / STATUS_FILE).write_text(json.dumps({"halt_reason": None}) + "\n", encoding="utf-8")
        fh = open(root / RECORDS_FILE, "ab")
        return cls(root, metadata, [], None, fh)

    @classmethod
    def open(cls, root: Union[str, Path], for_append: bool = False) -> "ResultStore":
        root = Path(root)
        meta_path = root / METADATA_FILE
        if not meta_path.exists():
            raise CorruptStore(f"no campaign metadata at {meta_path}")
        try:
            metadata = json.loads(meta_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CorruptStore(f"unreadable campaign metadata: {exc}") from exc
        halt_reason = None
        status_path = root / STATUS_FILE
        if status_path.exists():
            try:
                halt_reason = json.loads(status_path.read_text(encoding="utf-8")).get("halt_reason")
            except json.JSONDecodeError as exc:
                raise CorruptStore(f"unreadable campaign status: {exc}") from exc

        records: list[TrialRecord] = []
        rec_path = root / RECORDS_FILE
        valid_bytes = 0
        if rec_path.exists():
            data = rec_path.read_bytes()
            lines = data.split(b"\n")
            torn_tail = lines.pop() if lines and lines[-1] != b"" else None
            if torn_tail is None and lines and lines[-1] == b"":
                lines.pop()
            for lineno, raw in enumerate(lines, start=1):
                try:
                    record = TrialRecord.from_json_obj(json.loads(raw.decode("utf-8")))
                except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError,
                        ValueError) as exc:
                    raise CorruptStore(f"unparseable trial record: {exc}", line=lineno) from exc
                if record.index != lineno - 1:
                    raise CorruptStore(f"trial index {record.index} out of order", line=lineno)
                records.append(record)
                valid_bytes += len(raw) + 1
            if torn_tail:
                logger.warning("dropping torn trailing record (%d bytes) in %s",
                               len(torn_tail), rec_path)
        fh = None
        if for_append:
            fh = open(rec_path, "ab")
            fh.truncate(valid_bytes)
        return cls(root, metadata, records, halt_reason, fh)

    def image_relpath(self, index: int) -> str:
        return f"{IMAGES_DIR}/trial_{index:06d}.png"

    def image_abspath(self, rel: str) -> Path:
        return self.root / rel

    def append(self, record: TrialRecord):
        if self._fh is None:
            raise ConfigError("store was opened read-only")
        if record.index != len(self.records):
            raise ConfigError(f"record index {record.index} breaks the append order")
        self._fh.write((record.to_json_line() + "\n").encode("utf-8"))
        self._fh.flush()
        self.records.append(record)

    def finalize(self, reason: str):
        self.halt_reason = reason
        (self.root / STATUS_FILE).write_text(
            json.dumps({"halt_reason": reason, "trials": len(self.records)}) + "\n",
            encoding="utf-8")
        self.close()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class _FatalTrial(Exception):
    """Session-fatal detector failure; carries the errored record to flush."""

    def __init__(self, record: TrialRecord, cause: Exception):
        self.record = record
        self.cause = cause
        super().__init__(str(cause))


def run_trial(scene: SceneConfig, space: ModificationSpace, point: ModificationPoint,
              index: int, session, image_abspath: Path, image_relpath: str,
              score: ScoreConfig) -> TrialRecord:
    """Render, persist, detect, and score one trial (no store append).

    Per-request detector failures are folded into an errored record
    (score None); session-fatal failures raise _FatalTrial so the
    caller can flush the record before surfacing the cause.
    """
    start = time.perf_counter()
    sample = generate_image(scene, space, point, sample_index=index)
    save_png(sample.image, image_abspath)

    detections = DetectionSet()
    error: Optional[str] = None
    fatal: Optional[Exception] = None
    try:
        detections = session.detect(sample, image_path=str(image_abspath))
    except (ProtocolError, RequestFailed) as exc:
        error = f"{type(exc).__name__}: {exc}"
    except (DetectorTimeout, ProcessExit) as exc:
        error = f"{type(exc).__name__}: {exc}"
        fatal = exc

    if error is None:
        best, best_iou = match_best(sample.gt_box, detections, score.car_labels)
        record = TrialRecord(
            index=index, point=point.coords, image_path=image_relpath,
            gt_box=sample.gt_box, detections=detections,
            iou=best_iou, confidence=best.confidence if best else 0.0,
            score=compute_score(sample.gt_box, detections, score.car_labels, score.mode),
            error=None, elapsed_ms=int((time.perf_counter() - start) * 1000))
    else:
        record = TrialRecord(
            index=index, point=point.coords, image_path=image_relpath,
            gt_box=sample.gt_box, detections=DetectionSet(),
            iou=0.0, confidence=0.0, score=None, error=error,
            elapsed_ms=int((time.perf_counter() - start) * 1000))
    if fatal is not None:
        raise _FatalTrial(record, fatal)
    return record


def execute_trial(scene, space, point, index, session, store: ResultStore,
                  score: ScoreConfig) -> TrialRecord:
    """run_trial plus the store append; used by the active falsify loop."""
    try:
        record = run_trial(scene, space, point, index, session,
                           store.image_abspath(store.image_relpath(index)),
                           store.image_relpath(index), score)
    except _FatalTrial as ft:
        store.append(ft.record)
        store.close()
        raise ft.cause from None
    store.append(record)
    return record


def run_campaign(scene: SceneConfig, space: ModificationSpace, sampler_spec: SamplerSpec,
                 endpoint: DetectorEndpoint, halt: HaltCondition, out_dir: Union[str, Path], *,
                 score: ScoreConfig = ScoreConfig(), raw_config: Optional[dict] = None,
                 workers: int = 1) -> ResultStore:
    """Passive campaign: draw points from the sampler in index order.

    Halting conditions are evaluated after every committed trial, in
    sequential order even when rendering/detection run on a worker
    pool. Each record is flushed before the next trial begins.
    """
    store = ResultStore.create(out_dir, build_metadata(
        scene, space, sampler_spec, endpoint, halt, score, raw_config=raw_config))
    sampler = build_sampler(sampler_spec, space.n)
    return _drive(scene, space, sampler, endpoint, halt, score, store, workers)


def resume_campaign(store_path: Union[str, Path], workers: int = 1) -> ResultStore:
    """Continue a campaign from its last flushed record.

    The store must embed its config; its hash and the scene image
    content hashes are re-checked so a tampered or mismatched store is
    refused rather than silently extended. A completed campaign returns
    immediately.
    """
    from .config import campaign_from_dict

    store = ResultStore.open(store_path, for_append=True)
    meta = store.metadata
    if meta.get("config") is None:
        store.close()
        raise CorruptStore("store has no embedded config; cannot resume")
    if config_hash(meta["config"]) != meta.get("config_hash"):
        store.close()
        raise CorruptStore("embedded config does not match its recorded hash")
    cfg = campaign_from_dict(meta["config"])
    if scene_content_hashes(cfg.scene) != {k: meta["scene"][k]
                                           for k in ("background_sha256", "sprite_sha256")}:
        store.close()
        raise CorruptStore("scene image content changed since the campaign was created")
    if store.halt_reason is not None:
        store.close()
        return store
    if meta.get("mode") == "active":
        store.close()
        raise ConfigError("active (falsify) campaigns are not resumable")
    sampler = build_sampler(cfg.sampler_spec, cfg.space.n)
    return _drive(cfg.scene, cfg.space, sampler, cfg.endpoint, cfg.halt, cfg.score, store, workers)


def _drive(scene, space, sampler, endpoint, halt, score, store: ResultStore,
           workers: int) -> ResultStore:
    tracker = HaltTracker(halt, space.n)
    for record in store.records:
        tracker.observe(record)
    reason = tracker.reason()
    if reason is not None:
        store.finalize(reason)
        return store
    if workers <= 1:
        return _drive_sequential(scene, space, sampler, endpoint, halt, score, store, tracker)
    return _drive_parallel(scene, space, sampler, endpoint, halt, score, store, tracker, workers)


def _next_point(sampler, space, index) -> Optional[ModificationPoint]:
    if sampler.size is not None and index >= sampler.size:
        return None
    return validate_point(space, sampler.point_at(index).coords)


def _drive_sequential(scene, space, sampler, endpoint, halt, score,
                      store: ResultStore, tracker: HaltTracker) -> ResultStore:
    with open_session(endpoint, space) as session:
        index = len(store.records)
        while True:
            point = _next_point(sampler, space, index)
            if point is None:
                store.finalize("sampler_exhausted")
                return store
            record = execute_trial(scene, space, point, index, session, store, score)
            tracker.observe(record)
            reason = tracker.reason()
            if reason is None and record.error is not None and endpoint.halt_on_error:
                reason = "detector_error"
            if reason is not None:
                store.finalize(reason)
                return store
            index += 1


def _drive_parallel(scene, space, sampler, endpoint, halt, score, store: ResultStore,
                    tracker: HaltTracker, workers: int) -> ResultStore:
    """Speculative pipeline: trials run ahead on a pool, commit stays sequential.

    Workers each borrow a dedicated detector session. Results are
    committed strictly in index order and halting is evaluated at each
    commit, so any speculative trial past the halt point is discarded
    (its image file removed), preserving sequential semantics.
    """
    guards = [open_session(endpoint, space) for _ in range(workers)]
    sessions: Queue = Queue()
    for g in guards:
        sessions.put(g.session)

    def task(index: int, point: ModificationPoint) -> TrialRecord:
        session = sessions.get()
        try:
            return run_trial(scene, space, point, index, session,
                             store.image_abspath(store.image_relpath(index)),
                             store.image_relpath(index), score)
        finally:
            sessions.put(session)

    window = workers * 2
    pending: dict = {}
    next_submit = len(store.records)
    next_commit = next_submit
    reason: Optional[str] = None
    failure: Optional[Exception] = None
    try:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            while True:
                while len(pending) < window:
                    point = _next_point(sampler, space, next_submit)
                    if point is None:
                        break
                    pending[next_submit] = pool.submit(task, next_submit, point)
                    next_submit += 1
                if next_commit not in pending:
                    reason = "sampler_exhausted"
                    break
                future = pending.pop(next_commit)
                try:
                    record = future.result()
                except _FatalTrial as ft:
                    store.append(ft.record)
                    next_commit += 1
                    failure = ft.cause
                    break
                store.append(record)
                tracker.observe(record)
                next_commit += 1
                reason = tracker.reason()
                if reason is None and record.error is not None and endpoint.halt_on_error:
                    reason = "detector_error"
                if reason is not None:
                    break
            for future in pending.values():
                future.cancel()
    finally:
        for g in guards:
            g.session.close()
    for index in range(next_commit, next_submit):
        stray = store.image_abspath(store.image_relpath(index))
        if stray.exists():
            stray.unlink()
    if failure is not None:
        store.close()
        raise failure
    store.finalize(reason)
    return store


@dataclass
class VerifyResult:
    """Outcome of replaying a store through render + metrics."""

    trials: int
    errored: int
    mismatches: list[str]

    @property
    def ok(self) -> bool:
        return not self.mismatches


def verify_store(store_path: Union[str, Path], check_images: bool = True) -> VerifyResult:
    """Recompute every record from its point and stored detections.

    Rendering is replayed to confirm the ground-truth box (and, unless
    disabled, the PNG bytes); iou/confidence/score are recomputed from
    the stored detections and must match exactly. Passive campaigns
    additionally re-derive each point from the sampler stream.
    """
    from .config import campaign_from_dict
    from .render import png_bytes

    store = ResultStore.open(store_path)
    meta = store.metadata
    if meta.get("config") is None:
        raise CorruptStore("store has no embedded config; cannot verify")
    if config_hash(meta["config"]) != meta.get("config_hash"):
        raise CorruptStore("embedded config does not match its recorded hash")
    cfg = campaign_from_dict(meta["config"])
    mismatches: list[str] = []
    if scene_content_hashes(cfg.scene) != {k: meta["scene"][k]
                                           for k in ("background_sha256", "sprite_sha256")}:
        mismatches.append("scene image content differs from campaign metadata")

    sampler = None
    if meta.get("mode") == "passive":
        sampler = build_sampler(cfg.sampler_spec, cfg.space.n)

    errored = 0
    for record in store.records:
        prefix = f"trial {record.index}"
        point = validate_point(cfg.space, record.point)
        if sampler is not None:
            expect = sampler.point_at(record.index).coords
            if expect != record.point:
                mismatches.append(f"{prefix}: point diverges from the sampler stream")
        sample = generate_image(cfg.scene, cfg.space, point, sample_index=record.index)
        if sample.gt_box != record.gt_box:
            mismatches.append(f"{prefix}: ground-truth box mismatch")
        img_path = store.image_abspath(record.image_path)
        if not img_path.exists():
            mismatches.append(f"{prefix}: missing image file {record.image_path}")
        elif check_images and png_bytes(sample.image) != img_path.read_bytes():
            mismatches.append(f"{prefix}: re-rendered PNG differs from the stored file")
        if record.error is not None:
            errored += 1
            continue
        best, best_iou = match_best(record.gt_box, record.detections, cfg.score.car_labels)
        conf = best.confidence if best else 0.0
        score_val = compute_score(record.gt_box, record.detections, cfg.score.car_labels,
                                  cfg.score.mode)
        if (best_iou, conf, score_val) != (record.iou, record.confidence, record.score):
            mismatches.append(f"{prefix}: stored metrics disagree with recomputation")
    return VerifyResult(trials=len(store.records), errored=errored, mismatches=mismatches)
