"""Adapters over the system under test.

Three endpoint kinds share one session interface: `mock` is the
deterministic built-in detector with configurable blind regions (for
exercising the search stack against a known ground truth), `subprocess`
speaks newline-delimited JSON over a child's stdin/stdout, and `http`
POSTs to a /detect endpoint. Wire formats are fixed byte-for-byte; a
malformed response surfaces as ProtocolError carrying the raw payload
so the harness can record the trial as errored and move on.
"""

from __future__ import annotations

import base64
import json
import os
import select
import subprocess
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (ConfigError, DetectorTimeout, ProcessExit, ProtocolError,
                     RequestFailed)
from .metrics import Detection, DetectionSet
from .modspace import ModificationSpace
from .render import BoundingBox, RenderedSample, png_bytes

DETECTOR_KINDS = ("mock", "subprocess", "http")


@dataclass(frozen=True)
class MockSpec:
    """Deterministic stand-in for a CNN with planted blind regions.

    blind_boxes are axis-aligned boxes in the modification space given
    as (low_corner, high_corner) pairs; a sample whose point lies in any
    of them is "missed" (empty detection set). Elsewhere the mock
    returns the ground-truth box, optionally jittered per corner, with
    confidence base_confidence * (1 - depth_decay * mdepth).
    """

    blind_boxes: tuple[tuple[tuple[float, ...], tuple[float, ...]], ...] = ()
    base_confidence: float = 0.95
    depth_decay: float = 0.0
    jitter_px: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.base_confidence <= 1.0:
            raise ConfigError(f"base_confidence must lie in (0, 1], got {self.base_confidence}")
        if self.depth_decay < 0.0:
            raise ConfigError(f"depth_decay must be >= 0, got {self.depth_decay}")
        if self.jitter_px < 0:
            raise ConfigError(f"jitter_px must be >= 0, got {self.jitter_px}")
        boxes = tuple((tuple(float(v) for v in lo), tuple(float(v) for v in hi))
                      for lo, hi in self.blind_boxes)
        for lo, hi in boxes:
            if len(lo) != len(hi):
                raise ConfigError(f"blind box corners differ in length: {lo} vs {hi}")
            for a, b in zip(lo, hi):
                if not (0.0 <= a <= b <= 1.0):
                    raise ConfigError(f"blind box corners must satisfy 0 <= lo <= hi <= 1: {lo}, {hi}")
        object.__setattr__(self, "blind_boxes", boxes)

    def to_dict(self) -> dict:
        return {
            "blind_boxes": [[list(lo), list(hi)] for lo, hi in self.blind_boxes],
            "base_confidence": self.base_confidence,
            "depth_decay": self.depth_decay,
            "jitter_px": self.jitter_px,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class DetectorEndpoint:
    """Where detections come from and how long to wait for them."""

    kind: str
    command: Optional[tuple[str, ...]] = None
    url: Optional[str] = None
    timeout_ms: int = 30000
    mock_spec: Optional[MockSpec] = None
    halt_on_error: bool = False

    def __post_init__(self):
        if self.kind not in DETECTOR_KINDS:
            raise ConfigError(f"detector kind must be one of {DETECTOR_KINDS}, got {self.kind!r}")
        if self.timeout_ms <= 0:
            raise ConfigError(f"timeout_ms must be > 0, got {self.timeout_ms}")
        if self.kind == "subprocess" and not self.command:
            raise ConfigError("subprocess detector requires a command")
        if self.kind == "http" and not self.url:
            raise ConfigError("http detector requires a url")
        if self.kind == "mock" and self.mock_spec is None:
            object.__setattr__(self, "mock_spec", MockSpec())
        if self.command is not None:
            object.__setattr__(self, "command", tuple(str(c) for c in self.command))

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind, "timeout_ms": self.timeout_ms,
                   "halt_on_error": self.halt_on_error}
        if self.kind == "subprocess":
            d["command"] = list(self.command)
        elif self.kind == "http":
            d["url"] = self.url
        else:
            d["mock"] = self.mock_spec.to_dict()
        return d


def serialize_request(request_id: int, image_path: str, width: int, height: int) -> bytes:
    obj = {"id": request_id, "image_path": image_path, "width": width, "height": height}
    return (json.dumps(obj, separators=(",", ":")) + "\n").encode("utf-8")


def parse_response(raw: bytes, expected_id: int) -> DetectionSet:
    """Decode one response line, enforcing the id echo.

    A well-formed {"id": n, "error": msg} object raises RequestFailed
    (session stays usable); anything else malformed raises ProtocolError
    with the raw payload attached.
    """
    try:
        obj = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"unparseable detector response: {exc}", payload=raw) from exc
    if not isinstance(obj, dict):
        raise ProtocolError("detector response is not an object", payload=raw)
    if obj.get("id") != expected_id:
        raise ProtocolError(f"response id {obj.get('id')!r} does not echo request id {expected_id}",
                            payload=raw)
    if "error" in obj:
        raise RequestFailed(str(obj["error"]))
    if "detections" not in obj or not isinstance(obj["detections"], list):
        raise ProtocolError("detector response lacks a detections list", payload=raw)
    try:
        return DetectionSet.from_list(obj["detections"])
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        raise ProtocolError(f"bad detection entry: {exc}", payload=raw) from exc


def serialize_detections(request_id: int, ds: DetectionSet) -> bytes:
    obj = {"id": request_id, "detections": ds.to_list()}
    return (json.dumps(obj, separators=(",", ":")) + "\n").encode("utf-8")


class MockSession:
    """Reads the modification point, not pixels: a search-stack test oracle."""

    def __init__(self, spec: MockSpec, space: ModificationSpace):
        self.spec = spec
        self.depth_index = space.index_of("car_depth")
        for lo, hi in spec.blind_boxes:
            if len(lo) != space.n:
                raise ConfigError(f"blind box has {len(lo)} dims, space has {space.n}")

    def detect(self, sample: RenderedSample, image_path: Optional[str] = None) -> DetectionSet:
        coords = sample.point.coords
        for lo, hi in self.spec.blind_boxes:
            if all(l <= c <= h for c, l, h in zip(coords, lo, hi)):
                return DetectionSet()
        mdepth = coords[self.depth_index] if self.depth_index is not None else 0.0
        confidence = min(max(self.spec.base_confidence * (1.0 - self.spec.depth_decay * mdepth), 0.0), 1.0)
        box = sample.gt_box
        if self.spec.jitter_px > 0:
            rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence(self.spec.seed, spawn_key=(sample.sample_index,))))
            j = float(self.spec.jitter_px)
            ox0, oy0, ox1, oy1 = rng.uniform(-j, j, size=4)
            height, width = sample.image.shape[:2]
            x_lo, x_hi = sorted((box.x_min + ox0, box.x_max + ox1))
            y_lo, y_hi = sorted((box.y_min + oy0, box.y_max + oy1))
            x_lo = min(max(x_lo, 0.0), width - 1.0)
            y_lo = min(max(y_lo, 0.0), height - 1.0)
            x_hi = min(max(x_hi, x_lo + 1.0), float(width))
            y_hi = min(max(y_hi, y_lo + 1.0), float(height))
            box = BoundingBox(x_lo, y_lo, x_hi, y_hi)
        return DetectionSet((Detection("car", confidence, box),))

    def close(self):
        pass


class _LineChannel:
    """Deadline-aware line reader over a subprocess pipe."""

    def __init__(self, proc: subprocess.Popen):
        self.proc = proc
        self.buf = bytearray()
        os.set_blocking(proc.stdout.fileno(), False)

    def readline(self, timeout_s: float) -> bytes:
        deadline = time.monotonic() + timeout_s
        fd = self.proc.stdout.fileno()
        while True:
            nl = self.buf.find(b"\n")
            if nl >= 0:
                line = bytes(self.buf[:nl])
                del self.buf[:nl + 1]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise DetectorTimeout(f"no response line within {timeout_s:.1f}s")
            ready, _, _ = select.select([fd], [], [], min(remaining, 0.5))
            if not ready:
                continue
            chunk = os.read(fd, 65536)
            if chunk:
                self.buf.extend(chunk)
            else:
                code = self.proc.poll()
                raise ProcessExit(f"detector subprocess closed its output (exit code {code})",
                                  returncode=code)


class SubprocessSession:
    """Persistent NDJSON session with a spawned detector bridge."""

    def __init__(self, endpoint: DetectorEndpoint):
        self.endpoint = endpoint
        self.proc = subprocess.Popen(
            list(endpoint.command), stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        self.channel = _LineChannel(self.proc)
        self.next_id = 0
        self._await_ready()

    def _await_ready(self):
        raw = self.channel.readline(self.endpoint.timeout_ms / 1000.0)
        try:
            obj = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"bad readiness line: {exc}", payload=raw) from exc
        if not (isinstance(obj, dict) and obj.get("ready") is True):
            raise ProtocolError("detector did not signal readiness", payload=raw)

    def detect(self, sample: RenderedSample, image_path: Optional[str] = None) -> DetectionSet:
        if image_path is None:
            raise ConfigError("subprocess detector needs the sample persisted to a PNG path")
        request_id = self.next_id
        self.next_id += 1
        height, width = sample.image.shape[:2]
        payload = serialize_request(request_id, str(Path(image_path).resolve()), width, height)
        try:
            self.proc.stdin.write(payload)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProcessExit(f"detector subprocess pipe closed: {exc}",
                              returncode=self.proc.poll()) from exc
        raw = self.channel.readline(self.endpoint.timeout_ms / 1000.0)
        return parse_response(raw, request_id)

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
                self.proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self.proc.kill()
                self.proc.wait()


class HttpSession:
    """One request at a time against POST {url}/detect."""

    def __init__(self, endpoint: DetectorEndpoint):
        self.endpoint = endpoint
        self.base = endpoint.url.rstrip("/")
        self.next_id = 0

    def detect(self, sample: RenderedSample, image_path: Optional[str] = None) -> DetectionSet:
        request_id = self.next_id
        self.next_id += 1
        height, width = sample.image.shape[:2]
        body = json.dumps({
            "id": request_id,
            "image_b64": base64.b64encode(png_bytes(sample.image)).decode("ascii"),
            "width": width,
            "height": height,
        }).encode("utf-8")
        req = urllib.request.Request(self.base + "/detect", data=body,
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.endpoint.timeout_ms / 1000.0) as resp:
                raw = resp.read()
                status = resp.status
        except urllib.error.HTTPError as exc:
            raise RequestFailed(f"detector returned HTTP {exc.code}: {exc.read()[:200]!r}") from exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, TimeoutError):
                raise DetectorTimeout(f"no HTTP response within {self.endpoint.timeout_ms} ms") from exc
            raise ProtocolError(f"HTTP transport failure: {exc.reason}") from exc
        except TimeoutError as exc:
            raise DetectorTimeout(f"no HTTP response within {self.endpoint.timeout_ms} ms") from exc
        if status != 200:
            raise ProtocolError(f"unexpected HTTP status {status}", payload=raw)
        return parse_response(raw.rstrip(b"\n"), request_id)

    def close(self):
        pass


def open_session(endpoint: DetectorEndpoint, space: ModificationSpace):
    """Open one single-owner detector session for the given space."""
    if endpoint.kind == "mock":
        return _SessionGuard(MockSession(endpoint.mock_spec, space))
    if endpoint.kind == "subprocess":
        return _SessionGuard(SubprocessSession(endpoint))
    return _SessionGuard(HttpSession(endpoint))


class _SessionGuard:
    """Context-manager wrapper so sessions always get closed."""

    def __init__(self, session):
        self.session = session

    def __enter__(self):
        return self.session

    def __exit__(self, *exc):
        self.session.close()
        return False
