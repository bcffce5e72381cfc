"""The two transports: stdio NDJSON session and HTTP POST /detect.

Both speak the same objects. Request (stdio):
    {"id": <u64>, "image_path": "<abs path>", "width": <px>, "height": <px>}
over HTTP the PNG travels inline as "image_b64" instead of image_path.
Response:
    {"id": <u64>, "detections": [{"label", "confidence", "bbox": {x_min..y_max}}]}
A failed request answers {"id": <u64>, "error": "<message>"} and the
session keeps serving.
"""

from __future__ import annotations

import base64
import io
import json
import sys
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
from PIL import Image

from . import BridgeConfig, DetectorFn, build_detector


def _load_png(path: str) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def _detections_json(detector: DetectorFn, image: np.ndarray) -> list[dict]:
    out = []
    for label, confidence, x_min, y_min, x_max, y_max in detector(image):
        out.append({
            "label": str(label),
            "confidence": float(confidence),
            "bbox": {"x_min": float(x_min), "y_min": float(y_min),
                     "x_max": float(x_max), "y_max": float(y_max)},
        })
    return out


def serve_stdio(config: BridgeConfig, stdin=None, stdout=None) -> None:
    """Run the NDJSON session until end-of-input.

    Emits {"ready": true} once before serving. Any per-request failure
    (unreadable image, plugin exception) becomes an error response; the
    loop only ends when stdin closes.
    """
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    detector = build_detector(config)

    def emit(obj: dict):
        stdout.write(json.dumps(obj, separators=(",", ":")) + "\n")
        stdout.flush()

    emit({"ready": True})
    for line in stdin:
        if not line.strip():
            continue
        request_id = None
        try:
            request = json.loads(line)
            request_id = request["id"]
            detections = _detections_json(detector, _load_png(request["image_path"]))
        except Exception as exc:  # per-request failure: answer and continue
            emit({"id": request_id, "error": f"{type(exc).__name__}: {exc}"})
            continue
        emit({"id": request_id, "detections": detections})


class _DetectHandler(BaseHTTPRequestHandler):
    detector: DetectorFn = None
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # stay quiet on stdout/stderr
        pass

    def _reply(self, status: int, obj: dict):
        body = json.dumps(obj, separators=(",", ":")).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        if self.path != "/detect":
            self._reply(404, {"error": "unknown path"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            request = json.loads(self.rfile.read(length))
            request_id = request["id"]
            png = base64.b64decode(request["image_b64"], validate=True)
            with Image.open(io.BytesIO(png)) as img:
                image = np.asarray(img.convert("RGB"), dtype=np.uint8)
        except Exception as exc:
            self._reply(400, {"error": f"{type(exc).__name__}: {exc}"})
            return
        try:
            detections = _detections_json(self.detector, image)
        except Exception as exc:  # detector failure: valid request, error answer
            self._reply(200, {"id": request_id, "error": f"{type(exc).__name__}: {exc}"})
            return
        self._reply(200, {"id": request_id, "detections": detections})


def serve_http(config: BridgeConfig, port: int, ready_stream=None) -> None:
    """Serve POST /detect one request at a time; port 0 picks a free port.

    The chosen port is announced on ready_stream (default stdout) as
    {"ready": true, "port": <port>} so a parent process can connect
    without racing the bind.
    """
    # staticmethod keeps the callable from being bound as a handler method
    handler = type("BoundHandler", (_DetectHandler,),
                   {"detector": staticmethod(build_detector(config))})
    server = HTTPServer(("127.0.0.1", port), handler)
    stream = ready_stream if ready_stream is not None else sys.stdout
    stream.write(json.dumps({"ready": True, "port": server.server_address[1]}) + "\n")
    stream.flush()
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
