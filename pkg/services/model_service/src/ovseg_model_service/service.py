"""HTTP server for the provider wire protocol.

    POST /embed_image {"image": <b64 png>}                  -> {"embedding": [...]}
    POST /embed_text  {"text": "..."}                       -> {"embedding": [...]}
    POST /segment     {"image": <b64 png>, "points": [[u,v],...]} -> {"mask": <b64 png>}
    GET  /info        -> {"dim", "image_model", "text_model", ...}

Responses are 400 for malformed bodies and 503 with Retry-After while the
backend is still loading. The service holds no per-request state, so
restarting it never changes results for identical inputs.
"""

from __future__ import annotations

import base64
import io
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image


class _ServiceState:
    def __init__(self):
        self.backend = None
        self.error: str | None = None
        self.lock = threading.Lock()


def _decode_image(b64: str) -> np.ndarray:
    raw = base64.b64decode(b64, validate=True)
    with Image.open(io.BytesIO(raw)) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def _encode_mask(mask: np.ndarray) -> str:
    img = Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class ModelHandler(BaseHTTPRequestHandler):
    state: _ServiceState

    def log_message(self, fmt, *args):
        pass

    def _json(self, code: int, obj, extra_headers: dict | None = None) -> None:
        body = json.dumps(obj).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        for k, v in (extra_headers or {}).items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(body)

    def _bad(self, message: str) -> None:
        self._json(400, {"error": message})

    def _backend(self):
        with self.state.lock:
            if self.state.error:
                self._json(500, {"error": self.state.error})
                return None
            if self.state.backend is None:
                self._json(503, {"error": "model loading"}, {"Retry-After": "1"})
                return None
            return self.state.backend

    def do_GET(self):
        if self.path != "/info":
            self._json(404, {"error": "not found"})
            return
        backend = self._backend()
        if backend is None:
            return
        self._json(200, backend.describe())

    def do_POST(self):
        backend = self._backend()
        if backend is None:
            return
        try:
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length).decode("utf-8"))
            if not isinstance(body, dict):
                raise ValueError("body must be a JSON object")
        except (ValueError, json.JSONDecodeError) as exc:
            self._bad(f"malformed JSON body: {exc}")
            return

        if self.path == "/embed_image":
            self._embed_image(backend, body)
        elif self.path == "/embed_text":
            self._embed_text(backend, body)
        elif self.path == "/segment":
            self._segment(backend, body)
        else:
            self._json(404, {"error": "not found"})

    def _embed_image(self, backend, body):
        if "image" not in body:
            self._bad("missing field 'image'")
            return
        try:
            rgb = _decode_image(body["image"])
        except Exception as exc:  # undecodable base64 or image bytes
            self._bad(f"undecodable image: {exc}")
            return
        vec = backend.embed_image(rgb)
        self._json(200, {"embedding": [float(x) for x in vec]})

    def _embed_text(self, backend, body):
        text = body.get("text")
        if not isinstance(text, str) or not text.strip():
            self._bad("missing or empty field 'text'")
            return
        vec = backend.embed_text(text)
        self._json(200, {"embedding": [float(x) for x in vec]})

    def _segment(self, backend, body):
        if "image" not in body:
            self._bad("missing field 'image'")
            return
        try:
            rgb = _decode_image(body["image"])
        except Exception as exc:
            self._bad(f"undecodable image: {exc}")
            return
        points = body.get("points")
        if not isinstance(points, list) or not points:
            self._bad("missing or empty field 'points'")
            return
        h, w = rgb.shape[:2]
        try:
            pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        except ValueError:
            self._bad("'points' must be a list of [u, v] pairs")
            return
        if np.any(pts[:, 0] < 0) or np.any(pts[:, 0] >= w) or np.any(pts[:, 1] < 0) or np.any(pts[:, 1] >= h):
            self._bad("prompt point outside image bounds")
            return
        mask = backend.segment(rgb, pts)
        headers = {}
        px = np.clip(np.floor(pts[:, 0] + 0.5).astype(int), 0, w - 1)
        py = np.clip(np.floor(pts[:, 1] + 0.5).astype(int), 0, h - 1)
        if not bool(np.all(mask[py, px])):
            headers["X-Mask-Warning"] = "prompt points not fully inside returned mask"
        self._json(200, {"mask": _encode_mask(mask)}, headers)


def start_server(
    backend_factory,
    host: str = "127.0.0.1",
    port: int = 0,
    load_delay: float = 0.0,
) -> ThreadingHTTPServer:
    """Start serving; the backend loads on a background thread.

    Requests arriving before loading completes get 503 + Retry-After.
    load_delay artificially postpones readiness (used to test 503 handling).
    """
    state = _ServiceState()

    def load():
        import time

        if load_delay:
            time.sleep(load_delay)
        try:
            backend = backend_factory()
            with state.lock:
                state.backend = backend
        except Exception as exc:  # surfaced as HTTP 500 on every request
            with state.lock:
                state.error = str(exc)

    handler = type("BoundModelHandler", (ModelHandler,), {"state": state})
    server = ThreadingHTTPServer((host, port), handler)
    threading.Thread(target=load, daemon=True).start()
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server
