"""Read-only HTTP service over cached pipeline artifacts.

Endpoints:

    GET  /api/scene     binary payload: u32 header length, JSON header, then
                        positions as u16 grid coordinates (origin + voxel in
                        the header), u8 RGB colors, u32 superpoint ids, all
                        little-endian and planar in that order.
    GET  /api/meta      config summary, superpoint count, colormap endpoints
    POST /api/query     {"prompt": str} -> {"sp_scores", "normalization"}
    POST /api/instances {"prompt", "threshold"?, "percentile"?, "epsilon"?,
                        "min_cluster_size"?} -> {"instances": [...]}
    GET  /<path>        static viewer files from the configured directory

The server never writes to the cache; all shared state is immutable after
startup, so concurrent requests are safe.
"""

from __future__ import annotations

import json
import struct
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .errors import EmptyPrompt, OvsegError, ProviderUnavailable
from .pipeline import PipelineConfig, StagePaths, load_feature_stage, make_provider
from .query import ClusterConfig, cluster_instances, score_query, threshold_points
from .scene_io import PointCloud, load_scene_cache
from .superpoint import SuperpointGraph

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "application/javascript",
    ".mjs": "application/javascript",
    ".css": "text/css",
    ".json": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
    ".ico": "image/x-icon",
    ".map": "application/json",
}


def build_scene_payload(cloud: PointCloud, point_to_sp: np.ndarray, voxel_size: float) -> bytes:
    """Compact binary cloud: quantized positions, colors, superpoint ids."""
    origin = cloud.positions.min(axis=0)
    grid = np.floor((cloud.positions - origin) / voxel_size + 0.5)
    if grid.max() > 65535:
        # Fall back to a coarser grid that still fits u16.
        voxel_size = float((cloud.positions.max(axis=0) - origin).max() / 65535.0)
        grid = np.floor((cloud.positions - origin) / voxel_size + 0.5)
    header = {
        "count": int(cloud.count),
        "origin": [float(x) for x in origin],
        "voxel_size": voxel_size,
        "layout": ["position:u16x3", "color:u8x3", "superpoint:u32"],
        "byte_order": "little",
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [struct.pack("<I", len(header_bytes)), header_bytes]
    parts.append(grid.astype("<u2").tobytes())
    parts.append(np.ascontiguousarray(cloud.colors, dtype=np.uint8).tobytes())
    parts.append(point_to_sp.astype("<u4").tobytes())
    return b"".join(parts)


@dataclass
class ServeState:
    cfg: PipelineConfig
    cloud: PointCloud
    graph: SuperpointGraph
    features: dict[int, np.ndarray]
    provider: object
    payload: bytes
    static_dir: Path | None


def build_state(cfg: PipelineConfig, static_dir: str | None = None) -> ServeState:
    graph, features, _ = load_feature_stage(cfg)
    cloud = load_scene_cache(StagePaths.resolve(cfg).cloud).cloud
    provider = make_provider(cfg.query_provider_url, cfg, "query")
    payload = build_scene_payload(cloud, graph.point_to_sp, cfg.voxel_size)
    return ServeState(
        cfg=cfg,
        cloud=cloud,
        graph=graph,
        features=features,
        provider=provider,
        payload=payload,
        static_dir=Path(static_dir) if static_dir else None,
    )


class ApiHandler(BaseHTTPRequestHandler):
    state: ServeState  # assigned by make_server

    # Quiet request logging; tests spin up many requests.
    def log_message(self, fmt, *args):
        pass

    def _send(self, code: int, body: bytes, content_type: str = "application/json") -> None:
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, code: int, obj) -> None:
        self._send(code, json.dumps(obj, sort_keys=True).encode("utf-8"))

    def _read_json(self) -> dict | None:
        try:
            length = int(self.headers.get("Content-Length", 0))
            return json.loads(self.rfile.read(length).decode("utf-8"))
        except (ValueError, json.JSONDecodeError):
            return None

    def do_GET(self):
        state = self.state
        if self.path == "/api/scene":
            self._send(200, state.payload, "application/octet-stream")
        elif self.path == "/api/meta":
            self._send_json(
                200,
                {
                    "n_superpoints": state.graph.n_superpoints,
                    "n_points": state.cloud.count,
                    "voxel_size": state.cfg.voxel_size,
                    "merge": {"tau": state.cfg.merge.tau, "rounds": state.cfg.merge.rounds},
                    "cluster": {
                        "epsilon": state.cfg.cluster.epsilon,
                        "min_cluster_size": state.cfg.cluster.min_cluster_size,
                    },
                    "colormap": {"low": [0, 0, 255], "high": [255, 255, 0]},
                },
            )
        else:
            self._serve_static()

    def _serve_static(self):
        state = self.state
        if state.static_dir is None:
            self._send_json(404, {"error": "not found"})
            return
        rel = self.path.split("?", 1)[0].lstrip("/")
        if not rel:
            rel = "index.html"
        target = (state.static_dir / rel).resolve()
        try:
            target.relative_to(state.static_dir.resolve())
        except ValueError:
            self._send_json(404, {"error": "not found"})
            return
        if not target.is_file():
            self._send_json(404, {"error": "not found"})
            return
        ctype = _CONTENT_TYPES.get(target.suffix.lower(), "application/octet-stream")
        self._send(200, target.read_bytes(), ctype)

    def do_POST(self):
        state = self.state
        body = self._read_json()
        if body is None or not isinstance(body, dict):
            self._send_json(400, {"error": "malformed JSON body"})
            return
        prompt = body.get("prompt", "")
        if not isinstance(prompt, str) or not prompt.strip():
            self._send_json(400, {"error": "missing or empty 'prompt'"})
            return
        try:
            if self.path == "/api/query":
                result = score_query(prompt, state.features, state.provider, state.graph)
                self._send_json(
                    200,
                    {
                        "prompt": prompt,
                        "sp_scores": {str(k): v for k, v in sorted(result.sp_scores.items())},
                        "normalization": {
                            "lo": result.normalization[0],
                            "hi": result.normalization[1],
                        },
                    },
                )
            elif self.path == "/api/instances":
                result = score_query(prompt, state.features, state.provider, state.graph)
                ccfg = ClusterConfig(
                    score_threshold_mode=state.cfg.cluster.score_threshold_mode,
                    score_threshold=state.cfg.cluster.score_threshold,
                    epsilon=float(body.get("epsilon", state.cfg.cluster.epsilon)),
                    min_cluster_size=int(
                        body.get("min_cluster_size", state.cfg.cluster.min_cluster_size)
                    ),
                )
                if "threshold" in body:
                    ccfg.score_threshold_mode = "absolute"
                    ccfg.score_threshold = float(body["threshold"])
                elif "percentile" in body:
                    ccfg.score_threshold_mode = "percentile"
                    ccfg.score_threshold = float(body["percentile"])
                selected = threshold_points(result, ccfg)
                instances = cluster_instances(
                    selected, state.cloud, ccfg, point_scores=result.point_scores
                )
                self._send_json(
                    200,
                    {
                        "prompt": prompt,
                        "instances": [
                            {
                                "id": inst.instance_id,
                                "size": int(len(inst.point_indices)),
                                "score": inst.score,
                                "point_indices": [int(i) for i in inst.point_indices],
                            }
                            for inst in instances
                        ],
                    },
                )
            else:
                self._send_json(404, {"error": "not found"})
        except ProviderUnavailable as exc:
            self.send_response(503)
            self.send_header("Content-Type", "application/json")
            if exc.retry_after:
                self.send_header("Retry-After", str(int(exc.retry_after)))
            body_bytes = json.dumps({"error": str(exc)}).encode()
            self.send_header("Content-Length", str(len(body_bytes)))
            self.end_headers()
            self.wfile.write(body_bytes)
        except EmptyPrompt:
            self._send_json(400, {"error": "empty prompt"})
        except OvsegError as exc:
            self._send_json(400, {"error": str(exc)})


def make_server(state: ServeState, host: str, port: int) -> ThreadingHTTPServer:
    handler = type("BoundApiHandler", (ApiHandler,), {"state": state})
    return ThreadingHTTPServer((host, port), handler)


def serve_forever(cfg: PipelineConfig, bind: str, static_dir: str | None = None) -> None:
    host, _, port_str = bind.rpartition(":")
    state = build_state(cfg, static_dir)
    server = make_server(state, host or "127.0.0.1", int(port_str))
    print(
        f"serving {state.cloud.count} points / {state.graph.n_superpoints} superpoints "
        f"on http://{host or '127.0.0.1'}:{port_str}"
    )
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


def start_background(cfg: PipelineConfig, host: str, port: int, static_dir: str | None = None):
    """Start the server on a daemon thread; returns (server, state). Test helper."""
    state = build_state(cfg, static_dir)
    server = make_server(state, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, state
