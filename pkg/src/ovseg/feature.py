"""Per-superpoint embeddings via point-prompted masks and whitened crops.

A FeatureProvider supplies three model operations: image embedding, text
embedding, and promptable 2D segmentation. The pipeline only ever talks to
this interface; concrete backends are the in-process synthetic provider
(deterministic, model-free) and an HTTP client speaking the provider wire
protocol:

    POST /embed_image {"image": <b64 png>}            -> {"embedding": [...]}
    POST /embed_text  {"text": "..."}                 -> {"embedding": [...]}
    POST /segment     {"image": <b64 png>, "points": [[u,v],...]} -> {"mask": <b64 png>}
    GET  /info                                        -> {"dim": d, ...}
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import EmptyMask, NoVisiblePoints, ProviderUnavailable
from .scene_io import CameraView
from .superpoint import SuperpointGraph
from .visibility import VisibilityTable, top_k_views


@dataclass
class FeatureConfig:
    prompts_per_view: int = 5
    crop_padding: float = 0.1  # fraction of the mask bbox diagonal
    seed: int = 0
    min_mask_pixels: int = 16

    def validate(self) -> None:
        if self.prompts_per_view < 1:
            raise ValueError("prompts_per_view must be >= 1")
        if self.crop_padding < 0:
            raise ValueError("crop_padding must be >= 0")


class FeatureProvider(Protocol):
    def embed_image(self, rgb: np.ndarray) -> np.ndarray: ...

    def embed_text(self, text: str) -> np.ndarray: ...

    def segment(self, rgb: np.ndarray, points: np.ndarray) -> np.ndarray: ...

    def info(self) -> dict: ...


def l2_normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def derive_prompt_seed(base_seed: int, sp_id: int, view_id: str) -> int:
    """Stable per-(superpoint, view) RNG seed."""
    digest = hashlib.sha256(f"{base_seed}|{sp_id}|{view_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def sample_prompts(
    visible: tuple[np.ndarray, np.ndarray], m: int, seed: int
) -> np.ndarray:
    """Draw min(m, n) pixels uniformly without replacement from visible points.

    visible is the (point indices, pixels) pair stored in a VisibilityTable.
    """
    _, pixels = visible
    n = len(pixels)
    if n == 0:
        raise NoVisiblePoints("cannot sample prompts from an empty visible set")
    rng = np.random.default_rng(seed)
    take = min(m, n)
    chosen = rng.choice(n, size=take, replace=False)
    return pixels[np.sort(chosen)]


def mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Tight (x0, y0, x1, y1) bounds of true pixels, half-open on the right/bottom."""
    ys, xs = np.nonzero(mask)
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def masked_crop(
    rgb: np.ndarray,
    mask: np.ndarray,
    padding: float,
    min_mask_pixels: int = 1,
) -> np.ndarray:
    """Crop to the mask's padded bounding box, whitening pixels outside the mask.

    Padding is a fraction of the bbox diagonal, rounded half-up to pixels and
    clamped to the image. Pixels outside the mask become pure white (255,255,255).
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != rgb.shape[:2]:
        raise ValueError("mask and image dimensions differ")
    n_mask = int(mask.sum())
    if n_mask < max(min_mask_pixels, 1):
        raise EmptyMask(f"mask has {n_mask} pixels, minimum is {min_mask_pixels}")
    x0, y0, x1, y1 = mask_bbox(mask)
    diag = float(np.hypot(x1 - x0, y1 - y0))
    pad = int(np.floor(padding * diag + 0.5))
    h, w = mask.shape
    x0, y0 = max(0, x0 - pad), max(0, y0 - pad)
    x1, y1 = min(w, x1 + pad), min(h, y1 + pad)
    crop = rgb[y0:y1, x0:x1].copy()
    crop[~mask[y0:y1, x0:x1]] = 255
    return crop


def extract_superpoint_feature(
    sp_id: int,
    table: VisibilityTable,
    views_by_id: dict[str, CameraView],
    provider: FeatureProvider,
    cfg: FeatureConfig,
    k: int,
    min_visible: int,
) -> np.ndarray | None:
    """One unit-norm embedding per superpoint, or None if no view yields a crop.

    For each of the top-k views: sample prompt pixels from the visible
    members, ask the provider for a mask, build the whitened crop, embed it.
    The result is the renormalized mean of the per-view embeddings.
    """
    embeddings = []
    for view_id in top_k_views(table, sp_id, k, min_visible):
        visible = table.visible_points.get((sp_id, view_id))
        if visible is None or len(visible[0]) == 0:
            continue
        view = views_by_id[view_id]
        prompts = sample_prompts(visible, cfg.prompts_per_view, derive_prompt_seed(cfg.seed, sp_id, view_id))
        mask = provider.segment(view.rgb, prompts)
        try:
            crop = masked_crop(view.rgb, mask, cfg.crop_padding, cfg.min_mask_pixels)
        except EmptyMask:
            continue
        embeddings.append(l2_normalize(provider.embed_image(crop)))
    if not embeddings:
        return None
    return l2_normalize(np.mean(embeddings, axis=0))


def extract_features(
    graph: SuperpointGraph,
    table: VisibilityTable,
    views: list[CameraView],
    provider: FeatureProvider,
    cfg: FeatureConfig,
    k: int,
    min_visible: int,
    sp_ids: list[int] | None = None,
) -> dict[int, np.ndarray]:
    """Extract features for the given superpoints (all when sp_ids is None).

    Superpoints for which extraction fails are simply absent from the result.
    """
    cfg.validate()
    views_by_id = {v.view_id: v for v in views}
    ids = sorted(sp.id for sp in graph.superpoints) if sp_ids is None else sorted(sp_ids)
    out: dict[int, np.ndarray] = {}
    for sp_id in ids:
        feat = extract_superpoint_feature(
            sp_id, table, views_by_id, provider, cfg, k, min_visible
        )
        if feat is not None:
            out[sp_id] = feat
    return out


# ---------------------------------------------------------------------------
# Synthetic provider: deterministic color-semantics stand-in for real models


_HUE_BINS = 12
_GRAY_BINS = 4
_HIST_BINS = _HUE_BINS + _GRAY_BINS
_SAT_MIN = 0.25
_VAL_MIN = 0.2
_FLOOD_TOL = 10  # per-channel max-abs color distance for flood fill

_COLOR_WORDS = {
    "red": 0,
    "orange": 1,
    "yellow": 2,
    "chartreuse": 3,
    "green": 4,
    "teal": 5,
    "cyan": 6,
    "azure": 7,
    "blue": 8,
    "purple": 9,
    "violet": 9,
    "magenta": 10,
    "pink": 11,
    "black": _HUE_BINS + 0,
    "gray": _HUE_BINS + 1,
    "grey": _HUE_BINS + 1,
    "silver": _HUE_BINS + 2,
    "white": _HUE_BINS + 3,
}


def _rgb_to_hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    arr = rgb.reshape(-1, 3).astype(np.float64) / 255.0
    mx = arr.max(axis=1)
    mn = arr.min(axis=1)
    delta = mx - mn
    h = np.zeros(len(arr))
    r, g, b = arr[:, 0], arr[:, 1], arr[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        hr = np.mod((g - b) / delta, 6.0)
        hg = (b - r) / delta + 2.0
        hb = (r - g) / delta + 4.0
    h = np.where(mx == r, hr, np.where(mx == g, hg, hb))
    h = np.where(delta > 0, h / 6.0, 0.0)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return h, s, mx


class SyntheticProvider:
    """Deterministic provider built on coarse HSV color histograms.

    embed_image histograms the non-white pixels (pure white is the whitening
    sentinel and is ignored unless the image is entirely white); embed_text
    maps color words into the same histogram space and hashes unknown words
    to pseudo-random unit vectors; segment flood-fills near-uniform color
    regions from the prompt pixels and unions them.
    """

    def __init__(self, dim: int = 32):
        if dim < 8:
            raise ValueError("synthetic provider requires dim >= 8")
        self.dim = dim

    def info(self) -> dict:
        return {"dim": self.dim, "name": f"synthetic-{self.dim}"}

    def _embed_histogram(self, hist: np.ndarray) -> np.ndarray:
        out = np.zeros(self.dim)
        if self.dim >= _HIST_BINS:
            out[:_HIST_BINS] = hist
        else:
            for i, v in enumerate(hist):
                out[i % self.dim] += v
        return l2_normalize(out)

    def embed_image(self, rgb: np.ndarray) -> np.ndarray:
        rgb = np.asarray(rgb, dtype=np.uint8)
        flat = rgb.reshape(-1, 3)
        non_white = ~np.all(flat == 255, axis=1)
        if not np.any(non_white):
            hist = np.zeros(_HIST_BINS)
            hist[_HUE_BINS + _GRAY_BINS - 1] = 1.0
            return self._embed_histogram(hist)
        h, s, v = _rgb_to_hsv(flat[non_white])
        hist = np.zeros(_HIST_BINS)
        colored = (s >= _SAT_MIN) & (v >= _VAL_MIN)
        hue_bin = np.minimum((h[colored] * _HUE_BINS).astype(int), _HUE_BINS - 1)
        np.add.at(hist, hue_bin, 1.0)
        gray_bin = np.minimum((v[~colored] * _GRAY_BINS).astype(int), _GRAY_BINS - 1)
        np.add.at(hist, _HUE_BINS + gray_bin, 1.0)
        return self._embed_histogram(hist)

    def embed_text(self, text: str) -> np.ndarray:
        word = text.strip().lower()
        if word in _COLOR_WORDS:
            hist = np.zeros(_HIST_BINS)
            hist[_COLOR_WORDS[word]] = 1.0
            return self._embed_histogram(hist)
        digest = hashlib.sha256(word.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return l2_normalize(rng.standard_normal(self.dim))

    def segment(self, rgb: np.ndarray, points: np.ndarray) -> np.ndarray:
        rgb = np.asarray(rgb, dtype=np.uint8)
        h, w = rgb.shape[:2]
        mask = np.zeros((h, w), dtype=bool)
        structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])  # 4-connectivity
        by_color: dict[tuple[int, int, int], list[tuple[int, int]]] = {}
        for u, v in np.atleast_2d(np.asarray(points, dtype=np.float64)):
            px = min(max(int(np.floor(u + 0.5)), 0), w - 1)
            py = min(max(int(np.floor(v + 0.5)), 0), h - 1)
            by_color.setdefault(tuple(int(c) for c in rgb[py, px]), []).append((py, px))
        rgb_i = rgb.astype(np.int64)
        for color, pix in sorted(by_color.items()):
            close = np.all(np.abs(rgb_i - np.asarray(color)) <= _FLOOD_TOL, axis=2)
            labels, _ = ndimage.label(close, structure=structure)
            wanted = sorted({int(labels[py, px]) for py, px in pix})
            mask |= np.isin(labels, wanted)
        return mask


def synthetic_provider(dim: int = 32) -> SyntheticProvider:
    return SyntheticProvider(dim)


# ---------------------------------------------------------------------------
# HTTP provider client (wire protocol consumer)


def _png_b64(rgb: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _b64_mask(data: str) -> np.ndarray:
    raw = base64.b64decode(data)
    with Image.open(io.BytesIO(raw)) as img:
        arr = np.asarray(img.convert("L"))
    return arr >= 128


class HttpProvider:
    """Client for a model service speaking the provider wire protocol."""

    def __init__(self, base_url: str, timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._info: dict | None = None

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        url = self.base_url + path
        data = None
        headers = {}
        if payload is not None:
            data = json.dumps(payload).encode("utf-8")
            headers["Content-Type"] = "application/json"
        req = urllib.request.Request(url, data=data, headers=headers, method=method)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            if exc.code >= 500 or exc.code == 503:
                retry_after = exc.headers.get("Retry-After")
                raise ProviderUnavailable(
                    f"{url}: HTTP {exc.code}",
                    retry_after=float(retry_after) if retry_after else None,
                ) from exc
            body = exc.read().decode("utf-8", errors="replace")[:200]
            raise RuntimeError(f"{url}: HTTP {exc.code}: {body}") from exc
        except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
            raise ProviderUnavailable(f"{url}: {exc}") from exc

    def info(self) -> dict:
        if self._info is None:
            self._info = self._request("GET", "/info")
        return self._info

    def embed_image(self, rgb: np.ndarray) -> np.ndarray:
        resp = self._request("POST", "/embed_image", {"image": _png_b64(rgb)})
        return l2_normalize(np.asarray(resp["embedding"], dtype=np.float64))

    def embed_text(self, text: str) -> np.ndarray:
        resp = self._request("POST", "/embed_text", {"text": text})
        return l2_normalize(np.asarray(resp["embedding"], dtype=np.float64))

    def segment(self, rgb: np.ndarray, points: np.ndarray) -> np.ndarray:
        pts = [[float(u), float(v)] for u, v in np.atleast_2d(points)]
        resp = self._request("POST", "/segment", {"image": _png_b64(rgb), "points": pts})
        return _b64_mask(resp["mask"])


# ---------------------------------------------------------------------------
# Provider wrappers


class CallCountingProvider:
    """Records how many calls each operation receives; used for protocol checks."""

    def __init__(self, inner: FeatureProvider, name: str = ""):
        self.inner = inner
        self.name = name
        self.calls = {"embed_image": 0, "embed_text": 0, "segment": 0, "info": 0}

    def embed_image(self, rgb):
        self.calls["embed_image"] += 1
        return self.inner.embed_image(rgb)

    def embed_text(self, text):
        self.calls["embed_text"] += 1
        return self.inner.embed_text(text)

    def segment(self, rgb, points):
        self.calls["segment"] += 1
        return self.inner.segment(rgb, points)

    def info(self):
        self.calls["info"] += 1
        return self.inner.info()

    def snapshot(self) -> dict:
        return dict(self.calls)


class RetryingProvider:
    """Retries ProviderUnavailable with exponential backoff, honoring Retry-After."""

    def __init__(self, inner: FeatureProvider, attempts: int = 5, base_delay: float = 0.5):
        self.inner = inner
        self.attempts = max(1, attempts)
        self.base_delay = base_delay

    def _retry(self, fn, *args):
        last: ProviderUnavailable | None = None
        for attempt in range(self.attempts):
            try:
                return fn(*args)
            except ProviderUnavailable as exc:
                last = exc
                if attempt == self.attempts - 1:
                    break
                delay = exc.retry_after or self.base_delay * (2**attempt)
                time.sleep(min(delay, 10.0))
        assert last is not None
        raise last

    def embed_image(self, rgb):
        return self._retry(self.inner.embed_image, rgb)

    def embed_text(self, text):
        return self._retry(self.inner.embed_text, text)

    def segment(self, rgb, points):
        return self._retry(self.inner.segment, rgb, points)

    def info(self):
        return self._retry(self.inner.info)
