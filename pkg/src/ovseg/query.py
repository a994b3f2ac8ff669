"""Open-vocabulary querying: similarity scoring, thresholding, instance clustering.

Scores are plain cosines between the query's text embedding and per-superpoint
features, broadcast to points through the partition. Instance extraction
thresholds the per-point scores and density-clusters the surviving points
(DBSCAN semantics: a point is core when its epsilon-ball, itself included,
holds at least min_cluster_size points; clusters are connected components of
core points; border points attach to their nearest core point).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import ply
from .errors import DimMismatch, EmptyPrompt
from .feature import FeatureProvider, l2_normalize
from .scene_io import PointCloud
from .superpoint import SuperpointGraph

HEAT_LOW = np.array([0, 0, 255], dtype=np.float64)  # pure blue
HEAT_HIGH = np.array([255, 255, 0], dtype=np.float64)  # pure yellow
NOISE_COLOR = (128, 128, 128)
INSTANCE_PALETTE = [
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (0, 128, 128),
    (220, 190, 255),
    (170, 110, 40),
]


@dataclass
class ClusterConfig:
    score_threshold_mode: str = "percentile"  # "absolute" | "percentile"
    score_threshold: float = 97.0
    epsilon: float = 0.05  # meters
    min_cluster_size: int = 50

    def validate(self) -> None:
        if self.score_threshold_mode not in ("absolute", "percentile"):
            raise ValueError("score_threshold_mode must be 'absolute' or 'percentile'")
        if self.score_threshold_mode == "percentile" and not (
            0.0 < self.score_threshold < 100.0
        ):
            raise ValueError("percentile threshold must be in (0, 100)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.min_cluster_size < 1:
            raise ValueError("min_cluster_size must be >= 1")


@dataclass
class QueryResult:
    prompt: str
    sp_scores: dict[int, float]
    point_scores: np.ndarray
    normalization: tuple[float, float]  # (lo, hi) display window


@dataclass
class InstanceMask:
    instance_id: int
    point_indices: np.ndarray  # sorted ascending
    score: float  # mean member similarity


def nearest_rank_percentile(values: np.ndarray, p: float) -> float:
    """Classic nearest-rank percentile: the ceil(p/100*n)-th smallest value."""
    values = np.sort(np.asarray(values, dtype=np.float64))
    if len(values) == 0:
        raise ValueError("percentile of empty array")
    rank = max(1, math.ceil(p / 100.0 * len(values)))
    return float(values[rank - 1])


def score_query(
    prompt: str,
    features: dict[int, np.ndarray],
    provider: FeatureProvider,
    graph: SuperpointGraph,
) -> QueryResult:
    """Embed the prompt once and score every superpoint by cosine similarity.

    Superpoints without a feature score 0. The display normalization window
    is the (2nd, 98th) nearest-rank percentile range of the superpoint scores.
    """
    if not prompt.strip():
        raise EmptyPrompt("prompt is empty")
    text = l2_normalize(provider.embed_text(prompt))
    sp_scores: dict[int, float] = {}
    for sp in graph.superpoints:
        feat = features.get(sp.id)
        if feat is None:
            sp_scores[sp.id] = 0.0
            continue
        if feat.shape != text.shape:
            raise DimMismatch(
                f"text embedding dim {text.shape[0]} does not match feature dim "
                f"{feat.shape[0]}; features were extracted with a different provider"
            )
        sp_scores[sp.id] = float(feat @ text)
    score_by_id = np.zeros(max(sp_scores) + 1 if sp_scores else 0)
    for sp_id, s in sp_scores.items():
        score_by_id[sp_id] = s
    point_scores = score_by_id[graph.point_to_sp]
    values = np.asarray(list(sp_scores.values()))
    lo = nearest_rank_percentile(values, 2.0)
    hi = nearest_rank_percentile(values, 98.0)
    return QueryResult(
        prompt=prompt, sp_scores=sp_scores, point_scores=point_scores, normalization=(lo, hi)
    )


def threshold_points(result: QueryResult, cfg: ClusterConfig) -> np.ndarray:
    """Indices of points passing the score threshold, sorted ascending.

    Percentile mode keeps the top floor(n*(100-p)/100) scores; ties at the
    cutoff value are all included (nearest-rank convention).
    """
    scores = result.point_scores
    n = len(scores)
    if cfg.score_threshold_mode == "absolute":
        return np.nonzero(scores >= cfg.score_threshold)[0].astype(np.int64)
    keep = int(math.floor(n * (100.0 - cfg.score_threshold) / 100.0))
    if keep <= 0:
        return np.empty(0, dtype=np.int64)
    if keep >= n:
        return np.arange(n, dtype=np.int64)
    cutoff = np.sort(scores)[n - keep]
    return np.nonzero(scores >= cutoff)[0].astype(np.int64)


def dbscan_labels(positions: np.ndarray, epsilon: float, min_cluster_size: int) -> np.ndarray:
    """Density-cluster positions; returns per-point labels, -1 for noise.

    Core points (epsilon-neighborhood of at least min_cluster_size points,
    itself included) form clusters as connected components; border points
    join the cluster of their nearest core neighbor (ties: lowest index).
    Labels are numbered by each cluster's smallest point index.
    """
    n = len(positions)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    tree = cKDTree(positions)
    pairs = tree.query_pairs(epsilon, output_type="ndarray")
    degree = np.ones(n, dtype=np.int64)  # each point counts itself
    if len(pairs):
        np.add.at(degree, pairs[:, 0], 1)
        np.add.at(degree, pairs[:, 1], 1)
    core = degree >= min_cluster_size

    parent = np.arange(n, dtype=np.int64)

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for a, b in pairs:
        if core[a] and core[b]:
            ra, rb = find(int(a)), find(int(b))
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

    labels = np.full(n, -1, dtype=np.int64)
    for i in np.nonzero(core)[0]:
        labels[i] = find(int(i))

    # Border points: nearest core neighbor within epsilon, ties to lowest index.
    if len(pairs):
        best_dist = np.full(n, np.inf)
        best_core = np.full(n, -1, dtype=np.int64)
        d = np.linalg.norm(positions[pairs[:, 0]] - positions[pairs[:, 1]], axis=1)
        for (a, b), dist in zip(pairs, d):
            a, b = int(a), int(b)
            for p, c in ((a, b), (b, a)):
                if core[c] and not core[p]:
                    if dist < best_dist[p] or (dist == best_dist[p] and c < best_core[p]):
                        best_dist[p] = dist
                        best_core[p] = c
        for p in np.nonzero(best_core >= 0)[0]:
            labels[p] = find(int(best_core[p]))

    # Renumber clusters by smallest member index.
    assigned = labels >= 0
    if np.any(assigned):
        roots, first = np.unique(labels[assigned], return_index=True)
        member_idx = np.nonzero(assigned)[0][first]
        order = np.argsort(member_idx)
        remap = {int(roots[j]): i for i, j in enumerate(order)}
        labels[assigned] = [remap[int(r)] for r in labels[assigned]]
    return labels


def cluster_instances(
    point_indices: np.ndarray,
    cloud: PointCloud,
    cfg: ClusterConfig,
    point_scores: np.ndarray | None = None,
) -> list[InstanceMask]:
    """Density-based instances over the selected points, sorted by size descending."""
    cfg.validate()
    point_indices = np.asarray(sorted(int(i) for i in np.asarray(point_indices).ravel()))
    if len(point_indices) == 0:
        return []
    labels = dbscan_labels(cloud.positions[point_indices], cfg.epsilon, cfg.min_cluster_size)
    instances: list[InstanceMask] = []
    for lbl in range(labels.max() + 1 if len(labels) else 0):
        members = point_indices[labels == lbl]
        score = float(point_scores[members].mean()) if point_scores is not None else 0.0
        instances.append(InstanceMask(instance_id=lbl, point_indices=members, score=score))
    instances.sort(key=lambda m: (-len(m.point_indices), int(m.point_indices[0])))
    for i, inst in enumerate(instances):
        inst.instance_id = i
    return instances


# ---------------------------------------------------------------------------
# Exports


def heatmap_colors(scores: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Blue-to-yellow ramp over [lo, hi], clamped; equal bounds map to midpoint."""
    scores = np.asarray(scores, dtype=np.float64)
    if hi > lo:
        t = np.clip((scores - lo) / (hi - lo), 0.0, 1.0)
    else:
        t = np.full(len(scores), 0.5)
    rgbf = HEAT_LOW[None, :] + t[:, None] * (HEAT_HIGH - HEAT_LOW)[None, :]
    return np.floor(rgbf + 0.5).astype(np.uint8)


def export_heatmap(result: QueryResult, cloud: PointCloud, path: str | Path) -> None:
    """PLY of the cloud colored by similarity over the result's display window."""
    lo, hi = result.normalization
    colors = heatmap_colors(result.point_scores, lo, hi)
    ply.write_ply(
        path,
        {
            "x": cloud.positions[:, 0].astype(np.float32),
            "y": cloud.positions[:, 1].astype(np.float32),
            "z": cloud.positions[:, 2].astype(np.float32),
            "red": colors[:, 0],
            "green": colors[:, 1],
            "blue": colors[:, 2],
        },
    )


def export_instances(
    instances: list[InstanceMask], cloud: PointCloud, path: str | Path
) -> None:
    """PLY with per-point instance id (-1 noise) and a categorical color per instance."""
    n = cloud.count
    ids = np.full(n, -1, dtype=np.int32)
    colors = np.tile(np.asarray(NOISE_COLOR, dtype=np.uint8), (n, 1))
    for inst in instances:
        ids[inst.point_indices] = inst.instance_id
        colors[inst.point_indices] = INSTANCE_PALETTE[inst.instance_id % len(INSTANCE_PALETTE)]
    ply.write_ply(
        path,
        {
            "x": cloud.positions[:, 0].astype(np.float32),
            "y": cloud.positions[:, 1].astype(np.float32),
            "z": cloud.positions[:, 2].astype(np.float32),
            "red": colors[:, 0],
            "green": colors[:, 1],
            "blue": colors[:, 2],
            "instance_id": ids,
        },
    )


def export_query_json(
    result: QueryResult, instances: list[InstanceMask] | None, path: str | Path
) -> None:
    payload = {
        "prompt": result.prompt,
        "sp_scores": {str(k): result.sp_scores[k] for k in sorted(result.sp_scores)},
        "normalization": {"lo": result.normalization[0], "hi": result.normalization[1]},
        "instances": [
            {
                "id": inst.instance_id,
                "size": int(len(inst.point_indices)),
                "score": inst.score,
                "point_indices": [int(i) for i in inst.point_indices],
            }
            for inst in (instances or [])
        ],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
