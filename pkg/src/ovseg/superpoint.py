"""Boundary-preserving oversegmentation into superpoints and their adjacency graph.

The oversegmentation is a seeded Lloyd iteration over the energy

    E(p, s) = ||p - s||^2 / r^2 + lambda_normal * (1 - |n_p . n_s|)

with r fixed to the mean seed spacing of the farthest-point-sampled seeds.
Assignment considers all seeds within 3r of a point, plus the point's current
seed and its globally nearest seed so every point stays assigned; seed updates
are guarded so the total assignment energy never increases. After the final
iteration, superpoints that are disconnected under the point adjacency source
(mesh edges, else k-NN) are split into connected components.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import EmptyCloud, NoValidNormals
from .scene_io import PointCloud, TriangleMesh


@dataclass
class OversegConfig:
    target_points_per_sp: int = 200
    lambda_normal: float = 2.0
    lloyd_iterations: int = 10
    knn_adjacency_k: int = 8
    seed: int = 0

    def validate(self) -> None:
        if self.target_points_per_sp < 1:
            raise ValueError("target_points_per_sp must be >= 1")
        if self.lambda_normal < 0:
            raise ValueError("lambda_normal must be >= 0")
        if self.lloyd_iterations < 1:
            raise ValueError("lloyd_iterations must be >= 1")


@dataclass
class Superpoint:
    id: int
    point_indices: np.ndarray  # sorted ascending, indices into the cloud
    centroid: np.ndarray  # (3,)
    mean_normal: np.ndarray  # (3,) unit
    member_count: int
    feature: np.ndarray | None = None


@dataclass
class SuperpointGraph:
    superpoints: list[Superpoint]
    edges: set[tuple[int, int]]  # unordered pairs stored as (a, b) with a < b
    point_to_sp: np.ndarray  # (n,) int64

    @property
    def n_superpoints(self) -> int:
        return len(self.superpoints)

    def sorted_edges(self) -> np.ndarray:
        if not self.edges:
            return np.empty((0, 2), dtype=np.int64)
        return np.asarray(sorted(self.edges), dtype=np.int64)

    def validate_partition(self, n_points: int | None = None) -> None:
        """Assert the superpoints exactly partition the cloud."""
        n = len(self.point_to_sp) if n_points is None else n_points
        total = sum(sp.member_count for sp in self.superpoints)
        if total != n:
            raise AssertionError(f"partition broken: {total} members for {n} points")
        seen = np.zeros(n, dtype=bool)
        for sp in self.superpoints:
            if sp.member_count != len(sp.point_indices):
                raise AssertionError(f"superpoint {sp.id}: member_count mismatch")
            if len(sp.point_indices) == 0:
                raise AssertionError(f"superpoint {sp.id} is empty")
            if np.any(np.diff(sp.point_indices) <= 0):
                raise AssertionError(f"superpoint {sp.id}: indices not strictly ascending")
            if np.any(seen[sp.point_indices]):
                raise AssertionError(f"superpoint {sp.id}: overlapping membership")
            seen[sp.point_indices] = True
            if np.any(self.point_to_sp[sp.point_indices] != sp.id):
                raise AssertionError(f"superpoint {sp.id}: point_to_sp inconsistent")
        if not np.all(seen):
            raise AssertionError("some points belong to no superpoint")
        ids = {sp.id for sp in self.superpoints}
        for a, b in self.edges:
            if a == b:
                raise AssertionError("self-edge in adjacency")
            if a not in ids or b not in ids:
                raise AssertionError(f"edge ({a},{b}) references a missing superpoint")


# ---------------------------------------------------------------------------
# Point-level adjacency


def point_adjacency(cloud: PointCloud, mesh: TriangleMesh | None, knn_k: int) -> np.ndarray:
    """Undirected point-index pairs: mesh edges if a mapped mesh is given, else k-NN."""
    if mesh is not None and mesh.vertex_to_point is not None and len(mesh.triangles):
        ve = mesh.edges()
        pairs = mesh.vertex_to_point[ve]
    else:
        k = min(knn_k + 1, cloud.count)
        if k < 2:
            return np.empty((0, 2), dtype=np.int64)
        tree = cKDTree(cloud.positions)
        _, idx = tree.query(cloud.positions, k=k)
        src = np.repeat(np.arange(cloud.count, dtype=np.int64), k - 1)
        dst = idx[:, 1:].reshape(-1).astype(np.int64)
        pairs = np.column_stack([src, dst])
    pairs = np.sort(pairs, axis=1)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    if not len(pairs):
        return np.empty((0, 2), dtype=np.int64)
    return np.unique(pairs, axis=0)


def _split_disconnected(labels: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Relabel so each label's members form one connected component.

    New ids are ordered by (original label, first member index), so the
    result is deterministic for a given input.
    """
    n = len(labels)
    if n == 0:
        return labels
    if len(pairs):
        same = labels[pairs[:, 0]] == labels[pairs[:, 1]]
        p = pairs[same]
    else:
        p = np.empty((0, 2), dtype=np.int64)
    graph = coo_matrix((np.ones(len(p)), (p[:, 0], p[:, 1])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    combined = labels.astype(np.int64) * (int(comp.max()) + 1) + comp
    uniq, first_idx = np.unique(combined, return_index=True)
    order = np.lexsort((first_idx, labels[first_idx]))
    remap = np.empty(len(uniq), dtype=np.int64)
    remap[order] = np.arange(len(uniq))
    lookup = {int(u): int(remap[j]) for j, u in enumerate(uniq)}
    return np.asarray([lookup[int(c)] for c in combined], dtype=np.int64)


# ---------------------------------------------------------------------------
# Farthest-point sampling and Lloyd iteration


def farthest_point_sample(positions: np.ndarray, n_samples: int, seed: int) -> np.ndarray:
    """Classic FPS; the first sample is drawn from the seeded RNG."""
    n = len(positions)
    n_samples = min(n_samples, n)
    rng = np.random.default_rng(seed)
    chosen = np.empty(n_samples, dtype=np.int64)
    chosen[0] = rng.integers(n)

    def sq_dist_to(idx):
        diff = positions - positions[idx]
        return np.einsum("ij,ij->i", diff, diff)

    dist2 = sq_dist_to(chosen[0])
    for i in range(1, n_samples):
        nxt = int(np.argmax(dist2))  # argmax takes the first index on ties: deterministic
        chosen[i] = nxt
        np.minimum(dist2, sq_dist_to(nxt), out=dist2)
    return chosen


def _mean_seed_spacing(seed_pos: np.ndarray) -> float:
    if len(seed_pos) < 2:
        return 1.0
    tree = cKDTree(seed_pos)
    d, _ = tree.query(seed_pos, k=2)
    return float(d[:, 1].mean())


def _candidate_pairs(
    point_tree: cKDTree,
    positions: np.ndarray,
    seed_pos: np.ndarray,
    radius: float,
    current: np.ndarray | None,
    nearest: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(point, seed, squared distance) candidates: seeds within radius + fallbacks."""
    n = point_tree.n
    seed_tree = cKDTree(seed_pos)
    rec = point_tree.sparse_distance_matrix(seed_tree, radius, output_type="ndarray")
    all_idx = np.arange(n, dtype=np.int64)

    def sq_dist(seed_ids):
        diff = positions - seed_pos[seed_ids]
        return np.einsum("ij,ij->i", diff, diff)

    parts_pt = [rec["i"].astype(np.int64), all_idx]
    parts_seed = [rec["j"].astype(np.int64), nearest]
    parts_d2 = [rec["v"] * rec["v"], sq_dist(nearest)]
    if current is not None:
        parts_pt.append(all_idx)
        parts_seed.append(current)
        parts_d2.append(sq_dist(current))
    return (
        np.concatenate(parts_pt),
        np.concatenate(parts_seed),
        np.concatenate(parts_d2),
    )


def _point_energy(
    normals: np.ndarray,
    seed_nrm: np.ndarray,
    cand_pt: np.ndarray,
    cand_seed: np.ndarray,
    cand_d2: np.ndarray,
    r: float,
    lam: float,
) -> np.ndarray:
    align = np.abs(np.einsum("ij,ij->i", normals[cand_pt], seed_nrm[cand_seed]))
    return cand_d2 / (r * r) + lam * (1.0 - align)


def oversegment(
    cloud: PointCloud, mesh: TriangleMesh | None, cfg: OversegConfig
) -> SuperpointGraph:
    """Partition the cloud into spatially connected, normal-coherent superpoints.

    Seeds come from farthest-point sampling; assignment/update alternate for
    cfg.lloyd_iterations with the total energy asserted non-increasing; the
    final partition is split into connected components under the adjacency
    source and empty seeds are dropped.
    """
    cfg.validate()
    n = cloud.count
    if n == 0:
        raise EmptyCloud("cannot oversegment an empty cloud")
    if not np.any(cloud.normals_valid):
        raise NoValidNormals("oversegmentation requires valid normals")

    positions = cloud.positions
    normals = np.where(cloud.normals_valid[:, None], cloud.normals, 0.0)

    n_sp = max(1, math.ceil(n / cfg.target_points_per_sp))
    seed_idx = farthest_point_sample(positions, n_sp, cfg.seed)
    seed_pos = positions[seed_idx].copy()
    seed_nrm = normals[seed_idx].copy()
    zero_nrm = np.linalg.norm(seed_nrm, axis=1) < 1e-12
    seed_nrm[zero_nrm] = np.array([0.0, 0.0, 1.0])
    r = _mean_seed_spacing(seed_pos)
    lam = cfg.lambda_normal

    point_tree = cKDTree(positions)
    seed_tree = cKDTree(seed_pos)
    nearest = seed_tree.query(positions, k=1)[1].astype(np.int64)
    labels: np.ndarray | None = None
    prev_total = np.inf
    for _ in range(cfg.lloyd_iterations):
        cand_pt, cand_seed, cand_d2 = _candidate_pairs(
            point_tree, positions, seed_pos, 3.0 * r, labels, nearest
        )
        energy = _point_energy(normals, seed_nrm, cand_pt, cand_seed, cand_d2, r, lam)
        # Per-point argmin; exact-energy ties resolve toward the lowest seed id.
        point_e = np.full(n, np.inf)
        np.minimum.at(point_e, cand_pt, energy)
        at_min = energy <= point_e[cand_pt]
        best_seed = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
        np.minimum.at(best_seed, cand_pt[at_min], cand_seed[at_min])
        labels = best_seed
        total = float(point_e.sum())
        assert total <= prev_total + 1e-9, "assignment energy increased"
        prev_total = total

        # Seed update, guarded per cluster so the energy stays non-increasing.
        counts = np.bincount(labels, minlength=n_sp).astype(np.float64)
        occupied = counts > 0
        new_pos = seed_pos.copy()
        sums = np.zeros((n_sp, 3))
        np.add.at(sums, labels, positions)
        new_pos[occupied] = sums[occupied] / counts[occupied, None]
        nsums = np.zeros((n_sp, 3))
        np.add.at(nsums, labels, normals)
        nlen = np.linalg.norm(nsums, axis=1)
        new_nrm = seed_nrm.copy()
        ok = occupied & (nlen > 1e-12)
        new_nrm[ok] = nsums[ok] / nlen[ok, None]

        diff_new = positions - new_pos[labels]
        e_new = np.einsum("ij,ij->i", diff_new, diff_new) / (r * r) + lam * (
            1.0 - np.abs(np.einsum("ij,ij->i", normals, new_nrm[labels]))
        )
        per_old = np.bincount(labels, weights=point_e, minlength=n_sp)
        per_new = np.bincount(labels, weights=e_new, minlength=n_sp)
        accept = occupied & (per_new <= per_old + 1e-12)
        seed_pos[accept] = new_pos[accept]
        seed_nrm[accept] = new_nrm[accept]
        seed_tree = cKDTree(seed_pos)
        nearest = seed_tree.query(positions, k=1)[1].astype(np.int64)

    assert labels is not None
    # Drop empty seeds; relabel to consecutive ids in seed order.
    used, labels = np.unique(labels, return_inverse=True)
    labels = labels.astype(np.int64)

    pairs = point_adjacency(cloud, mesh, cfg.knn_adjacency_k)
    labels = _split_disconnected(labels, pairs)
    return _graph_from_labels(cloud, labels)


def _graph_from_labels(cloud: PointCloud, labels: np.ndarray) -> SuperpointGraph:
    n_sp = int(labels.max()) + 1 if len(labels) else 0
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    starts = np.searchsorted(sorted_labels, np.arange(n_sp))
    ends = np.append(starts[1:], len(labels))
    superpoints = []
    normals = np.where(cloud.normals_valid[:, None], cloud.normals, 0.0)
    for sp_id in range(n_sp):
        members = np.sort(order[starts[sp_id] : ends[sp_id]])
        centroid = cloud.positions[members].mean(axis=0)
        nsum = normals[members].sum(axis=0)
        nlen = np.linalg.norm(nsum)
        mean_normal = nsum / nlen if nlen > 1e-12 else np.array([0.0, 0.0, 1.0])
        superpoints.append(
            Superpoint(
                id=sp_id,
                point_indices=members.astype(np.int64),
                centroid=centroid,
                mean_normal=mean_normal,
                member_count=len(members),
            )
        )
    return SuperpointGraph(superpoints=superpoints, edges=set(), point_to_sp=labels.copy())


def build_adjacency(
    graph: SuperpointGraph,
    cloud: PointCloud,
    mesh: TriangleMesh | None,
    knn_k: int,
) -> SuperpointGraph:
    """Connect superpoints whose members are adjacent at the point level.

    With a mapped mesh, an edge exists iff some mesh edge joins the two
    superpoints; otherwise k-NN neighborhoods define adjacency. Returns a new
    graph; superpoints and the partition are shared unchanged.
    """
    pairs = point_adjacency(cloud, mesh, knn_k)
    edges: set[tuple[int, int]] = set()
    if len(pairs):
        sp_pairs = graph.point_to_sp[pairs]
        sp_pairs = np.sort(sp_pairs, axis=1)
        sp_pairs = sp_pairs[sp_pairs[:, 0] != sp_pairs[:, 1]]
        if len(sp_pairs):
            for a, b in np.unique(sp_pairs, axis=0):
                edges.add((int(a), int(b)))
    return SuperpointGraph(
        superpoints=graph.superpoints, edges=edges, point_to_sp=graph.point_to_sp
    )


def graph_stats(graph: SuperpointGraph) -> dict:
    sizes = [sp.member_count for sp in graph.superpoints]
    return {
        "n_superpoints": len(sizes),
        "n_edges": len(graph.edges),
        "mean_size": (sum(sizes) / len(sizes)) if sizes else 0.0,
        "min_size": min(sizes) if sizes else 0,
        "max_size": max(sizes) if sizes else 0,
    }


def export_graph_json(graph: SuperpointGraph, path: str | Path) -> None:
    """Write the per-point superpoint id array and edge list as JSON."""
    payload = {
        "point_to_sp": graph.point_to_sp.tolist(),
        "edges": [[int(a), int(b)] for a, b in sorted(graph.edges)],
        "n_superpoints": graph.n_superpoints,
    }
    Path(path).write_text(json.dumps(payload, separators=(",", ":")), encoding="utf-8")
