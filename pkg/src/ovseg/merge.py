"""Greedy similarity-ordered merging of adjacent superpoints.

A merge round scores every adjacency edge once, walks the edges from the
strongest down, and merges an edge only if the two sides' *current*
representative features (member-count-weighted means of their constituents,
renormalized) are still at least tau apart in cosine. Superpoints without a
feature never merge. Between rounds the caller may re-extract features for
the superpoints that changed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DimMismatch
from .feature import l2_normalize
from .superpoint import Superpoint, SuperpointGraph


@dataclass
class MergeConfig:
    tau: float = 0.95
    rounds: int = 8
    reextract_each_round: bool = True

    def validate(self) -> None:
        if not (0.0 < self.tau <= 1.0):
            raise ValueError("tau must be in (0, 1]")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")


@dataclass
class MergeRoundReport:
    n_superpoints_before: int
    n_merges: int
    n_superpoints_after: int
    mean_edge_similarity: float
    # Bookkeeping for incremental re-extraction and tau-soundness audits;
    # not part of the JSONL export.
    merged_ids: list[int] = field(default_factory=list)
    id_map: dict[int, int] = field(default_factory=dict)
    decision_similarities: list[float] = field(default_factory=list)

    def to_json_dict(self, round_index: int) -> dict:
        return {
            "round": round_index,
            "n_superpoints_before": self.n_superpoints_before,
            "n_merges": self.n_merges,
            "n_superpoints_after": self.n_superpoints_after,
            "mean_edge_similarity": self.mean_edge_similarity,
        }


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit-norm feature vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatch(f"feature dims differ: {a.shape} vs {b.shape}")
    return float(a @ b)


class _UnionFind:
    def __init__(self, ids):
        self.parent = {i: i for i in ids}

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:  # path compression
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        root = min(ra, rb)
        self.parent[ra] = root
        self.parent[rb] = root
        return root


def merge_round(
    graph: SuperpointGraph,
    features: dict[int, np.ndarray],
    tau: float,
) -> tuple[SuperpointGraph, dict[int, np.ndarray], MergeRoundReport]:
    """One greedy merge pass; returns the contracted graph, remapped features,
    and a round report.

    Edge order is fixed by the similarities of the *original* features
    (descending, ties toward the lexicographically smaller id pair); the
    merge decision itself always re-checks the live representatives.
    """
    sp_by_id = {sp.id: sp for sp in graph.superpoints}
    weights = {sp.id: float(sp.member_count) for sp in graph.superpoints}

    scored: list[tuple[float, int, int]] = []
    for a, b in sorted(graph.edges):
        if a in features and b in features:
            scored.append((cosine_similarity(features[a], features[b]), a, b))
    scored.sort(key=lambda t: (-t[0], t[1], t[2]))
    mean_sim = float(np.mean([s for s, _, _ in scored])) if scored else 0.0

    uf = _UnionFind(sp_by_id)
    # Weighted feature accumulators; representative feature = normalize(acc).
    acc = {i: features[i] * weights[i] for i in features}
    n_merges = 0
    decisions: list[float] = []
    for _, a, b in scored:
        ra, rb = uf.find(a), uf.find(b)
        if ra == rb:
            continue
        sim = cosine_similarity(l2_normalize(acc[ra]), l2_normalize(acc[rb]))
        if sim >= tau:
            merged_acc = acc[ra] + acc[rb]
            root = uf.union(ra, rb)
            acc[root] = merged_acc
            n_merges += 1
            decisions.append(sim)
    assert all(s >= tau for s in decisions), "merged below tau"

    # Rebuild: group constituents per root, new ids ordered by smallest member id.
    groups: dict[int, list[int]] = {}
    for sp_id in sp_by_id:
        groups.setdefault(uf.find(sp_id), []).append(sp_id)
    ordered_roots = sorted(groups, key=lambda r: min(groups[r]))
    id_map: dict[int, int] = {}
    new_sps: list[Superpoint] = []
    new_features: dict[int, np.ndarray] = {}
    merged_ids: list[int] = []
    for new_id, root in enumerate(ordered_roots):
        constituents = sorted(groups[root])
        for c in constituents:
            id_map[c] = new_id
        members = np.sort(np.concatenate([sp_by_id[c].point_indices for c in constituents]))
        w = np.array([weights[c] for c in constituents])
        centroids = np.stack([sp_by_id[c].centroid for c in constituents])
        centroid = (centroids * w[:, None]).sum(axis=0) / w.sum()
        nsum = (np.stack([sp_by_id[c].mean_normal for c in constituents]) * w[:, None]).sum(axis=0)
        nlen = np.linalg.norm(nsum)
        mean_normal = nsum / nlen if nlen > 1e-12 else sp_by_id[constituents[0]].mean_normal
        new_sps.append(
            Superpoint(
                id=new_id,
                point_indices=members.astype(np.int64),
                centroid=centroid,
                mean_normal=mean_normal,
                member_count=int(len(members)),
            )
        )
        if len(constituents) == 1:
            if constituents[0] in features:
                new_features[new_id] = features[constituents[0]]
        else:
            new_features[new_id] = l2_normalize(acc[root])
            merged_ids.append(new_id)

    new_edges: set[tuple[int, int]] = set()
    for a, b in graph.edges:
        na, nb = id_map[a], id_map[b]
        if na != nb:
            new_edges.add((min(na, nb), max(na, nb)))

    point_to_sp = np.empty_like(graph.point_to_sp)
    for old_id, new_id in id_map.items():
        point_to_sp[sp_by_id[old_id].point_indices] = new_id

    new_graph = SuperpointGraph(superpoints=new_sps, edges=new_edges, point_to_sp=point_to_sp)
    report = MergeRoundReport(
        n_superpoints_before=len(sp_by_id),
        n_merges=n_merges,
        n_superpoints_after=len(new_sps),
        mean_edge_similarity=mean_sim,
        merged_ids=merged_ids,
        id_map=id_map,
        decision_similarities=decisions,
    )
    assert report.n_superpoints_after == report.n_superpoints_before - report.n_merges
    return new_graph, new_features, report


ReextractHook = Callable[[SuperpointGraph, list[int], dict[int, int]], dict[int, np.ndarray]]
RoundCallback = Callable[[SuperpointGraph, dict[int, np.ndarray], list[MergeRoundReport]], None]


def run_merge_loop(
    graph: SuperpointGraph,
    features: dict[int, np.ndarray],
    cfg: MergeConfig,
    reextract: ReextractHook | None = None,
    on_round: RoundCallback | None = None,
) -> tuple[SuperpointGraph, dict[int, np.ndarray], list[MergeRoundReport]]:
    """Alternate merge rounds with feature re-extraction for changed superpoints.

    Stops after cfg.rounds rounds or on the first round with zero merges.
    The reextract hook receives (new graph, merged superpoint ids, old-to-new
    id map) and returns replacement features; ids it omits keep their
    weighted-mean feature from the round. on_round fires after each round's
    features are settled (used for checkpointing).
    """
    cfg.validate()
    reports: list[MergeRoundReport] = []
    for _ in range(cfg.rounds):
        graph, features, report = merge_round(graph, features, cfg.tau)
        reports.append(report)
        if report.n_merges and cfg.reextract_each_round and reextract is not None:
            updates = reextract(graph, report.merged_ids, report.id_map)
            features.update(updates)
        if on_round is not None:
            on_round(graph, features, reports)
        if report.n_merges == 0:
            break
    return graph, features, reports


def export_merge_report(reports: list[MergeRoundReport], path: str | Path) -> None:
    """One JSON record per round, in execution order."""
    lines = [json.dumps(r.to_json_dict(i), sort_keys=True) for i, r in enumerate(reports)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
