"""Staged pipeline orchestration with content-addressed caching.

Stages and their dependency chain:

    scene  <- manifest file + every referenced asset
    cloud  <- scene + voxel_size + normals_k       (downsample, normals, mesh map)
    graph  <- cloud + oversegmentation config       (superpoints + adjacency)
    vis    <- graph + occlusion config              (visibility table)
    feat   <- vis + feature/merge configs + both provider identities

Each stage's cache key is a hash of its own inputs plus the upstream key, so
any change invalidates exactly the downstream stages. The feature stage
checkpoints after every merge round and resumes from the last complete
round when re-run after a provider failure.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cache import read_cache, write_cache
from .errors import MissingStage, OvsegError
from .feature import (
    CallCountingProvider,
    FeatureConfig,
    FeatureProvider,
    HttpProvider,
    RetryingProvider,
    SyntheticProvider,
    extract_features,
)
from .merge import MergeConfig, MergeRoundReport, export_merge_report, run_merge_loop
from .query import ClusterConfig, cluster_instances, export_heatmap, export_instances, export_query_json, score_query, threshold_points
from .scene_io import (
    PointCloud,
    SceneBundle,
    estimate_normals,
    load_scene,
    load_scene_cache,
    map_mesh_vertices,
    save_scene_cache,
    voxel_downsample,
)
from .superpoint import (
    OversegConfig,
    Superpoint,
    SuperpointGraph,
    build_adjacency,
    graph_stats,
    oversegment,
)
from .visibility import OcclusionConfig, VisibilityTable, build_visibility

FORMAT_TAG = "ovseg-stages-v1"
SYNTHETIC_URL = "synthetic"


@dataclass
class PipelineConfig:
    manifest: str = "manifest.json"
    cache_dir: str = "cache"
    master_seed: int = 0
    voxel_size: float = 0.005
    normals_k: int = 16
    overseg: OversegConfig = field(default_factory=OversegConfig)
    occlusion: OcclusionConfig = field(default_factory=OcclusionConfig)
    top_k_views: int = 5
    min_visible: int = 24
    feature: FeatureConfig = field(default_factory=FeatureConfig)
    merge: MergeConfig = field(default_factory=MergeConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    merge_provider_url: str = SYNTHETIC_URL
    query_provider_url: str = SYNTHETIC_URL
    synthetic_dim: int = 32
    provider_attempts: int = 5
    provider_backoff: float = 0.5

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "PipelineConfig":
        cfg = PipelineConfig()
        plain = {
            "manifest",
            "cache_dir",
            "master_seed",
            "voxel_size",
            "normals_k",
            "top_k_views",
            "min_visible",
            "merge_provider_url",
            "query_provider_url",
            "synthetic_dim",
            "provider_attempts",
            "provider_backoff",
        }
        for key in plain:
            if key in data:
                setattr(cfg, key, data[key])
        if "overseg" in data:
            cfg.overseg = OversegConfig(**data["overseg"])
        if "occlusion" in data:
            cfg.occlusion = OcclusionConfig(**data["occlusion"])
        if "feature" in data:
            cfg.feature = FeatureConfig(**data["feature"])
        if "merge" in data:
            cfg.merge = MergeConfig(**data["merge"])
        if "cluster" in data:
            cfg.cluster = ClusterConfig(**data["cluster"])
        unknown = set(data) - plain - {"overseg", "occlusion", "feature", "merge", "cluster"}
        if unknown:
            raise OvsegError(f"unknown config keys: {sorted(unknown)}")
        return cfg


def load_config(path: str | Path) -> PipelineConfig:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    cfg = PipelineConfig.from_dict(data)
    # Stage seeds are derived from the master seed so that, e.g., changing
    # prompt sampling can never perturb the oversegmentation.
    cfg.overseg.seed = derive_seed(cfg.master_seed, "overseg")
    cfg.feature.seed = derive_seed(cfg.master_seed, "features")
    return cfg


def save_config(cfg: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True), encoding="utf-8")


def derive_seed(master_seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{master_seed}|{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _hash_parts(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            h.update(part)
        else:
            h.update(json.dumps(part, sort_keys=True, default=str).encode())
        h.update(b"\x00")
    return h.hexdigest()[:16]


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while chunk := fh.read(1 << 20):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Stage keys


def scene_key(cfg: PipelineConfig) -> str:
    manifest_path = Path(cfg.manifest)
    if not manifest_path.exists():
        from .errors import MissingFile

        raise MissingFile(str(manifest_path))
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    base = manifest_path.parent
    digests = [_file_digest(manifest_path)]
    refs = [manifest.get("cloud")]
    if manifest.get("mesh"):
        refs.append(manifest["mesh"])
    for view in manifest.get("views", []):
        refs += [view.get("rgb"), view.get("depth")]
    for ref in refs:
        if ref:
            p = base / ref
            if p.exists():
                digests.append(_file_digest(p))
    return _hash_parts(FORMAT_TAG, "scene", digests)


def cloud_key(cfg: PipelineConfig, upstream: str) -> str:
    return _hash_parts(FORMAT_TAG, "cloud", upstream, cfg.voxel_size, cfg.normals_k)


def graph_key(cfg: PipelineConfig, upstream: str) -> str:
    return _hash_parts(FORMAT_TAG, "graph", upstream, asdict(cfg.overseg))


def vis_key(cfg: PipelineConfig, upstream: str) -> str:
    return _hash_parts(FORMAT_TAG, "vis", upstream, asdict(cfg.occlusion))


def feat_key(cfg: PipelineConfig, upstream: str, merge_info: dict, query_info: dict) -> str:
    return _hash_parts(
        FORMAT_TAG,
        "feat",
        upstream,
        asdict(cfg.feature),
        asdict(cfg.merge),
        cfg.top_k_views,
        cfg.min_visible,
        merge_info,
        query_info,
    )


# ---------------------------------------------------------------------------
# Providers


def make_provider(url: str, cfg: PipelineConfig, role: str) -> CallCountingProvider:
    if url == SYNTHETIC_URL or url.startswith("synthetic:"):
        dim = cfg.synthetic_dim
        if ":" in url and url != SYNTHETIC_URL:
            dim = int(url.split(":", 1)[1])
        inner: FeatureProvider = SyntheticProvider(dim)
    else:
        inner = HttpProvider(url)
    retrying = RetryingProvider(inner, attempts=cfg.provider_attempts, base_delay=cfg.provider_backoff)
    return CallCountingProvider(retrying, name=role)


# ---------------------------------------------------------------------------
# Graph / visibility / features serialization


def save_graph_cache(graph: SuperpointGraph, path: Path, extra_meta: dict | None = None) -> None:
    meta = {"kind": "superpoint_graph", "n_superpoints": graph.n_superpoints}
    meta.update(extra_meta or {})
    write_cache(
        path,
        meta,
        {
            "point_to_sp": graph.point_to_sp,
            "edges": graph.sorted_edges(),
        },
    )


def graph_from_arrays(point_to_sp: np.ndarray, edges: np.ndarray, cloud: PointCloud) -> SuperpointGraph:
    n_sp = int(point_to_sp.max()) + 1 if len(point_to_sp) else 0
    order = np.argsort(point_to_sp, kind="stable")
    sorted_labels = point_to_sp[order]
    starts = np.searchsorted(sorted_labels, np.arange(n_sp))
    ends = np.append(starts[1:], len(point_to_sp))
    normals = np.where(cloud.normals_valid[:, None], cloud.normals, 0.0)
    sps = []
    for sp_id in range(n_sp):
        members = np.sort(order[starts[sp_id] : ends[sp_id]])
        nsum = normals[members].sum(axis=0)
        nlen = np.linalg.norm(nsum)
        sps.append(
            Superpoint(
                id=sp_id,
                point_indices=members.astype(np.int64),
                centroid=cloud.positions[members].mean(axis=0),
                mean_normal=nsum / nlen if nlen > 1e-12 else np.array([0.0, 0.0, 1.0]),
                member_count=len(members),
            )
        )
    edge_set = {(int(a), int(b)) for a, b in edges}
    return SuperpointGraph(superpoints=sps, edges=edge_set, point_to_sp=point_to_sp.astype(np.int64))


def load_graph_cache(path: Path, cloud: PointCloud) -> SuperpointGraph:
    meta, arrays = read_cache(path)
    if meta.get("kind") != "superpoint_graph":
        raise OvsegError(f"{path}: not a graph cache")
    return graph_from_arrays(arrays["point_to_sp"], arrays["edges"], cloud)


def save_visibility_cache(table: VisibilityTable, path: Path) -> None:
    meta = {"kind": "visibility", "view_ids": table.view_ids}
    arrays: dict[str, np.ndarray] = {}
    index = []
    for (sp_id, view_id), (idx, uv) in sorted(table.visible_points.items()):
        key = f"{len(index):06d}"
        index.append({"sp": sp_id, "view": view_id, "key": key})
        arrays[f"vp/{key}/idx"] = idx
        arrays[f"vp/{key}/uv"] = uv
    meta["index"] = index
    write_cache(path, meta, arrays)


def load_visibility_cache(path: Path) -> VisibilityTable:
    meta, arrays = read_cache(path)
    if meta.get("kind") != "visibility":
        raise OvsegError(f"{path}: not a visibility cache")
    table = VisibilityTable(view_ids=meta["view_ids"])
    for entry in meta["index"]:
        key = (int(entry["sp"]), entry["view"])
        idx = arrays[f"vp/{entry['key']}/idx"]
        uv = arrays[f"vp/{entry['key']}/uv"]
        table.counts[key] = len(idx)
        table.visible_points[key] = (idx, uv)
    return table


def _features_to_arrays(features: dict[int, np.ndarray], n_sp: int, prefix: str) -> dict:
    if features:
        dim = len(next(iter(features.values())))
    else:
        dim = 0
    vectors = np.zeros((n_sp, dim))
    present = np.zeros(n_sp, dtype=bool)
    for sp_id, vec in features.items():
        vectors[sp_id] = vec
        present[sp_id] = True
    return {f"{prefix}/vectors": vectors, f"{prefix}/present": present}


def _features_from_arrays(arrays: dict, prefix: str) -> dict[int, np.ndarray]:
    vectors = arrays[f"{prefix}/vectors"]
    present = arrays[f"{prefix}/present"]
    return {int(i): vectors[i].copy() for i in np.nonzero(present)[0]}


# ---------------------------------------------------------------------------
# Stage context


@dataclass
class StagePaths:
    scene: Path
    cloud: Path
    graph: Path
    vis: Path

    @staticmethod
    def resolve(cfg: PipelineConfig) -> "StagePaths":
        cache = Path(cfg.cache_dir)
        cache.mkdir(parents=True, exist_ok=True)
        k_scene = scene_key(cfg)
        k_cloud = cloud_key(cfg, k_scene)
        k_graph = graph_key(cfg, k_cloud)
        k_vis = vis_key(cfg, k_graph)
        return StagePaths(
            scene=cache / f"scene-{k_scene}.ovsg",
            cloud=cache / f"cloud-{k_cloud}.ovsg",
            graph=cache / f"graph-{k_graph}.ovsg",
            vis=cache / f"vis-{k_vis}.ovsg",
        )


def cmd_prepare(cfg: PipelineConfig) -> dict[str, str]:
    """Load, downsample, oversegment, and tabulate visibility, with caching.

    Returns {stage: "cached" | "built"}.
    """
    status: dict[str, str] = {}
    paths = StagePaths.resolve(cfg)

    if paths.scene.exists():
        status["scene"] = "cached"
        bundle = load_scene_cache(paths.scene)
    else:
        bundle = load_scene(cfg.manifest)
        save_scene_cache(bundle, paths.scene)
        status["scene"] = "built"

    if paths.cloud.exists():
        status["cloud"] = "cached"
        processed = load_scene_cache(paths.cloud)
    else:
        cloud = voxel_downsample(bundle.cloud, cfg.voxel_size)
        if not np.all(cloud.normals_valid) and cloud.count >= max(cfg.normals_k, 3):
            estimated = estimate_normals(cloud, cfg.normals_k)
            invalid = ~cloud.normals_valid
            normals = cloud.normals.copy()
            normals[invalid] = estimated.normals[invalid]
            valid = cloud.normals_valid | estimated.normals_valid
            cloud = PointCloud(cloud.positions, cloud.colors, normals, valid)
        mesh = bundle.mesh
        if mesh is not None:
            mesh = map_mesh_vertices(mesh, cloud, cfg.voxel_size)
        processed = SceneBundle(
            cloud=cloud, views=bundle.views, mesh=mesh, voxel_size=cfg.voxel_size
        )
        save_scene_cache(processed, paths.cloud)
        status["cloud"] = "built"

    if paths.graph.exists():
        status["graph"] = "cached"
        graph = load_graph_cache(paths.graph, processed.cloud)
    else:
        graph = oversegment(processed.cloud, processed.mesh, cfg.overseg)
        graph = build_adjacency(graph, processed.cloud, processed.mesh, cfg.overseg.knn_adjacency_k)
        graph.validate_partition()
        save_graph_cache(graph, paths.graph)
        status["graph"] = "built"

    if paths.vis.exists():
        status["vis"] = "cached"
    else:
        table = build_visibility(graph, processed.cloud, processed.views, cfg.occlusion)
        save_visibility_cache(table, paths.vis)
        status["vis"] = "built"
    return status


@dataclass
class FeatureStage:
    """Resolved feature-stage artifacts."""

    key: str
    final_path: Path
    report_path: Path
    graph: SuperpointGraph | None = None
    query_features: dict[int, np.ndarray] | None = None


def _feature_paths(cfg: PipelineConfig, key: str) -> tuple[Path, Path]:
    cache = Path(cfg.cache_dir)
    return cache / f"feat-{key}.final.ovsg", cache / f"feat-{key}.report.jsonl"


def _round_path(cfg: PipelineConfig, key: str, round_index: int) -> Path:
    return Path(cfg.cache_dir) / f"feat-{key}.round{round_index:03d}.ovsg"


def _save_round_checkpoint(
    cfg: PipelineConfig,
    key: str,
    round_index: int,
    graph: SuperpointGraph,
    features: dict[int, np.ndarray],
    reports: list[MergeRoundReport],
) -> None:
    arrays = {
        "point_to_sp": graph.point_to_sp,
        "edges": graph.sorted_edges(),
    }
    arrays.update(_features_to_arrays(features, graph.n_superpoints, "features/merge"))
    meta = {
        "kind": "feature_round",
        "round": round_index,
        "reports": [r.to_json_dict(i) for i, r in enumerate(reports)],
    }
    write_cache(_round_path(cfg, key, round_index), meta, arrays)


def _load_round_checkpoint(cfg: PipelineConfig, key: str, round_index: int, cloud: PointCloud):
    meta, arrays = read_cache(_round_path(cfg, key, round_index))
    graph = graph_from_arrays(arrays["point_to_sp"], arrays["edges"], cloud)
    features = _features_from_arrays(arrays, "features/merge")
    reports = [
        MergeRoundReport(
            n_superpoints_before=r["n_superpoints_before"],
            n_merges=r["n_merges"],
            n_superpoints_after=r["n_superpoints_after"],
            mean_edge_similarity=r["mean_edge_similarity"],
        )
        for r in meta["reports"]
    ]
    return graph, features, reports


def cmd_features(cfg: PipelineConfig) -> dict:
    """Initial extraction, merge loop with per-round checkpoints, final
    re-extraction with the query provider. Resumes from the last complete
    round when interrupted."""
    paths = StagePaths.resolve(cfg)
    for p, stage in ((paths.cloud, "cloud"), (paths.graph, "graph"), (paths.vis, "vis")):
        if not p.exists():
            raise MissingStage(f"stage '{stage}' is not cached; run prepare first")
    processed = load_scene_cache(paths.cloud)
    cloud = processed.cloud
    views = processed.views

    merge_provider = make_provider(cfg.merge_provider_url, cfg, "merge")
    query_provider = make_provider(cfg.query_provider_url, cfg, "query")
    merge_info = merge_provider.info()
    query_info = query_provider.info()
    key = feat_key(cfg, vis_key(cfg, graph_key(cfg, cloud_key(cfg, scene_key(cfg)))), merge_info, query_info)
    final_path, report_path = _feature_paths(cfg, key)

    if final_path.exists():
        return {"status": "cached", "key": key, "final": str(final_path)}

    graph = load_graph_cache(paths.graph, cloud)
    table = load_visibility_cache(paths.vis)

    # Resume from the newest complete round checkpoint, if any.
    start_round = 0
    features: dict[int, np.ndarray] | None = None
    reports: list[MergeRoundReport] = []
    for round_index in range(cfg.merge.rounds, -1, -1):
        if _round_path(cfg, key, round_index).exists():
            graph, features, reports = _load_round_checkpoint(cfg, key, round_index, cloud)
            start_round = round_index
            break

    if features is None:
        features = extract_features(
            graph, table, views, merge_provider, cfg.feature, cfg.top_k_views, cfg.min_visible
        )
        _save_round_checkpoint(cfg, key, 0, graph, features, [])
        start_round = 0
        reports = []
    if start_round > 0:
        # The cached table indexes the original partition; rebuild for the
        # resumed graph before re-extraction can use it.
        table = build_visibility(graph, cloud, views, cfg.occlusion)

    loaded_reports = list(reports)
    stopped_early = any(r.n_merges == 0 for r in loaded_reports)
    remaining = cfg.merge.rounds - start_round
    if not stopped_early and remaining > 0:

        def reextract_hook(new_graph, merged_ids, id_map):
            # Remap cached visibility to the contracted ids, then rebuild
            # only the superpoints whose membership changed.
            nonlocal table
            table = _remap_table(table, id_map, merged_ids)
            sub = build_visibility(new_graph, cloud, views, cfg.occlusion, sp_ids=merged_ids)
            table.counts.update(sub.counts)
            table.visible_points.update(sub.visible_points)
            return extract_features(
                new_graph,
                table,
                views,
                merge_provider,
                cfg.feature,
                cfg.top_k_views,
                cfg.min_visible,
                sp_ids=merged_ids,
            )

        def on_round(round_graph, round_features, loop_reports):
            _save_round_checkpoint(
                cfg,
                key,
                start_round + len(loop_reports),
                round_graph,
                round_features,
                loaded_reports + loop_reports,
            )

        loop_cfg = MergeConfig(
            tau=cfg.merge.tau,
            rounds=remaining,
            reextract_each_round=cfg.merge.reextract_each_round,
        )
        graph, features, loop_reports = run_merge_loop(
            graph, features, loop_cfg, reextract=reextract_hook, on_round=on_round
        )
        reports = loaded_reports + loop_reports

    if any(r.n_merges for r in reports) and not cfg.merge.reextract_each_round:
        # The incremental table is only maintained when re-extracting per
        # round; otherwise it still indexes pre-merge ids.
        table = build_visibility(graph, cloud, views, cfg.occlusion)

    # Final pass: re-extract every feature with the query-domain provider.
    query_calls_before = query_provider.snapshot()
    merge_calls_before = merge_provider.snapshot()
    query_features = extract_features(
        graph, table, views, query_provider, cfg.feature, cfg.top_k_views, cfg.min_visible
    )
    assert merge_provider.snapshot() == merge_calls_before, (
        "merge provider must not serve the final feature pass"
    )

    arrays = {"point_to_sp": graph.point_to_sp, "edges": graph.sorted_edges()}
    arrays.update(_features_to_arrays(features, graph.n_superpoints, "features/merge"))
    arrays.update(_features_to_arrays(query_features, graph.n_superpoints, "features/query"))
    meta = {
        "kind": "features_final",
        "merge_provider": merge_info,
        "query_provider": query_info,
        "rounds_executed": len(reports),
        "reports": [r.to_json_dict(i) for i, r in enumerate(reports)],
        "provider_calls": {
            "merge": merge_provider.snapshot(),
            "query": query_provider.snapshot(),
            "query_final_pass": {
                k: query_provider.snapshot()[k] - query_calls_before[k]
                for k in query_calls_before
            },
        },
    }
    write_cache(final_path, meta, arrays)
    export_merge_report(reports, report_path)
    return {
        "status": "built",
        "key": key,
        "final": str(final_path),
        "rounds": len(reports),
        "n_superpoints": graph.n_superpoints,
    }


def _remap_table(table: VisibilityTable, id_map: dict[int, int], merged_ids: list[int]) -> VisibilityTable:
    """Rename table keys through the merge id map, dropping merged entries
    (they are rebuilt from scratch)."""
    merged = set(merged_ids)
    out = VisibilityTable(view_ids=table.view_ids)
    for (sp_id, view_id), value in table.visible_points.items():
        new_id = id_map.get(sp_id)
        if new_id is None or new_id in merged:
            continue
        out.counts[(new_id, view_id)] = table.counts[(sp_id, view_id)]
        out.visible_points[(new_id, view_id)] = value
    return out


def load_feature_stage(cfg: PipelineConfig) -> tuple[SuperpointGraph, dict[int, np.ndarray], dict]:
    """Load the final merged graph and query-provider features, or raise MissingStage."""
    paths = StagePaths.resolve(cfg)
    if not paths.cloud.exists():
        raise MissingStage("cloud stage missing; run prepare first")
    processed = load_scene_cache(paths.cloud)
    merge_provider = make_provider(cfg.merge_provider_url, cfg, "merge")
    query_provider = make_provider(cfg.query_provider_url, cfg, "query")
    key = feat_key(
        cfg,
        vis_key(cfg, graph_key(cfg, cloud_key(cfg, scene_key(cfg)))),
        merge_provider.info(),
        query_provider.info(),
    )
    final_path, _ = _feature_paths(cfg, key)
    if not final_path.exists():
        raise MissingStage("features stage missing; run features first")
    meta, arrays = read_cache(final_path)
    graph = graph_from_arrays(arrays["point_to_sp"], arrays["edges"], processed.cloud)
    features = _features_from_arrays(arrays, "features/query")
    return graph, features, meta


def cmd_query(
    cfg: PipelineConfig,
    prompt: str,
    threshold: float | None = None,
    percentile: float | None = None,
    cluster: bool = True,
    heatmap_path: str | None = None,
    instances_path: str | None = None,
    json_path: str | None = None,
) -> dict:
    """Score a prompt against the cached features and export results."""
    graph, features, _ = load_feature_stage(cfg)
    paths = StagePaths.resolve(cfg)
    cloud = load_scene_cache(paths.cloud).cloud
    provider = make_provider(cfg.query_provider_url, cfg, "query")
    result = score_query(prompt, features, provider, graph)

    ccfg = ClusterConfig(
        score_threshold_mode=cfg.cluster.score_threshold_mode,
        score_threshold=cfg.cluster.score_threshold,
        epsilon=cfg.cluster.epsilon,
        min_cluster_size=cfg.cluster.min_cluster_size,
    )
    if threshold is not None:
        ccfg.score_threshold_mode = "absolute"
        ccfg.score_threshold = threshold
    elif percentile is not None:
        ccfg.score_threshold_mode = "percentile"
        ccfg.score_threshold = percentile

    instances = None
    if cluster:
        selected = threshold_points(result, ccfg)
        instances = cluster_instances(selected, cloud, ccfg, point_scores=result.point_scores)

    if heatmap_path:
        export_heatmap(result, cloud, heatmap_path)
    if instances_path and instances is not None:
        export_instances(instances, cloud, instances_path)
    if json_path:
        export_query_json(result, instances, json_path)

    top5 = sorted(result.sp_scores.items(), key=lambda kv: (-kv[1], kv[0]))[:5]
    return {
        "prompt": prompt,
        "top_superpoints": [{"id": i, "score": s} for i, s in top5],
        "n_instances": len(instances) if instances is not None else None,
        "normalization": {"lo": result.normalization[0], "hi": result.normalization[1]},
    }


def cmd_stats(cfg: PipelineConfig) -> dict:
    """Stats for the prepared graph and, if present, the merged graph."""
    paths = StagePaths.resolve(cfg)
    if not paths.graph.exists():
        raise MissingStage("graph stage missing; run prepare first")
    cloud = load_scene_cache(paths.cloud).cloud
    graph = load_graph_cache(paths.graph, cloud)
    out = {"prepared": graph_stats(graph)}
    try:
        merged_graph, _, meta = load_feature_stage(cfg)
        out["merged"] = graph_stats(merged_graph)
        out["rounds_executed"] = meta.get("rounds_executed")
    except MissingStage:
        pass
    return out
