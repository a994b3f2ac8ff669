from __future__ import annotations

import json

import pytest

from ovseg.synthetic_scene import build_scene, write_scene


@pytest.fixture(scope="session")
def small_scene_dir(tmp_path_factory):
    """Compact synthetic box scene written to disk once per session."""
    out = tmp_path_factory.mktemp("scene")
    scene = build_scene(spacing=0.02, n_views=6, width=160, height=120)
    write_scene(scene, out)
    return out


def make_config(scene_dir, cache_dir, **overrides):
    cfg = {
        "manifest": str(scene_dir / "manifest.json"),
        "cache_dir": str(cache_dir),
        "master_seed": 7,
        "voxel_size": 0.005,
        "normals_k": 12,
        "overseg": {
            "target_points_per_sp": 200,
            "lambda_normal": 2.0,
            "lloyd_iterations": 10,
            "knn_adjacency_k": 8,
            "seed": 0,
        },
        "occlusion": {"abs_tolerance": 0.02, "rel_tolerance": 0.01},
        "top_k_views": 5,
        "min_visible": 24,
        "feature": {"prompts_per_view": 5, "crop_padding": 0.1, "seed": 0, "min_mask_pixels": 16},
        "merge": {"tau": 0.95, "rounds": 8, "reextract_each_round": True},
        # The 0.02-spacing test scene puts ~13 points in an epsilon ball, so
        # min_cluster_size must sit below that for any core points to exist.
        "cluster": {
            "score_threshold_mode": "percentile",
            "score_threshold": 97.0,
            "epsilon": 0.05,
            "min_cluster_size": 10,
        },
        "merge_provider_url": "synthetic",
        "query_provider_url": "synthetic",
        "synthetic_dim": 32,
        "provider_attempts": 3,
        "provider_backoff": 0.01,
    }
    cfg.update(overrides)
    return cfg


@pytest.fixture()
def config_path(small_scene_dir, tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(make_config(small_scene_dir, tmp_path / "cache")))
    return path
