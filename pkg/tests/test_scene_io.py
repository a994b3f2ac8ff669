from __future__ import annotations

import json

import numpy as np
import pytest

from ovseg.errors import (
    DimensionMismatch,
    InvalidPose,
    MalformedManifest,
    MissingFile,
)
from ovseg.scene_io import (
    CameraView,
    Intrinsics,
    PointCloud,
    SceneBundle,
    TriangleMesh,
    bundles_equal,
    estimate_normals,
    load_scene,
    load_scene_cache,
    map_mesh_vertices,
    read_depth_png,
    save_point_cloud,
    save_scene_cache,
    voxel_downsample,
    write_depth_png,
    write_rgb_png,
)
from ovseg.ply import write_ply


def random_cloud(n, seed=0, with_normals=True):
    rng = np.random.default_rng(seed)
    positions = rng.uniform(0, 1, (n, 3))
    colors = rng.integers(0, 256, (n, 3)).astype(np.uint8)
    if with_normals:
        normals = rng.normal(size=(n, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        valid = np.ones(n, dtype=bool)
    else:
        normals = np.zeros((n, 3))
        valid = np.zeros(n, dtype=bool)
    return PointCloud(positions, colors, normals, valid)


def identity_view(view_id="v0", w=64, h=48):
    rng = np.random.default_rng(hash(view_id) % 2**32)
    return CameraView(
        view_id=view_id,
        intrinsics=Intrinsics(fx=50.0, fy=50.0, cx=w / 2, cy=h / 2, width=w, height=h),
        cam_to_world=np.eye(4),
        rgb=rng.integers(0, 256, (h, w, 3)).astype(np.uint8),
        depth=rng.uniform(0.5, 3.0, (h, w)).astype(np.float32),
    )


# ---------------------------------------------------------------------------
# Downsampling


def test_downsample_merges_points_in_one_voxel():
    cloud = PointCloud(
        np.array([[0.0, 0.0, 0.0], [0.001, 0.0, 0.0]]),
        np.array([[10, 10, 10], [20, 20, 20]], dtype=np.uint8),
        np.tile([0.0, 0.0, 1.0], (2, 1)),
        np.ones(2, dtype=bool),
    )
    out = voxel_downsample(cloud, 0.005)
    assert out.count == 1
    assert np.allclose(out.positions[0], [0.0005, 0.0, 0.0])
    assert np.array_equal(out.colors[0], [15, 15, 15])


def test_downsample_keeps_separate_voxels():
    cloud = PointCloud(
        np.array([[0.0, 0.0, 0.0], [0.010, 0.0, 0.0]]),
        np.zeros((2, 3), dtype=np.uint8),
        np.tile([0.0, 0.0, 1.0], (2, 1)),
        np.ones(2, dtype=bool),
    )
    out = voxel_downsample(cloud, 0.005)
    assert out.count == 2
    assert np.allclose(np.sort(out.positions[:, 0]), [0.0, 0.010])


def test_downsample_count_matches_hash_grid_oracle():
    cloud = random_cloud(10_000, seed=42)
    voxel = 0.005
    out = voxel_downsample(cloud, voxel)
    # Independent oracle: count distinct voxel keys with a python dict.
    keys = set()
    for p in cloud.positions:
        keys.add((int(np.floor(p[0] / voxel)), int(np.floor(p[1] / voxel)), int(np.floor(p[2] / voxel))))
    assert out.count == len(keys)


def test_downsample_idempotent():
    cloud = random_cloud(5_000, seed=7)
    once = voxel_downsample(cloud, 0.01)
    twice = voxel_downsample(once, 0.01)
    assert twice.count == once.count


def test_downsample_never_increases_count():
    cloud = random_cloud(1_000, seed=1)
    for voxel in (0.001, 0.01, 0.1, 1.0):
        assert voxel_downsample(cloud, voxel).count <= cloud.count


def test_downsample_color_rounds_half_up():
    cloud = PointCloud(
        np.zeros((2, 3)),
        np.array([[1, 1, 1], [2, 2, 2]], dtype=np.uint8),  # mean 1.5 -> 2
        np.tile([0.0, 0.0, 1.0], (2, 1)),
        np.ones(2, dtype=bool),
    )
    out = voxel_downsample(cloud, 0.01)
    assert np.array_equal(out.colors[0], [2, 2, 2])


def test_downsample_cancelling_normals_uses_pca():
    # Four coplanar points whose normals cancel pairwise: PCA recovers the plane.
    positions = np.array(
        [[0.0, 0.0, 0.0], [0.002, 0.0, 0.0], [0.0, 0.002, 0.0], [0.002, 0.002, 0.0]]
    )
    normals = np.array(
        [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]
    )
    cloud = PointCloud(positions, np.zeros((4, 3), np.uint8), normals, np.ones(4, bool))
    out = voxel_downsample(cloud, 0.005)
    assert out.count == 1
    assert out.normals_valid[0]
    assert abs(abs(out.normals[0, 2]) - 1.0) < 1e-9


def test_downsample_degenerate_normals_flagged():
    # Two colinear points with cancelling normals: PCA is rank-deficient.
    positions = np.array([[0.0, 0.0, 0.0], [0.001, 0.0, 0.0]])
    normals = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
    cloud = PointCloud(positions, np.zeros((2, 3), np.uint8), normals, np.ones(2, bool))
    out = voxel_downsample(cloud, 0.005)
    assert out.count == 1
    assert not out.normals_valid[0]  # kept, flagged invalid


# ---------------------------------------------------------------------------
# Normal estimation


def test_estimate_normals_planar_grid():
    xs, ys = np.meshgrid(np.linspace(0, 1, 10), np.linspace(0, 1, 10))
    positions = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(100)])
    cloud = PointCloud.empty_normals(positions, np.zeros((100, 3), np.uint8))
    out = estimate_normals(cloud, k=8)
    assert np.all(out.normals_valid)
    assert np.allclose(np.abs(out.normals[:, 2]), 1.0, atol=1e-9)


def test_estimate_normals_sphere_within_5_degrees():
    # Fibonacci sphere: near-uniform sampling so neighborhoods are symmetric.
    n = 2_000
    i = np.arange(n)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    z = 1.0 - 2.0 * i / (n - 1)
    r = np.sqrt(np.clip(1.0 - z * z, 0, 1))
    positions = np.column_stack([r * np.cos(golden * i), r * np.sin(golden * i), z])
    cloud = PointCloud.empty_normals(positions, np.zeros((n, 3), np.uint8))
    out = estimate_normals(cloud, k=8)
    # Analytic oracle: the sphere normal at p is p itself (radial direction).
    cosines = np.abs(np.einsum("ij,ij->i", out.normals, positions))
    angles = np.degrees(np.arccos(np.clip(cosines, -1, 1)))
    assert np.all(angles < 5.0)
    # Orientation points outward from the centroid.
    assert np.mean(np.einsum("ij,ij->i", out.normals, positions) > 0) > 0.99


def test_estimate_normals_collinear_flagged():
    positions = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    cloud = PointCloud.empty_normals(positions, np.zeros((3, 3), np.uint8))
    out = estimate_normals(cloud, k=3)
    assert not np.any(out.normals_valid)
    assert np.allclose(np.abs(out.normals[:, 2]), 1.0)  # set to global up


def test_estimate_normals_preconditions():
    cloud = random_cloud(10)
    with pytest.raises(ValueError):
        estimate_normals(cloud, k=2)
    with pytest.raises(ValueError):
        estimate_normals(random_cloud(4), k=8)


# ---------------------------------------------------------------------------
# Depth and manifest IO


def test_depth_png_round_trip(tmp_path):
    depth = np.array([[0.0, 1.234], [2.5, 65.535]], dtype=np.float32)
    path = tmp_path / "d.png"
    write_depth_png(path, depth)
    back = read_depth_png(path)
    assert back.shape == depth.shape
    assert np.allclose(back, depth, atol=5e-4)  # millimeter quantization
    assert back[0, 0] == 0.0


def write_minimal_scene(tmp_path, n_views=2, depth_shape=None, pose=None):
    cloud = random_cloud(100, seed=3)
    save_point_cloud(tmp_path / "cloud.ply", cloud)
    views = []
    for i in range(n_views):
        vid = f"v{i:03d}"
        rgb = np.full((48, 64, 3), (i * 40) % 256, dtype=np.uint8)
        write_rgb_png(tmp_path / f"{vid}.png", rgb)
        d = np.full(depth_shape or (48, 64), 2.0, dtype=np.float32)
        write_depth_png(tmp_path / f"{vid}_d.png", d)
        views.append(
            {
                "id": vid,
                "rgb": f"{vid}.png",
                "depth": f"{vid}_d.png",
                "pose": list(np.asarray(pose if pose is not None else np.eye(4)).reshape(-1)),
                "intrinsics": {"fx": 50.0, "fy": 50.0, "cx": 32.0, "cy": 24.0},
            }
        )
    manifest = {"cloud": "cloud.ply", "views": views}
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest))
    return path


def test_load_scene_zero_views_succeeds(tmp_path):
    path = write_minimal_scene(tmp_path, n_views=0)
    bundle = load_scene(path)
    assert bundle.cloud.count == 100
    assert bundle.views == []


def test_load_scene_21_views(tmp_path):
    path = write_minimal_scene(tmp_path, n_views=21)
    bundle = load_scene(path)
    assert len(bundle.views) == 21
    assert [v.view_id for v in bundle.views] == sorted(v.view_id for v in bundle.views)


def test_load_scene_dimension_mismatch(tmp_path):
    path = write_minimal_scene(tmp_path, n_views=1, depth_shape=(49, 64))
    with pytest.raises(DimensionMismatch):
        load_scene(path)


def test_load_scene_invalid_pose(tmp_path):
    bad = np.eye(4)
    bad[0, 0] = 2.0  # scaling is not rigid
    path = write_minimal_scene(tmp_path, n_views=1, pose=bad)
    with pytest.raises(InvalidPose):
        load_scene(path)


def test_load_scene_missing_file(tmp_path):
    path = write_minimal_scene(tmp_path, n_views=1)
    (tmp_path / "v000.png").unlink()
    with pytest.raises(MissingFile):
        load_scene(path)


def test_load_scene_malformed_manifest_reports_field(tmp_path):
    path = write_minimal_scene(tmp_path, n_views=1)
    manifest = json.loads(path.read_text())
    del manifest["views"][0]["pose"]
    path.write_text(json.dumps(manifest))
    with pytest.raises(MalformedManifest, match="pose"):
        load_scene(path)


def test_pose_inverse_identity(tmp_path):
    rng = np.random.default_rng(9)
    from scipy.spatial.transform import Rotation

    pose = np.eye(4)
    pose[:3, :3] = Rotation.random(random_state=7).as_matrix()
    pose[:3, 3] = rng.normal(size=3)
    path = write_minimal_scene(tmp_path, n_views=1, pose=pose)
    bundle = load_scene(path)
    m = bundle.views[0].cam_to_world
    assert np.allclose(m @ np.linalg.inv(m), np.eye(4), atol=1e-6)


# ---------------------------------------------------------------------------
# Scene cache


def make_bundle(n=500, n_views=2, with_mesh=True):
    cloud = random_cloud(n, seed=13)
    mesh = None
    if with_mesh:
        verts = cloud.positions[:10] + 0.001
        tris = np.array([[0, 1, 2], [2, 3, 4], [4, 5, 6]], dtype=np.int64)
        mesh = TriangleMesh(verts, tris, np.arange(10, dtype=np.int64))
    views = [identity_view(f"v{i:02d}") for i in range(n_views)]
    return SceneBundle(cloud=cloud, views=views, mesh=mesh, voxel_size=0.005)


def test_scene_cache_round_trip(tmp_path):
    bundle = make_bundle()
    path = tmp_path / "scene.ovsg"
    save_scene_cache(bundle, path)
    back = load_scene_cache(path)
    assert bundles_equal(bundle, back)


def test_scene_cache_large_positions_bitwise(tmp_path):
    cloud = random_cloud(1_000_000, seed=21)
    bundle = SceneBundle(cloud=cloud, views=[], mesh=None, voxel_size=0.005)
    path = tmp_path / "big.ovsg"
    save_scene_cache(bundle, path)
    back = load_scene_cache(path)
    assert back.cloud.positions.tobytes() == cloud.positions.tobytes()


def test_scene_cache_version_mismatch(tmp_path):
    from ovseg.errors import VersionMismatch

    bundle = make_bundle(50, 0, with_mesh=False)
    path = tmp_path / "scene.ovsg"
    save_scene_cache(bundle, path)
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatch):
        load_scene_cache(path)


def test_map_mesh_vertices_distance_bound():
    cloud = random_cloud(100, seed=2)
    far_verts = cloud.positions[:5] + 1.0  # way beyond 2 voxels
    mesh = TriangleMesh(far_verts, np.array([[0, 1, 2]], dtype=np.int64))
    with pytest.raises(MalformedManifest):
        map_mesh_vertices(mesh, cloud, 0.005)
    near = TriangleMesh(cloud.positions[:5], np.array([[0, 1, 2]], dtype=np.int64))
    mapped = map_mesh_vertices(near, cloud, 0.005)
    assert np.array_equal(mapped.vertex_to_point, np.arange(5))
