"""Scene asset loading, validation, downsampling, and persistence.

A scene is described by a JSON manifest:

    {
      "cloud": "cloud.ply",
      "mesh": "mesh.ply",            // optional
      "voxel_size": 0.005,           // optional, defaults to 5 mm
      "views": [
        {"id": "v000", "rgb": "rgb/v000.png", "depth": "depth/v000.png",
         "pose": [16 numbers, row-major cam_to_world]}
      ]
    }

Paths are resolved relative to the manifest's directory. Depth maps are
16-bit single-channel PNG in millimeters with 0 meaning invalid.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial import cKDTree

from . import ply
from .cache import read_cache, write_cache
from .errors import (
    DimensionMismatch,
    EmptyCloud,
    InvalidPose,
    MalformedManifest,
    MissingFile,
    VersionMismatch,
)

DEFAULT_VOXEL_SIZE = 0.005  # meters
NORMAL_UNIT_TOL = 1e-4
_GLOBAL_UP = np.array([0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# Domain types


@dataclass
class PointCloud:
    """Downsampled scene points; the universe all superpoint indices refer to."""

    positions: np.ndarray  # (n, 3) float64, meters
    colors: np.ndarray  # (n, 3) uint8
    normals: np.ndarray  # (n, 3) float64, unit where valid
    normals_valid: np.ndarray  # (n,) bool

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.uint8)
        self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)
        self.normals_valid = np.ascontiguousarray(self.normals_valid, dtype=bool)

    @property
    def count(self) -> int:
        return len(self.positions)

    def validate(self) -> None:
        n = self.count
        if not (len(self.colors) == len(self.normals) == len(self.normals_valid) == n):
            raise DimensionMismatch("point cloud arrays have inconsistent lengths")
        if not np.all(np.isfinite(self.positions)):
            raise MalformedManifest("cloud contains non-finite positions")
        norms = np.linalg.norm(self.normals[self.normals_valid], axis=1)
        if norms.size and np.any(np.abs(norms - 1.0) > NORMAL_UNIT_TOL):
            raise MalformedManifest("cloud contains valid-flagged normals that are not unit")

    @staticmethod
    def empty_normals(positions: np.ndarray, colors: np.ndarray) -> "PointCloud":
        n = len(positions)
        return PointCloud(positions, colors, np.zeros((n, 3)), np.zeros(n, dtype=bool))


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (m, 3) float64
    triangles: np.ndarray  # (t, 3) int64, vertex indices
    vertex_to_point: np.ndarray | None = None  # (m,) int64 into a PointCloud

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if self.vertex_to_point is not None:
            self.vertex_to_point = np.ascontiguousarray(self.vertex_to_point, dtype=np.int64)

    def validate(self) -> None:
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise MalformedManifest("mesh triangle index out of range")
        if self.triangles.size and self.triangles.min() < 0:
            raise MalformedManifest("mesh triangle index negative")

    def edges(self) -> np.ndarray:
        """Unique undirected vertex-index pairs, each row sorted ascending."""
        t = self.triangles
        if not len(t):
            return np.empty((0, 2), dtype=np.int64)
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)


@dataclass
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise MalformedManifest("intrinsics: fx and fy must be positive")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise MalformedManifest("intrinsics: principal point outside image")


@dataclass
class CameraView:
    """One posed RGB image with a rendered depth map for occlusion checks."""

    view_id: str
    intrinsics: Intrinsics
    cam_to_world: np.ndarray  # (4, 4) float64 rigid transform
    rgb: np.ndarray  # (h, w, 3) uint8
    depth: np.ndarray  # (h, w) float32 meters, 0 = invalid

    def __post_init__(self):
        self.cam_to_world = np.ascontiguousarray(self.cam_to_world, dtype=np.float64)
        self.rgb = np.ascontiguousarray(self.rgb, dtype=np.uint8)
        self.depth = np.ascontiguousarray(self.depth, dtype=np.float32)

    def validate(self) -> None:
        self.intrinsics.validate()
        h, w = self.rgb.shape[:2]
        if (w, h) != (self.intrinsics.width, self.intrinsics.height):
            raise DimensionMismatch(
                f"view {self.view_id}: rgb is {w}x{h}, intrinsics say "
                f"{self.intrinsics.width}x{self.intrinsics.height}"
            )
        if self.depth.shape != self.rgb.shape[:2]:
            raise DimensionMismatch(
                f"view {self.view_id}: depth is {self.depth.shape[1]}x{self.depth.shape[0]}, "
                f"rgb is {w}x{h}"
            )
        validate_pose(self.cam_to_world, self.view_id)


@dataclass
class SceneBundle:
    cloud: PointCloud
    views: list[CameraView]
    mesh: TriangleMesh | None = None
    voxel_size: float = DEFAULT_VOXEL_SIZE

    def validate(self) -> None:
        if self.voxel_size <= 0:
            raise MalformedManifest("voxel_size must be positive")
        self.cloud.validate()
        if self.mesh is not None:
            self.mesh.validate()
        for v in self.views:
            v.validate()

    def view_by_id(self, view_id: str) -> CameraView:
        for v in self.views:
            if v.view_id == view_id:
                return v
        raise KeyError(view_id)


def validate_pose(m: np.ndarray, label: str = "") -> None:
    """Reject non-rigid transforms: rotation must be orthonormal with det +1."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (4, 4):
        raise InvalidPose(f"pose {label}: expected 4x4 matrix")
    r = m[:3, :3]
    if not np.allclose(r @ r.T, np.eye(3), atol=1e-5):
        raise InvalidPose(f"pose {label}: rotation block not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > 1e-5:
        raise InvalidPose(f"pose {label}: determinant is {np.linalg.det(r):.6f}, expected +1")
    if not np.allclose(m[3], [0, 0, 0, 1], atol=1e-9):
        raise InvalidPose(f"pose {label}: last row must be [0 0 0 1]")


# ---------------------------------------------------------------------------
# Image and point-cloud file IO


def read_rgb_png(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def write_rgb_png(path: str | Path, rgb: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path)


def read_depth_png(path: str | Path) -> np.ndarray:
    """Read a 16-bit millimeter depth PNG into float32 meters (0 = invalid)."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{path}: depth PNG must be single-channel")
    return (arr.astype(np.float32)) / 1000.0


def write_depth_png(path: str | Path, depth_m: np.ndarray) -> None:
    mm = np.clip(np.floor(np.asarray(depth_m, dtype=np.float64) * 1000.0 + 0.5), 0, 65535)
    Image.fromarray(mm.astype(np.uint16)).save(path)


def load_point_cloud(path: str | Path) -> PointCloud:
    """Load a PLY point cloud with x,y,z, optional colors and normals."""
    data = read_ply_vertices(path)
    n = len(data["x"])
    positions = np.column_stack([data["x"], data["y"], data["z"]]).astype(np.float64)
    if not np.all(np.isfinite(positions)):
        raise MalformedManifest(f"{path}: non-finite coordinates in point cloud")
    if "red" in data:
        colors = np.column_stack([data["red"], data["green"], data["blue"]]).astype(np.uint8)
    else:
        colors = np.full((n, 3), 128, dtype=np.uint8)
    if "nx" in data:
        normals = np.column_stack([data["nx"], data["ny"], data["nz"]]).astype(np.float64)
        norms = np.linalg.norm(normals, axis=1)
        valid = np.abs(norms - 1.0) <= NORMAL_UNIT_TOL
        # Near-unit normals are snapped to exactly unit length.
        safe = np.where(norms > 0, norms, 1.0)
        normals = np.where(valid[:, None], normals / safe[:, None], normals)
    else:
        normals = np.zeros((n, 3))
        valid = np.zeros(n, dtype=bool)
    return PointCloud(positions, colors, normals, valid)


def read_ply_vertices(path: str | Path) -> dict[str, np.ndarray]:
    data = ply.read_ply(path)
    if "vertex" not in data:
        raise MalformedManifest(f"{path}: PLY has no vertex element")
    return data["vertex"]


def load_mesh(path: str | Path) -> TriangleMesh:
    """Load a PLY or OBJ triangle mesh (positions and faces only)."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    if path.suffix.lower() == ".obj":
        return _load_obj(path)
    data = ply.read_ply(path)
    if "vertex" not in data or "face" not in data:
        raise MalformedManifest(f"{path}: mesh PLY needs vertex and face elements")
    v = data["vertex"]
    vertices = np.column_stack([v["x"], v["y"], v["z"]]).astype(np.float64)
    fprops = data["face"]
    key = "vertex_indices" if "vertex_indices" in fprops else "vertex_index"
    tris = np.asarray(fprops[key])
    if tris.dtype == object or tris.ndim != 2 or tris.shape[1] != 3:
        raise MalformedManifest(f"{path}: only pure-triangle meshes are supported")
    mesh = TriangleMesh(vertices, tris.astype(np.int64))
    mesh.validate()
    return mesh


def _load_obj(path: Path) -> TriangleMesh:
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                if len(idx) != 3:
                    raise MalformedManifest(f"{path}: only triangle faces are supported")
                faces.append(idx)
    mesh = TriangleMesh(np.asarray(verts), np.asarray(faces, dtype=np.int64))
    mesh.validate()
    return mesh


# ---------------------------------------------------------------------------
# Manifest loading


def _require(entry: dict, key: str, where: str):
    if key not in entry:
        raise MalformedManifest(f"{where}: missing required field '{key}'")
    return entry[key]


def _load_view(entry: dict, base: Path, index: int) -> CameraView:
    where = f"views[{index}]"
    view_id = str(_require(entry, "id", where))
    rgb = read_rgb_png(base / _require(entry, "rgb", where))
    depth = read_depth_png(base / _require(entry, "depth", where))
    pose = _require(entry, "pose", where)
    if not isinstance(pose, list) or len(pose) != 16:
        raise MalformedManifest(f"{where}.pose: expected 16 numbers (row-major cam_to_world)")
    cam_to_world = np.asarray(pose, dtype=np.float64).reshape(4, 4)
    h, w = rgb.shape[:2]
    intr = entry.get("intrinsics")
    if intr is None:
        raise MalformedManifest(f"{where}: missing required field 'intrinsics'")
    intrinsics = Intrinsics(
        fx=float(_require(intr, "fx", f"{where}.intrinsics")),
        fy=float(_require(intr, "fy", f"{where}.intrinsics")),
        cx=float(_require(intr, "cx", f"{where}.intrinsics")),
        cy=float(_require(intr, "cy", f"{where}.intrinsics")),
        width=int(intr.get("width", w)),
        height=int(intr.get("height", h)),
    )
    view = CameraView(view_id, intrinsics, cam_to_world, rgb, depth)
    view.validate()
    return view


def load_scene(manifest_path: str | Path) -> SceneBundle:
    """Load and validate a scene bundle from a JSON manifest.

    Views are read concurrently and returned sorted by view_id. The result
    is immutable by convention: no pipeline operation mutates a bundle.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise MissingFile(str(manifest_path))
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedManifest(f"{manifest_path}: invalid JSON ({exc})") from exc
    if not isinstance(manifest, dict):
        raise MalformedManifest(f"{manifest_path}: top level must be an object")
    base = manifest_path.parent

    cloud = load_point_cloud(base / _require(manifest, "cloud", "manifest"))
    mesh = None
    if manifest.get("mesh"):
        mesh = load_mesh(base / manifest["mesh"])
    view_entries = manifest.get("views", [])
    if not isinstance(view_entries, list):
        raise MalformedManifest("manifest.views: expected a list")
    if view_entries:
        with ThreadPoolExecutor(max_workers=min(8, len(view_entries))) as pool:
            views = list(
                pool.map(lambda iv: _load_view(iv[1], base, iv[0]), enumerate(view_entries))
            )
    else:
        views = []
    views.sort(key=lambda v: v.view_id)
    voxel_size = float(manifest.get("voxel_size", DEFAULT_VOXEL_SIZE))
    bundle = SceneBundle(cloud=cloud, views=views, mesh=mesh, voxel_size=voxel_size)
    bundle.validate()
    return bundle


# ---------------------------------------------------------------------------
# Downsampling and normal estimation


def _voxel_keys(positions: np.ndarray, voxel_size: float) -> np.ndarray:
    return np.floor(positions / voxel_size).astype(np.int64)


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """Average points into occupied voxels.

    Output position is the voxel centroid, color the channelwise mean rounded
    half-up, normal the renormalized mean of valid member normals. Voxels
    whose member normals cancel fall back to PCA over member positions; if
    that is rank-deficient too the point keeps an invalid-flagged normal.
    Output order is sorted by voxel key, so results are deterministic.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    if cloud.count == 0:
        raise EmptyCloud("cannot downsample an empty cloud")
    keys = _voxel_keys(cloud.positions, voxel_size)
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    keys_s = keys[order]
    new_group = np.ones(len(keys_s), dtype=bool)
    new_group[1:] = np.any(keys_s[1:] != keys_s[:-1], axis=1)
    starts = np.nonzero(new_group)[0]
    counts = np.diff(np.append(starts, len(keys_s)))
    group_id = np.cumsum(new_group) - 1

    pos_s = cloud.positions[order]
    positions = np.add.reduceat(pos_s, starts, axis=0) / counts[:, None]

    col_s = cloud.colors[order].astype(np.float64)
    col_mean = np.add.reduceat(col_s, starts, axis=0) / counts[:, None]
    colors = np.floor(col_mean + 0.5).astype(np.uint8)  # half-up, platform independent

    nrm_s = np.where(cloud.normals_valid[order, None], cloud.normals[order], 0.0)
    nrm_sum = np.add.reduceat(nrm_s, starts, axis=0)
    n_valid = np.add.reduceat(cloud.normals_valid[order].astype(np.float64), starts)
    with np.errstate(invalid="ignore", divide="ignore"):
        nrm_mean = nrm_sum / np.maximum(n_valid, 1.0)[:, None]
    mean_len = np.linalg.norm(nrm_mean, axis=1)
    good = (n_valid > 0) & (mean_len >= 1e-3)
    normals = np.zeros_like(positions)
    normals[good] = nrm_mean[good] / mean_len[good, None]
    valid = good.copy()

    # Degenerate voxels: normals cancelled or absent; try PCA of member positions.
    for g in np.nonzero(~good)[0]:
        members = pos_s[starts[g] : starts[g] + counts[g]]
        normal = _pca_normal(members)
        if normal is not None:
            normals[g] = normal
            valid[g] = True
    return PointCloud(positions, colors, normals, valid)


def _pca_normal(points: np.ndarray) -> np.ndarray | None:
    """Smallest-variance direction of a point set, or None if rank-deficient."""
    if len(points) < 3:
        return None
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered
    w, v = np.linalg.eigh(cov)
    if w[1] <= 1e-12 * max(w[2], 1e-300):  # collinear or coincident members
        return None
    n = v[:, 0]
    if n @ _GLOBAL_UP < 0:
        n = -n
    return n / np.linalg.norm(n)


def estimate_normals(cloud: PointCloud, k: int) -> PointCloud:
    """Estimate per-point normals from k-nearest-neighbor PCA.

    Each normal is the smallest-eigenvalue eigenvector of the neighborhood
    covariance, oriented away from the cloud centroid; when that direction is
    ambiguous the global up vector breaks the tie. Collinear neighborhoods
    are flagged invalid and set to global up.
    """
    if k < 3:
        raise ValueError("estimate_normals requires k >= 3")
    if cloud.count < k:
        raise ValueError(f"estimate_normals requires at least k={k} points")
    tree = cKDTree(cloud.positions)
    _, idx = tree.query(cloud.positions, k=k)
    neigh = cloud.positions[idx]  # (n, k, 3)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    w, v = np.linalg.eigh(cov)
    normals = v[:, :, 0].copy()
    degenerate = w[:, 1] <= 1e-10 * np.maximum(w[:, 2], 1e-300)
    normals[degenerate] = _GLOBAL_UP

    centroid = cloud.positions.mean(axis=0)
    outward = cloud.positions - centroid
    side = np.einsum("ni,ni->n", normals, outward)
    ambiguous = np.abs(side) < 1e-12
    flip = (side < 0) & ~ambiguous
    up_side = normals @ _GLOBAL_UP
    flip |= ambiguous & (up_side < 0)
    normals[flip] = -normals[flip]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(cloud.positions, cloud.colors, normals, ~degenerate)


def map_mesh_vertices(mesh: TriangleMesh, cloud: PointCloud, voxel_size: float) -> TriangleMesh:
    """Map every mesh vertex to its nearest cloud point (must be within 2 voxels)."""
    tree = cKDTree(cloud.positions)
    dist, idx = tree.query(mesh.vertices)
    if np.any(dist > 2.0 * voxel_size):
        worst = float(dist.max())
        raise MalformedManifest(
            f"mesh vertex {int(dist.argmax())} is {worst:.4f} m from the cloud "
            f"(limit {2.0 * voxel_size:.4f} m); mesh and cloud do not match"
        )
    return TriangleMesh(mesh.vertices, mesh.triangles, idx.astype(np.int64))


# ---------------------------------------------------------------------------
# Scene cache (binary OVSG container)


def save_scene_cache(bundle: SceneBundle, path: str | Path) -> None:
    meta = {
        "kind": "scene_bundle",
        "voxel_size": bundle.voxel_size,
        "has_mesh": bundle.mesh is not None,
        "views": [
            {
                "id": v.view_id,
                "fx": v.intrinsics.fx,
                "fy": v.intrinsics.fy,
                "cx": v.intrinsics.cx,
                "cy": v.intrinsics.cy,
                "width": v.intrinsics.width,
                "height": v.intrinsics.height,
            }
            for v in bundle.views
        ],
    }
    arrays: dict[str, np.ndarray] = {
        "cloud/positions": bundle.cloud.positions,
        "cloud/colors": bundle.cloud.colors,
        "cloud/normals": bundle.cloud.normals,
        "cloud/normals_valid": bundle.cloud.normals_valid,
    }
    if bundle.mesh is not None:
        arrays["mesh/vertices"] = bundle.mesh.vertices
        arrays["mesh/triangles"] = bundle.mesh.triangles
        if bundle.mesh.vertex_to_point is not None:
            arrays["mesh/vertex_to_point"] = bundle.mesh.vertex_to_point
    for i, v in enumerate(bundle.views):
        arrays[f"view/{i:04d}/pose"] = v.cam_to_world
        arrays[f"view/{i:04d}/rgb"] = v.rgb
        arrays[f"view/{i:04d}/depth"] = v.depth
    write_cache(path, meta, arrays)


def load_scene_cache(path: str | Path) -> SceneBundle:
    meta, arrays = read_cache(path)
    if meta.get("kind") != "scene_bundle":
        raise VersionMismatch(
            f"{path}: expected a scene_bundle cache, found kind={meta.get('kind')!r}"
        )
    cloud = PointCloud(
        arrays["cloud/positions"],
        arrays["cloud/colors"],
        arrays["cloud/normals"],
        arrays["cloud/normals_valid"],
    )
    mesh = None
    if meta["has_mesh"]:
        mesh = TriangleMesh(
            arrays["mesh/vertices"],
            arrays["mesh/triangles"],
            arrays.get("mesh/vertex_to_point"),
        )
    views = []
    for i, vm in enumerate(meta["views"]):
        views.append(
            CameraView(
                view_id=vm["id"],
                intrinsics=Intrinsics(
                    vm["fx"], vm["fy"], vm["cx"], vm["cy"], vm["width"], vm["height"]
                ),
                cam_to_world=arrays[f"view/{i:04d}/pose"],
                rgb=arrays[f"view/{i:04d}/rgb"],
                depth=arrays[f"view/{i:04d}/depth"],
            )
        )
    return SceneBundle(cloud=cloud, views=views, mesh=mesh, voxel_size=meta["voxel_size"])


def bundles_equal(a: SceneBundle, b: SceneBundle) -> bool:
    """Bit-exact equality over all arrays; used by round-trip tests."""
    if a.voxel_size != b.voxel_size or len(a.views) != len(b.views):
        return False
    if not (
        np.array_equal(a.cloud.positions, b.cloud.positions)
        and np.array_equal(a.cloud.colors, b.cloud.colors)
        and np.array_equal(a.cloud.normals, b.cloud.normals)
        and np.array_equal(a.cloud.normals_valid, b.cloud.normals_valid)
    ):
        return False
    if (a.mesh is None) != (b.mesh is None):
        return False
    if a.mesh is not None and b.mesh is not None:
        am, bm = a.mesh, b.mesh
        if not (
            np.array_equal(am.vertices, bm.vertices)
            and np.array_equal(am.triangles, bm.triangles)
        ):
            return False
        if (am.vertex_to_point is None) != (bm.vertex_to_point is None):
            return False
        if am.vertex_to_point is not None and not np.array_equal(
            am.vertex_to_point, bm.vertex_to_point
        ):
            return False
    for va, vb in zip(a.views, b.views):
        if va.view_id != vb.view_id or va.intrinsics != vb.intrinsics:
            return False
        if not (
            np.array_equal(va.cam_to_world, vb.cam_to_world)
            and np.array_equal(va.rgb, vb.rgb)
            and np.array_equal(va.depth, vb.depth)
        ):
            return False
    return True


def save_point_cloud(path: str | Path, cloud: PointCloud) -> None:
    """Write a point cloud as binary PLY with colors (and normals if valid)."""
    props: dict[str, np.ndarray] = {
        "x": cloud.positions[:, 0].astype(np.float64),
        "y": cloud.positions[:, 1].astype(np.float64),
        "z": cloud.positions[:, 2].astype(np.float64),
    }
    if bool(np.all(cloud.normals_valid)) and cloud.count:
        props["nx"] = cloud.normals[:, 0]
        props["ny"] = cloud.normals[:, 1]
        props["nz"] = cloud.normals[:, 2]
    props["red"] = cloud.colors[:, 0]
    props["green"] = cloud.colors[:, 1]
    props["blue"] = cloud.colors[:, 2]
    ply.write_ply(path, props)
