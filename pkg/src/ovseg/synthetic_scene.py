"""Synthetic box-world scenes with exact ray-cast rendering.

The generated scene is a floor slab, a wall slab, and three colored boxes.
Point samples lie on the slabs' visible faces with exact normals and flat
per-object colors; camera views are rendered by axis-aligned-box ray casting,
so depth maps are exact and double as an occlusion oracle. Everything is
deterministic given the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scene_io import (
    CameraView,
    Intrinsics,
    PointCloud,
    SceneBundle,
    write_depth_png,
    write_rgb_png,
    save_point_cloud,
)

LABEL_NAMES = ["floor", "wall", "red box", "green box", "blue box"]
PROMPT_FOR_LABEL = {2: "red", 3: "green", 4: "blue"}


@dataclass
class Box:
    lo: np.ndarray  # (3,)
    hi: np.ndarray  # (3,)
    color: tuple[int, int, int]
    label: int

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)


def default_boxes() -> list[Box]:
    return [
        Box([-1.0, -1.0, -0.05], [1.0, 1.0, 0.0], (120, 120, 120), 0),  # floor
        Box([-1.0, 0.95, 0.0], [1.0, 1.0, 0.8], (200, 200, 200), 1),  # wall
        Box([-0.62, -0.25, 0.0], [-0.32, 0.05, 0.3], (200, 40, 40), 2),  # red
        Box([0.05, -0.45, 0.0], [0.35, -0.15, 0.3], (40, 180, 60), 3),  # green
        Box([0.32, 0.35, 0.0], [0.62, 0.65, 0.3], (40, 40, 200), 4),  # blue
    ]


# ---------------------------------------------------------------------------
# Point sampling


def _face_grid(lo, hi, axis, value, spacing, jitter_rng=None):
    """Grid of points on one axis-aligned face."""
    axes = [a for a in range(3) if a != axis]
    n0 = max(2, int(np.floor((hi[axes[0]] - lo[axes[0]]) / spacing)) + 1)
    n1 = max(2, int(np.floor((hi[axes[1]] - lo[axes[1]]) / spacing)) + 1)
    c0 = np.linspace(lo[axes[0]], hi[axes[0]], n0)
    c1 = np.linspace(lo[axes[1]], hi[axes[1]], n1)
    g0, g1 = np.meshgrid(c0, c1, indexing="ij")
    pts = np.empty((n0 * n1, 3))
    pts[:, axes[0]] = g0.ravel()
    pts[:, axes[1]] = g1.ravel()
    pts[:, axis] = value
    return pts


def sample_box_points(box: Box, spacing: float, top_only: bool = False):
    """Points and outward normals on the box's upward/side faces (never the bottom)."""
    faces = []
    # (axis, face value, normal)
    candidates = [(2, box.hi[2], [0, 0, 1.0])]
    if not top_only:
        candidates += [
            (0, box.lo[0], [-1.0, 0, 0]),
            (0, box.hi[0], [1.0, 0, 0]),
            (1, box.lo[1], [0, -1.0, 0]),
            (1, box.hi[1], [0, 1.0, 0]),
        ]
    for axis, value, normal in candidates:
        pts = _face_grid(box.lo, box.hi, axis, value, spacing)
        faces.append((pts, np.tile(normal, (len(pts), 1))))
    positions = np.concatenate([f[0] for f in faces])
    normals = np.concatenate([f[1] for f in faces])
    return positions, normals


def build_cloud(boxes: list[Box], spacing: float) -> tuple[PointCloud, np.ndarray]:
    """Sampled cloud plus per-point ground-truth object labels."""
    all_pos, all_nrm, all_col, all_lbl = [], [], [], []
    for box in boxes:
        top_only = box.label == 0  # floor: only the walkable surface
        pos, nrm = sample_box_points(box, spacing, top_only=top_only)
        if box.label == 1:
            # Wall: drop the back face; a room-side scan never sees it.
            keep = ~np.isclose(nrm[:, 1], 1.0)
            pos, nrm = pos[keep], nrm[keep]
        all_pos.append(pos)
        all_nrm.append(nrm)
        all_col.append(np.tile(box.color, (len(pos), 1)))
        all_lbl.append(np.full(len(pos), box.label, dtype=np.int64))
    positions = np.concatenate(all_pos)
    normals = np.concatenate(all_nrm)
    colors = np.concatenate(all_col).astype(np.uint8)
    labels = np.concatenate(all_lbl)
    cloud = PointCloud(positions, colors, normals, np.ones(len(positions), dtype=bool))
    return cloud, labels


# ---------------------------------------------------------------------------
# Ray casting and rendering


def raycast(boxes: list[Box], origins: np.ndarray, dirs: np.ndarray):
    """First-hit parameter t and box index per ray (slab method); inf when missed.

    t is measured in units of the (not necessarily unit) direction vectors.
    """
    n = len(origins)
    best_t = np.full(n, np.inf)
    best_box = np.full(n, -1, dtype=np.int64)
    for bi, box in enumerate(boxes):
        with np.errstate(divide="ignore", invalid="ignore"):
            t_lo = (box.lo[None, :] - origins) / dirs
            t_hi = (box.hi[None, :] - origins) / dirs
        t_near = np.nanmax(np.minimum(t_lo, t_hi), axis=1)
        t_far = np.nanmin(np.maximum(t_lo, t_hi), axis=1)
        hit = (t_near <= t_far) & (t_far > 1e-9)
        t = np.where(t_near > 1e-9, t_near, t_far)  # inside-the-box rays exit forward
        closer = hit & (t < best_t)
        best_t[closer] = t[closer]
        best_box[closer] = bi
    return best_t, best_box


def render_view(
    boxes: list[Box], intrinsics: Intrinsics, cam_to_world: np.ndarray, view_id: str
) -> CameraView:
    """Exact flat-shaded RGB and z-depth by per-pixel ray casting.

    Integer pixel (ix, iy) corresponds to continuous image coordinates
    (u=ix, v=iy), matching the projection convention, so a point that
    projects exactly onto a pixel agrees with that pixel's depth.
    """
    w, h = intrinsics.width, intrinsics.height
    ys, xs = np.mgrid[0:h, 0:w]
    dirs_cam = np.stack(
        [
            (xs.ravel() - intrinsics.cx) / intrinsics.fx,
            (ys.ravel() - intrinsics.cy) / intrinsics.fy,
            np.ones(w * h),
        ],
        axis=1,
    )
    r = cam_to_world[:3, :3]
    t = cam_to_world[:3, 3]
    dirs_world = dirs_cam @ r.T
    origins = np.tile(t, (w * h, 1))
    t_hit, box_idx = raycast(boxes, origins, dirs_world)
    # Unit-z camera directions make t the camera-space z depth directly.
    depth = np.where(np.isfinite(t_hit), t_hit, 0.0).reshape(h, w).astype(np.float32)
    rgb = np.zeros((h * w, 3), dtype=np.uint8)
    hit = box_idx >= 0
    palette = np.asarray([b.color for b in boxes], dtype=np.uint8)
    rgb[hit] = palette[box_idx[hit]]
    return CameraView(
        view_id=view_id,
        intrinsics=intrinsics,
        cam_to_world=cam_to_world,
        rgb=rgb.reshape(h, w, 3),
        depth=depth,
    )


def look_at(eye: np.ndarray, target: np.ndarray) -> np.ndarray:
    """cam_to_world with +z forward, +x right, +y down (image convention)."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    nr = np.linalg.norm(right)
    if nr < 1e-9:
        right = np.array([1.0, 0.0, 0.0])
    else:
        right = right / nr
    down = np.cross(forward, right)
    m = np.eye(4)
    m[:3, 0] = right
    m[:3, 1] = down
    m[:3, 2] = forward
    m[:3, 3] = eye
    return m


def ring_views(
    boxes: list[Box],
    n_views: int,
    radius: float = 1.9,
    height: float = 1.1,
    width: int = 320,
    height_px: int = 240,
    focal: float = 260.0,
) -> list[CameraView]:
    intr = Intrinsics(fx=focal, fy=focal, cx=width / 2.0, cy=height_px / 2.0, width=width, height=height_px)
    target = np.array([0.0, 0.0, 0.15])
    views = []
    for i in range(n_views):
        angle = 2.0 * np.pi * i / n_views
        eye = np.array([radius * np.cos(angle), radius * np.sin(angle), height])
        pose = look_at(eye, target)
        views.append(render_view(boxes, intr, pose, f"v{i:03d}"))
    return views


@dataclass
class SyntheticScene:
    bundle: SceneBundle
    labels: np.ndarray  # ground-truth object label per cloud point
    boxes: list[Box]

    def label_points(self, label: int) -> np.ndarray:
        return np.nonzero(self.labels == label)[0]


def build_scene(
    spacing: float = 0.01,
    n_views: int = 12,
    voxel_size: float = 0.005,
    width: int = 320,
    height: int = 240,
) -> SyntheticScene:
    """Assemble the in-memory synthetic scene (no files written)."""
    boxes = default_boxes()
    cloud, labels = build_cloud(boxes, spacing)
    views = ring_views(boxes, n_views, width=width, height_px=height)
    bundle = SceneBundle(cloud=cloud, views=views, mesh=None, voxel_size=voxel_size)
    bundle.validate()
    return SyntheticScene(bundle=bundle, labels=labels, boxes=boxes)


def write_scene(scene: SyntheticScene, out_dir: str | Path) -> Path:
    """Write the scene as manifest + PLY + PNGs; returns the manifest path."""
    out = Path(out_dir)
    (out / "rgb").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    save_point_cloud(out / "cloud.ply", scene.bundle.cloud)
    entries = []
    for v in scene.bundle.views:
        write_rgb_png(out / "rgb" / f"{v.view_id}.png", v.rgb)
        write_depth_png(out / "depth" / f"{v.view_id}.png", v.depth)
        entries.append(
            {
                "id": v.view_id,
                "rgb": f"rgb/{v.view_id}.png",
                "depth": f"depth/{v.view_id}.png",
                "pose": [float(x) for x in v.cam_to_world.reshape(-1)],
                "intrinsics": {
                    "fx": v.intrinsics.fx,
                    "fy": v.intrinsics.fy,
                    "cx": v.intrinsics.cx,
                    "cy": v.intrinsics.cy,
                    "width": v.intrinsics.width,
                    "height": v.intrinsics.height,
                },
            }
        )
    manifest = {
        "cloud": "cloud.ply",
        "voxel_size": scene.bundle.voxel_size,
        "views": entries,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    np.save(out / "labels.npy", scene.labels)
    return manifest_path


def point_ray_depths(scene: SyntheticScene, view: CameraView, points: np.ndarray) -> np.ndarray:
    """First-hit camera-space z along each point's own camera ray (oracle helper).

    Query points are surface samples, so a missed cast can only be a ray
    grazing a box edge exactly; those fall back to the point's own depth.
    """
    t = view.cam_to_world[:3, 3]
    dirs = points - t
    r = view.cam_to_world[:3, :3]
    z_cam = dirs @ r[:, 2]  # z component in camera frame
    with np.errstate(divide="ignore", invalid="ignore"):
        dirs_unit_z = dirs / z_cam[:, None]
    t_hit, _ = raycast(scene.boxes, np.tile(t, (len(points), 1)), dirs_unit_z)
    return np.where(np.isfinite(t_hit), t_hit, z_cam)
