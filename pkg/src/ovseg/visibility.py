"""Projection of superpoints into camera views with depth-based occlusion checks.

Pixel conventions: a world point projects to continuous coordinates (u, v)
with u in [0, width) and v in [0, height); points exactly on the far border
are out of bounds. Depth sampling rounds half-up to the nearest integer
pixel and clamps to the image. A projected point is visible when its
camera-space depth does not exceed the rendered depth plus
max(abs_tolerance, rel_tolerance * rendered_depth).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoViews
from .scene_io import CameraView, PointCloud
from .superpoint import SuperpointGraph


@dataclass
class OcclusionConfig:
    abs_tolerance: float = 0.02  # meters
    rel_tolerance: float = 0.01

    def validate(self) -> None:
        if self.abs_tolerance < 0 or self.rel_tolerance < 0:
            raise ValueError("occlusion tolerances must be non-negative")


@dataclass
class Projection:
    point_index: int
    view_id: str
    pixel: tuple[float, float]  # (u, v)
    cam_depth: float


@dataclass
class VisibilityTable:
    """Per-(superpoint, view) visible-point counts and pixel locations.

    visible_points maps (sp_id, view_id) to a pair of arrays: point indices
    (sorted ascending) and their (u, v) pixels. Pairs with zero visible
    points are not stored; count() returns 0 for them.
    """

    view_ids: list[str]
    counts: dict[tuple[int, str], int] = field(default_factory=dict)
    visible_points: dict[tuple[int, str], tuple[np.ndarray, np.ndarray]] = field(
        default_factory=dict
    )

    def count(self, sp_id: int, view_id: str) -> int:
        return self.counts.get((sp_id, view_id), 0)


def world_to_camera(points: np.ndarray, view: CameraView) -> np.ndarray:
    """Apply the inverse of cam_to_world to world points (rigid inverse)."""
    r = view.cam_to_world[:3, :3]
    t = view.cam_to_world[:3, 3]
    return (np.atleast_2d(points) - t) @ r


def camera_to_world(points_cam: np.ndarray, view: CameraView) -> np.ndarray:
    r = view.cam_to_world[:3, :3]
    t = view.cam_to_world[:3, 3]
    return np.atleast_2d(points_cam) @ r.T + t


def project_array(points: np.ndarray, view: CameraView) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection: returns (uv, cam_depth, in_frustum mask)."""
    cam = world_to_camera(points, view)
    z = cam[:, 2]
    intr = view.intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[:, 0] / z + intr.cx
        v = intr.fy * cam[:, 1] / z + intr.cy
    ok = (z > 0) & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    uv = np.column_stack([u, v])
    return uv, z, ok


def project_point(p: np.ndarray, view: CameraView, point_index: int = -1) -> Projection | None:
    """Project one world point; None when behind the camera or out of frame."""
    uv, z, ok = project_array(np.asarray(p, dtype=np.float64).reshape(1, 3), view)
    if not ok[0]:
        return None
    return Projection(
        point_index=point_index,
        view_id=view.view_id,
        pixel=(float(uv[0, 0]), float(uv[0, 1])),
        cam_depth=float(z[0]),
    )


def unproject_pixel(view: CameraView, u: float, v: float, cam_depth: float) -> np.ndarray:
    """Inverse of project_point for in-frustum points."""
    intr = view.intrinsics
    x = (u - intr.cx) / intr.fx * cam_depth
    y = (v - intr.cy) / intr.fy * cam_depth
    return camera_to_world(np.array([[x, y, cam_depth]]), view)[0]


def _sample_depth(view: CameraView, uv: np.ndarray) -> np.ndarray:
    # Half-up rounding; the far border rounds outward and is clamped back.
    px = np.floor(uv[:, 0] + 0.5).astype(np.int64)
    py = np.floor(uv[:, 1] + 0.5).astype(np.int64)
    px = np.clip(px, 0, view.intrinsics.width - 1)
    py = np.clip(py, 0, view.intrinsics.height - 1)
    return view.depth[py, px].astype(np.float64)


def visible_mask(
    uv: np.ndarray, cam_depth: np.ndarray, view: CameraView, cfg: OcclusionConfig
) -> np.ndarray:
    """Occlusion test for already-projected in-bounds points."""
    d = _sample_depth(view, uv)
    tol = np.maximum(cfg.abs_tolerance, cfg.rel_tolerance * d)
    return (d > 0) & (cam_depth <= d + tol)


def is_visible(proj: Projection, view: CameraView, cfg: OcclusionConfig) -> bool:
    """Depth-map occlusion check for a single projection."""
    uv = np.array([[proj.pixel[0], proj.pixel[1]]])
    return bool(visible_mask(uv, np.array([proj.cam_depth]), view, cfg)[0])


def build_visibility(
    graph: SuperpointGraph,
    cloud: PointCloud,
    views: list[CameraView],
    cfg: OcclusionConfig,
    sp_ids: list[int] | None = None,
) -> VisibilityTable:
    """Project every superpoint member into every view and count survivors.

    When sp_ids is given only those superpoints are tabulated (used for
    incremental re-extraction after merging).
    """
    cfg.validate()
    if not views:
        raise NoViews("build_visibility requires at least one view")
    table = VisibilityTable(view_ids=sorted(v.view_id for v in views))
    if sp_ids is None:
        point_sel = np.arange(cloud.count, dtype=np.int64)
    else:
        wanted = set(int(s) for s in sp_ids)
        members = [sp.point_indices for sp in graph.superpoints if sp.id in wanted]
        if not members:
            return table
        point_sel = np.sort(np.concatenate(members))
    positions = cloud.positions[point_sel]
    sp_of_sel = graph.point_to_sp[point_sel]
    for view in sorted(views, key=lambda v: v.view_id):
        uv, z, ok = project_array(positions, view)
        vis = ok.copy()
        if np.any(ok):
            vis[ok] = visible_mask(uv[ok], z[ok], view, cfg)
        if not np.any(vis):
            continue
        vis_idx = np.nonzero(vis)[0]
        order = np.lexsort((point_sel[vis_idx], sp_of_sel[vis_idx]))
        vis_idx = vis_idx[order]
        sps = sp_of_sel[vis_idx]
        boundaries = np.nonzero(np.diff(sps))[0] + 1
        for chunk in np.split(np.arange(len(vis_idx)), boundaries):
            sp_id = int(sps[chunk[0]])
            rows = vis_idx[chunk]
            key = (sp_id, view.view_id)
            table.counts[key] = len(rows)
            table.visible_points[key] = (
                point_sel[rows].astype(np.int64),
                uv[rows].astype(np.float64),
            )
    return table


def top_k_views(
    table: VisibilityTable, sp_id: int, k: int, min_visible: int
) -> list[str]:
    """View ids with >= min_visible points, by descending count then id, first k."""
    if k < 1:
        raise ValueError("top_k_views requires k >= 1")
    scored = [
        (vid, table.count(sp_id, vid))
        for vid in table.view_ids
        if table.count(sp_id, vid) >= min_visible
    ]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return [vid for vid, _ in scored[:k]]
