"""Scene-flow estimation between consecutive point-cloud frames.

``init_flow`` produces a coarse per-point displacement field by nearest-neighbor
matching with a bidirectional consistency check.  ``refine_flow`` upgrades a
flow field so it is exactly rigid within each segmentation cluster, fitting one
rigid transform per cluster against current nearest-neighbor correspondences
(a single ICP-style pass; the outer pipeline loop supplies the iteration).

Flow convention: vectors point from frame t to frame t+1 in the sensor frame,
with ego motion folded in, so static points carry the apparent flow induced by
the moving sensor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, EmptyCloud, MaskMismatch
from .geometry import RigidTransform, SpatialIndex, weighted_kabsch

__all__ = [
    "PointCloud",
    "FlowField",
    "InitFlowDiagnostics",
    "warp",
    "init_flow",
    "refine_flow",
    "fit_transforms",
]


@dataclass(frozen=True)
class PointCloud:
    """One frame of N sensor-frame points, stored as a float64 (N, 3) array."""

    points: np.ndarray
    frame_id: int = 0
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if pts.shape[0] == 0:
            raise EmptyCloud("a point cloud must contain at least one point")
        if not np.isfinite(pts).all():
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class FlowField:
    """Per-point displacement vectors, index-aligned with a source PointCloud.

    Units are meters per frame interval (displacement, not velocity).
    """

    vectors: np.ndarray

    def __post_init__(self) -> None:
        vec = np.asarray(self.vectors, dtype=np.float64)
        if vec.ndim != 2 or vec.shape[1] != 3:
            raise ValueError(f"vectors must have shape (N, 3), got {vec.shape}")
        if vec.shape[0] == 0:
            raise ValueError("flow field must cover at least one point")
        if not np.isfinite(vec).all():
            raise ValueError("flow field contains non-finite components")
        object.__setattr__(self, "vectors", vec)

    @classmethod
    def zeros(cls, n: int) -> "FlowField":
        return cls(np.zeros((n, 3)))

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class InitFlowDiagnostics:
    """Per-point boolean flags produced by init_flow.

    ``unreliable``: failed the bidirectional consistency check (median-filled).
    ``disoccluded``: no plausible correspondence within d_max (flow zeroed).
    """

    unreliable: np.ndarray
    disoccluded: np.ndarray

    @property
    def n_unreliable(self) -> int:
        return int(self.unreliable.sum())

    @property
    def n_disoccluded(self) -> int:
        return int(self.disoccluded.sum())


def _check_aligned(p_t: PointCloud, other, what: str) -> None:
    if len(other) != len(p_t):
        raise MaskMismatch(f"{what} covers {len(other)} points, cloud has {len(p_t)}")


def warp(p_t: PointCloud, flow: FlowField) -> PointCloud:
    """Predicted next frame: every point displaced by its flow vector."""
    _check_aligned(p_t, flow, "flow")
    return PointCloud(p_t.points + flow.vectors, frame_id=p_t.frame_id,
                      timestamp=p_t.timestamp)


def init_flow(p_t: PointCloud, p_t1: PointCloud, *, r_consistency: float = 0.5,
              k_fill: int = 8, d_max: float = 3.0, return_diagnostics: bool = False):
    """Coarse scene flow by nearest-neighbor matching.

    Each point's raw vector points to its nearest neighbor in ``p_t1``.  A
    bidirectional check (the backward nearest neighbor of the matched target
    must land within ``r_consistency`` of the origin point) marks unreliable
    vectors; those are replaced by the componentwise median flow of their
    ``k_fill`` nearest reliable neighbors in ``p_t``.  Points whose nearest
    neighbor is farther than ``d_max`` have no plausible correspondence and
    get zero flow.

    Returns the FlowField, or ``(FlowField, InitFlowDiagnostics)`` when
    ``return_diagnostics`` is set.
    """
    src = p_t.points
    dst = p_t1.points
    ids, dist = SpatialIndex(dst).query(src)
    vectors = dst[ids] - src
    back_ids, _ = SpatialIndex(src).query(dst[ids])
    round_trip = np.linalg.norm(src[back_ids] - src, axis=1)
    disoccluded = dist > d_max
    unreliable = (round_trip > r_consistency) & ~disoccluded
    reliable = ~(unreliable | disoccluded)
    if unreliable.any() and reliable.any():
        # fill from reliable neighbors only; if none exist the raw vectors stay
        rel_pts = src[reliable]
        rel_vec = vectors[reliable]
        k = min(k_fill, rel_pts.shape[0])
        nn_ids, _ = SpatialIndex(rel_pts).query_knn(src[unreliable], k)
        vectors[unreliable] = np.median(rel_vec[nn_ids], axis=1)
    vectors[disoccluded] = 0.0
    out = FlowField(vectors)
    if return_diagnostics:
        return out, InitFlowDiagnostics(unreliable=unreliable, disoccluded=disoccluded)
    return out


def refine_flow(p_t: PointCloud, p_t1: PointCloud, mask, flow: FlowField, *,
                return_degenerate: bool = False):
    """Rigidify a flow field per cluster via one correspondence pass.

    For each cluster the current flow warps its points toward frame t+1, each
    warped point grabs its nearest neighbor there as a correspondence, and a
    rigid transform is fitted to those pairs.  The cluster's output flow is
    then exactly ``T_k(p) - p``.  Clusters too small or too flat to fit
    (fewer than 3 points, degenerate covariance) keep their input flow and
    report the identity transform.

    Returns ``(FlowField, transforms)`` with one transform per cluster id, or
    ``(FlowField, transforms, degenerate_ids)`` when ``return_degenerate`` is
    set.
    """
    labels = mask.labels
    if labels.shape[0] != len(p_t):
        raise MaskMismatch(f"mask covers {labels.shape[0]} points, cloud has {len(p_t)}")
    _check_aligned(p_t, flow, "flow")
    src = p_t.points
    index = SpatialIndex(p_t1.points)
    out = flow.vectors.copy()
    transforms = []
    degenerate = []
    for k in range(mask.n_clusters):
        sel = labels == k
        pts = src[sel]
        warped = pts + flow.vectors[sel]
        ids, _ = index.query(warped)
        try:
            t_k = weighted_kabsch(pts, p_t1.points[ids])
        except DegenerateInput:
            transforms.append(RigidTransform.identity())
            degenerate.append(k)
            continue
        transforms.append(t_k)
        out[sel] = t_k.apply(pts) - pts
    refined = FlowField(out)
    if return_degenerate:
        return refined, transforms, degenerate
    return refined, transforms


def fit_transforms(p_t: PointCloud, flow: FlowField, mask):
    """Per-cluster rigid fit of an existing flow field, no correspondence search.

    Fits each cluster's transform directly from ``p -> p + s``; used to
    evaluate the motion loss on a given (flow, mask) state.  Degenerate
    clusters get the identity.  Returns ``(transforms, degenerate_ids)``.
    """
    labels = mask.labels
    if labels.shape[0] != len(p_t):
        raise MaskMismatch(f"mask covers {labels.shape[0]} points, cloud has {len(p_t)}")
    _check_aligned(p_t, flow, "flow")
    src = p_t.points
    transforms = []
    degenerate = []
    for k in range(mask.n_clusters):
        sel = labels == k
        pts = src[sel]
        try:
            transforms.append(weighted_kabsch(pts, pts + flow.vectors[sel]))
        except DegenerateInput:
            transforms.append(RigidTransform.identity())
            degenerate.append(k)
    return transforms, degenerate
