"""Motion segmentation: flow-augmented clustering and static/dynamic classification.

Clustering runs density-based connected components over 6-D features
(x, y, z, lambda*sx, lambda*sy, lambda*sz): two points join when their feature
distance is at most eps, so spatially adjacent points separate whenever their
flows differ enough.  Classification picks the static set either by cluster
size (the background dominates) or by comparing cluster velocity with the ego
velocity; ``auto`` switches to the velocity rule when cluster sizes are too
similar for the size rule to be trustworthy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import MaskMismatch, NoStaticCluster, UnknownClusterId

__all__ = [
    "SegmentationMask",
    "ClusterStats",
    "ClassifierConfig",
    "cluster",
    "cluster_stats",
    "classify",
    "resolve_strategy",
    "relabel_static_first",
]

STRATEGIES = ("auto", "quantity", "velocity")


@dataclass(frozen=True)
class SegmentationMask:
    """Per-point cluster labels, aligned with a PointCloud.

    Labels are contiguous ids 0..K-1 with every cluster non-empty.  Id 0 is
    the static set once a mask has been through relabel_static_first.
    """

    labels: np.ndarray

    def __post_init__(self) -> None:
        lab = np.asarray(self.labels)
        if lab.ndim != 1 or lab.shape[0] == 0:
            raise ValueError(f"labels must be a non-empty 1-D array, got shape {lab.shape}")
        if not np.issubdtype(lab.dtype, np.integer):
            raise ValueError(f"labels must be integers, got dtype {lab.dtype}")
        lab = lab.astype(np.int64)
        if lab.min() < 0:
            raise ValueError("cluster ids must be nonnegative")
        counts = np.bincount(lab, minlength=int(lab.max()) + 1)
        if (counts == 0).any():
            missing = int(np.nonzero(counts == 0)[0][0])
            raise ValueError(f"cluster ids must be contiguous, id {missing} is empty")
        object.__setattr__(self, "labels", lab)

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.labels)

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class ClusterStats:
    """Size, mean speed, and centroid of one cluster."""

    cluster_id: int
    size: int
    mean_speed: float
    centroid: np.ndarray

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ValueError("cluster size must be at least 1")
        if not (np.isfinite(self.mean_speed) and self.mean_speed >= 0):
            raise ValueError("mean_speed must be finite and nonnegative")
        object.__setattr__(self, "centroid",
                           np.asarray(self.centroid, dtype=np.float64).reshape(3))


@dataclass(frozen=True)
class ClassifierConfig:
    """Static/dynamic classification parameters.

    theta: ego-velocity tolerance in m/s for the velocity rule.
    dt: frame interval in seconds (converts flow to velocity).
    size_variance_threshold: normalized cluster-size variance below which
        ``auto`` switches from the size rule to the velocity rule.
    """

    theta: float = 1.0
    dt: float = 0.1
    size_variance_threshold: float = 0.15
    strategy: str = "auto"

    def __post_init__(self) -> None:
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")


def _components_within(features: np.ndarray, eps: float):
    """Connected components linking points at feature distance <= eps."""
    n = features.shape[0]
    pairs = cKDTree(features).query_pairs(eps, output_type="ndarray")
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    n_comp, raw = connected_components(adj, directed=False)
    return n_comp, raw


def _compact(labels: np.ndarray) -> np.ndarray:
    """Renumber labels to 0..K-1 in order of first appearance."""
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.shape[0])
    return rank[inverse].astype(np.int64)


def cluster(p_t, flow, lambda_flow: float = 5.0, *, eps: float = 0.8,
            min_pts: int = 5) -> SegmentationMask:
    """Segment a cloud by density connectivity over position+scaled-flow features.

    Components smaller than ``min_pts`` are merged into the large component
    whose nearest point (in feature space) is closest; ties go to the lowest
    point id.  Output labels are compacted to 0..K-1 in first-appearance order.
    """
    if len(flow) != len(p_t):
        raise MaskMismatch(f"flow covers {len(flow)} points, cloud has {len(p_t)}")
    if lambda_flow < 0:
        raise ValueError("lambda_flow must be nonnegative")
    feats = np.hstack([p_t.points, lambda_flow * flow.vectors])
    n_comp, raw = _components_within(feats, eps)
    sizes = np.bincount(raw, minlength=n_comp)
    large = sizes >= min_pts
    if not large.any():
        large = sizes == sizes.max()
    labels = raw.copy()
    if not large.all():
        in_large = large[raw]
        large_feats = feats[in_large]
        large_labels = raw[in_large]
        for comp in np.nonzero(~large)[0]:
            member = feats[raw == comp]
            d2 = ((member[:, None, :] - large_feats[None, :, :]) ** 2).sum(axis=2)
            # per large point, best distance to this component; argmin then
            # gives the lowest-id large point among ties
            nearest = int(np.argmin(d2.min(axis=0)))
            labels[raw == comp] = large_labels[nearest]
    return SegmentationMask(_compact(labels))


def cluster_stats(p_t, flow, mask: SegmentationMask, dt: float):
    """Per-cluster size, mean speed (mean flow norm / dt), and centroid."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if len(mask) != len(p_t):
        raise MaskMismatch(f"mask covers {len(mask)} points, cloud has {len(p_t)}")
    if len(flow) != len(p_t):
        raise MaskMismatch(f"flow covers {len(flow)} points, cloud has {len(p_t)}")
    out = []
    for k in range(mask.n_clusters):
        sel = mask.labels == k
        speeds = np.linalg.norm(flow.vectors[sel], axis=1)
        out.append(ClusterStats(cluster_id=k, size=int(sel.sum()),
                                mean_speed=float(speeds.mean() / dt),
                                centroid=p_t.points[sel].mean(axis=0)))
    return out


def resolve_strategy(stats, cfg: ClassifierConfig) -> str:
    """The concrete rule ``auto`` would pick for these clusters."""
    if cfg.strategy != "auto":
        return cfg.strategy
    sizes = np.array([s.size for s in stats], dtype=np.float64)
    normalized_variance = sizes.var() / sizes.mean() ** 2
    return "velocity" if normalized_variance < cfg.size_variance_threshold else "quantity"


def classify(stats, v_ego: float, cfg: ClassifierConfig):
    """Split cluster ids into (static_ids, dynamic_ids).

    ``quantity``: the single largest cluster is static (ties to lowest id).
    ``velocity``: every cluster whose mean speed is within theta of the ego
    speed is static; raises NoStaticCluster when none qualifies, and the
    caller is expected to fall back to the quantity rule.
    """
    if not stats:
        raise ValueError("stats must be non-empty")
    if v_ego < 0:
        raise ValueError("v_ego must be nonnegative")
    strategy = resolve_strategy(stats, cfg)
    if strategy == "quantity":
        best = max(stats, key=lambda s: (s.size, -s.cluster_id))
        static = {best.cluster_id}
    else:
        static = {s.cluster_id for s in stats
                  if abs(s.mean_speed - v_ego) < cfg.theta}
        if not static:
            raise NoStaticCluster(
                f"no cluster within {cfg.theta} m/s of ego speed {v_ego:.3f}")
    dynamic = {s.cluster_id for s in stats} - static
    return static, dynamic


def relabel_static_first(mask: SegmentationMask, static_ids) -> SegmentationMask:
    """Canonical form: static clusters merged into id 0, dynamic clusters
    renumbered 1..K'-1 by descending size (ties by original id)."""
    ids = set(int(k) for k in static_ids)
    if not ids:
        raise ValueError("static_ids must be non-empty")
    existing = set(range(mask.n_clusters))
    unknown = ids - existing
    if unknown:
        raise UnknownClusterId(f"unknown cluster ids {sorted(unknown)}")
    sizes = mask.cluster_sizes()
    dynamic = sorted(existing - ids, key=lambda k: (-sizes[k], k))
    remap = np.zeros(mask.n_clusters, dtype=np.int64)
    for new_id, k in enumerate(dynamic, start=1):
        remap[k] = new_id
    return SegmentationMask(remap[mask.labels])
