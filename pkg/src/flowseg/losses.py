"""Self-supervised objective: motion loss + flow consistency + Chamfer rigidity.

These are evaluators, not training losses: the pipeline minimizes them
implicitly through refinement, and the acceptance suite uses them as its
quality signal.  All three terms are nonnegative and vanish together on a
noiseless rigid scene with correct flow and mask.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MaskMismatch, TransformCountMismatch
from .flow import warp
from .geometry import chamfer_distance

__all__ = [
    "LossBreakdown",
    "motion_loss",
    "flow_consistency_loss",
    "chamfer_loss",
    "total_loss",
]


@dataclass(frozen=True)
class LossBreakdown:
    """The three loss components and their sum.

    When evaluated with non-unit weights the stored components are already
    weighted, so ``total == l_mot + l_sc + l_cd`` always holds.
    """

    l_mot: float
    l_sc: float
    l_cd: float
    total: float

    def __post_init__(self) -> None:
        for name in ("l_mot", "l_sc", "l_cd", "total"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
        if abs(self.total - (self.l_mot + self.l_sc + self.l_cd)) > 1e-12:
            raise ValueError("total must equal the sum of the components")


def _check_sizes(p_t, flow, mask) -> None:
    if len(mask) != len(p_t):
        raise MaskMismatch(f"mask covers {len(mask)} points, cloud has {len(p_t)}")
    if len(flow) != len(p_t):
        raise MaskMismatch(f"flow covers {len(flow)} points, cloud has {len(p_t)}")


def motion_loss(p_t, flow, mask, transforms) -> float:
    """Rigid-motion consistency: how far each cluster's flow is from its transform.

    Per cluster, the RMS over its points of ``||T_k(p_i) - (p_i + s_i)||``,
    averaged over the K clusters.  Units: meters.
    """
    _check_sizes(p_t, flow, mask)
    k_total = mask.n_clusters
    if len(transforms) != k_total:
        raise TransformCountMismatch(
            f"got {len(transforms)} transforms for {k_total} clusters")
    acc = 0.0
    for k in range(k_total):
        sel = mask.labels == k
        pts = p_t.points[sel]
        residual = transforms[k].apply(pts) - (pts + flow.vectors[sel])
        acc += np.sqrt((residual ** 2).sum(axis=1).mean())
    return float(acc / k_total)


def flow_consistency_loss(flow, mask) -> float:
    """Within-cluster flow variance: (1/K) sum_k (1/N_k) sum_i ||s_i - mean_k||^2.

    Zero when every cluster's flow is uniform; positive for any rotating
    cluster, because a rigid rotation moves points by different vectors.
    """
    if len(flow) != len(mask):
        raise MaskMismatch(f"flow covers {len(flow)} points, mask has {len(mask)}")
    k_total = mask.n_clusters
    acc = 0.0
    for k in range(k_total):
        sel = mask.labels == k
        vec = flow.vectors[sel]
        dev = vec - vec.mean(axis=0)
        acc += (dev ** 2).sum() / vec.shape[0]
    return float(acc / k_total)


def chamfer_loss(p_t, flow, p_t1) -> float:
    """Chamfer distance between the observed next frame and the warped frame."""
    if len(flow) != len(p_t):
        raise MaskMismatch(f"flow covers {len(flow)} points, cloud has {len(p_t)}")
    return chamfer_distance(p_t1.points, warp(p_t, flow).points)


def total_loss(p_t, p_t1, flow, mask, transforms,
               weights=(1.0, 1.0, 1.0)) -> LossBreakdown:
    """All three components and their sum, optionally weighted.

    Default weights are (1, 1, 1); the stored components carry the weighting.
    """
    w = tuple(float(x) for x in weights)
    if len(w) != 3 or any(x < 0 for x in w):
        raise ValueError("weights must be 3 nonnegative reals")
    l_mot = w[0] * motion_loss(p_t, flow, mask, transforms)
    l_sc = w[1] * flow_consistency_loss(flow, mask)
    l_cd = w[2] * chamfer_loss(p_t, flow, p_t1)
    return LossBreakdown(l_mot=l_mot, l_sc=l_sc, l_cd=l_cd,
                         total=l_mot + l_sc + l_cd)
