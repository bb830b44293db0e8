"""Report metrics: interior holes, per-pixel L1, outlier counts, IoU."""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatchError
from .losses import nearest_squared_distances

# A pixel counts as covered at confidence >= 0.5; for binary masks this is
# simply the set bit.
COVERAGE_THRESHOLD = 0.5


def interior_hole_count(mask, threshold: float = COVERAGE_THRESHOLD) -> int:
    """Number of uncovered pixels surrounded by >= 6 of 8 covered neighbors.

    These are the speckle holes a discretized projection leaves inside a
    silhouette; the soft renderer exists to eliminate them.
    """
    values = np.asarray(mask, dtype=np.float64)
    covered = values >= threshold
    padded = np.pad(covered, 1, mode="constant")
    neighbor_sum = np.zeros(covered.shape, dtype=np.int64)
    h, w = covered.shape
    for di in range(3):
        for dj in range(3):
            if di == 1 and dj == 1:
                continue
            neighbor_sum += padded[di : di + h, dj : dj + w]
    return int(np.sum(~covered & (neighbor_sum >= 6)))


def l1_error(mask_a, mask_b) -> float:
    """Mean per-pixel absolute difference between two masks."""
    a = np.asarray(mask_a, dtype=np.float64)
    b = np.asarray(mask_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mask shapes disagree: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def iou(mask_a, mask_b, threshold: float = COVERAGE_THRESHOLD) -> float:
    """Intersection over union of the covered sets (report metric only)."""
    a = np.asarray(mask_a) >= threshold
    b = np.asarray(mask_b) >= threshold
    union = np.sum(a | b)
    return float(np.sum(a & b) / union) if union else 1.0


def outlier_count(points, reference, dist_sq_threshold: float = 0.05) -> int:
    """Points whose squared distance to the reference surface exceeds the bound."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] == 0:
        return 0
    d2, _ = nearest_squared_distances(pts, np.asarray(reference, dtype=np.float64))
    return int(np.sum(d2 > dist_sq_threshold))
