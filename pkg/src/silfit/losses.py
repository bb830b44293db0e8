"""Mask-space losses with gradients, plus the point-set Chamfer distance.

The silhouette objective combines a clamped binary cross-entropy with a
nearest-support affinity penalty; both return the loss value together with
its gradient w.r.t. the predicted mask so the renderer can chain through.
Chamfer distance serves as the evaluation metric and as the anchor
regularizer during test-stage refinement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCloudError, ShapeMismatchError

# Support threshold: ground-truth masks are binary so any value in (0, 1)
# is exact for them; rendered masks are strictly positive inside truncation
# windows, so a small cut keeps support sets sparse and stable.
DEFAULT_SUPPORT_THRESHOLD = 1e-3
DEFAULT_BCE_EPSILON = 1e-7


@dataclass(frozen=True)
class LossConfig:
    """Weights and thresholds of the combined mask loss."""

    lambda_aff: float = 1.0
    support_threshold: float = DEFAULT_SUPPORT_THRESHOLD
    bce_epsilon: float = DEFAULT_BCE_EPSILON

    def __post_init__(self):
        if self.lambda_aff < 0.0:
            raise ValueError(f"lambda_aff must be >= 0, got {self.lambda_aff}")
        if not 0.0 <= self.support_threshold < 1.0:
            raise ValueError(f"support_threshold must be in [0, 1), got {self.support_threshold}")
        if not 0.0 < self.bce_epsilon < 0.5:
            raise ValueError(f"bce_epsilon must be in (0, 0.5), got {self.bce_epsilon}")


@dataclass(eq=False)
class LossValue:
    """Combined loss with per-view mask gradients.

    total == bce + lambda_aff * affinity exactly as stored; d_masks holds
    d(total)/d(predicted mask) for each view.
    """

    total: float
    bce: float
    affinity: float
    d_masks: list = field(default_factory=list)


def _check_same_shape(pred: np.ndarray, gt: np.ndarray):
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ShapeMismatchError(
            f"mask shapes disagree: predicted {pred.shape} vs ground truth {gt.shape}"
        )


def bce(pred, gt, eps: float = DEFAULT_BCE_EPSILON) -> tuple[float, np.ndarray]:
    """Pixel-summed binary cross-entropy of one view, with mask gradient.

    The prediction is clamped to [eps, 1-eps] inside the logarithms; where
    the clamp is active the gradient is zero (the clamp is part of the
    function being differentiated).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_same_shape(pred, gt)
    if gt.size and (gt.min() < 0.0 or gt.max() > 1.0):
        raise ValueError("ground-truth mask values must lie in [0, 1]")
    clamped = np.clip(pred, eps, 1.0 - eps)
    loss = float(np.sum(-gt * np.log(clamped) - (1.0 - gt) * np.log(1.0 - clamped)))
    active = (pred < eps) | (pred > 1.0 - eps)
    grad = np.where(active, 0.0, -gt / clamped + (1.0 - gt) / (1.0 - clamped))
    return loss, grad


@dataclass(eq=False)
class DistanceField:
    """Exact squared-distance transform with nearest-support indices.

    dist_sq[i, j] is the squared Euclidean pixel distance from (i, j) to the
    closest support pixel; arg_row/arg_col identify that pixel, ties broken
    toward the lexicographically smallest (row, column). All entries are -1
    when the support set is empty.
    """

    dist_sq: np.ndarray
    arg_row: np.ndarray
    arg_col: np.ndarray

    @property
    def empty(self) -> bool:
        return bool(self.dist_sq.flat[0] < 0) if self.dist_sq.size else True


def distance_transform(support: np.ndarray) -> DistanceField:
    """Two-pass separable exact squared EDT over a boolean support grid.

    Pass one reduces each column to its nearest support row per pixel; pass
    two minimizes across columns with an integer composite key so the result
    matches the naive per-pixel scan exactly, argmin tie-breaks included.
    """
    sup = np.asarray(support, dtype=bool)
    if sup.ndim != 2:
        raise ShapeMismatchError(f"support grid must be 2-D, got shape {sup.shape}")
    height, width = sup.shape
    if not sup.any():
        fill = np.full((height, width), -1, dtype=np.int64)
        return DistanceField(fill, fill.copy(), fill.copy())

    big = np.int64(2 * (height * height + width * width) + 4)

    # Pass 1: nearest support row within each column (two linear scans).
    above = np.full(width, -1, dtype=np.int64)
    near_above = np.empty((height, width), dtype=np.int64)
    for i in range(height):
        above = np.where(sup[i], i, above)
        near_above[i] = above
    below = np.full(width, -1, dtype=np.int64)
    near_below = np.empty((height, width), dtype=np.int64)
    for i in range(height - 1, -1, -1):
        below = np.where(sup[i], i, below)
        near_below[i] = below

    rows_idx = np.arange(height, dtype=np.int64)[:, None]
    d_above = np.where(near_above >= 0, (rows_idx - near_above) ** 2, big)
    d_below = np.where(near_below >= 0, (near_below - rows_idx) ** 2, big)
    # On ties the smaller row wins, preserving the global lexicographic rule.
    col_row = np.where(d_above <= d_below, near_above, near_below)
    col_dist = np.minimum(d_above, d_below)

    # Pass 2: minimize col_dist[l] + (j - l)^2 across columns l. The payload
    # (row, column) rides along in the low bits of an integer key so argmin
    # resolves ties by smallest (dist, row, column) triple.
    cols_idx = np.arange(width, dtype=np.int64)
    col_sq = (cols_idx[:, None] - cols_idx[None, :]) ** 2  # (j, l)
    cell = np.int64(height) * np.int64(width)
    payload = col_row * width + cols_idx[None, :]  # (i, l)
    payload = np.where(col_row >= 0, payload, 0)

    dist_sq = np.empty((height, width), dtype=np.int64)
    arg_row = np.empty((height, width), dtype=np.int64)
    arg_col = np.empty((height, width), dtype=np.int64)
    chunk = max(1, 2_000_000 // max(1, width * width))
    for start in range(0, height, chunk):
        stop = min(height, start + chunk)
        totals = col_dist[start:stop, None, :] + col_sq[None, :, :]  # (i, j, l)
        keys = totals * cell + payload[start:stop, None, :]
        best = np.argmin(keys, axis=2)
        dist_sq[start:stop] = np.take_along_axis(totals, best[:, :, None], axis=2)[:, :, 0]
        arg_row[start:stop] = np.take_along_axis(
            np.broadcast_to(col_row[start:stop, None, :], totals.shape), best[:, :, None], axis=2
        )[:, :, 0]
        arg_col[start:stop] = best
    return DistanceField(dist_sq, arg_row, arg_col)


def affinity(
    pred,
    gt,
    threshold: float = DEFAULT_SUPPORT_THRESHOLD,
    gt_field: DistanceField | None = None,
) -> tuple[float, np.ndarray]:
    """Symmetric nearest-support squared-distance loss between two masks.

    Support sets hold pixels whose value exceeds the threshold. Every
    support pixel of one mask is charged the squared distance to the nearest
    support pixel of the other, weighted by both confidences; an empty
    support set zeroes its sum. The returned gradient is w.r.t. the
    predicted mask with argmin indices and support membership held constant
    (the standard subgradient for min-composed losses).

    gt_field lets callers reuse a precomputed transform of the ground-truth
    support; it is the hot path during fitting where the target is fixed.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_same_shape(pred, gt)
    pred_sup = pred > threshold
    gt_sup = gt > threshold
    grad = np.zeros_like(pred)
    total = 0.0

    if gt_sup.any() and pred_sup.any():
        if gt_field is None:
            gt_field = distance_transform(gt_sup)
        dist = gt_field.dist_sq[pred_sup].astype(np.float64)
        gt_at_arg = gt[gt_field.arg_row[pred_sup], gt_field.arg_col[pred_sup]]
        total += float(np.sum(dist * pred[pred_sup] * gt_at_arg))
        grad[pred_sup] += dist * gt_at_arg

        pred_field = distance_transform(pred_sup)
        dist_b = pred_field.dist_sq[gt_sup].astype(np.float64)
        arg_r = pred_field.arg_row[gt_sup]
        arg_c = pred_field.arg_col[gt_sup]
        pred_at_arg = pred[arg_r, arg_c]
        total += float(np.sum(dist_b * gt[gt_sup] * pred_at_arg))
        np.add.at(grad, (arg_r, arg_c), dist_b * gt[gt_sup])

    return total, grad


def total_loss(preds, gts, cfg: LossConfig, gt_fields=None) -> LossValue:
    """Sum BCE and affinity over views; gradients per view w.r.t. predictions."""
    if len(preds) != len(gts):
        raise ShapeMismatchError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    if gt_fields is None:
        gt_fields = [None] * len(preds)
    bce_sum = 0.0
    aff_sum = 0.0
    d_masks = []
    for pred, gt, fld in zip(preds, gts, gt_fields):
        bce_v, d_bce = bce(pred, gt, cfg.bce_epsilon)
        aff_v, d_aff = affinity(pred, gt, cfg.support_threshold, gt_field=fld)
        bce_sum += bce_v
        aff_sum += aff_v
        d_masks.append(d_bce + cfg.lambda_aff * d_aff)
    total = bce_sum + cfg.lambda_aff * aff_sum
    return LossValue(total=total, bce=bce_sum, affinity=aff_sum, d_masks=d_masks)


# ---------------------------------------------------------------------------
# Chamfer distance
# ---------------------------------------------------------------------------


def nearest_squared_distances(query, target, block: int = 8192):
    """For each query point, squared distance to (and index of) its nearest
    target point. Brute force, chunked over the target set; ties keep the
    first target index.
    """
    q = np.asarray(query, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    best = np.full(q.shape[0], np.inf)
    best_idx = np.zeros(q.shape[0], dtype=np.int64)
    for start in range(0, t.shape[0], block):
        sub = t[start : start + block]
        d2 = ((q[:, None, :] - sub[None, :, :]) ** 2).sum(axis=2)
        idx = np.argmin(d2, axis=1)
        val = np.take_along_axis(d2, idx[:, None], axis=1)[:, 0]
        better = val < best
        best = np.where(better, val, best)
        best_idx = np.where(better, idx + start, best_idx)
    return best, best_idx


class _UniformGrid:
    """Hash of points into cubic cells for nearest-neighbor pruning.

    Candidate distances use the same arithmetic as the brute-force path, so
    the minimum over the (provably sufficient) candidate set is bit-equal to
    the brute-force minimum.
    """

    def __init__(self, points: np.ndarray):
        self.points = points
        lo = points.min(axis=0)
        hi = points.max(axis=0)
        span = float(np.max(hi - lo))
        target_cells = max(1.0, round(points.shape[0] ** (1.0 / 3.0)))
        self.cell = span / target_cells if span > 0.0 else 1.0
        self.origin = lo
        coords = np.floor((points - self.origin) / self.cell).astype(np.int64)
        self.buckets: dict[tuple[int, int, int], list[int]] = {}
        for n, key in enumerate(map(tuple, coords)):
            self.buckets.setdefault(key, []).append(n)
        self.buckets = {k: np.asarray(v, dtype=np.int64) for k, v in self.buckets.items()}
        self.lo_cell = coords.min(axis=0)
        self.hi_cell = coords.max(axis=0)

    def _shell(self, home: np.ndarray, radius: int):
        lo = np.maximum(home - radius, self.lo_cell)
        hi = np.minimum(home + radius, self.hi_cell)
        for ci in range(lo[0], hi[0] + 1):
            for cj in range(lo[1], hi[1] + 1):
                for ck in range(lo[2], hi[2] + 1):
                    if max(abs(ci - home[0]), abs(cj - home[1]), abs(ck - home[2])) == radius:
                        hit = self.buckets.get((ci, cj, ck))
                        if hit is not None:
                            yield hit

    def nearest_sq(self, query: np.ndarray) -> float:
        home = np.floor((query - self.origin) / self.cell).astype(np.int64)
        max_radius = int(np.max(np.abs(home - self.lo_cell)))
        max_radius = max(max_radius, int(np.max(np.abs(self.hi_cell - home))))
        best = np.inf
        for radius in range(max_radius + 1):
            # A cell in shell r is at least (r - 1) * cell away from a query
            # anywhere inside its home cell.
            if radius > 0 and best <= ((radius - 1) * self.cell) ** 2:
                break
            for idx in self._shell(home, radius):
                d2 = ((query - self.points[idx]) ** 2).sum(axis=1)
                local = float(d2.min())
                if local < best:
                    best = local
        return best


def chamfer_directed(source, target, method: str = "brute") -> float:
    """Sum over source points of squared distance to the nearest target point."""
    src = np.asarray(source, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    if src.shape[0] == 0 or tgt.shape[0] == 0:
        raise EmptyCloudError("chamfer distance requires two non-empty clouds")
    if method == "brute":
        d2, _ = nearest_squared_distances(src, tgt)
    elif method == "grid":
        grid = _UniformGrid(tgt)
        d2 = np.array([grid.nearest_sq(p) for p in src])
    else:
        raise ValueError(f"unknown chamfer method {method!r}")
    return float(np.sum(d2))


def chamfer(cloud_a, cloud_b, method: str = "brute") -> float:
    """Symmetric Chamfer distance: forward plus backward sums of squared
    nearest-neighbor distances."""
    return chamfer_directed(cloud_a, cloud_b, method) + chamfer_directed(
        cloud_b, cloud_a, method
    )


def chamfer_with_grad(anchor, moving) -> tuple[float, np.ndarray]:
    """Chamfer between a fixed anchor and a moving cloud, with the gradient
    w.r.t. the moving cloud.

    Nearest-neighbor correspondences are recomputed at the current
    configuration and treated as constant inside the gradient.
    """
    anc = np.asarray(anchor, dtype=np.float64)
    mov = np.asarray(moving, dtype=np.float64)
    if anc.shape[0] == 0 or mov.shape[0] == 0:
        raise EmptyCloudError("chamfer distance requires two non-empty clouds")
    d2_fwd, idx_fwd = nearest_squared_distances(anc, mov)
    d2_bwd, idx_bwd = nearest_squared_distances(mov, anc)
    grad = 2.0 * (mov - anc[idx_bwd])
    np.add.at(grad, idx_fwd, 2.0 * (mov[idx_fwd] - anc))
    return float(np.sum(d2_fwd) + np.sum(d2_bwd)), grad
