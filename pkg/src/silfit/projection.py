"""Soft silhouette renderer: Gaussian point splatting squashed through tanh.

Each point spreads an un-normalized separable Gaussian over nearby pixels;
per-pixel kernel sums go through tanh, giving a confidence image that is
differentiable in the point positions. A hard nearest-pixel rasterizer is
kept as the non-differentiable baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError

# Window half-size in units of the kernel standard deviation. exp(-18) is
# below float32 visibility, so a 6-sigma cutoff is invisible at 1e-6 scale.
DEFAULT_TRUNCATION_SIGMAS = 6.0


@dataclass(frozen=True)
class KernelConfig:
    """Splat kernel: variance in pixel^2 and truncation radius in pixels.

    truncation_radius=None resolves to 6*sqrt(sigma_sq); math.inf disables
    truncation (used for oracle-grade exact renders).
    """

    sigma_sq: float
    truncation_radius: float | None = None

    def __post_init__(self):
        if not self.sigma_sq > 0.0:
            raise ValueError(f"sigma_sq must be positive, got {self.sigma_sq}")
        radius = self.truncation_radius
        if radius is None:
            radius = DEFAULT_TRUNCATION_SIGMAS * math.sqrt(self.sigma_sq)
        if not radius >= 3.0 * math.sqrt(self.sigma_sq):
            raise ValueError(
                f"truncation_radius {radius} is below 3*sqrt(sigma_sq)"
                f" = {3.0 * math.sqrt(self.sigma_sq)}"
            )
        object.__setattr__(self, "truncation_radius", float(radius))


def _as_image_points(cam_points) -> tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(cam_points, dtype=np.float64)
    if pts.size == 0:
        return np.zeros(0), np.zeros(0)
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise ShapeMismatchError(f"expected (N, 2) or (N, 3) camera points, got {pts.shape}")
    if not np.all(np.isfinite(pts[:, :2])):
        raise ValueError("image-plane coordinates must be finite")
    return pts[:, 0].copy(), pts[:, 1].copy()


def _window_indices(centers: np.ndarray, radius: float, size: int):
    """Per-point integer pixel window [ceil(c - r), floor(c + r)] clipped to the image.

    Returns (idx, valid): (N, K) index array and matching validity mask.
    """
    n = centers.shape[0]
    if math.isfinite(radius):
        first = np.ceil(centers - radius)
        last = np.floor(centers + radius)
        k = min(size, int(math.floor(2.0 * radius)) + 2)
    else:
        first = np.zeros(n)
        last = np.full(n, size - 1.0)
        k = size
    first_c = np.minimum(np.maximum(first, 0.0), float(size))
    last_c = np.minimum(last, float(size - 1))
    idx = first_c[:, None].astype(np.int64) + np.arange(k, dtype=np.int64)[None, :]
    valid = idx <= last_c[:, None]
    idx = np.minimum(idx, size - 1)
    return idx, valid


def _splat_terms(x_img, y_img, height, width, kernel):
    """Shared forward machinery: window indices and 1-D Gaussian factors."""
    radius = kernel.truncation_radius
    cols, cols_ok = _window_indices(x_img, radius, width)
    rows, rows_ok = _window_indices(y_img, radius, height)
    inv_two_var = 1.0 / (2.0 * kernel.sigma_sq)
    gauss_x = np.exp(-((x_img[:, None] - cols) ** 2) * inv_two_var)
    gauss_y = np.exp(-((y_img[:, None] - rows) ** 2) * inv_two_var)
    gauss_x[~cols_ok] = 0.0
    gauss_y[~rows_ok] = 0.0
    return rows, rows_ok, cols, cols_ok, gauss_y, gauss_x


def render(cam_points, height: int, width: int, kernel: KernelConfig) -> np.ndarray:
    """Render points to an (H, W) confidence mask in [0, 1).

    Pixel (i, j) gets tanh of the sum over points of
    exp(-(x-j)^2 / 2s^2) * exp(-(y-i)^2 / 2s^2), with each point only
    touching pixels within the truncation window on both axes. Pixels
    outside every window stay exactly 0.

    Accumulation runs in ascending (x_img, y_img, input index) order so any
    permutation of the input yields a bit-identical mask.
    """
    x_img, y_img = _as_image_points(cam_points)
    n = x_img.shape[0]
    if n == 0:
        return np.zeros((height, width), dtype=np.float64)
    order = np.lexsort((np.arange(n), y_img, x_img))
    x_img, y_img = x_img[order], y_img[order]

    rows, rows_ok, cols, cols_ok, gauss_y, gauss_x = _splat_terms(
        x_img, y_img, height, width, kernel
    )
    flat = rows[:, :, None] * width + cols[:, None, :]
    contrib = gauss_y[:, :, None] * gauss_x[:, None, :]
    ok = rows_ok[:, :, None] & cols_ok[:, None, :]
    # bincount adds weights sequentially in input order: point-major after
    # the deterministic sort, which fixes per-pixel summation order.
    acc = np.bincount(flat[ok], weights=contrib[ok], minlength=height * width)
    return np.tanh(acc).reshape(height, width)


def render_backward(cam_points, height: int, width: int, kernel: KernelConfig, d_mask) -> np.ndarray:
    """Gradient of sum(d_mask * render(...)) w.r.t. image-plane coordinates.

    Differentiates the truncated forward function itself: contributions from
    pixels outside a point's window are exactly zero. Returns (N, 2) of
    (dL/dx_img, dL/dy_img).
    """
    grad_mask = np.asarray(d_mask, dtype=np.float64)
    if grad_mask.shape != (height, width):
        raise ShapeMismatchError(
            f"d_mask must be ({height}, {width}), got shape {grad_mask.shape}"
        )
    x_img, y_img = _as_image_points(cam_points)
    n = x_img.shape[0]
    if n == 0:
        return np.zeros((0, 2), dtype=np.float64)

    mask = render(np.stack([x_img, y_img], axis=1), height, width, kernel)
    weight = grad_mask * (1.0 - mask * mask)

    rows, rows_ok, cols, cols_ok, gauss_y, gauss_x = _splat_terms(
        x_img, y_img, height, width, kernel
    )
    win = weight[rows[:, :, None], cols[:, None, :]]
    win = win * (rows_ok[:, :, None] & cols_ok[:, None, :])
    inv_var = 1.0 / kernel.sigma_sq
    dx_factor = gauss_x * (x_img[:, None] - cols) * inv_var
    dy_factor = gauss_y * (y_img[:, None] - rows) * inv_var
    d_x = -np.einsum("nij,ni,nj->n", win, gauss_y, dx_factor)
    d_y = -np.einsum("nij,nj,ni->n", win, gauss_x, dy_factor)
    return np.stack([d_x, d_y], axis=1)


def rasterize_discrete(cam_points, height: int, width: int) -> np.ndarray:
    """Hard baseline: set the nearest pixel of each point to 1.

    Out-of-bounds points are dropped. The result is binary and, for sparse
    clouds, full of interior holes; that failure mode is what the soft
    renderer exists to avoid.
    """
    x_img, y_img = _as_image_points(cam_points)
    mask = np.zeros((height, width), dtype=np.float64)
    if x_img.shape[0] == 0:
        return mask
    rows = np.rint(y_img).astype(np.int64)
    cols = np.rint(x_img).astype(np.int64)
    inside = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
    mask[rows[inside], cols[inside]] = 1.0
    return mask
