"""Camera model and the differentiable world-to-image transform.

Conventions used throughout the package:

* A point cloud is an ``(N, 3)`` float64 array of world coordinates; shapes
  are normalized to fit inside ``[-1, 1]^3``.
* Camera-space points are ``(N, 3)`` arrays ``(x_img, y_img, depth)`` where
  ``x_img``/``y_img`` are continuous pixel coordinates and ``depth`` is the
  camera-frame z in world units.
* Pixel ``(i, j) = (row, column)`` has its center at continuous coordinates
  ``(i, j)`` with ``i in [0, H-1]``, ``j in [0, W-1]``. ``x_img`` maps to
  columns, ``y_img`` to rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PerspectiveDepthError, ShapeMismatchError

PERSPECTIVE = "perspective"
ORTHOGRAPHIC = "orthographic"

# Points with camera-frame depth at or below this are an error in perspective
# mode; clamping instead would silently corrupt gradients.
DEPTH_EPSILON = 1e-6

ROTATION_ATOL = 1e-6


def as_points(points) -> np.ndarray:
    """Coerce input to an (N, 3) float64 array, rejecting non-finite values.

    N = 0 is legal and yields a (0, 3) array.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeMismatchError(f"expected an (N, 3) point array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point coordinates must be finite")
    return pts


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics: focal lengths and principal point, in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def matrix(self) -> np.ndarray:
        """Upper-triangular 3x3 calibration matrix with unit bottom-right entry."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )


@dataclass(frozen=True, eq=False)
class Extrinsics:
    """World-to-camera rigid transform: q = rotation @ p + translation.

    Rotation validity (orthonormal, det +1) is checked once at construction
    so per-call transforms stay cheap.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if trans.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got {trans.shape}")
        if not np.all(np.isfinite(rot)) or not np.all(np.isfinite(trans)):
            raise ValueError("extrinsics must be finite")
        if not np.allclose(rot @ rot.T, np.eye(3), rtol=0.0, atol=ROTATION_ATOL):
            raise ValueError("rotation matrix is not orthonormal (|R R^T - I| exceeds 1e-6)")
        if not np.isclose(np.linalg.det(rot), 1.0, rtol=0.0, atol=ROTATION_ATOL):
            raise ValueError("rotation matrix determinant must be +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)


@dataclass(frozen=True, eq=False)
class View:
    """One camera: extrinsics, intrinsics, image size and projection mode."""

    extrinsics: Extrinsics
    intrinsics: Intrinsics
    height: int
    width: int
    projection_mode: str = PERSPECTIVE

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"image size must be at least 1x1, got {self.height}x{self.width}")
        if self.projection_mode not in (PERSPECTIVE, ORTHOGRAPHIC):
            raise ValueError(f"unknown projection mode {self.projection_mode!r}")


def transform(points, view: View) -> np.ndarray:
    """Map world points to continuous pixel coordinates plus depth.

    Returns an (N, 3) array (x_img, y_img, depth). In perspective mode the
    focal term is divided by the camera-frame depth; any depth at or below
    DEPTH_EPSILON raises PerspectiveDepthError. Orthographic mode skips the
    divide and accepts any depth.
    """
    pts = as_points(points)
    ext, intr = view.extrinsics, view.intrinsics
    cam = pts @ ext.rotation.T + ext.translation
    depth = cam[:, 2]
    if view.projection_mode == PERSPECTIVE:
        if np.any(depth <= DEPTH_EPSILON):
            bad = int(np.argmax(depth <= DEPTH_EPSILON))
            raise PerspectiveDepthError(
                f"point {bad} has camera depth {depth[bad]:.3e} <= {DEPTH_EPSILON:g}"
            )
        x_img = intr.fx * cam[:, 0] / depth + intr.cx
        y_img = intr.fy * cam[:, 1] / depth + intr.cy
    else:
        x_img = intr.fx * cam[:, 0] + intr.cx
        y_img = intr.fy * cam[:, 1] + intr.cy
    return np.stack([x_img, y_img, depth], axis=1)


def transform_backward(points, view: View, d_image) -> np.ndarray:
    """Pull image-plane gradients back to world coordinates.

    Args:
        points: (N, 3) world points, the same ones given to transform().
        view: the view used in the forward pass.
        d_image: (N, 2) array of (dL/dx_img, dL/dy_img) per point.

    Returns:
        (N, 3) array of dL/dp. Depth influences the result only through the
        perspective divide; in orthographic mode it receives no gradient.
    """
    pts = as_points(points)
    grad_img = np.asarray(d_image, dtype=np.float64)
    if grad_img.size == 0:
        grad_img = grad_img.reshape(0, 2)
    if grad_img.ndim != 2 or grad_img.shape[1] != 2 or grad_img.shape[0] != pts.shape[0]:
        raise ShapeMismatchError(
            f"d_image must be ({pts.shape[0]}, 2), got shape {grad_img.shape}"
        )
    ext, intr = view.extrinsics, view.intrinsics
    cam = pts @ ext.rotation.T + ext.translation
    d_x, d_y = grad_img[:, 0], grad_img[:, 1]
    if view.projection_mode == PERSPECTIVE:
        depth = cam[:, 2]
        if np.any(depth <= DEPTH_EPSILON):
            raise PerspectiveDepthError("points must be strictly in front of the camera")
        d_cam = np.stack(
            [
                intr.fx * d_x / depth,
                intr.fy * d_y / depth,
                -(intr.fx * d_x * cam[:, 0] + intr.fy * d_y * cam[:, 1]) / (depth * depth),
            ],
            axis=1,
        )
    else:
        d_cam = np.stack(
            [intr.fx * d_x, intr.fy * d_y, np.zeros_like(d_x)],
            axis=1,
        )
    # q = R p + t, so dL/dp = R^T dL/dq; row-vector form is d_cam @ R.
    return d_cam @ ext.rotation
