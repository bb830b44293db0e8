"""silfit: differentiable point-cloud silhouette rendering and fitting.

A point cloud is splatted to a 2-D confidence mask with a Gaussian kernel
and a tanh squash, which makes the silhouette differentiable in the point
positions. Mask losses (cross-entropy plus a nearest-support affinity term)
then drive a first-order optimizer that reconstructs clouds directly from
multi-view masks, with no neural network in the loop.
"""

__version__ = "0.1.0"

from .errors import (
    DegenerateInputError,
    EmptyCloudError,
    EmptyProjectionError,
    KTooLargeError,
    ParseError,
    PerspectiveDepthError,
    ShapeMismatchError,
    SilfitError,
    UnknownShapeError,
)
from .geometry import (
    ORTHOGRAPHIC,
    PERSPECTIVE,
    Extrinsics,
    Intrinsics,
    View,
    transform,
    transform_backward,
)
from .projection import KernelConfig, rasterize_discrete, render, render_backward
from .losses import (
    DistanceField,
    LossConfig,
    LossValue,
    affinity,
    bce,
    chamfer,
    chamfer_directed,
    chamfer_with_grad,
    distance_transform,
    nearest_squared_distances,
    total_loss,
)
from .optimize import (
    AdamState,
    FitConfig,
    FitReport,
    GradCheckReport,
    LambdaSchedule,
    adam_step,
    fit,
    gradcheck,
    random_init_cloud,
    tso_direct,
)
from .dataio import (
    RigSpec,
    ShapeSpec,
    farthest_point_sampling,
    generate_shape,
    gt_mask,
    load_cameras,
    load_pgm,
    load_ply,
    load_xyz,
    sample_views,
    save_cameras,
    save_pgm,
    save_ply,
    save_xyz,
)
from .metrics import interior_hole_count, iou, l1_error, outlier_count

__all__ = [name for name in dir() if not name.startswith("_")]
