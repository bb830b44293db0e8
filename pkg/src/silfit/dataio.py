"""Synthetic shapes, camera rigs, ground-truth masks, and file formats.

Shapes are sampled on analytic surfaces at desk scale: a unit sphere, the
cube surface, a torus, and box-compound primitives whose thin bars stress
the renderer the way real furniture legs do. The ground-truth mask oracle
rasterizes a dense surface sampling and closes pinholes morphologically.

Formats (see docs/formats.md):
  * point clouds: plain-text XYZ (canonical) and ASCII PLY
  * masks: binary PGM, 8-bit for ground truth, 16-bit for predictions
  * cameras: line-oriented key/value text, one block per view
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    EmptyProjectionError,
    KTooLargeError,
    ParseError,
    ShapeMismatchError,
    UnknownShapeError,
)
from .geometry import ORTHOGRAPHIC, PERSPECTIVE, Extrinsics, Intrinsics, View, as_points, transform
from .projection import rasterize_discrete

SHAPE_KINDS = (
    "sphere",
    "cube",
    "torus",
    "chair_primitive",
    "airplane_primitive",
    "elongated_box",
)


@dataclass(frozen=True)
class ShapeSpec:
    """What to synthesize: surface kind, sparse and dense sample counts."""

    kind: str
    n_points: int = 1024
    dense_n: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise UnknownShapeError(
                f"unknown shape kind {self.kind!r}; choose from {', '.join(SHAPE_KINDS)}"
            )
        if self.n_points < 1:
            raise ValueError(f"n_points must be >= 1, got {self.n_points}")
        if self.dense_n < 10 * self.n_points:
            raise ValueError(
                f"dense_n ({self.dense_n}) must be at least 10 * n_points ({self.n_points})"
            )


@dataclass(frozen=True)
class RigSpec:
    """Randomized look-at camera ring around the origin.

    focal=None scales with the image (1.25 * width), which keeps the whole
    normalized-shape cube inside the frame at the default distance.
    """

    n_views: int = 4
    elevation_deg: tuple[float, float] = (-20.0, 40.0)
    distance: float = 6.0
    height: int = 64
    width: int = 64
    focal: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_views < 1:
            raise ValueError(f"n_views must be >= 1, got {self.n_views}")
        if self.distance <= math.sqrt(3.0):
            raise ValueError("camera distance must exceed the unit-cube circumradius")
        if self.focal is None:
            object.__setattr__(self, "focal", 1.25 * self.width)


# ---------------------------------------------------------------------------
# Shape generation
# ---------------------------------------------------------------------------

_GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


def _fibonacci_sphere(n: int) -> np.ndarray:
    idx = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * idx + 1.0) / n
    radius = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    theta = 2.0 * math.pi * idx / _GOLDEN
    return np.stack([radius * np.cos(theta), radius * np.sin(theta), z], axis=1)


def _random_sphere(n: int, rng) -> np.ndarray:
    vec = rng.normal(size=(n, 3))
    return vec / np.linalg.norm(vec, axis=1, keepdims=True)


def _allocate_by_area(areas: np.ndarray, n: int) -> np.ndarray:
    """Deterministic largest-remainder apportionment of n samples to faces."""
    ideal = n * areas / areas.sum()
    counts = np.floor(ideal).astype(np.int64)
    remainder = n - int(counts.sum())
    if remainder > 0:
        order = np.argsort(-(ideal - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def _box_faces(lo, hi):
    """Six (origin, u-edge, v-edge) triples covering an axis-aligned box."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    ext = hi - lo
    faces = []
    for axis in range(3):
        u_ax, v_ax = (axis + 1) % 3, (axis + 2) % 3
        for fixed in (lo[axis], hi[axis]):
            origin = lo.copy()
            origin[axis] = fixed
            u_edge = np.zeros(3)
            u_edge[u_ax] = ext[u_ax]
            v_edge = np.zeros(3)
            v_edge[v_ax] = ext[v_ax]
            faces.append((origin, u_edge, v_edge))
    return faces


def _sample_faces(faces, n: int, rng) -> np.ndarray:
    areas = np.array(
        [np.linalg.norm(np.cross(u, v)) for _, u, v in faces], dtype=np.float64
    )
    counts = _allocate_by_area(areas, n)
    pieces = []
    for (origin, u_edge, v_edge), count in zip(faces, counts):
        if count == 0:
            continue
        uv = rng.uniform(0.0, 1.0, size=(count, 2))
        pieces.append(origin + uv[:, :1] * u_edge + uv[:, 1:] * v_edge)
    return np.concatenate(pieces, axis=0) if pieces else np.zeros((0, 3))


def _torus(n: int, rng, major: float = 0.7, minor: float = 0.3) -> np.ndarray:
    """Area-uniform torus sampling via rejection on the tube angle."""
    out = []
    have = 0
    while have < n:
        batch = max(64, 2 * (n - have))
        theta = rng.uniform(0.0, 2.0 * math.pi, size=batch)
        keep = rng.uniform(0.0, 1.0, size=batch) < (major + minor * np.cos(theta)) / (
            major + minor
        )
        theta = theta[keep][: n - have]
        phi = rng.uniform(0.0, 2.0 * math.pi, size=theta.shape[0])
        ring = major + minor * np.cos(theta)
        out.append(
            np.stack([ring * np.cos(phi), ring * np.sin(phi), minor * np.sin(theta)], axis=1)
        )
        have += theta.shape[0]
    return np.concatenate(out, axis=0)


CHAIR_BOXES = (
    ((-0.65, -0.65, -0.05), (0.65, 0.65, 0.10)),      # seat
    ((-0.65, 0.45, 0.10), (0.65, 0.65, 1.00)),        # back rest
    ((-0.63, -0.63, -1.00), (-0.47, -0.47, -0.05)),   # legs: thin bars
    ((0.47, -0.63, -1.00), (0.63, -0.47, -0.05)),
    ((-0.63, 0.47, -1.00), (-0.47, 0.63, -0.05)),
    ((0.47, 0.47, -1.00), (0.63, 0.63, -0.05)),
)

AIRPLANE_BOXES = (
    ((-1.00, -0.10, -0.10), (1.00, 0.10, 0.10)),      # fuselage
    ((-0.15, -1.00, -0.04), (0.15, 1.00, 0.04)),      # wing plane
)

ELONGATED_BOX = (((-1.00, -0.40, -0.30), (1.00, 0.40, 0.30)),)

CUBE_BOX = (((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)),)

_BOX_SHAPES = {
    "cube": CUBE_BOX,
    "chair_primitive": CHAIR_BOXES,
    "airplane_primitive": AIRPLANE_BOXES,
    "elongated_box": ELONGATED_BOX,
}


def _surface_points(kind: str, n: int, rng) -> np.ndarray:
    if kind == "sphere":
        return _random_sphere(n, rng)
    if kind == "torus":
        return _torus(n, rng)
    faces = [face for lo, hi in _BOX_SHAPES[kind] for face in _box_faces(lo, hi)]
    return _sample_faces(faces, n, rng)


def generate_shape(spec: ShapeSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return (sparse, dense) surface samplings of the requested shape.

    The sparse cloud is the optimization target / fixture; the dense cloud
    is the oracle used for ground-truth masks and outlier audits. Streams
    are seed-derived but independent. The sphere's sparse cloud uses a
    Fibonacci lattice for an even, reproducible cover.
    """
    seq = np.random.SeedSequence(spec.seed)
    rng_sparse, rng_dense = (np.random.default_rng(s) for s in seq.spawn(2))
    if spec.kind == "sphere":
        sparse = _fibonacci_sphere(spec.n_points)
    else:
        sparse = _surface_points(spec.kind, spec.n_points, rng_sparse)
    dense = _surface_points(spec.kind, spec.dense_n, rng_dense)
    return sparse, dense


# ---------------------------------------------------------------------------
# Camera rig
# ---------------------------------------------------------------------------


def _look_at(position: np.ndarray) -> Extrinsics:
    forward = -position / np.linalg.norm(position)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(up, forward)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward], axis=0)
    return Extrinsics(rotation=rotation, translation=-rotation @ position)


_CUBE_CORNERS = np.array(
    [[x, y, z] for x in (-1.0, 1.0) for y in (-1.0, 1.0) for z in (-1.0, 1.0)]
)


def sample_views(rig: RigSpec) -> list[View]:
    """Draw the rig's cameras: uniform azimuth, uniform elevation, fixed
    distance, all aimed at the origin. Deterministic given the seed.

    Every view is checked to keep the whole [-1, 1]^3 cube inside the image
    with a margin, so any normalized shape projects fully.
    """
    rng = np.random.default_rng(rig.seed)
    lo, hi = rig.elevation_deg
    views = []
    for _ in range(rig.n_views):
        azim = math.radians(rng.uniform(0.0, 360.0))
        elev = math.radians(rng.uniform(lo, hi))
        position = rig.distance * np.array(
            [math.cos(elev) * math.cos(azim), math.cos(elev) * math.sin(azim), math.sin(elev)]
        )
        intr = Intrinsics(
            fx=rig.focal, fy=rig.focal, cx=(rig.width - 1) / 2.0, cy=(rig.height - 1) / 2.0
        )
        view = View(
            extrinsics=_look_at(position),
            intrinsics=intr,
            height=rig.height,
            width=rig.width,
            projection_mode=PERSPECTIVE,
        )
        corners = transform(_CUBE_CORNERS, view)
        margin = 1.0
        if (
            corners[:, 0].min() < margin
            or corners[:, 0].max() > rig.width - 1 - margin
            or corners[:, 1].min() < margin
            or corners[:, 1].max() > rig.height - 1 - margin
        ):
            raise ValueError(
                "rig distance/focal leave the unit cube outside the image; "
                "increase distance or reduce focal"
            )
        views.append(view)
    return views


# ---------------------------------------------------------------------------
# Ground-truth masks
# ---------------------------------------------------------------------------


def _binary_dilate(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1, mode="constant")
    out = np.zeros_like(mask)
    for di in range(3):
        for dj in range(3):
            out |= padded[di : di + mask.shape[0], dj : dj + mask.shape[1]]
    return out


def _binary_erode(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1, mode="constant")
    out = np.ones_like(mask)
    for di in range(3):
        for dj in range(3):
            out &= padded[di : di + mask.shape[0], dj : dj + mask.shape[1]]
    return out


def gt_mask(dense_points, view: View) -> np.ndarray:
    """Binary silhouette oracle: rasterize a dense cloud, then 3x3 closing.

    The closing seals isolated pinholes left by unlucky sampling. Raises
    EmptyProjectionError when nothing lands inside the image.
    """
    cam = transform(dense_points, view)
    raster = rasterize_discrete(cam, view.height, view.width)
    if not raster.any():
        raise EmptyProjectionError("no point of the dense cloud projects into the image")
    closed = _binary_erode(_binary_dilate(raster.astype(bool)))
    return closed.astype(np.float64)


# ---------------------------------------------------------------------------
# Farthest point sampling
# ---------------------------------------------------------------------------


def farthest_point_sampling(points, k: int) -> np.ndarray:
    """Greedy farthest-point subset of size k.

    Starts at the point nearest the centroid (deterministic), then grows by
    repeatedly taking the point farthest from the selected set.
    """
    pts = as_points(points)
    n = pts.shape[0]
    if k > n:
        raise KTooLargeError(f"cannot sample {k} points from a cloud of {n}")
    if k == 0:
        return np.zeros((0, 3))
    centroid = pts.mean(axis=0)
    current = int(np.argmin(((pts - centroid) ** 2).sum(axis=1)))
    chosen = [current]
    dist = ((pts - pts[current]) ** 2).sum(axis=1)
    for _ in range(k - 1):
        current = int(np.argmax(dist))
        chosen.append(current)
        dist = np.minimum(dist, ((pts - pts[current]) ** 2).sum(axis=1))
    return pts[np.asarray(chosen, dtype=np.int64)]


# ---------------------------------------------------------------------------
# Point cloud files
# ---------------------------------------------------------------------------


def save_xyz(path, points):
    pts = as_points(points)
    lines = [f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}" for p in pts]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_xyz(path) -> np.ndarray:
    rows = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        fields = text.split()
        if len(fields) != 3:
            raise ParseError(f"{path}, line {ln}: expected 3 fields, found {len(fields)}")
        try:
            rows.append([float(v) for v in fields])
        except ValueError as exc:
            raise ParseError(f"{path}, line {ln}: {exc}") from exc
    pts = np.asarray(rows, dtype=np.float64).reshape(-1, 3)
    if pts.size and not np.all(np.isfinite(pts)):
        raise ParseError(f"{path}: point coordinates must be finite")
    return pts


def save_ply(path, points):
    pts = as_points(points)
    header = (
        "ply\nformat ascii 1.0\n"
        f"element vertex {pts.shape[0]}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "end_header\n"
    )
    body = "".join(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n" for p in pts)
    Path(path).write_text(header + body)


def load_ply(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError(f"{path}, line 1: not a PLY file")
    n_vertices = None
    body_at = None
    for ln, line in enumerate(lines[1:], start=2):
        token = line.strip()
        if token.startswith("element vertex"):
            try:
                n_vertices = int(token.split()[-1])
            except ValueError as exc:
                raise ParseError(f"{path}, line {ln}: bad vertex count") from exc
        if token == "end_header":
            body_at = ln
            break
    if n_vertices is None or body_at is None:
        raise ParseError(f"{path}: missing vertex element or end_header")
    rows = []
    for ln, line in enumerate(lines[body_at : body_at + n_vertices], start=body_at + 1):
        fields = line.split()
        if len(fields) < 3:
            raise ParseError(f"{path}, line {ln}: expected at least 3 coordinates")
        rows.append([float(v) for v in fields[:3]])
    if len(rows) != n_vertices:
        raise ParseError(f"{path}: header promises {n_vertices} vertices, found {len(rows)}")
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3)


# ---------------------------------------------------------------------------
# Mask files (binary PGM)
# ---------------------------------------------------------------------------


def save_pgm(path, mask, maxval: int = 65535):
    """Write a [0, 1] mask as binary PGM; value = round(v * maxval).

    maxval 255 gives the 8-bit ground-truth format, 65535 the 16-bit
    prediction format (big-endian per the PGM specification).
    """
    values = np.asarray(mask, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeMismatchError(f"mask must be 2-D, got shape {values.shape}")
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise ValueError("mask values must lie in [0, 1]")
    if maxval not in (255, 65535):
        raise ValueError("maxval must be 255 or 65535")
    height, width = values.shape
    quantized = np.rint(values * maxval)
    data = quantized.astype(">u2" if maxval == 65535 else "u1").tobytes()
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + data)


def load_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(raw):
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise ParseError(f"{path}: not a binary PGM (P5) file")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise ParseError(f"{path}: malformed PGM header") from exc
    pos += 1  # single whitespace after maxval
    dtype = ">u2" if maxval > 255 else "u1"
    expected = height * width * (2 if maxval > 255 else 1)
    body = raw[pos : pos + expected]
    if len(body) != expected:
        raise ParseError(f"{path}: truncated pixel data ({len(body)} of {expected} bytes)")
    data = np.frombuffer(body, dtype=dtype).astype(np.float64).reshape(height, width)
    return data / maxval


# ---------------------------------------------------------------------------
# Camera files
# ---------------------------------------------------------------------------

CAMERA_FORMAT_TAG = "silfit-camera-v1"


def save_cameras(path, views):
    lines = [f"format: {CAMERA_FORMAT_TAG}", f"views: {len(views)}"]
    for idx, view in enumerate(views):
        rot = view.extrinsics.rotation.reshape(-1)
        trans = view.extrinsics.translation
        intr = view.intrinsics
        lines += [
            f"view: {idx}",
            "rotation: " + " ".join(f"{v:.17g}" for v in rot),
            "translation: " + " ".join(f"{v:.17g}" for v in trans),
            f"fx: {intr.fx:.17g}",
            f"fy: {intr.fy:.17g}",
            f"cx: {intr.cx:.17g}",
            f"cy: {intr.cy:.17g}",
            f"height: {view.height}",
            f"width: {view.width}",
            f"mode: {view.projection_mode}",
        ]
    Path(path).write_text("\n".join(lines) + "\n")


_CAMERA_KEYS = (
    "rotation",
    "translation",
    "fx",
    "fy",
    "cx",
    "cy",
    "height",
    "width",
    "mode",
)


def load_cameras(path) -> list[View]:
    entries = []  # (line_number, key, value)
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if ":" not in text:
            raise ParseError(f"{path}, line {ln}: expected 'key: value'")
        key, _, value = text.partition(":")
        entries.append((ln, key.strip(), value.strip()))
    if not entries or entries[0][1] != "format" or entries[0][2] != CAMERA_FORMAT_TAG:
        raise ParseError(f"{path}, line 1: missing 'format: {CAMERA_FORMAT_TAG}' header")
    if len(entries) < 2 or entries[1][1] != "views":
        raise ParseError(f"{path}: missing 'views:' count")
    n_views = int(entries[1][2])

    views = []
    cursor = 2
    for _ in range(n_views):
        if cursor >= len(entries) or entries[cursor][1] != "view":
            ln = entries[cursor][0] if cursor < len(entries) else "EOF"
            raise ParseError(f"{path}, line {ln}: expected 'view:' block")
        cursor += 1
        block: dict[str, tuple[int, str]] = {}
        while cursor < len(entries) and entries[cursor][1] != "view":
            ln, key, value = entries[cursor]
            block[key] = (ln, value)
            cursor += 1
        missing = [k for k in _CAMERA_KEYS if k not in block]
        if missing:
            raise ParseError(f"{path}: view block missing fields {', '.join(missing)}")
        ln_rot, rot_text = block["rotation"]
        rot_fields = rot_text.split()
        if len(rot_fields) != 9:
            raise ParseError(f"{path}, line {ln_rot}: rotation needs 9 entries (row-major)")
        rotation = np.array([float(v) for v in rot_fields]).reshape(3, 3)
        ln_tr, tr_text = block["translation"]
        tr_fields = tr_text.split()
        if len(tr_fields) != 3:
            raise ParseError(f"{path}, line {ln_tr}: translation needs 3 entries")
        translation = np.array([float(v) for v in tr_fields])
        try:
            extr = Extrinsics(rotation=rotation, translation=translation)
        except ValueError as exc:
            raise ParseError(f"{path}, line {ln_rot}: {exc}") from exc
        mode = block["mode"][1]
        if mode not in (PERSPECTIVE, ORTHOGRAPHIC):
            raise ParseError(f"{path}, line {block['mode'][0]}: unknown mode {mode!r}")
        try:
            intr = Intrinsics(
                fx=float(block["fx"][1]),
                fy=float(block["fy"][1]),
                cx=float(block["cx"][1]),
                cy=float(block["cy"][1]),
            )
            view = View(
                extrinsics=extr,
                intrinsics=intr,
                height=int(block["height"][1]),
                width=int(block["width"][1]),
                projection_mode=mode,
            )
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        views.append(view)
    return views
