"""Depth-map geometry primitives.

Containers for dense depth grids and pinhole intrinsics, plus the four
foundational operations everything else builds on: unprojection to a point
cloud, mean-deviation standardization, affine alignment between two maps,
and per-image statistics.

Conventions: depth is metric (meters), camera axes are x right / y down /
z forward, pixel (u, v) = (column, row). Invalid pixels hold the sentinel
0.0 and are never read by any numeric kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyDepth, InsufficientOverlap, ShapeError

# Guard for constant maps: standardization divides by max(MAD, this).
STANDARDIZE_EPS = 1e-6

ALIGNMENT_MODES = ("none", "median_scale", "affine_lsq")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DepthMap:
    """Dense per-pixel depth with a validity mask.

    ``values`` is a row-major float64 grid; ``valid`` a boolean mask of the
    same shape. Valid pixels must be finite; positivity is enforced at the
    ingest boundary (:meth:`from_values`, file readers), not here, so that
    derived grids such as standardized maps can reuse the container.

    Both arrays are copied on construction and frozen, so instances are
    immutable and safe to share across threads.
    """

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if values.ndim != 2:
            raise ShapeError(f"depth grid must be 2-d, got shape {values.shape}")
        if valid.shape != values.shape:
            raise ShapeError(
                f"mask shape {valid.shape} != value shape {values.shape}"
            )
        if not np.all(np.isfinite(values[valid])):
            raise ValueError("valid pixels must hold finite values")
        values[~valid] = 0.0
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "valid", _frozen(valid))

    @classmethod
    def from_values(cls, values, valid=None) -> "DepthMap":
        """Build a map with ingest semantics: non-finite or <= 0 -> invalid."""
        arr = np.asarray(values, dtype=np.float64)
        with np.errstate(invalid="ignore"):
            mask = np.isfinite(arr) & (arr > 0.0)
        if valid is not None:
            mask = mask & np.asarray(valid, dtype=bool)
        return cls(np.where(mask, arr, 0.0), mask)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def valid_count(self) -> int:
        """Number of valid pixels (eta)."""
        return int(np.count_nonzero(self.valid))

    def valid_values(self) -> np.ndarray:
        return self.values[self.valid]

    def same_as(self, other: "DepthMap") -> bool:
        """Bit-exact equality of values and mask."""
        return np.array_equal(self.valid, other.valid) and np.array_equal(
            self.values, other.values
        )


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole projection parameters (focal lengths and principal point, pixels)."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class PointCloud:
    """Camera-frame 3-d points with their source pixel indices.

    ``points`` is (n, 3) xyz in meters, ``pixel_indices`` the row-major flat
    index of each point's source pixel. z > 0 for every point (camera-forward).
    """

    points: np.ndarray
    pixel_indices: np.ndarray

    def __post_init__(self) -> None:
        points = np.array(self.points, dtype=np.float64)
        idx = np.array(self.pixel_indices, dtype=np.int64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ShapeError(f"points must be (n, 3), got {points.shape}")
        if idx.shape != (points.shape[0],):
            raise ShapeError("pixel_indices length must match points")
        if points.shape[0] and not np.all(points[:, 2] > 0):
            raise ValueError("all points must have z > 0")
        object.__setattr__(self, "points", _frozen(points))
        object.__setattr__(self, "pixel_indices", _frozen(idx))

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class ImageStats:
    """Moments of the valid pixels of one map (meters)."""

    mean: float
    std: float
    mad: float
    valid_count: int


@dataclass(frozen=True)
class AlignmentResult:
    """Outcome of aligning a source map to a reference.

    ``mode_applied`` can differ from ``mode_requested`` when a degenerate
    source forces the least-squares path to fall back to median scaling;
    ``fallback`` records that. The affine parameters satisfy
    aligned = scale * src + shift.
    """

    depth: "DepthMap"
    mode_requested: str
    mode_applied: str
    scale: float
    shift: float
    fallback: bool


def unproject(depth: DepthMap, k: CameraIntrinsics) -> PointCloud:
    """Lift every valid pixel to a camera-frame 3-d point.

    For pixel (u, v) with depth d the point is d * K^-1 * (u, v, 1)^T, i.e.
    x = (u - cx) / fx * d, y = (v - cy) / fy * d, z = d (exactly). Point
    order follows row-major pixel order.
    """
    if depth.valid_count == 0:
        raise EmptyDepth("unproject needs at least one valid pixel")
    flat = np.flatnonzero(depth.valid.ravel())
    v, u = np.unravel_index(flat, depth.shape)
    d = depth.values.ravel()[flat]
    x = (u - k.cx) / k.fx * d
    y = (v - k.cy) / k.fy * d
    return PointCloud(np.stack([x, y, d], axis=1), flat)


def standardize(depth: DepthMap) -> DepthMap:
    """Mean-deviation standardization over the valid pixels.

    Each valid pixel becomes (d - mean) / max(MAD, eps) where MAD is the
    mean absolute deviation. Affine-invariant: a * d + b (a > 0) maps to the
    same output. Constant maps come out all zero thanks to the eps guard.
    """
    if depth.valid_count == 0:
        raise EmptyDepth("standardize needs at least one valid pixel")
    vals = depth.valid_values()
    mu = float(np.mean(vals))
    mad = float(np.mean(np.abs(vals - mu)))
    scale = max(mad, STANDARDIZE_EPS)
    out = np.zeros(depth.shape, dtype=np.float64)
    out[depth.valid] = (vals - mu) / scale
    return DepthMap(out, depth.valid)


def image_stats(depth: DepthMap) -> ImageStats:
    """Mean, population std, and mean absolute deviation of the valid pixels."""
    if depth.valid_count == 0:
        raise EmptyDepth("image_stats needs at least one valid pixel")
    vals = depth.valid_values()
    mu = float(np.mean(vals))
    return ImageStats(
        mean=mu,
        std=float(np.std(vals)),
        mad=float(np.mean(np.abs(vals - mu))),
        valid_count=vals.size,
    )


def affine_align_detailed(
    src: DepthMap, ref: DepthMap, mode: str
) -> AlignmentResult:
    """Align ``src`` to ``ref`` and report the parameters used.

    Modes:
      none          leave src untouched (metric predictions keep their scale)
      median_scale  multiply src by median(ref) / median(src) over the common mask
      affine_lsq    least-squares (a, b) minimizing sum (a*src + b - ref)^2 over
                    the common mask; outputs that land <= 0 are marked invalid

    A zero-variance source under affine_lsq falls back to median_scale and
    sets ``fallback``.
    """
    if mode not in ALIGNMENT_MODES:
        raise ConfigError(f"unknown alignment mode {mode!r}")
    if src.shape != ref.shape:
        raise ShapeError(f"src shape {src.shape} != ref shape {ref.shape}")
    if mode == "none":
        return AlignmentResult(src, mode, "none", 1.0, 0.0, False)

    common = src.valid & ref.valid
    n = int(np.count_nonzero(common))
    if n < 2:
        raise InsufficientOverlap(f"common mask has {n} pixels, need >= 2")
    s = src.values[common]
    r = ref.values[common]

    applied = mode
    fallback = False
    if mode == "affine_lsq" and np.ptp(s) == 0.0:
        applied = "median_scale"
        fallback = True

    if applied == "median_scale":
        med_s = float(np.median(s))
        if med_s <= 0:
            raise ConfigError("median_scale requires a positive source median")
        a = float(np.median(r)) / med_s
        b = 0.0
    else:
        design = np.stack([s, np.ones_like(s)], axis=1)
        (a, b), *_ = np.linalg.lstsq(design, r, rcond=None)
        a = float(a)
        b = float(b)

    transformed = a * src.values + b
    new_valid = src.valid & (transformed > 0.0)
    aligned = DepthMap(np.where(new_valid, transformed, 0.0), new_valid)
    return AlignmentResult(aligned, mode, applied, a, b, fallback)


def affine_align(src: DepthMap, ref: DepthMap, mode: str) -> DepthMap:
    """Align ``src`` to ``ref``; see :func:`affine_align_detailed`."""
    return affine_align_detailed(src, ref, mode).depth
