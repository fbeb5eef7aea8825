"""Sparse-depth sub-sampling.

Three acquisition patterns produce sparse maps from a dense label: uniform
random pixels, rotating-LiDAR beam lines, and feature points from a corner
detector (the pattern a visual-inertial odometry front-end yields). Every
emitted point copies the dense value at its pixel bit-exactly, so the
sparse map stays position-consistent with its label by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, InsufficientValid, ShapeError
from .geometry import CameraIntrinsics, DepthMap

MIN_POINTS = 2  # training contract: never emit fewer sparse pixels than this

SAMPLER_KINDS = ("uniform", "lidar", "features")

# Uniform sampler with no fixed fraction draws one log-uniformly from here.
RHO_RANGE = (1e-4, 1.0)


@dataclass(frozen=True)
class SparseDepth:
    """Sparse metric depth points sub-sampled from a dense map.

    ``indices`` are strictly increasing row-major pixel indices (so there
    are no duplicates), ``values`` the depths copied from the source map.
    """

    width: int
    height: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        idx = np.array(self.indices, dtype=np.int64)
        vals = np.array(self.values, dtype=np.float64)
        if idx.ndim != 1 or vals.shape != idx.shape:
            raise ShapeError("indices and values must be parallel 1-d arrays")
        if idx.size < MIN_POINTS:
            raise InsufficientValid(f"sparse map needs >= {MIN_POINTS} points, got {idx.size}")
        if np.any(np.diff(idx) <= 0):
            raise ValueError("indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= self.width * self.height:
            raise ValueError("pixel index out of range")
        idx.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.indices.size

    def to_depth_map(self) -> DepthMap:
        """Densify into a mostly-invalid DepthMap (the on-disk representation)."""
        vals = np.zeros(self.height * self.width, dtype=np.float64)
        mask = np.zeros(self.height * self.width, dtype=bool)
        vals[self.indices] = self.values
        mask[self.indices] = True
        shape = (self.height, self.width)
        return DepthMap(vals.reshape(shape), mask.reshape(shape))

    @classmethod
    def from_depth_map(cls, d: DepthMap) -> "SparseDepth":
        idx = np.flatnonzero(d.valid.ravel())
        return cls(d.width, d.height, idx, d.values.ravel()[idx])


@dataclass(frozen=True)
class SamplerSpec:
    """Parameters for one acquisition pattern.

    uniform: ``rho`` fraction of valid pixels (None draws log-uniform from
    RHO_RANGE per call). lidar: ``beams`` elevation lines over
    ``elevation_range_deg`` (None fits the scene), azimuth-binned at
    ``azimuth_bin_deg``. features: up to ``points`` corners, suppressed
    within ``nms_radius`` pixels, topped up with uniform pixels.
    """

    kind: str
    rho: float | None = None
    beams: int = 64
    elevation_range_deg: tuple[float, float] | None = None
    azimuth_bin_deg: float = 0.2
    points: int = 1500
    nms_radius: int = 5
    harris_sigma: float = 1.5
    harris_k: float = 0.04

    def __post_init__(self) -> None:
        if self.kind not in SAMPLER_KINDS:
            raise ConfigError(f"sampler kind must be one of {SAMPLER_KINDS}, got {self.kind!r}")
        if self.kind == "uniform" and self.rho is not None and not 0.0 < self.rho <= 1.0:
            raise ConfigError(f"rho must be in (0, 1], got {self.rho}")
        if self.kind == "lidar":
            if self.beams < 1:
                raise ConfigError(f"beams must be >= 1, got {self.beams}")
            if self.azimuth_bin_deg <= 0:
                raise ConfigError("azimuth_bin_deg must be positive")
            if self.elevation_range_deg is not None:
                lo, hi = self.elevation_range_deg
                if not lo < hi:
                    raise ConfigError("elevation range must satisfy lo < hi")
        if self.kind == "features":
            if self.points < MIN_POINTS:
                raise ConfigError(f"points must be >= {MIN_POINTS}, got {self.points}")
            if self.nms_radius < 0:
                raise ConfigError("nms_radius must be >= 0")

    def to_json_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "uniform":
            d["rho"] = self.rho
        elif self.kind == "lidar":
            d["beams"] = self.beams
            d["elevation_range_deg"] = (
                list(self.elevation_range_deg) if self.elevation_range_deg else None
            )
            d["azimuth_bin_deg"] = self.azimuth_bin_deg
        else:
            d["points"] = self.points
            d["nms_radius"] = self.nms_radius
            d["harris_sigma"] = self.harris_sigma
            d["harris_k"] = self.harris_k
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "SamplerSpec":
        kwargs = dict(d)
        kind = kwargs.get("kind")
        if kind not in SAMPLER_KINDS:
            raise ConfigError(f"sampler kind must be one of {SAMPLER_KINDS}, got {kind!r}")
        if kwargs.get("elevation_range_deg") is not None:
            kwargs["elevation_range_deg"] = tuple(kwargs["elevation_range_deg"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad sampler spec: {exc}") from None


def _require_valid(d: DepthMap) -> np.ndarray:
    flat = np.flatnonzero(d.valid.ravel())
    if flat.size < MIN_POINTS:
        raise InsufficientValid(
            f"sampling needs >= {MIN_POINTS} valid pixels, map has {flat.size}"
        )
    return flat


def _gather(d: DepthMap, chosen: np.ndarray) -> SparseDepth:
    idx = np.sort(np.asarray(chosen, dtype=np.int64))
    return SparseDepth(d.width, d.height, idx, d.values.ravel()[idx])


def _fill_uniform(
    flat: np.ndarray, chosen: list[int], target: int, rng: np.random.Generator
) -> list[int]:
    # Top up with a random permutation of the not-yet-chosen valid pixels.
    have = set(chosen)
    pool = flat[rng.permutation(flat.size)]
    for p in pool:
        if len(chosen) >= target:
            break
        p = int(p)
        if p not in have:
            chosen.append(p)
            have.add(p)
    return chosen


def sample_uniform(
    d: DepthMap, rho: float | None, rng: np.random.Generator
) -> SparseDepth:
    """Uniformly sample max(2, round(rho * eta)) distinct valid pixels.

    Implemented as a prefix of one seeded permutation, so with a shared
    seed a smaller fraction is always a subset of a larger one.
    """
    flat = _require_valid(d)
    if rho is None:
        lo, hi = RHO_RANGE
        rho = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    if not 0.0 < rho <= 1.0:
        raise ConfigError(f"rho must be in (0, 1], got {rho}")
    n = max(MIN_POINTS, round(rho * flat.size))
    perm = rng.permutation(flat.size)
    return _gather(d, flat[perm[:n]])


def _ray_angles(
    d: DepthMap, k: CameraIntrinsics, flat: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    v, u = np.unravel_index(flat, d.shape)
    xd = (u - k.cx) / k.fx
    yd = (v - k.cy) / k.fy
    # Angles of the pixel ray; independent of depth, so the pattern only
    # depends on where pixels sit, as for a real scanner.
    elevation = np.arctan2(-yd, np.hypot(xd, 1.0))
    azimuth = np.arctan2(xd, 1.0)
    return elevation, azimuth


def sample_lidar(
    d: DepthMap,
    k: CameraIntrinsics,
    spec: SamplerSpec,
    rng: np.random.Generator,
) -> SparseDepth:
    """Simulate a rotating multi-beam scanner over the valid pixels.

    Beam elevations are evenly spaced over the configured range (default:
    the 2nd..98th percentile of the scene's ray elevations, which avoids
    empty beams on crops). Within each beam, one pixel per azimuth bin is
    kept: the one whose elevation is closest to the beam line, accepted
    only within half the beam spacing. Falls back to uniform filling if
    fewer than 2 pixels survive.
    """
    if spec.kind != "lidar":
        raise ConfigError(f"expected lidar spec, got {spec.kind!r}")
    flat = _require_valid(d)
    elevation, azimuth = _ray_angles(d, k, flat)

    if spec.elevation_range_deg is not None:
        lo, hi = (math.radians(a) for a in spec.elevation_range_deg)
    else:
        lo, hi = np.percentile(elevation, [2.0, 98.0])
    b = spec.beams
    if b == 1 or hi <= lo:
        beams = np.array([(lo + hi) / 2.0])
        spacing = max(hi - lo, math.radians(0.4))
        b = 1
    else:
        beams = np.linspace(lo, hi, b)
        spacing = (hi - lo) / (b - 1)

    beam_idx = np.clip(np.rint((elevation - lo) / spacing).astype(np.int64), 0, b - 1)
    dist = np.abs(elevation - beams[beam_idx])
    near = dist <= spacing / 2.0

    chosen: list[int] = []
    if np.any(near):
        flat_n = flat[near]
        dist_n = dist[near]
        beam_n = beam_idx[near]
        az_bin = np.floor(
            (azimuth[near] - azimuth.min()) / math.radians(spec.azimuth_bin_deg)
        ).astype(np.int64)
        # One winner per (beam, azimuth bin): smallest elevation distance,
        # ties broken by pixel index for determinism.
        order = np.lexsort((flat_n, dist_n, az_bin, beam_n))
        group = np.stack([beam_n[order], az_bin[order]], axis=1)
        first = np.ones(order.size, dtype=bool)
        first[1:] = np.any(group[1:] != group[:-1], axis=1)
        chosen = flat_n[order[first]].tolist()

    if len(chosen) < MIN_POINTS:
        chosen = _fill_uniform(flat, chosen, MIN_POINTS, rng)
    return _gather(d, np.array(chosen))


def harris_response(
    image: np.ndarray, sigma: float = 1.5, k: float = 0.04
) -> np.ndarray:
    """Structure-tensor corner response (det - k * trace^2).

    Gradients by central differences, tensor entries smoothed with a
    Gaussian window; replicate borders. Constant images score exactly 0.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"image must be 2-d, got shape {img.shape}")
    gy, gx = np.gradient(img)
    sxx = gaussian_filter(gx * gx, sigma, mode="nearest")
    syy = gaussian_filter(gy * gy, sigma, mode="nearest")
    sxy = gaussian_filter(gx * gy, sigma, mode="nearest")
    return (sxx * syy - sxy * sxy) - k * (sxx + syy) ** 2


def sample_features(
    d: DepthMap,
    image: np.ndarray,
    spec: SamplerSpec,
    rng: np.random.Generator,
) -> SparseDepth:
    """Pick up to ``spec.points`` corner pixels, NMS-suppressed, then top up.

    Corners are valid-depth pixels with positive Harris response, taken in
    descending response order while rejecting any pixel within
    ``nms_radius`` (Euclidean) of an already kept one. If corners run out,
    for example on untextured images where every response ties at zero,
    the remainder is filled with uniform random valid pixels. Exactly
    min(points, eta) points are returned.
    """
    if spec.kind != "features":
        raise ConfigError(f"expected features spec, got {spec.kind!r}")
    img = np.asarray(image, dtype=np.float64)
    if img.shape != d.shape:
        raise ShapeError(f"image shape {img.shape} != depth shape {d.shape}")
    flat = _require_valid(d)
    target = min(spec.points, flat.size)

    resp = harris_response(img, spec.harris_sigma, spec.harris_k).ravel()
    cand = flat[resp[flat] > 0.0]
    # Descending response, pixel index as the deterministic tie-break.
    cand = cand[np.lexsort((cand, -resp[cand]))]

    r = spec.nms_radius
    r2 = r * r
    cell = max(r, 1)
    buckets: dict[tuple[int, int], list[tuple[int, int]]] = {}
    chosen: list[int] = []
    w = d.width
    for p in cand:
        if len(chosen) >= target:
            break
        p = int(p)
        py, px = divmod(p, w)
        cy, cx = py // cell, px // cell
        clash = False
        for ny in (cy - 1, cy, cy + 1):
            for nx in (cx - 1, cx, cx + 1):
                for qy, qx in buckets.get((ny, nx), ()):
                    if (qy - py) ** 2 + (qx - px) ** 2 <= r2:
                        clash = True
                        break
                if clash:
                    break
            if clash:
                break
        if not clash:
            chosen.append(p)
            buckets.setdefault((cy, cx), []).append((py, px))

    if len(chosen) < target:
        chosen = _fill_uniform(flat, chosen, target, rng)
    return _gather(d, np.array(chosen))


def sample(
    d: DepthMap,
    spec: SamplerSpec,
    rng: np.random.Generator,
    k: CameraIntrinsics | None = None,
    image: np.ndarray | None = None,
) -> SparseDepth:
    """Dispatch to the sampler named by ``spec.kind``."""
    if spec.kind == "uniform":
        return sample_uniform(d, spec.rho, rng)
    if spec.kind == "lidar":
        if k is None:
            raise ConfigError("lidar sampling needs camera intrinsics")
        return sample_lidar(d, k, spec, rng)
    if image is None:
        raise ConfigError("feature sampling needs a grayscale image")
    return sample_features(d, image, spec, rng)
