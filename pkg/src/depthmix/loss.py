"""Reference training-loss evaluator.

The main objective compares a prediction against a dense label with three
terms: an L1 gap between the mean-deviation standardized maps, a plain
absolute L1 gap, and a multi-scale Sobel-gradient gap of the standardized
difference over a 4-level nearest-neighbor pyramid (weighted 0.5). This
module is a verification oracle, not a training framework: no gradients,
just exact float64 evaluation with explicit masking rules.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientValid, ShapeError
from .geometry import STANDARDIZE_EPS, DepthMap

PYRAMID_LEVELS = 4  # scales 1, 1/2, 1/4, 1/8

PYRAMID_NORMS = ("per_level", "full_eta")


@dataclass(frozen=True)
class LossBreakdown:
    """The three loss components; total is their sum."""

    standardized_l1: float
    absolute_l1: float
    gradient_term: float

    @property
    def total(self) -> float:
        return self.standardized_l1 + self.absolute_l1 + self.gradient_term

    def to_json_dict(self) -> dict:
        return {
            "standardized_l1": self.standardized_l1,
            "absolute_l1": self.absolute_l1,
            "gradient_term": self.gradient_term,
            "total": self.total,
        }


@dataclass(frozen=True)
class L1L2Breakdown:
    """Plain L1 + squared-L2 objective used for in-domain fine-tuning."""

    absolute_l1: float
    squared_l2: float

    @property
    def total(self) -> float:
        return self.absolute_l1 + self.squared_l2

    def to_json_dict(self) -> dict:
        return {
            "absolute_l1": self.absolute_l1,
            "squared_l2": self.squared_l2,
            "total": self.total,
        }


def sobel_abs(grid: np.ndarray) -> np.ndarray:
    """|Sobel_x| + |Sobel_y| with replicate-padded borders.

    Correlation with the standard 3x3 kernels; a horizontal unit ramp scores
    8 in the interior.
    """
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2 or min(g.shape) < 3:
        raise ShapeError(f"sobel needs a grid of at least 3x3, got {g.shape}")
    p = np.pad(g, 1, mode="edge")
    # Taps paired as differences first, so constant regions cancel exactly.
    tx = p[:, 2:] - p[:, :-2]
    gx = tx[:-2, :] + 2.0 * tx[1:-1, :] + tx[2:, :]
    ty = p[2:, :] - p[:-2, :]
    gy = ty[:, :-2] + 2.0 * ty[:, 1:-1] + ty[:, 2:]
    return np.abs(gx) + np.abs(gy)


def _window_all_valid(mask: np.ndarray) -> np.ndarray:
    # A Sobel output pixel counts only when every pixel its (replicate
    # padded) window reads is valid; nothing is imputed at holes.
    p = np.pad(mask, 1, mode="edge")
    h, w = mask.shape
    out = np.ones_like(mask)
    for dy in range(3):
        for dx in range(3):
            out &= p[dy : dy + h, dx : dx + w]
    return out


def pyramid_nn(grid: np.ndarray, r: int) -> np.ndarray:
    """Nearest-neighbor downsample to 1/2^r, top-left sample convention.

    Output shape is ceil(h / 2^r) x ceil(w / 2^r). Works on value grids and
    boolean masks alike; r = 0 is the identity.
    """
    if not 0 <= r < PYRAMID_LEVELS:
        raise ValueError(f"pyramid level must be in [0, {PYRAMID_LEVELS - 1}], got {r}")
    g = np.asarray(grid)
    if g.ndim != 2:
        raise ShapeError(f"pyramid_nn needs a 2-d grid, got shape {g.shape}")
    s = 2**r
    return g[::s, ::s]


def _standardize_over(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    vals = values[mask]
    mu = float(np.mean(vals))
    mad = float(np.mean(np.abs(vals - mu)))
    out = np.zeros_like(values)
    out[mask] = (vals - mu) / max(mad, STANDARDIZE_EPS)
    return out


def g2_loss(
    pred: DepthMap, label: DepthMap, pyramid_norm: str = "per_level"
) -> LossBreakdown:
    """Evaluate the three-term objective on the common valid mask.

    With eta the common valid count and T the mean-deviation
    standardization computed over that mask:

      standardized_l1 = (1/eta) sum |T(pred) - T(label)|
      absolute_l1     = (1/eta) sum |pred - label|
      gradient_term   = 0.5 * sum_r norm_r(|sobel(downsample_r(T(pred) - T(label)))|)

    over pyramid levels r = 0..3. ``pyramid_norm`` picks the gradient
    normalizer: "per_level" divides each level by that level's valid count,
    "full_eta" divides the combined sum by the full-resolution eta. Levels
    smaller than 3x3 carry no defined gradient and contribute zero.
    """
    if pyramid_norm not in PYRAMID_NORMS:
        raise ValueError(f"pyramid_norm must be one of {PYRAMID_NORMS}")
    if pred.shape != label.shape:
        raise ShapeError(f"pred shape {pred.shape} != label shape {label.shape}")
    if label.valid_count < 2:
        raise InsufficientValid("label needs at least 2 valid pixels")
    mask = pred.valid & label.valid
    eta = int(np.count_nonzero(mask))
    if eta == 0:
        raise InsufficientValid("pred and label share no valid pixels")

    t_pred = _standardize_over(pred.values, mask)
    t_label = _standardize_over(label.values, mask)
    diff_t = np.where(mask, t_pred - t_label, 0.0)

    term1 = float(np.sum(np.abs(diff_t[mask]))) / eta
    term2 = float(np.sum(np.abs(pred.values[mask] - label.values[mask]))) / eta

    grad_total = 0.0
    for r in range(PYRAMID_LEVELS):
        level = pyramid_nn(diff_t, r)
        level_mask = pyramid_nn(mask, r)
        if min(level.shape) < 3:
            continue
        eta_r = int(np.count_nonzero(level_mask))
        if eta_r == 0:
            continue
        grad = sobel_abs(level)
        usable = _window_all_valid(level_mask)
        level_sum = float(np.sum(grad[usable]))
        if pyramid_norm == "per_level":
            grad_total += level_sum / eta_r
        else:
            grad_total += level_sum
    if pyramid_norm == "full_eta":
        grad_total /= eta
    term3 = 0.5 * grad_total

    return LossBreakdown(term1, term2, term3)


def l1l2_loss(pred: DepthMap, label: DepthMap) -> L1L2Breakdown:
    """Mean |diff| plus mean diff^2 over the common valid mask."""
    if pred.shape != label.shape:
        raise ShapeError(f"pred shape {pred.shape} != label shape {label.shape}")
    if label.valid_count < 2:
        raise InsufficientValid("label needs at least 2 valid pixels")
    mask = pred.valid & label.valid
    eta = int(np.count_nonzero(mask))
    if eta == 0:
        raise InsufficientValid("pred and label share no valid pixels")
    diff = pred.values[mask] - label.values[mask]
    return L1L2Breakdown(
        float(np.mean(np.abs(diff))), float(np.mean(diff * diff))
    )
