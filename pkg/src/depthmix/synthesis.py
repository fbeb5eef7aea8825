"""Pseudo depth-label synthesis.

A pseudo label is built from a ground-truth map and/or a set of dense
model predictions: relative-scale predictions are first aligned to a
metric reference, a random convex mix of the sources is formed, and the
result is relocated (multiplied) by a random scale factor. Every random
draw flows from one seed, so the whole construction replays bit-identically.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    EmptyDepth,
    EmptyResult,
    FactorError,
    ShapeError,
    WeightError,
)
from .geometry import ALIGNMENT_MODES, DepthMap, affine_align_detailed

logger = logging.getLogger(__name__)

SCALE_KINDS = ("relative", "metric")

# Slack for float re-summation when checking the simplex constraint.
WEIGHT_TOL = 1e-12

DEFAULT_ALIGNMENT: Mapping[str, str] = {"relative": "affine_lsq", "metric": "none"}


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def derive_seed(global_seed: int, image_id, draw_index: int, kind: str = "label") -> int:
    """Stable per-draw seed so outputs are independent of scheduling.

    Hashes (global seed, image id, draw index, purpose tag) with blake2b;
    unlike Python's builtin hash this is identical across processes and runs.
    """
    payload = f"{global_seed}|{image_id}|{kind}|{draw_index}".encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class ModelPrediction:
    """A precomputed dense depth prediction for one image."""

    model_id: str
    depth: DepthMap
    scale_kind: str = "relative"

    def __post_init__(self) -> None:
        if self.scale_kind not in SCALE_KINDS:
            raise ConfigError(
                f"scale_kind must be one of {SCALE_KINDS}, got {self.scale_kind!r}"
            )


@dataclass(frozen=True)
class MixWeights:
    """Convex weights over model predictions plus the ground-truth remainder.

    ``lambdas`` pairs each model id with its weight; all weights are >= 0 and
    their sum is <= 1. ``gt_weight`` is the ground-truth share (0 when no
    ground truth participates).
    """

    lambdas: tuple[tuple[str, float], ...]
    gt_weight: float

    def __post_init__(self) -> None:
        lams = tuple((str(m), float(w)) for m, w in self.lambdas)
        object.__setattr__(self, "lambdas", lams)
        object.__setattr__(self, "gt_weight", float(self.gt_weight))
        if any(w < 0.0 for _, w in lams) or self.gt_weight < 0.0:
            raise WeightError("weights must be non-negative")
        if self.total_lambda > 1.0 + WEIGHT_TOL:
            raise WeightError(f"sum of model weights {self.total_lambda} exceeds 1")

    @property
    def total_lambda(self) -> float:
        return float(sum(w for _, w in self.lambdas))


@dataclass(frozen=True)
class RelocationFactor:
    """Scalar depth multiplier; moves geometry along camera rays."""

    theta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", float(self.theta))
        if not np.isfinite(self.theta) or self.theta <= 0.0:
            raise FactorError(f"relocation factor must be positive, got {self.theta}")


@dataclass(frozen=True)
class SynthesisConfig:
    """Knobs for one synthesis draw.

    p_interpolation: probability of mixing sources instead of picking one.
    relocation / theta_range: whether and how far to rescale, log-uniform.
    alignment: scale_kind -> alignment mode for incoming predictions.
    depth_max: if set, emit a warning when a synthesized map exceeds it
    (values are never clamped; clamping would distort shapes).
    """

    p_interpolation: float = 1.0
    relocation: bool = True
    theta_range: tuple[float, float] = (0.5, 2.0)
    alignment: Mapping[str, str] = field(
        default_factory=lambda: dict(DEFAULT_ALIGNMENT)
    )
    depth_max: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_interpolation <= 1.0:
            raise ConfigError(f"p_interpolation must be in [0, 1], got {self.p_interpolation}")
        lo, hi = self.theta_range
        if not (0.0 < lo <= hi) or not np.isfinite(hi):
            raise ConfigError(f"theta_range must satisfy 0 < lo <= hi, got {self.theta_range}")
        for kind, mode in self.alignment.items():
            if kind not in SCALE_KINDS or mode not in ALIGNMENT_MODES:
                raise ConfigError(f"bad alignment rule {kind!r}: {mode!r}")

    def to_json_dict(self) -> dict:
        return {
            "p_interpolation": self.p_interpolation,
            "relocation": self.relocation,
            "theta_range": list(self.theta_range),
            "alignment": dict(self.alignment),
            "depth_max": self.depth_max,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SynthesisConfig":
        known = {"p_interpolation", "relocation", "theta_range", "alignment", "depth_max"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown synthesis config keys: {sorted(extra)}")
        kwargs = dict(d)
        if "theta_range" in kwargs:
            kwargs["theta_range"] = tuple(kwargs["theta_range"])
        return cls(**kwargs)


@dataclass(frozen=True)
class AlignmentNote:
    """Per-model record of the alignment actually applied."""

    mode: str
    fallback: bool = False


@dataclass(frozen=True)
class SynthesisProvenance:
    """Everything needed to replay one synthesized label bit-identically."""

    seed: int
    weights: MixWeights
    theta: RelocationFactor
    alignment: tuple[tuple[str, AlignmentNote], ...]
    interpolated: bool

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "lambdas": [[m, w] for m, w in self.weights.lambdas],
            "gt_weight": self.weights.gt_weight,
            "theta": self.theta.theta,
            "alignment": {
                m: {"mode": note.mode, "fallback": note.fallback}
                for m, note in self.alignment
            },
            "interpolated": self.interpolated,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SynthesisProvenance":
        return cls(
            seed=int(d["seed"]),
            weights=MixWeights(
                tuple((m, w) for m, w in d["lambdas"]), d["gt_weight"]
            ),
            theta=RelocationFactor(d["theta"]),
            alignment=tuple(
                (m, AlignmentNote(v["mode"], v["fallback"]))
                for m, v in d["alignment"].items()
            ),
            interpolated=bool(d["interpolated"]),
        )


def _simplex_spacings(rng: np.random.Generator, parts: int) -> list[float]:
    """Uniform sample from the (parts-1)-simplex via sorted-uniform spacings."""
    if parts == 1:
        return [1.0]
    cuts = sorted(rng.random(parts - 1).tolist())
    lam = []
    prev = 0.0
    for c in cuts:
        lam.append(c - prev)
        prev = c
    lam.append(1.0 - prev)
    return lam


def _nudge_legal(lam: list[float], budget: float) -> list[float]:
    # Float re-summation of exact spacings can overshoot by a few ulp; walk
    # the largest weight down until the checked sum is within budget.
    while sum(lam) > budget:
        k = lam.index(max(lam))
        lam[k] = float(np.nextafter(lam[k], 0.0))
    return lam


def draw_mix_with_branch(
    rng: np.random.Generator,
    num_models: int,
    labeled: bool,
    cfg: SynthesisConfig,
    model_ids: Sequence[str] | None = None,
) -> tuple[MixWeights, bool]:
    """Draw mixing weights plus the branch flag (mixed vs one-hot pick)."""
    if num_models < 1:
        raise ConfigError("draw_mix needs at least one model")
    ids = tuple(model_ids) if model_ids is not None else tuple(
        f"model_{t}" for t in range(num_models)
    )
    if len(ids) != num_models:
        raise ConfigError("model_ids length must equal num_models")

    interpolated = bool(rng.random() < cfg.p_interpolation)
    if interpolated:
        if labeled:
            spac = _simplex_spacings(rng, num_models + 1)
            lam = _nudge_legal(spac[:num_models], 1.0)
            gt_w = spac[num_models]
        else:
            lam = _nudge_legal(_simplex_spacings(rng, num_models), 1.0)
            gt_w = 0.0
    else:
        choices = num_models + (1 if labeled else 0)
        pick = int(rng.integers(choices))
        lam = [0.0] * num_models
        if pick < num_models:
            lam[pick] = 1.0
            gt_w = 0.0
        else:
            gt_w = 1.0
    return MixWeights(tuple(zip(ids, lam)), gt_w), interpolated


def draw_mix(
    rng: np.random.Generator,
    num_models: int,
    labeled: bool,
    cfg: SynthesisConfig,
    model_ids: Sequence[str] | None = None,
) -> MixWeights:
    """Draw mixing weights: uniform on the simplex with probability
    ``cfg.p_interpolation``, otherwise a uniform one-hot pick among the
    sources (ground truth included when ``labeled``)."""
    return draw_mix_with_branch(rng, num_models, labeled, cfg, model_ids)[0]


def draw_theta(rng: np.random.Generator, cfg: SynthesisConfig) -> RelocationFactor:
    """Draw the relocation factor, log-uniform on cfg.theta_range.

    Returns exactly 1 when relocation is disabled (and consumes no
    randomness, so toggling relocation never changes the mixing draws).
    """
    if not cfg.relocation:
        return RelocationFactor(1.0)
    lo, hi = cfg.theta_range
    if lo == hi:
        return RelocationFactor(lo)
    return RelocationFactor(float(np.exp(rng.uniform(np.log(lo), np.log(hi)))))


def interpolate(
    gt: DepthMap | None,
    preds: Sequence[ModelPrediction],
    w: MixWeights,
) -> DepthMap:
    """Convex per-pixel mix of predictions and ground truth.

    Output value is sum_t lambda_t * pred_t + gt_weight * gt. Only sources
    with weight > 0 participate; the output mask is the intersection of the
    participating masks, with no hole filling. The result is clipped into
    the pixelwise [min, max] envelope of the participating sources, which
    pins down the convexity guarantee against float rounding (a few-ulp
    correction at most).
    """
    preds = tuple(preds)
    want = sorted(m for m, _ in w.lambdas)
    have = sorted(p.model_id for p in preds)
    if want != have:
        raise WeightError(f"weights reference models {want}, got {have}")

    shape = gt.shape if gt is not None else (preds[0].depth.shape if preds else None)
    if shape is None:
        raise WeightError("interpolate needs at least one source")
    for p in preds:
        if p.depth.shape != shape:
            raise ShapeError(f"prediction {p.model_id} shape {p.depth.shape} != {shape}")

    total = w.total_lambda
    if total > 1.0 + WEIGHT_TOL:
        raise WeightError(f"sum of model weights {total} exceeds 1")
    if gt is None:
        if abs(total - 1.0) > WEIGHT_TOL:
            raise WeightError("without ground truth the model weights must sum to 1")
        if w.gt_weight != 0.0:
            raise WeightError("gt_weight must be 0 when no ground truth is given")

    by_id = {p.model_id: p.depth for p in preds}
    participants = [(wt, by_id[m]) for m, wt in w.lambdas if wt > 0.0]
    if gt is not None and w.gt_weight > 0.0:
        participants.append((w.gt_weight, gt))
    if not participants:
        raise WeightError("all weights are zero")

    mask = participants[0][1].valid.copy()
    for _, dm in participants[1:]:
        mask &= dm.valid

    acc = np.zeros(shape, dtype=np.float64)
    lo = np.full(shape, np.inf)
    hi = np.full(shape, -np.inf)
    for wt, dm in participants:
        acc += wt * dm.values
        np.minimum(lo, dm.values, out=lo)
        np.maximum(hi, dm.values, out=hi)
    mixed = np.clip(acc, lo, hi)
    return DepthMap(np.where(mask, mixed, 0.0), mask)


def relocate(d: DepthMap, theta: RelocationFactor | float) -> DepthMap:
    """Multiply every valid depth by theta; the mask is untouched."""
    th = theta.theta if isinstance(theta, RelocationFactor) else float(theta)
    if not np.isfinite(th) or th <= 0.0:
        raise FactorError(f"relocation factor must be positive, got {th}")
    if d.valid_count == 0:
        raise EmptyDepth("relocate needs at least one valid pixel")
    return DepthMap(np.where(d.valid, d.values * th, 0.0), d.valid)


def synthesize_label(
    image_id,
    gt: DepthMap | None,
    preds: Sequence[ModelPrediction],
    cfg: SynthesisConfig,
    seed: int,
) -> tuple[DepthMap, SynthesisProvenance]:
    """Produce one pseudo dense label plus replayable provenance.

    Pipeline: align each prediction per its scale kind, draw mixing weights,
    mix, draw the relocation factor, rescale. Alignment targets the ground
    truth when present, else the first metric-scale prediction; with no
    metric reference at all, predictions pass through unaligned.
    """
    preds = tuple(preds)
    if gt is None and not preds:
        raise ConfigError(f"entry {image_id!r}: need ground truth or predictions")

    ref = gt
    if ref is None:
        for p in preds:
            if p.scale_kind == "metric":
                ref = p.depth
                break

    aligned: list[ModelPrediction] = []
    notes: list[tuple[str, AlignmentNote]] = []
    for p in preds:
        mode = cfg.alignment.get(p.scale_kind, "none")
        if mode == "none" or ref is None or ref is p.depth:
            aligned.append(p)
            notes.append((p.model_id, AlignmentNote("none")))
            continue
        try:
            res = affine_align_detailed(p.depth, ref, mode)
        except ShapeError as exc:
            raise ShapeError(f"prediction {p.model_id}: {exc}") from None
        aligned.append(ModelPrediction(p.model_id, res.depth, p.scale_kind))
        notes.append((p.model_id, AlignmentNote(res.mode_applied, res.fallback)))

    rng = make_rng(seed)
    if preds:
        weights, interpolated = draw_mix_with_branch(
            rng, len(preds), gt is not None, cfg,
            model_ids=[p.model_id for p in preds],
        )
    else:
        weights, interpolated = MixWeights((), 1.0), False

    mixed = interpolate(gt, aligned, weights)
    if mixed.valid_count == 0:
        raise EmptyResult(f"entry {image_id!r}: no pixel valid in all mixed sources")

    theta = draw_theta(rng, cfg)
    out = relocate(mixed, theta)

    if cfg.depth_max is not None:
        peak = float(out.valid_values().max())
        if peak > cfg.depth_max:
            logger.warning(
                "entry %r: synthesized depth %.3f m exceeds depth_max %.3f m",
                image_id, peak, cfg.depth_max,
            )

    prov = SynthesisProvenance(
        seed=int(seed),
        weights=weights,
        theta=theta,
        alignment=tuple(notes),
        interpolated=interpolated,
    )
    return out, prov
