"""End-to-end orchestration over a manifest.

Synthesis fans out over manifest entries (optionally across processes),
emits pseudo labels plus sparse maps with full provenance into a triplet
index, and offers two inspection passes: per-stage diversity statistics
and an integrity validator that re-checks every emitted artifact. Outputs
are a pure function of (manifest, config, seed); worker count only changes
wall time.
"""

from __future__ import annotations

import dataclasses
import filecmp
import logging
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DepthmixError, EmptyDataset, ManifestError
from .formats import (
    Manifest,
    ManifestEntry,
    TripletIndex,
    TripletRecord,
    read_depth,
    read_gray_image,
    read_manifest,
    read_triplet_index,
    write_depth,
    write_triplet_index,
)
from .geometry import DepthMap, ImageStats, image_stats
from .samplers import SamplerSpec, sample
from .synthesis import (
    ModelPrediction,
    SynthesisConfig,
    derive_seed,
    make_rng,
    synthesize_label,
)

logger = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1

STAGES = ("original", "interpolation", "relocation")

OUTPUT_FORMATS = ("pfm", "png")


@dataclass(frozen=True)
class PipelineConfig:
    """All pipeline knobs; ``workers`` is runtime-only and never part of
    the recipe that gets stamped into the index."""

    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    samplers: tuple[SamplerSpec, ...] = (SamplerSpec(kind="uniform", rho=0.01),)
    n_labels: int = 1
    m_sparse: int = 1
    global_seed: int = 0
    workers: int = 1
    output_format: str = "pfm"

    def __post_init__(self) -> None:
        if self.n_labels < 1 or self.m_sparse < 1:
            raise ConfigError("n_labels and m_sparse must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.output_format not in OUTPUT_FORMATS:
            raise ConfigError(f"output_format must be one of {OUTPUT_FORMATS}")
        if not self.samplers:
            raise ConfigError("need at least one sampler spec")
        object.__setattr__(self, "samplers", tuple(self.samplers))

    def recipe_dict(self) -> dict:
        """The part of the config that determines the outputs."""
        return {
            "synthesis": self.synthesis.to_json_dict(),
            "samplers": [s.to_json_dict() for s in self.samplers],
            "n_labels": self.n_labels,
            "m_sparse": self.m_sparse,
            "global_seed": self.global_seed,
            "output_format": self.output_format,
        }

    def to_json_dict(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            **self.recipe_dict(),
            "workers": self.workers,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        version = d.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"config schema_version must be {CONFIG_SCHEMA_VERSION}")
        if "synthesis" in d:
            d["synthesis"] = SynthesisConfig.from_json_dict(d["synthesis"])
        if "samplers" in d:
            d["samplers"] = tuple(SamplerSpec.from_json_dict(s) for s in d["samplers"])
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    import json

    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return PipelineConfig.from_json_dict(doc)


# ---------------------------------------------------------------------------
# synthesis run


@dataclass
class SynthesisSummary:
    entries_total: int
    entries_done: int
    entries_failed: int
    labels_written: int
    sparse_written: int
    failures: list[tuple[int, str]]
    warnings: list[str]
    elapsed_s: float
    images_per_s: float
    index_path: str

    @property
    def ok(self) -> bool:
        return self.entries_failed == 0


def _label_relpath(entry_index: int, j: int, ext: str) -> str:
    return f"labels/e{entry_index:06d}_l{j:03d}.{ext}"


def _sparse_relpath(entry_index: int, j: int, k: int, ext: str) -> str:
    return f"sparse/e{entry_index:06d}_l{j:03d}_s{k:02d}.{ext}"


def _load_entry_inputs(
    entry: ManifestEntry, base: Path
) -> tuple[DepthMap | None, list[ModelPrediction]]:
    def full(rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else base / p

    gt = None
    if entry.depth_path is not None:
        gt = read_depth(full(entry.depth_path), entry.depth_unit)
    preds = [
        ModelPrediction(p.model_id, read_depth(full(p.path), entry.depth_unit), p.scale_kind)
        for p in entry.predictions
    ]
    return gt, preds


def _synthesize_entry(
    args: tuple[int, ManifestEntry, str, PipelineConfig, str]
) -> tuple[int, list[dict] | None, str | None]:
    """Worker: synthesize all labels and sparse maps for one entry.

    Returns (entry_index, record dicts, error message). Runs in a separate
    process, so records travel as plain dicts.
    """
    entry_index, entry, base_dir, cfg, out_dir = args
    base = Path(base_dir)
    out = Path(out_dir)
    ext = cfg.output_format
    try:
        gt, preds = _load_entry_inputs(entry, base)
        image = None
        if any(s.kind == "features" for s in cfg.samplers):
            image = read_gray_image(
                entry.image_path
                if Path(entry.image_path).is_absolute()
                else base / entry.image_path
            )
        records = []
        for j in range(cfg.n_labels):
            seed = derive_seed(cfg.global_seed, entry_index, j)
            label, prov = synthesize_label(entry_index, gt, preds, cfg.synthesis, seed)
            label_rel = _label_relpath(entry_index, j, ext)
            write_depth(label, out / label_rel, ext)

            sparse_rels = []
            sampler_seeds = []
            for k in range(cfg.m_sparse):
                spec = cfg.samplers[k % len(cfg.samplers)]
                s_seed = derive_seed(
                    cfg.global_seed, entry_index, j * cfg.m_sparse + k, kind="sparse"
                )
                sp = sample(label, spec, make_rng(s_seed), k=entry.intrinsics, image=image)
                sparse_rel = _sparse_relpath(entry_index, j, k, ext)
                write_depth(sp.to_depth_map(), out / sparse_rel, ext)
                sparse_rels.append(sparse_rel)
                sampler_seeds.append(s_seed)

            records.append(
                TripletRecord(
                    entry_index=entry_index,
                    image_path=entry.image_path,
                    label_index=j,
                    label_path=label_rel,
                    sparse_paths=tuple(sparse_rels),
                    sampler_seeds=tuple(sampler_seeds),
                    provenance=prov,
                ).to_json_dict()
            )
        return entry_index, records, None
    except (DepthmixError, OSError) as exc:
        return entry_index, None, f"{type(exc).__name__}: {exc}"


def run_synthesize(
    manifest: Manifest, cfg: PipelineConfig, out_dir: str | Path
) -> SynthesisSummary:
    """Emit n_labels pseudo labels and n_labels * m_sparse sparse maps per
    entry, plus the provenance index.

    Per-entry failures are recorded and skipped; the summary flags them.
    Deterministic for a fixed (manifest, config, seed) whatever the worker
    count: per-entry seeds are derived by hashing, files have fixed names,
    and the index is written in entry order by the parent process.
    """
    start = time.perf_counter()
    out = Path(out_dir)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    (out / "sparse").mkdir(parents=True, exist_ok=True)

    tasks = [
        (i, entry, manifest.base_dir, cfg, str(out))
        for i, entry in enumerate(manifest.entries)
    ]
    results: list[tuple[int, list[dict] | None, str | None]] = []
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunk = max(1, len(tasks) // (cfg.workers * 4))
            for res in pool.map(_synthesize_entry, tasks, chunksize=chunk):
                results.append(res)
                _log_progress(len(results), len(tasks))
    else:
        for t in tasks:
            results.append(_synthesize_entry(t))
            _log_progress(len(results), len(tasks))

    records: list[TripletRecord] = []
    failures: list[tuple[int, str]] = []
    for entry_index, recs, err in sorted(results, key=lambda r: r[0]):
        if err is not None:
            failures.append((entry_index, err))
        else:
            records.extend(TripletRecord.from_json_dict(r) for r in recs)

    header = {
        "kind": "triplet_index",
        "manifest": manifest.path,
        "config": cfg.recipe_dict(),
    }
    index_path = write_triplet_index(records, out, header)

    elapsed = time.perf_counter() - start
    done = len(manifest.entries) - len(failures)
    summary = SynthesisSummary(
        entries_total=len(manifest.entries),
        entries_done=done,
        entries_failed=len(failures),
        labels_written=len(records),
        sparse_written=sum(len(r.sparse_paths) for r in records),
        failures=failures,
        warnings=[f"entry {i}: {msg}" for i, msg in failures],
        elapsed_s=elapsed,
        images_per_s=done / elapsed if elapsed > 0 else float("inf"),
        index_path=str(index_path),
    )
    logger.info(
        "synthesized %d/%d entries (%d labels, %d sparse maps) in %.2fs (%.1f images/s)",
        summary.entries_done, summary.entries_total, summary.labels_written,
        summary.sparse_written, summary.elapsed_s, summary.images_per_s,
    )
    return summary


def _log_progress(done: int, total: int) -> None:
    step = max(1, total // 10)
    if done % step == 0 or done == total:
        logger.info("progress: %d/%d entries", done, total)


# ---------------------------------------------------------------------------
# diversity statistics


@dataclass(frozen=True)
class StageStats:
    stage: str
    per_image: tuple[ImageStats | None, ...]
    spread: float


@dataclass(frozen=True)
class DiversityReport:
    stages: tuple[StageStats, ...]

    def to_json_dict(self) -> dict:
        return {
            "stages": [
                {
                    "stage": s.stage,
                    "spread": s.spread,
                    "per_image": [
                        None
                        if st is None
                        else {
                            "mean": st.mean,
                            "std": st.std,
                            "mad": st.mad,
                            "valid_count": st.valid_count,
                        }
                        for st in s.per_image
                    ],
                }
                for s in self.stages
            ]
        }

    def to_table(self) -> str:
        lines = [f"{'stage':<16}{'images':>8}{'spread':>16}"]
        for s in self.stages:
            n = sum(1 for st in s.per_image if st is not None)
            lines.append(f"{s.stage:<16}{n:>8}{s.spread:>16.6g}")
        return "\n".join(lines)


def spread_metric(points: list[tuple[float, float]]) -> float:
    """Determinant of the sample covariance of (mean, std) pairs.

    Zero for fewer than two points; tiny negative determinants from float
    rounding are clamped to zero.
    """
    if len(points) < 2:
        return 0.0
    arr = np.asarray(points, dtype=np.float64)
    cov = np.cov(arr.T, ddof=1)
    return max(float(np.linalg.det(cov)), 0.0)


def _stage_spread(per_image: list[ImageStats | None]) -> float:
    pts = [(s.mean, s.std) for s in per_image if s is not None]
    return spread_metric(pts)


def run_stats(
    manifest: Manifest, cfg: PipelineConfig, stages: tuple[str, ...] = STAGES
) -> DiversityReport:
    """Per-stage (mean, std) scatter of the dataset and its spread metric.

    Stages mirror the synthesis pipeline: "original" is the raw labels
    (labeled entries only), "interpolation" mixes sources with relocation
    forced off, "relocation" applies the full recipe with relocation forced
    on. The same derived seed drives both synthesized stages, so they
    differ only by the relocation factor.
    """
    if not manifest.entries:
        raise EmptyDataset("manifest has no entries")
    bad = [s for s in stages if s not in STAGES]
    if bad:
        raise ConfigError(f"unknown stages {bad}; valid: {list(STAGES)}")
    stages = tuple(s for s in STAGES if s in stages)
    if not stages:
        raise ConfigError("no stages requested")

    base = Path(manifest.base_dir)
    per_stage: dict[str, list[ImageStats | None]] = {s: [] for s in stages}
    for i, entry in enumerate(manifest.entries):
        gt, preds = _load_entry_inputs(entry, base)
        seed = derive_seed(cfg.global_seed, i, 0)
        for stage in stages:
            if stage == "original":
                per_stage[stage].append(image_stats(gt) if gt is not None else None)
                continue
            syn = dataclasses.replace(
                cfg.synthesis, relocation=(stage == "relocation")
            )
            label, _ = synthesize_label(i, gt, preds, syn, seed)
            per_stage[stage].append(image_stats(label))

    return DiversityReport(
        tuple(
            StageStats(s, tuple(per_stage[s]), _stage_spread(per_stage[s]))
            for s in stages
        )
    )


def stats_from_index(index: TripletIndex) -> DiversityReport:
    """Single-stage statistics of the labels already on disk."""
    if not index.records:
        raise EmptyDataset("index has no records")
    per_image = [
        image_stats(read_depth(index.resolve(r.label_path))) for r in index.records
    ]
    return DiversityReport(
        (StageStats("index", tuple(per_image), _stage_spread(per_image)),)
    )


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    record: str
    kind: str
    message: str


@dataclass
class ValidationReport:
    records_checked: int
    replayed: int
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations


def _check_record(
    index: TripletIndex, rec: TripletRecord, cfg: PipelineConfig
) -> list[Violation]:
    rid = f"entry{rec.entry_index}/label{rec.label_index}"
    out: list[Violation] = []
    label_path = index.resolve(rec.label_path)
    if not label_path.is_file():
        return [Violation(rid, "missing_file", f"label missing: {label_path}")]
    label = read_depth(label_path)
    if label.valid_count < 1:
        out.append(Violation(rid, "mask", "label has no valid pixels"))
    if len(rec.sparse_paths) != cfg.m_sparse:
        out.append(
            Violation(
                rid, "count",
                f"expected {cfg.m_sparse} sparse maps, found {len(rec.sparse_paths)}",
            )
        )
    lab_vals = label.values.ravel()
    lab_valid = label.valid.ravel()
    for rel in rec.sparse_paths:
        sp_path = index.resolve(rel)
        if not sp_path.is_file():
            out.append(Violation(rid, "missing_file", f"sparse missing: {sp_path}"))
            continue
        sp = read_depth(sp_path)
        if sp.shape != label.shape:
            out.append(Violation(rid, "shape", f"{rel}: shape differs from label"))
            continue
        idx = np.flatnonzero(sp.valid.ravel())
        if idx.size < 2:
            out.append(Violation(rid, "count", f"{rel}: fewer than 2 points"))
        if not np.all(lab_valid[idx]):
            out.append(Violation(rid, "consistency", f"{rel}: point at invalid label pixel"))
        elif not np.array_equal(sp.values.ravel()[idx], lab_vals[idx]):
            out.append(Violation(rid, "consistency", f"{rel}: values differ from label"))
    return out


def _replay_record(
    index: TripletIndex, rec: TripletRecord, manifest: Manifest, cfg: PipelineConfig
) -> list[Violation]:
    rid = f"entry{rec.entry_index}/label{rec.label_index}"
    if rec.entry_index >= len(manifest.entries):
        return [Violation(rid, "replay", "entry index beyond manifest")]
    entry = manifest.entries[rec.entry_index]
    try:
        gt, preds = _load_entry_inputs(entry, Path(manifest.base_dir))
        label, prov = synthesize_label(
            rec.entry_index, gt, preds, cfg.synthesis, rec.provenance.seed
        )
    except DepthmixError as exc:
        return [Violation(rid, "replay", f"replay failed: {exc}")]
    if prov != rec.provenance:
        return [Violation(rid, "replay", "provenance differs on replay")]
    with tempfile.TemporaryDirectory() as tmp:
        replay_path = Path(tmp) / f"replay.{cfg.output_format}"
        write_depth(label, replay_path, cfg.output_format)
        if not filecmp.cmp(replay_path, index.resolve(rec.label_path), shallow=False):
            return [Violation(rid, "replay", "label bytes differ on replay")]
    return []


def run_validate(index_path: str | Path, replay: int = 5) -> ValidationReport:
    """Re-check every record of an index; optionally replay a subset.

    Checks: file presence, mask legality, bit-exact position consistency of
    every sparse point against its label, sparse-count and per-entry label
    count contracts. ``replay`` evenly spaced records are re-synthesized
    from the manifest via their recorded seeds and compared byte-for-byte.
    """
    index = read_triplet_index(index_path)
    try:
        cfg = PipelineConfig.from_json_dict(dict(index.header["config"]))
    except (KeyError, ConfigError) as exc:
        raise ManifestError(f"index header lacks a usable config: {exc}") from None

    violations: list[Violation] = []
    for rec in index.records:
        violations.extend(_check_record(index, rec, cfg))

    per_entry: dict[int, int] = {}
    for rec in index.records:
        per_entry[rec.entry_index] = per_entry.get(rec.entry_index, 0) + 1
    for entry_index, count in sorted(per_entry.items()):
        if count != cfg.n_labels:
            violations.append(
                Violation(
                    f"entry{entry_index}", "count",
                    f"expected {cfg.n_labels} labels, found {count}",
                )
            )

    replayed = 0
    if replay > 0 and index.records:
        manifest = read_manifest(
            index.resolve(index.header["manifest"])
            if not Path(index.header["manifest"]).is_absolute()
            else index.header["manifest"]
        )
        picks = np.unique(
            np.linspace(0, len(index.records) - 1, min(replay, len(index.records)))
            .round()
            .astype(int)
        )
        for i in picks:
            violations.extend(_replay_record(index, index.records[int(i)], manifest, cfg))
            replayed += 1

    return ValidationReport(
        records_checked=len(index.records), replayed=replayed, violations=violations
    )
