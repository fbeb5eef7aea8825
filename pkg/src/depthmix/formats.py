"""File formats: depth maps, images, manifests, and triplet indexes.

Depth travels as 16-bit grayscale PNG (integer millimeters, 0 = no data)
or grayscale PFM (float32 scanlines, bottom row first; non-positive or
non-finite = no data). PFM round-trips float32 values exactly; PNG
quantizes to 0.5 mm. Manifests and triplet indexes are schema-versioned
JSON / JSON-lines, documented in the README.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import (
    ConfigError,
    CorruptFile,
    EmptyDepth,
    FormatError,
    ManifestError,
    RangeError,
)
from .geometry import CameraIntrinsics, DepthMap
from .synthesis import SCALE_KINDS, SynthesisProvenance

MANIFEST_SCHEMA_VERSION = 1
INDEX_SCHEMA_VERSION = 1

DEPTH_UNITS = ("m", "mm")
_UNIT_SCALE = {"m": 1.0, "mm": 1e-3}

PNG_MAX = 65535


def _unit_scale(unit: str) -> float:
    if unit not in DEPTH_UNITS:
        raise ConfigError(f"depth unit must be one of {DEPTH_UNITS}, got {unit!r}")
    return _UNIT_SCALE[unit]


def default_unit_for(path: str | Path) -> str:
    """File-extension convention: PNG carries millimeters, PFM meters."""
    return "mm" if Path(path).suffix.lower() == ".png" else "m"


# ---------------------------------------------------------------------------
# depth maps


def _read_pfm(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"PF":
            raise FormatError(f"{path}: color PFM is not a depth map")
        if header != b"Pf":
            raise FormatError(f"{path}: not a PFM file")
        dims = f.readline().split()
        try:
            width, height = int(dims[0]), int(dims[1])
            scale = float(f.readline().strip())
        except (IndexError, ValueError) as exc:
            raise CorruptFile(f"{path}: bad PFM header") from exc
        payload = f.read(width * height * 4)
    if len(payload) != width * height * 4:
        raise CorruptFile(f"{path}: truncated PFM payload")
    endian = "<" if scale < 0 else ">"
    data = np.frombuffer(payload, dtype=f"{endian}f4").reshape(height, width)
    # PFM stores the bottom scanline first.
    return np.flipud(data).astype(np.float64)


def _write_pfm(values: np.ndarray, path: Path) -> None:
    arr = np.flipud(values.astype(np.float32))
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{values.shape[1]} {values.shape[0]}\n".encode())
        f.write(b"-1.0\n")
        f.write(arr.tobytes())


def _read_png16(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode not in ("I", "I;16", "I;16B", "L"):
                raise FormatError(f"{path}: PNG depth must be single-channel, got mode {img.mode}")
            return np.asarray(img, dtype=np.int64)
    except FormatError:
        raise
    except OSError as exc:
        raise CorruptFile(f"{path}: {exc}") from exc


def read_depth(path: str | Path, unit: str | None = None) -> DepthMap:
    """Read a depth file into meters; sentinel pixels become invalid.

    ``unit`` declares what the stored numbers mean ("m" or "mm"); if omitted
    the extension convention applies (PNG = mm, PFM = m). PNG zeros, and
    PFM non-finite or non-positive values, are invalid.
    """
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"{path}: no such file")
    if unit is None:
        unit = default_unit_for(path)
    scale = _unit_scale(unit)
    with open(path, "rb") as f:
        magic = f.read(2)
    if magic == b"\x89P":
        raw = _read_png16(path)
        return DepthMap.from_values(raw * scale, raw > 0)
    if magic in (b"Pf", b"PF"):
        return DepthMap.from_values(_read_pfm(path) * scale)
    raise FormatError(f"{path}: unrecognized depth format")


def write_depth(d: DepthMap, path: str | Path, fmt: str | None = None, unit: str | None = None) -> None:
    """Write a depth map; ``read_depth`` round-trips it.

    PFM stores float32 in the declared unit (default meters): exact for
    float32-representable values. PNG stores integers (default millimeters):
    exact masks, values within half a unit. Valid values that do not fit the
    integer range, or would collide with the 0 sentinel, raise RangeError
    with a pointer to PFM.
    """
    path = Path(path)
    if d.valid_count == 0:
        raise EmptyDepth(f"{path}: refusing to write a map with no valid pixels")
    if fmt is None:
        fmt = path.suffix.lower().lstrip(".")
    if fmt not in ("png", "pfm"):
        raise FormatError(f"{path}: unsupported depth format {fmt!r}")
    if unit is None:
        unit = "mm" if fmt == "png" else "m"
    scale = _unit_scale(unit)

    if np.any(d.values[d.valid] <= 0):
        raise RangeError(f"{path}: valid depths must be positive to survive the sentinel")

    if fmt == "pfm":
        _write_pfm(np.where(d.valid, d.values / scale, 0.0), path)
        return

    quant = np.rint(d.values / scale)
    if np.any(quant[d.valid] > PNG_MAX):
        raise RangeError(
            f"{path}: depth exceeds {PNG_MAX * scale} m at PNG/{unit} precision; write PFM instead"
        )
    if np.any(quant[d.valid] < 1):
        raise RangeError(
            f"{path}: depth below the PNG/{unit} quantization step; write PFM instead"
        )
    arr = np.where(d.valid, quant, 0.0).astype(np.uint16)
    Image.fromarray(arr).save(path, format="PNG")


def read_gray_image(path: str | Path) -> np.ndarray:
    """Read an image as float64 grayscale in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"{path}: no such file")
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise CorruptFile(f"{path}: {exc}") from exc


def write_gray_image(values: np.ndarray, path: str | Path) -> None:
    """Write a [0, 1] float grid as an 8-bit grayscale PNG."""
    arr = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    Image.fromarray((arr * 255.0).round().astype(np.uint8), mode="L").save(path, format="PNG")


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class PredictionRef:
    model_id: str
    path: str
    scale_kind: str


@dataclass(frozen=True)
class ManifestEntry:
    """One dataset record: an image, optional ground truth, and predictions."""

    image_path: str
    depth_path: str | None
    predictions: tuple[PredictionRef, ...]
    intrinsics: CameraIntrinsics
    depth_unit: str

    @property
    def labeled(self) -> bool:
        return self.depth_path is not None


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]
    base_dir: str
    path: str

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else Path(self.base_dir) / p


def _entry_error(i: int, msg: str) -> ManifestError:
    return ManifestError(f"entry {i}: {msg}")


def _parse_entry(i: int, raw: dict, base: Path, check_files: bool) -> ManifestEntry:
    if not isinstance(raw, dict):
        raise _entry_error(i, "must be an object")
    for key in ("image_path", "intrinsics", "depth_unit"):
        if key not in raw:
            raise _entry_error(i, f"missing required field {key!r}")
    unit = raw["depth_unit"]
    if unit not in DEPTH_UNITS:
        raise _entry_error(i, f"depth_unit must be one of {DEPTH_UNITS}, got {unit!r}")
    intr = raw["intrinsics"]
    try:
        intrinsics = CameraIntrinsics(
            float(intr["fx"]), float(intr["fy"]), float(intr["cx"]), float(intr["cy"])
        )
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        raise _entry_error(i, f"bad intrinsics: {exc}") from None

    preds = []
    for j, p in enumerate(raw.get("predictions", [])):
        for key in ("model_id", "path", "scale_kind"):
            if key not in p:
                raise _entry_error(i, f"prediction {j} missing field {key!r}")
        if p["scale_kind"] not in SCALE_KINDS:
            raise _entry_error(
                i, f"prediction {j} scale_kind must be one of {SCALE_KINDS}"
            )
        preds.append(PredictionRef(str(p["model_id"]), str(p["path"]), p["scale_kind"]))
    ids = [p.model_id for p in preds]
    if len(set(ids)) != len(ids):
        raise _entry_error(i, "duplicate model_id in predictions")

    depth_path = raw.get("depth_path")
    if depth_path is None and not preds:
        raise _entry_error(i, "unlabeled entry needs at least one prediction")

    entry = ManifestEntry(
        image_path=str(raw["image_path"]),
        depth_path=str(depth_path) if depth_path is not None else None,
        predictions=tuple(preds),
        intrinsics=intrinsics,
        depth_unit=unit,
    )
    if check_files:
        refs = [entry.image_path] + ([entry.depth_path] if entry.depth_path else [])
        refs += [p.path for p in preds]
        for rel in refs:
            full = Path(rel) if os.path.isabs(rel) else base / rel
            if not full.is_file():
                raise _entry_error(i, f"referenced file does not exist: {full}")
    return entry


def read_manifest(path: str | Path, check_files: bool = True) -> Manifest:
    """Parse and validate a dataset manifest (JSON, schema-versioned).

    The stored path is resolved to be absolute, so indexes stamped with it
    stay valid whatever directory later commands run from.
    """
    path = Path(path).resolve()
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ManifestError(f"{path}: no such manifest") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: top level must be an object")
    version = doc.get("schema_version")
    if version != MANIFEST_SCHEMA_VERSION:
        raise ManifestError(
            f"{path}: schema_version must be {MANIFEST_SCHEMA_VERSION}, got {version!r}"
        )
    raw_entries = doc.get("entries")
    if not isinstance(raw_entries, list):
        raise ManifestError(f"{path}: 'entries' must be a list")
    base = path.parent
    entries = tuple(
        _parse_entry(i, raw, base, check_files) for i, raw in enumerate(raw_entries)
    )
    return Manifest(entries=entries, base_dir=str(base), path=str(path))


def write_manifest(entries: Iterable[dict], path: str | Path) -> None:
    """Serialize raw entry dicts under the current schema version."""
    doc = {"schema_version": MANIFEST_SCHEMA_VERSION, "entries": list(entries)}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# triplet index


@dataclass(frozen=True)
class TripletRecord:
    """One synthesized label, its sparse maps, and how they were made."""

    entry_index: int
    image_path: str
    label_index: int
    label_path: str
    sparse_paths: tuple[str, ...]
    sampler_seeds: tuple[int, ...]
    provenance: SynthesisProvenance

    def to_json_dict(self) -> dict:
        return {
            "entry_index": self.entry_index,
            "image_path": self.image_path,
            "label_index": self.label_index,
            "label_path": self.label_path,
            "sparse_paths": list(self.sparse_paths),
            "sampler_seeds": list(self.sampler_seeds),
            "provenance": self.provenance.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "TripletRecord":
        return cls(
            entry_index=int(d["entry_index"]),
            image_path=d["image_path"],
            label_index=int(d["label_index"]),
            label_path=d["label_path"],
            sparse_paths=tuple(d["sparse_paths"]),
            sampler_seeds=tuple(int(s) for s in d["sampler_seeds"]),
            provenance=SynthesisProvenance.from_json_dict(d["provenance"]),
        )


@dataclass(frozen=True)
class TripletIndex:
    header: dict
    records: tuple[TripletRecord, ...]
    path: str

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else Path(self.path).parent / p


def _dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_triplet_index(
    records: Sequence[TripletRecord], out_dir: str | Path, header: dict
) -> Path:
    """Write the JSON-lines index: one header line, then one record per line.

    Records are emitted sorted by (entry_index, label_index) so the file is
    a pure function of the inputs; the line-per-record layout keeps it
    append-safe and streamable.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index_path = out_dir / "index.jsonl"
    ordered = sorted(records, key=lambda r: (r.entry_index, r.label_index))
    with open(index_path, "w", encoding="utf-8") as f:
        f.write(_dumps({"schema_version": INDEX_SCHEMA_VERSION, **header}) + "\n")
        for rec in ordered:
            f.write(_dumps(rec.to_json_dict()) + "\n")
    return index_path


def read_triplet_index(path: str | Path) -> TripletIndex:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    except FileNotFoundError:
        raise ManifestError(f"{path}: no such index") from None
    if not lines:
        raise ManifestError(f"{path}: empty index")
    try:
        header = json.loads(lines[0])
        records = tuple(TripletRecord.from_json_dict(json.loads(ln)) for ln in lines[1:] if ln)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{path}: malformed index ({exc})") from None
    if header.get("schema_version") != INDEX_SCHEMA_VERSION:
        raise ManifestError(
            f"{path}: index schema_version must be {INDEX_SCHEMA_VERSION}"
        )
    return TripletIndex(header=header, records=records, path=str(path))
