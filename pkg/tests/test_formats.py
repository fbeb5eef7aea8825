"""File formats: depth round trips, manifest validation, triplet index."""

import json

import numpy as np
import pytest

from depthmix import (
    CorruptFile,
    DepthMap,
    FormatError,
    ManifestError,
    RangeError,
    read_depth,
    read_manifest,
    write_depth,
    write_manifest,
)
from depthmix.formats import (
    TripletRecord,
    read_triplet_index,
    write_triplet_index,
)
from depthmix.synthesis import (
    AlignmentNote,
    MixWeights,
    RelocationFactor,
    SynthesisProvenance,
)


def f32_depth(rng, h=9, w=13, hole_fraction=0.2):
    # float32-representable values, the precision PFM actually stores
    vals = rng.uniform(0.5, 30.0, (h, w)).astype(np.float32).astype(np.float64)
    valid = rng.random((h, w)) >= hole_fraction
    valid[0, 0] = True
    return DepthMap(np.where(valid, vals, 0.0), valid)


class TestPfm:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        for i in range(5):
            d = f32_depth(rng)
            p = tmp_path / f"m{i}.pfm"
            write_depth(d, p)
            back = read_depth(p)
            assert back.same_as(d)

    def test_nan_pixel_becomes_invalid(self, tmp_path):
        vals = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float64)
        p = tmp_path / "d.pfm"
        write_depth(DepthMap.from_values(vals), p)
        raw = bytearray(p.read_bytes())
        # bottom-up scanlines: the first stored float is grid pixel (1, 0)
        raw[-16:-12] = np.float32("nan").tobytes()
        p.write_bytes(bytes(raw))
        back = read_depth(p)
        assert back.valid.tolist() == [[True, True], [False, True]]
        assert back.values[0, 0] == 1.0 and back.values[1, 1] == 4.0

    def test_color_pfm_rejected(self, tmp_path):
        p = tmp_path / "c.pfm"
        p.write_bytes(b"PF\n2 2\n-1.0\n" + b"\x00" * 48)
        with pytest.raises(FormatError):
            read_depth(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "t.pfm"
        p.write_bytes(b"Pf\n4 4\n-1.0\n" + b"\x00" * 10)
        with pytest.raises(CorruptFile):
            read_depth(p)

    def test_unknown_format(self, tmp_path):
        p = tmp_path / "x.pfm"
        p.write_bytes(b"hello world")
        with pytest.raises(FormatError):
            read_depth(p)

    def test_big_endian_pfm(self, tmp_path):
        vals = np.array([[1.5, 2.5]], dtype=">f4")
        p = tmp_path / "be.pfm"
        p.write_bytes(b"Pf\n2 1\n1.0\n" + vals.tobytes())
        assert read_depth(p).values.tolist() == [[1.5, 2.5]]


class TestPng:
    def test_millimeter_convention(self, tmp_path):
        from PIL import Image

        p = tmp_path / "d.png"
        Image.fromarray(np.array([[5000, 0]], dtype=np.uint16)).save(p)
        d = read_depth(p, "mm")
        assert d.values[0, 0] == 5.0
        assert not d.valid[0, 1]

    def test_round_trip_quantization_bound(self, rng, tmp_path):
        d = f32_depth(rng)
        p = tmp_path / "q.png"
        write_depth(d, p)
        back = read_depth(p)
        assert np.array_equal(back.valid, d.valid)
        assert np.max(np.abs(back.values[d.valid] - d.values[d.valid])) <= 0.0005

    def test_mask_preserved_exactly(self, rng, tmp_path):
        d = f32_depth(rng, hole_fraction=0.5)
        for name in ("m.png", "m.pfm"):
            write_depth(d, tmp_path / name)
            assert np.array_equal(read_depth(tmp_path / name).valid, d.valid)

    def test_range_error_above_png_limit(self, tmp_path):
        d = DepthMap.from_values([[70.0, 1.0]])
        with pytest.raises(RangeError, match="PFM"):
            write_depth(d, tmp_path / "big.png")

    def test_range_error_below_quantization(self, tmp_path):
        d = DepthMap.from_values([[0.0001, 1.0]])
        with pytest.raises(RangeError, match="PFM"):
            write_depth(d, tmp_path / "small.png")

    def test_meter_unit_png(self, tmp_path):
        d = DepthMap.from_values([[3.0, 7.0]])
        p = tmp_path / "m.png"
        write_depth(d, p, unit="m")
        assert read_depth(p, "m").values.tolist() == [[3.0, 7.0]]


def minimal_manifest(tmp_path, n=1, labeled=True, preds=1):
    from depthmix import write_gray_image

    entries = []
    rng = np.random.default_rng(0)
    for i in range(n):
        img = tmp_path / f"img{i}.png"
        write_gray_image(rng.random((6, 8)), img)
        entry = {
            "image_path": img.name,
            "intrinsics": {"fx": 60.0, "fy": 60.0, "cx": 4.0, "cy": 3.0},
            "depth_unit": "m",
            "predictions": [],
        }
        if labeled:
            gt = tmp_path / f"gt{i}.pfm"
            write_depth(DepthMap.from_values(rng.uniform(1, 9, (6, 8))), gt)
            entry["depth_path"] = gt.name
        for j in range(preds):
            pp = tmp_path / f"pred{i}_{j}.pfm"
            write_depth(DepthMap.from_values(rng.uniform(1, 9, (6, 8))), pp)
            entry["predictions"].append(
                {"model_id": f"model{j}", "path": pp.name, "scale_kind": "metric"}
            )
        entries.append(entry)
    path = tmp_path / "manifest.json"
    write_manifest(entries, path)
    return path


class TestManifest:
    def test_minimal_labeled_entry_parses(self, tmp_path):
        m = read_manifest(minimal_manifest(tmp_path))
        assert len(m.entries) == 1
        assert m.entries[0].labeled
        assert m.entries[0].intrinsics.fx == 60.0

    def test_missing_intrinsics_named(self, tmp_path):
        path = minimal_manifest(tmp_path)
        doc = json.loads(path.read_text())
        del doc["entries"][0]["intrinsics"]
        path.write_text(json.dumps(doc))
        with pytest.raises(ManifestError, match="intrinsics"):
            read_manifest(path)

    def test_unlabeled_without_predictions_rejected(self, tmp_path):
        path = minimal_manifest(tmp_path)
        doc = json.loads(path.read_text())
        del doc["entries"][0]["depth_path"]
        doc["entries"][0]["predictions"] = []
        path.write_text(json.dumps(doc))
        with pytest.raises(ManifestError, match="entry 0"):
            read_manifest(path)

    def test_unlabeled_with_prediction_ok(self, tmp_path):
        path = minimal_manifest(tmp_path, labeled=False, preds=1)
        m = read_manifest(path)
        assert not m.entries[0].labeled

    def test_round_trip(self, tmp_path):
        path = minimal_manifest(tmp_path, n=3)
        m1 = read_manifest(path)
        write_manifest(json.loads(path.read_text())["entries"], tmp_path / "again.json")
        m2 = read_manifest(tmp_path / "again.json")
        assert m1.entries == m2.entries

    def test_missing_file_flagged_with_entry_index(self, tmp_path):
        path = minimal_manifest(tmp_path, n=2)
        doc = json.loads(path.read_text())
        doc["entries"][1]["depth_path"] = "nope.pfm"
        path.write_text(json.dumps(doc))
        with pytest.raises(ManifestError, match="entry 1"):
            read_manifest(path)
        # skipping the existence check parses fine
        assert len(read_manifest(path, check_files=False).entries) == 2

    def test_wrong_schema_version(self, tmp_path):
        path = minimal_manifest(tmp_path)
        doc = json.loads(path.read_text())
        doc["schema_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ManifestError, match="schema_version"):
            read_manifest(path)

    def test_bad_scale_kind(self, tmp_path):
        path = minimal_manifest(tmp_path)
        doc = json.loads(path.read_text())
        doc["entries"][0]["predictions"][0]["scale_kind"] = "banana"
        path.write_text(json.dumps(doc))
        with pytest.raises(ManifestError, match="scale_kind"):
            read_manifest(path)


def sample_record(i=0):
    prov = SynthesisProvenance(
        seed=123,
        weights=MixWeights((("m", 0.25),), 0.75),
        theta=RelocationFactor(1.5),
        alignment=(("m", AlignmentNote("affine_lsq", False)),),
        interpolated=True,
    )
    return TripletRecord(
        entry_index=i,
        image_path=f"img{i}.png",
        label_index=0,
        label_path=f"labels/e{i:06d}_l000.pfm",
        sparse_paths=(f"sparse/e{i:06d}_l000_s00.pfm",),
        sampler_seeds=(42,),
        provenance=prov,
    )


class TestTripletIndex:
    def test_round_trip(self, tmp_path):
        recs = [sample_record(i) for i in range(3)]
        path = write_triplet_index(recs, tmp_path, {"manifest": "m.json", "config": {}})
        idx = read_triplet_index(path)
        assert idx.records == tuple(recs)
        assert idx.header["manifest"] == "m.json"

    def test_bytes_deterministic(self, tmp_path):
        recs = [sample_record(i) for i in range(3)]
        p1 = write_triplet_index(recs, tmp_path / "a", {"x": 1})
        p2 = write_triplet_index(list(reversed(recs)), tmp_path / "b", {"x": 1})
        assert p1.read_bytes() == p2.read_bytes()

    def test_malformed_line_rejected(self, tmp_path):
        path = write_triplet_index([sample_record()], tmp_path, {})
        path.write_text(path.read_text() + "{broken\n")
        with pytest.raises(ManifestError):
            read_triplet_index(path)
