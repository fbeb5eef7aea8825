"""Pipeline: synthesis runs, determinism, stats stages, validation, CLI."""

import dataclasses
import json

import numpy as np
import pytest

from depthmix import (
    ConfigError,
    EmptyDataset,
    PipelineConfig,
    SamplerSpec,
    SynthesisConfig,
    load_pipeline_config,
    read_depth,
    read_manifest,
    read_triplet_index,
    run_stats,
    run_synthesize,
    run_validate,
    stats_from_index,
)
from depthmix.cli import main as cli_main

from dataset import build_dataset, tree_bytes
from oracles import brute_force_spread


def small_cfg(**overrides):
    defaults = dict(
        synthesis=SynthesisConfig(),
        samplers=(SamplerSpec(kind="uniform", rho=0.05),),
        n_labels=1,
        m_sparse=1,
        global_seed=7,
        workers=1,
        output_format="pfm",
    )
    defaults.update(overrides)
    return PipelineConfig(**defaults)


class TestRunSynthesize:
    def test_counting_contract(self, tmp_path):
        manifest = read_manifest(build_dataset(tmp_path / "data", 3))
        cfg = small_cfg(n_labels=2, m_sparse=2)
        summary = run_synthesize(manifest, cfg, tmp_path / "out")
        assert summary.ok
        assert summary.labels_written == 6
        assert summary.sparse_written == 12
        idx = read_triplet_index(summary.index_path)
        assert len(idx.records) == 6
        assert all(len(r.sparse_paths) == 2 for r in idx.records)

    def test_rerun_is_byte_identical(self, tmp_path):
        manifest = read_manifest(build_dataset(tmp_path / "data", 4))
        cfg = small_cfg(n_labels=2)
        run_synthesize(manifest, cfg, tmp_path / "out1")
        run_synthesize(manifest, cfg, tmp_path / "out2")
        assert tree_bytes(tmp_path / "out1") == tree_bytes(tmp_path / "out2")

    def test_worker_count_does_not_change_outputs(self, tmp_path):
        manifest = read_manifest(build_dataset(tmp_path / "data", 6))
        cfg1 = small_cfg(n_labels=2, m_sparse=2)
        cfg2 = dataclasses.replace(cfg1, workers=3)
        run_synthesize(manifest, cfg1, tmp_path / "serial")
        run_synthesize(manifest, cfg2, tmp_path / "parallel")
        assert tree_bytes(tmp_path / "serial") == tree_bytes(tmp_path / "parallel")

    def test_entry_failures_are_isolated(self, tmp_path):
        manifest_path = build_dataset(tmp_path / "data", 3)
        manifest = read_manifest(manifest_path)
        # corrupt one ground-truth file after validation
        gt_path = tmp_path / "data" / manifest.entries[1].depth_path
        gt_path.write_bytes(b"Pf\n4 4\n-1.0\nshort")
        summary = run_synthesize(manifest, small_cfg(), tmp_path / "out")
        assert not summary.ok
        assert summary.entries_failed == 1
        assert summary.failures[0][0] == 1
        idx = read_triplet_index(summary.index_path)
        assert {r.entry_index for r in idx.records} == {0, 2}

    def test_throughput_counter_consistent(self, tmp_path):
        manifest = read_manifest(build_dataset(tmp_path / "data", 5))
        summary = run_synthesize(manifest, small_cfg(), tmp_path / "out")
        assert summary.images_per_s == pytest.approx(
            summary.entries_done / summary.elapsed_s, rel=1e-6
        )

    def test_all_three_samplers_in_rotation(self, tmp_path):
        manifest = read_manifest(build_dataset(tmp_path / "data", 2, h=32, w=40))
        cfg = small_cfg(
            m_sparse=3,
            samplers=(
                SamplerSpec(kind="uniform", rho=0.05),
                SamplerSpec(kind="lidar", beams=8, azimuth_bin_deg=1.0),
                SamplerSpec(kind="features", points=20),
            ),
        )
        summary = run_synthesize(manifest, cfg, tmp_path / "out")
        assert summary.ok
        report = run_validate(summary.index_path, replay=2)
        assert report.ok, report.violations

    def test_png_output_format(self, tmp_path):
        manifest = read_manifest(build_dataset(tmp_path / "data", 2))
        cfg = small_cfg(output_format="png")
        summary = run_synthesize(manifest, cfg, tmp_path / "out")
        assert summary.ok
        report = run_validate(summary.index_path, replay=1)
        assert report.ok, report.violations


class TestRunStats:
    def test_relocation_widens_spread(self, tmp_path):
        manifest = read_manifest(build_dataset(tmp_path / "data", 30))
        cfg = small_cfg()
        report = run_stats(manifest, cfg, ("original", "interpolation", "relocation"))
        spreads = {s.stage: s.spread for s in report.stages}
        assert spreads["relocation"] > spreads["interpolation"]

    def test_original_stage_matches_brute_force(self, tmp_path):
        manifest = read_manifest(build_dataset(tmp_path / "data", 12))
        report = run_stats(manifest, small_cfg(), ("original",))
        stage = report.stages[0]
        pts = [(s.mean, s.std) for s in stage.per_image]
        assert stage.spread == pytest.approx(brute_force_spread(pts), rel=1e-9)

    def test_single_image_spread_zero(self, tmp_path):
        manifest = read_manifest(build_dataset(tmp_path / "data", 1))
        report = run_stats(manifest, small_cfg(), ("original",))
        assert report.stages[0].spread == 0.0

    def test_unlabeled_entries_skip_original_stage(self, tmp_path):
        manifest = read_manifest(build_dataset(tmp_path / "data", 3, labeled=False))
        report = run_stats(manifest, small_cfg())
        by_stage = {s.stage: s for s in report.stages}
        assert all(st is None for st in by_stage["original"].per_image)
        assert all(st is not None for st in by_stage["interpolation"].per_image)

    def test_stats_from_index(self, tmp_path):
        manifest = read_manifest(build_dataset(tmp_path / "data", 3))
        summary = run_synthesize(manifest, small_cfg(), tmp_path / "out")
        report = stats_from_index(read_triplet_index(summary.index_path))
        assert report.stages[0].stage == "index"
        assert len(report.stages[0].per_image) == 3

    def test_unknown_stage_rejected(self, tmp_path):
        manifest = read_manifest(build_dataset(tmp_path / "data", 1))
        with pytest.raises(ConfigError):
            run_stats(manifest, small_cfg(), ("warp",))

    def test_empty_manifest(self, tmp_path):
        from depthmix import write_manifest

        path = tmp_path / "empty.json"
        write_manifest([], path)
        with pytest.raises(EmptyDataset):
            run_stats(read_manifest(path), small_cfg())


class TestRunValidate:
    def make_index(self, tmp_path, **cfg_overrides):
        manifest = read_manifest(build_dataset(tmp_path / "data", 3))
        summary = run_synthesize(manifest, small_cfg(**cfg_overrides), tmp_path / "out")
        return summary.index_path

    def test_untampered_index_passes(self, tmp_path):
        index_path = self.make_index(tmp_path)
        report = run_validate(index_path, replay=3)
        assert report.ok
        assert report.records_checked == 3
        assert report.replayed == 3

    def test_validate_works_from_other_cwd(self, tmp_path, monkeypatch):
        # manifest given as a path relative to the invocation directory
        build_dataset(tmp_path / "data", 2)
        monkeypatch.chdir(tmp_path)
        manifest = read_manifest("data/manifest.json")
        summary = run_synthesize(manifest, small_cfg(), tmp_path / "out")
        monkeypatch.chdir(tmp_path / "data")  # somewhere else entirely
        assert run_validate(summary.index_path, replay=2).ok

    def test_one_millimeter_corruption_flagged(self, tmp_path):
        index_path = self.make_index(tmp_path)
        idx = read_triplet_index(index_path)
        victim = idx.records[1]
        sp_path = idx.resolve(victim.sparse_paths[0])
        d = read_depth(sp_path)
        tampered = np.array(d.values)
        first = np.flatnonzero(d.valid.ravel())[0]
        tampered.ravel()[first] += 0.001  # one millimeter
        from depthmix import DepthMap, write_depth

        write_depth(DepthMap(tampered, d.valid), sp_path)
        report = run_validate(index_path, replay=0)
        assert not report.ok
        flagged = {v.record for v in report.violations}
        assert flagged == {"entry1/label0"}
        assert all(v.kind == "consistency" for v in report.violations)

    def test_deleted_file_flagged(self, tmp_path):
        index_path = self.make_index(tmp_path)
        idx = read_triplet_index(index_path)
        idx.resolve(idx.records[2].sparse_paths[0]).unlink()
        report = run_validate(index_path, replay=0)
        assert [v.kind for v in report.violations] == ["missing_file"]
        assert report.violations[0].record == "entry2/label0"

    def test_replay_detects_label_tampering(self, tmp_path):
        index_path = self.make_index(tmp_path)
        idx = read_triplet_index(index_path)
        victim = idx.records[0]
        label_path = idx.resolve(victim.label_path)
        d = read_depth(label_path)
        from depthmix import DepthMap, write_depth

        # shift the whole label; sparse maps were sampled from the original,
        # so both consistency and replay should notice
        write_depth(DepthMap(d.values * 1.001, d.valid), label_path)
        report = run_validate(index_path, replay=3)
        kinds = {v.kind for v in report.violations if v.record == "entry0/label0"}
        assert "replay" in kinds


class TestConfig:
    def test_json_round_trip(self, tmp_path):
        cfg = small_cfg(
            samplers=(
                SamplerSpec(kind="uniform", rho=0.1),
                SamplerSpec(kind="lidar", beams=4),
            ),
            n_labels=3,
        )
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_json_dict()))
        assert load_pipeline_config(path) == cfg

    def test_recipe_excludes_workers(self):
        a = small_cfg(workers=1).recipe_dict()
        b = small_cfg(workers=8).recipe_dict()
        assert a == b

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"bogus": 1}))
        with pytest.raises(ConfigError):
            load_pipeline_config(path)

    def test_bad_counts_rejected(self):
        with pytest.raises(ConfigError):
            small_cfg(n_labels=0)
        with pytest.raises(ConfigError):
            small_cfg(m_sparse=0)


class TestCli:
    def test_synthesize_validate_loss_roundtrip(self, tmp_path, capsys):
        manifest_path = build_dataset(tmp_path / "data", 2)
        out = tmp_path / "out"
        rc = cli_main(
            ["synthesize", "--manifest", str(manifest_path), "--out", str(out),
             "--seed", "3", "--workers", "1"]
        )
        assert rc == 0
        assert (out / "index.jsonl").is_file()

        rc = cli_main(["validate", "--index", str(out / "index.jsonl"), "--replay", "1"])
        assert rc == 0

        idx = read_triplet_index(out / "index.jsonl")
        label = str(idx.resolve(idx.records[0].label_path))
        rc = cli_main(["loss", "--pred", label, "--label", label])
        assert rc == 0

    def test_loss_output_parses(self, tmp_path, capsys):
        manifest_path = build_dataset(tmp_path / "data", 1)
        manifest = read_manifest(manifest_path)
        gt = str(tmp_path / "data" / manifest.entries[0].depth_path)
        rc = cli_main(["loss", "--pred", gt, "--label", gt])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["total"] == 0.0

    def test_sample_command(self, tmp_path, capsys):
        manifest_path = build_dataset(tmp_path / "data", 1)
        manifest = read_manifest(manifest_path)
        gt = str(tmp_path / "data" / manifest.entries[0].depth_path)
        out = str(tmp_path / "sparse.pfm")
        rc = cli_main(
            ["sample", "--depth", gt, "--pattern", "uniform", "--rho", "0.1",
             "--seed", "1", "--out", out]
        )
        assert rc == 0
        sparse = read_depth(out)
        dense = read_depth(gt)
        idx = np.flatnonzero(sparse.valid.ravel())
        assert np.array_equal(sparse.values.ravel()[idx], dense.values.ravel()[idx])

    def test_stats_command(self, tmp_path, capsys):
        manifest_path = build_dataset(tmp_path / "data", 3)
        rc = cli_main(
            ["stats", "--manifest", str(manifest_path), "--stages", "original",
             "--out", str(tmp_path / "report.json")]
        )
        assert rc == 0
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["stages"][0]["stage"] == "original"

    def test_invalid_manifest_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{}")
        rc = cli_main(["synthesize", "--manifest", str(bad), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_env_override(self, tmp_path, monkeypatch, capsys):
        manifest_path = build_dataset(tmp_path / "data", 1)
        monkeypatch.setenv("DEPTHMIX_OUT", str(tmp_path / "env_out"))
        rc = cli_main(["synthesize", "--manifest", str(manifest_path)])
        assert rc == 0
        assert (tmp_path / "env_out" / "index.jsonl").is_file()

    def test_partial_failure_exit_code(self, tmp_path):
        manifest_path = build_dataset(tmp_path / "data", 2)
        manifest = read_manifest(manifest_path)
        (tmp_path / "data" / manifest.entries[0].depth_path).write_bytes(
            b"Pf\n2 2\n-1.0\nxx"
        )
        rc = cli_main(
            ["synthesize", "--manifest", str(manifest_path), "--out", str(tmp_path / "o")]
        )
        assert rc == 1
