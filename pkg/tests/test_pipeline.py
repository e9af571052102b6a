"""Cropping, resizing, configuration, and stage-orchestration tests.

Stage tests run a deliberately tiny configuration (8 images, shallow U-Net,
a few dozen iterations): they verify wiring, counting, idempotence, and
CLI/library equivalence, not model quality (the acceptance suite owns that).
"""

import json

import numpy as np
import pytest

from lesionlab import dataset_io
from lesionlab.errors import ConfigError, DependencyError, EmptyMaskError
from lesionlab.metrics import confusion_matrix
from lesionlab.networks import classify, restore_network
from lesionlab.pipeline import (
    STAGES,
    apply_mask,
    apply_paper_preset,
    config_from_dict,
    foreground_bbox,
    load_config,
    mask_and_crop,
    resize_bilinear,
    resize_nearest,
    run_pipeline,
    run_stage,
)
from lesionlab.synthetic import generate_synthetic_corpus


class TestResize:
    def test_bilinear_identity_at_same_size(self):
        rng = np.random.default_rng(1)
        img = rng.random((6, 7, 3))
        np.testing.assert_array_equal(resize_bilinear(img, 6, 7), img)

    def test_bilinear_constant_stays_constant(self):
        img = np.full((5, 5, 3), 42.0)
        out = resize_bilinear(img, 12, 9)
        np.testing.assert_allclose(out, 42.0, rtol=1e-12)

    def test_bilinear_2x2_center_value(self):
        img = np.array([[0.0, 1.0], [1.0, 0.0]])
        out = resize_bilinear(img, 4, 4)
        # center samples interpolate halfway between the four corners
        assert out[1, 1] == pytest.approx(0.5, abs=0.26)
        assert out[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_nearest_keeps_binary_values(self):
        rng = np.random.default_rng(2)
        mask = rng.random((9, 9)) > 0.5
        for oh, ow in ((18, 18), (5, 7), (9, 9)):
            out = resize_nearest(mask, oh, ow)
            assert out.shape == (oh, ow)
            assert out.dtype == bool

    def test_nearest_upscale_replicates(self):
        mask = np.array([[True, False], [False, True]])
        out = resize_nearest(mask, 4, 4)
        np.testing.assert_array_equal(out[:2, :2], np.full((2, 2), True)[:2, :2] & mask[0, 0])
        assert out[0, 0] and not out[0, 3]
        assert out[3, 3] and not out[3, 0]


class TestMaskAndCrop:
    def _image(self, h=16, w=16):
        rng = np.random.default_rng(3)
        return rng.integers(10, 255, (h, w, 3), dtype=np.uint8)

    def test_and_semantics_background_exactly_zero(self):
        img = self._image()
        mask = np.zeros((16, 16), bool)
        mask[2:6, 3:9] = True
        anded = apply_mask(img, mask)
        assert (anded[~mask] == 0).all()
        np.testing.assert_array_equal(anded[mask], img[mask])

    def test_bbox_of_topleft_block(self):
        mask = np.zeros((16, 16), bool)
        mask[0:4, 0:4] = True
        assert foreground_bbox(mask) == (0, 0, 3, 3)

    def test_all_ones_mask_is_resized_original(self):
        img = self._image()
        out = mask_and_crop(img, np.ones((16, 16), bool), 8)
        expected = np.clip(np.rint(resize_bilinear(img, 8, 8)), 0, 255).astype(np.uint8)
        np.testing.assert_array_equal(out, expected)
        assert (out > 0).any()

    def test_crop_shape_contract(self):
        img = self._image()
        mask = np.zeros((16, 16), bool)
        mask[5:9, 2:14] = True
        out = mask_and_crop(img, mask, 32)
        assert out.shape == (32, 32, 3)
        assert out.dtype == np.uint8

    def test_empty_mask_raises(self):
        with pytest.raises(EmptyMaskError):
            mask_and_crop(self._image(), np.zeros((16, 16), bool), 8)


class TestConfig:
    def _raw(self, tmp_path):
        return {
            "corpus_root": str(tmp_path / "corpus"),
            "work_dir": str(tmp_path / "work"),
            "seed": 5,
            "unet": {"input_size": [3, 32, 32], "depth": 2, "base_channels": 4},
            "unet_train": {"iterations": 40, "batch_size": 2},
            "lenet_train": {"iterations": 30, "batch_size": 4},
        }

    def test_defaults_and_seed_propagation(self, tmp_path):
        config = config_from_dict(self._raw(tmp_path))
        assert config.unet_spec.depth == 2
        assert config.unet_train.iterations == 40
        assert config.unet_train.seed == 5
        assert config.lenet_train.seed == 5
        assert config.annotation.seed == 5
        assert config.mask_threshold == 0.5

    def test_unknown_top_level_key_rejected(self, tmp_path):
        raw = self._raw(tmp_path)
        raw["surprise"] = 1
        with pytest.raises(ConfigError):
            config_from_dict(raw)

    def test_unknown_nested_key_rejected(self, tmp_path):
        raw = self._raw(tmp_path)
        raw["unet_train"]["momentum"] = 0.9
        with pytest.raises(ConfigError):
            config_from_dict(raw)

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(self._raw(tmp_path)))
        config = load_config(path)
        assert config.seed == 5

    def test_paper_preset_swaps_scale(self, tmp_path):
        config = config_from_dict(self._raw(tmp_path))
        preset = apply_paper_preset(config)
        assert preset.unet_spec.input_size == (3, 256, 256)
        assert preset.unet_train.iterations == 25000
        # original untouched
        assert config.unet_spec.input_size == (3, 32, 32)

    def test_invalid_threshold_rejected(self, tmp_path):
        raw = self._raw(tmp_path)
        raw["mask_threshold"] = 1.5
        with pytest.raises(ConfigError):
            config_from_dict(raw)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """One fully executed tiny pipeline shared by the stage tests."""
    root = tmp_path_factory.mktemp("tiny")
    config = config_from_dict({
        "corpus_root": str(root / "corpus"),
        "work_dir": str(root / "work"),
        "seed": 11,
        "unet": {"input_size": [3, 32, 32], "depth": 2, "base_channels": 8},
        "unet_train": {"iterations": 400, "batch_size": 4, "learning_rate": 0.002},
        "lenet_train": {"iterations": 30, "batch_size": 4},
    })
    generate_synthetic_corpus(8, 64, seed=11, out_dir=config.corpus_root)
    reports = run_pipeline(config)
    return config, reports


class TestStages:
    def test_reports_cover_all_stages(self, tiny_run):
        _, reports = tiny_run
        assert [r.stage for r in reports] == list(STAGES)
        for report in reports:
            assert report.processed > 0

    def test_artifacts_exist(self, tiny_run):
        config, _ = tiny_run
        paths = config.paths()
        assert paths["manifest"].exists()
        assert paths["unet_ckpt"].exists()
        assert paths["lenet_ckpt"].exists()
        assert paths["metrics"].exists()
        for stage in STAGES:
            assert (paths["reports"] / f"{stage}.json").exists()

    def test_loss_log_exported_one_value_per_line(self, tiny_run):
        config, _ = tiny_run
        log_path = config.paths()["unet_ckpt"].with_suffix(".loss.log")
        lines = log_path.read_text().strip().splitlines()
        assert len(lines) == config.unet_train.iterations
        values = [float(line) for line in lines]
        ckpt = dataset_io.load_checkpoint(config.paths()["unet_ckpt"])
        assert values == ckpt.training_log

    def test_segment_writes_one_mask_per_image(self, tiny_run):
        config, reports = tiny_run
        manifest = dataset_io.read_manifest(config.paths()["manifest"])
        masks = sorted(p.stem for p in config.paths()["pred_masks"].glob("*.png"))
        assert masks == sorted(s.image_id for s in manifest.samples)
        segment_report = [r for r in reports if r.stage == "segment"][0]
        assert segment_report.processed + segment_report.skipped == len(manifest.samples)

    def test_counts_reconcile_in_classifier_stage(self, tiny_run):
        config, reports = tiny_run
        manifest = dataset_io.read_manifest(config.paths()["manifest"])
        train_n = sum(1 for s in manifest.samples if s.split == "train")
        rep = [r for r in reports if r.stage == "train-classifier"][0]
        assert rep.processed + rep.skipped == train_n

    def test_evaluate_matches_direct_library_calls(self, tiny_run):
        config, reports = tiny_run
        paths = config.paths()
        manifest = dataset_io.read_manifest(paths["manifest"])
        net = restore_network(dataset_io.load_checkpoint(paths["lenet_ckpt"]))
        preds, actuals = [], []
        for sample in manifest.samples:
            if sample.split != "test":
                continue
            image = dataset_io.read_image(sample.image_path)
            mask = dataset_io.read_mask(paths["pred_masks"] / f"{sample.image_id}.png")
            crop = mask_and_crop(image, mask, config.crop_size)
            preds.append(classify((crop.astype(np.float64) / 255).transpose(2, 0, 1),
                                  net)[0])
            actuals.append(sample.label)
        cm = confusion_matrix(preds, actuals)
        eval_report = [r for r in reports if r.stage == "evaluate"][0]
        assert eval_report.details["confusion"] == {
            "benign_benign": cm.benign_benign,
            "benign_malignant": cm.benign_malignant,
            "malignant_benign": cm.malignant_benign,
            "malignant_malignant": cm.malignant_malignant,
        }

    def test_segment_stage_idempotent(self, tiny_run):
        config, _ = tiny_run
        paths = config.paths()
        before = {p.name: p.read_bytes() for p in paths["pred_masks"].glob("*.png")}
        run_stage("segment", config)
        after = {p.name: p.read_bytes() for p in paths["pred_masks"].glob("*.png")}
        assert before == after

    def test_evaluate_stage_idempotent(self, tiny_run):
        config, _ = tiny_run
        metrics_before = config.paths()["metrics"].read_bytes()
        run_stage("evaluate", config)
        assert config.paths()["metrics"].read_bytes() == metrics_before

    def test_train_unet_rerun_is_byte_identical(self, tiny_run):
        config, _ = tiny_run
        ckpt_before = config.paths()["unet_ckpt"].read_bytes()
        run_stage("train-unet", config)
        assert config.paths()["unet_ckpt"].read_bytes() == ckpt_before

    def test_missing_prerequisite_raises(self, tmp_path):
        config = config_from_dict({
            "corpus_root": str(tmp_path / "corpus"),
            "work_dir": str(tmp_path / "work"),
        })
        with pytest.raises(DependencyError):
            run_stage("segment", config)
        with pytest.raises(DependencyError):
            run_stage("train-unet", config)

    def test_unknown_stage_rejected(self, tiny_run):
        config, _ = tiny_run
        with pytest.raises(ConfigError):
            run_stage("mystery", config)


class TestSyntheticGenerator:
    def test_count_contract_and_truth_masks(self, tmp_path):
        records = generate_synthetic_corpus(8, 64, seed=2, out_dir=tmp_path)
        assert len(records) == 8
        assert sum(1 for r in records if r.label == "benign") == 4
        for r in records:
            assert dataset_io.read_mask(r.truth_mask_path).any()

    def test_same_seed_byte_identical_corpus(self, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        a = generate_synthetic_corpus(6, 64, seed=9, out_dir=a_dir)
        b = generate_synthetic_corpus(6, 64, seed=9, out_dir=b_dir)
        for ra, rb in zip(a, b):
            assert ra.image_id == rb.image_id
            assert open(ra.image_path, "rb").read() == open(rb.image_path, "rb").read()
            assert open(ra.truth_mask_path, "rb").read() == \
                   open(rb.truth_mask_path, "rb").read()

    def test_odd_count_rejected(self, tmp_path):
        from lesionlab.errors import ContractError

        with pytest.raises(ContractError):
            generate_synthetic_corpus(7, 64, seed=1, out_dir=tmp_path)


class TestReviewIntegration:
    def test_open_review_session_blocks_training(self, tiny_run):
        import os

        config, _ = tiny_run
        lock = config.paths()["lock"]
        lock.write_text(str(os.getpid()))    # a live reviewer process
        try:
            with pytest.raises(DependencyError):
                run_stage("train-unet", config)
        finally:
            lock.unlink()

    def test_stale_lock_is_cleared_and_training_proceeds(self, tiny_run):
        from lesionlab.pipeline import _review_lock_held

        config, _ = tiny_run
        lock = config.paths()["lock"]
        lock.write_text("999999999")        # no such process
        assert not _review_lock_held(lock)
        assert not lock.exists()

    def test_reannotation_preserves_decisions(self, tmp_path):
        from lesionlab.review import effective_decisions, record_decision

        config = config_from_dict({
            "corpus_root": str(tmp_path / "corpus"),
            "work_dir": str(tmp_path / "work"),
            "seed": 3,
        })
        generate_synthetic_corpus(4, 64, seed=3, out_dir=config.corpus_root)
        paths = config.paths()
        run_stage("annotate", config)
        record_decision(paths["decisions"], "benign_000", "exclude", "tester")
        run_stage("annotate", config)
        state = effective_decisions(paths["decisions"])
        assert state["benign_000"].verdict == "exclude"
        manifest = dataset_io.read_manifest(paths["manifest"])
        assert "benign_000" in manifest.mask_entries


class TestCli:
    def test_exit_codes(self, tmp_path):
        from lesionlab.cli import main

        assert main(["synth", "-n", "4", "--image-size", "64",
                     "--out", str(tmp_path / "c"), "--seed", "1"]) == 0
        assert main(["definitely-not-a-command"]) == 1
        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "corpus_root": str(tmp_path / "c"),
            "work_dir": str(tmp_path / "w"),
            "unet_train": {"iterations": 2},
        }))
        # segment without a checkpoint is a data error
        assert main(["--config", str(config), "segment"]) == 2
        # bad config: unknown key is usage
        config.write_text(json.dumps({"corpus_root": "x", "work_dir": "y",
                                      "bogus": 1}))
        assert main(["--config", str(config), "annotate"]) == 1

    def test_show_config(self, tmp_path, capsys):
        from lesionlab.cli import main

        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "corpus_root": str(tmp_path / "c"),
            "work_dir": str(tmp_path / "w"),
            "seed": 3,
        }))
        assert main(["--config", str(config), "show-config"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["seed"] == 3
        assert payload["unet"]["kind"] == "unet"
