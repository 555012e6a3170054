import hashlib

import numpy as np
import pytest

from busclass import augment as aug
from busclass import model as mod
from busclass.augment import ShapeError


def full_weights_digest(classifier):
    h = hashlib.sha256()
    for w in classifier.model.get_weights():
        h.update(np.ascontiguousarray(w).tobytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def fresh_untrained():
    return mod.build(mod.ClassifierSpec(), seed=3)


class TestSpecValidation:
    def test_defaults_valid(self):
        spec = mod.ClassifierSpec()
        assert spec.dense_units == 1024
        assert spec.dropout_rate == 0.5
        assert spec.freeze_backbone

    def test_rejects_bad_fields(self):
        with pytest.raises(mod.SpecError):
            mod.ClassifierSpec(input_shape=(150, 150, 1))
        with pytest.raises(mod.SpecError):
            mod.ClassifierSpec(input_shape=(8, 8, 3))
        with pytest.raises(mod.SpecError):
            mod.ClassifierSpec(dropout_rate=1.0)
        with pytest.raises(mod.SpecError):
            mod.ClassifierSpec(head_activation="gelu")
        with pytest.raises(mod.SpecError):
            mod.ClassifierSpec(output_classes=2)
        with pytest.raises(mod.SpecError):
            mod.ClassifierSpec(backbone="resnet50")
        with pytest.raises(mod.SpecError):
            mod.ClassifierSpec(backbone_weights="laplacian")

    def test_training_config_validation(self):
        with pytest.raises(ValueError):
            mod.TrainingConfig(epochs=-1)
        with pytest.raises(ValueError):
            mod.TrainingConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            mod.TrainingConfig(optimizer="rmsprop")


class TestBuild:
    def test_head_parameter_count(self, fresh_untrained):
        # flattened backbone feature length for 150x150 input: 5*5*1280 = 32000
        feature_len = int(np.prod(fresh_untrained.backbone.output_shape[1:]))
        assert feature_len == 32000
        expected = (feature_len * 1024 + 1024) + (1024 * 3 + 3)
        assert mod.head_trainable_parameters(fresh_untrained) == expected

    def test_backbone_frozen_by_default(self, fresh_untrained):
        assert not fresh_untrained.backbone.trainable
        assert fresh_untrained.spec.freeze_backbone

    def test_seeded_build_reproducible(self):
        a = mod.build(mod.ClassifierSpec(dense_units=32), seed=11)
        b = mod.build(mod.ClassifierSpec(dense_units=32), seed=11)
        assert full_weights_digest(a) == full_weights_digest(b)

    def test_imagenet_unavailable_raises(self):
        spec = mod.ClassifierSpec(backbone_weights="imagenet")
        with pytest.raises(mod.BackboneWeightsError):
            mod.build(spec, seed=0, allow_fetch=False)

    def test_auto_falls_back_to_random(self, fresh_untrained):
        # no pretrained weights reachable in this environment
        assert fresh_untrained.weights_resolution.startswith("random")

    def test_calibrated_features_have_healthy_scale(self, fresh_untrained):
        rng = np.random.default_rng(0)
        x = rng.random((4, 150, 150, 3)).astype(np.float32)
        feats = np.asarray(fresh_untrained.backbone(x, training=False))
        assert 1e-3 < np.abs(feats).mean() < 10.0

    def test_zero_dropout_training_forward_equals_inference(self):
        classifier = mod.build(mod.ClassifierSpec(dense_units=32, dropout_rate=0.0), seed=9)
        x = np.random.default_rng(1).random((3, 150, 150, 3)).astype(np.float32)
        training_mode = np.asarray(classifier.model(x, training=True))
        inference_mode = np.asarray(classifier.model(x, training=False))
        np.testing.assert_array_equal(training_mode, inference_mode)


class TestPredict:
    def test_rows_on_simplex(self, toy_trained):
        rng = np.random.default_rng(1)
        x = rng.random((9, 150, 150, 3)).astype(np.float32)
        probs = mod.predict_batch(toy_trained, x)
        assert probs.shape == (9, 3)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert (probs >= 0).all()

    def test_duplicate_rows_identical(self, toy_trained):
        rng = np.random.default_rng(2)
        row = rng.random((1, 150, 150, 3)).astype(np.float32)
        x = np.concatenate([row, row])
        probs = mod.predict_batch(toy_trained, x)
        np.testing.assert_array_equal(probs[0], probs[1])

    def test_repeat_call_bit_identical(self, toy_trained):
        rng = np.random.default_rng(3)
        x = rng.random((5, 150, 150, 3)).astype(np.float32)
        np.testing.assert_array_equal(
            mod.predict_batch(toy_trained, x), mod.predict_batch(toy_trained, x)
        )

    def test_empty_batch(self, toy_trained):
        probs = mod.predict_batch(toy_trained, np.zeros((0, 150, 150, 3), dtype=np.float32))
        assert probs.shape == (0, 3)

    def test_shape_mismatch_names_shapes(self, toy_trained):
        with pytest.raises(ShapeError, match="150"):
            mod.predict_batch(toy_trained, np.zeros((2, 100, 100, 3), dtype=np.float32))


class TestTrain:
    def test_epochs_zero_is_identity(self, fresh_untrained, toy_manifest):
        before = full_weights_digest(fresh_untrained)
        out = mod.train(
            fresh_untrained, toy_manifest, aug.AugmentConfig(), mod.TrainingConfig(epochs=0)
        )
        assert out is fresh_untrained
        assert len(out.history) == 0
        assert full_weights_digest(out) == before

    def test_frozen_backbone_digest_unchanged(self, toy_manifest):
        classifier = mod.build(mod.ClassifierSpec(dense_units=64), seed=5)
        before = mod.backbone_digest(classifier)
        mod.train(
            classifier,
            toy_manifest,
            aug.AugmentConfig(seed=1),
            mod.TrainingConfig(epochs=1, batch_size=4, seed=1),
        )
        assert mod.backbone_digest(classifier) == before
        assert len(classifier.history) == 1

    def test_history_record_per_epoch(self, toy_trained):
        assert len(toy_trained.history) == 30
        for r in toy_trained.history.records:
            assert 0.0 <= r.train_accuracy <= 1.0
            assert 0.0 <= r.val_accuracy <= 1.0
            assert 0.0 <= r.val_precision <= 1.0
            assert 0.0 <= r.val_recall <= 1.0
            assert r.train_loss >= 0.0 and r.val_loss >= 0.0

    def test_loss_decreases_on_separable_toy(self, tmp_path):
        # linearly separable: three constant-brightness classes, identity pipeline
        from conftest import write_png

        rng = np.random.default_rng(0)
        for name, level in (("normal", 40), ("benign", 128), ("malignant", 215)):
            for i in range(4):
                img = np.clip(
                    level + rng.integers(-4, 5, size=(160, 160)), 0, 255
                ).astype(np.uint8)
                write_png(tmp_path / name / f"{name} ({i + 1}).png", img, mode="L")
        from busclass import data as dat

        manifest = dat.split(
            dat.ingest(tmp_path), dat.SplitSpec(ratios=(0.5, 0.25, 0.25), seed=0)
        )
        identity = aug.AugmentConfig(
            rotation_max_deg=0.0, shift_fraction=0.0, shear_fraction=0.0, horizontal_flip=False
        )
        classifier = mod.build(mod.ClassifierSpec(), seed=2)
        mod.train(
            classifier, manifest, identity, mod.TrainingConfig(epochs=5, batch_size=6, seed=2)
        )
        records = classifier.history.records
        assert records[4].train_loss < records[0].train_loss

    def test_overfits_ten_images(self, toy_trained, overfit_manifest):
        # memorization: post-training accuracy on the (rescale-only) train images
        records = overfit_manifest.split_records("train")
        pixels = np.concatenate(
            [
                aug.preprocess_for_inference(aug.decode_image(r.path), (150, 150), 1 / 255.0)[None]
                for r in records
            ]
        )
        probs = mod.predict_batch(toy_trained, pixels)
        hits = sum(int(np.argmax(p)) == int(r.label) for p, r in zip(probs, records))
        assert hits / len(records) >= 0.9

    def test_divergence_reports_epoch_and_batch(self, toy_manifest):
        classifier = mod.build(mod.ClassifierSpec(dense_units=64), seed=6)
        config = mod.TrainingConfig(epochs=2, batch_size=4, learning_rate=1e18, seed=0)
        with pytest.raises(mod.TrainingDivergedError, match=r"epoch \d+, batch \d+"):
            mod.train(classifier, toy_manifest, aug.AugmentConfig(seed=0), config)

    def test_target_size_mismatch_rejected(self, fresh_untrained, toy_manifest):
        bad = aug.AugmentConfig(target_size=(96, 96))
        with pytest.raises(mod.SpecError, match="target_size"):
            mod.train(fresh_untrained, toy_manifest, bad, mod.TrainingConfig(epochs=1))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, toy_trained, toy_checkpoint):
        loaded = mod.load(toy_checkpoint)
        rng = np.random.default_rng(7)
        x = rng.random((5, 150, 150, 3)).astype(np.float32)
        np.testing.assert_array_equal(
            mod.predict_batch(loaded, x), mod.predict_batch(toy_trained, x)
        )

    def test_version_round_trips(self, toy_trained, toy_checkpoint):
        loaded = mod.load(toy_checkpoint)
        assert loaded.version == toy_trained.version
        assert loaded.version.startswith("busclass-")

    def test_history_round_trips(self, toy_trained, toy_checkpoint):
        loaded = mod.load(toy_checkpoint)
        assert len(loaded.history) == len(toy_trained.history)
        for a, b in zip(loaded.history.records, toy_trained.history.records):
            assert a.val_accuracy == pytest.approx(b.val_accuracy, abs=0.0)
            assert a.train_loss == pytest.approx(b.train_loss, abs=0.0)

    def test_preprocessing_contract_round_trips(self, toy_trained, toy_checkpoint):
        loaded = mod.load(toy_checkpoint)
        assert loaded.preprocessing == toy_trained.preprocessing

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(mod.CheckpointError, match="missing"):
            mod.load(tmp_path / "nothing")

    def test_truncated_weights_raise(self, toy_checkpoint, tmp_path):
        import shutil

        broken = tmp_path / "broken"
        shutil.copytree(toy_checkpoint, broken)
        blob = (broken / "weights.npz").read_bytes()
        (broken / "weights.npz").write_bytes(blob[: len(blob) // 2])
        with pytest.raises(mod.CheckpointError):
            mod.load(broken)

    def test_format_mismatch_raises(self, toy_checkpoint, tmp_path):
        import shutil

        other = tmp_path / "other"
        shutil.copytree(toy_checkpoint, other)
        text = (other / "VERSION").read_text().replace("format=1", "format=99")
        (other / "VERSION").write_text(text)
        with pytest.raises(mod.CheckpointError, match="format"):
            mod.load(other)


class TestLossGradient:
    def test_gradient_matches_finite_differences(self):
        # central finite differences of the float64 loss, 50 random logit vectors
        rng = np.random.default_rng(0)
        eps = 1e-6
        for _ in range(50):
            logits = rng.normal(scale=3.0, size=3)
            target = np.eye(3)[rng.integers(0, 3)]
            _, grad = mod.cross_entropy_from_logits(logits, target)
            for k in range(3):
                bump = np.zeros(3)
                bump[k] = eps
                lp, _ = mod.cross_entropy_from_logits(logits + bump, target)
                lm, _ = mod.cross_entropy_from_logits(logits - bump, target)
                fd = (lp - lm) / (2 * eps)
                denom = max(abs(fd), abs(grad[k]), 1e-12)
                assert abs(fd - grad[k]) / denom < 1e-4

    def test_matches_tensorflow_loss(self):
        import tensorflow as tf

        rng = np.random.default_rng(1)
        logits = rng.normal(size=(20, 3))
        labels = rng.integers(0, 3, 20)
        onehot = np.eye(3)[labels]
        tf_losses = tf.nn.softmax_cross_entropy_with_logits(
            labels=onehot.astype(np.float64), logits=logits.astype(np.float64)
        ).numpy()
        mine = np.array(
            [mod.cross_entropy_from_logits(z, y)[0] for z, y in zip(logits, onehot)]
        )
        np.testing.assert_allclose(mine, tf_losses, rtol=1e-10)

    def test_softmax_argmax_shift_invariant(self, toy_trained):
        # scaling all logits uniformly cannot change the predicted label
        rng = np.random.default_rng(4)
        x = rng.random((6, 150, 150, 3)).astype(np.float32)
        probs = mod.predict_batch(toy_trained, x)
        assert (probs > 0).all() and (probs < 1).all()
        logits = np.log(probs)
        shifted = logits + 5.0
        exp = np.exp(shifted - shifted.max(axis=1, keepdims=True))
        shifted_probs = exp / exp.sum(axis=1, keepdims=True)
        np.testing.assert_array_equal(
            np.argmax(probs, axis=1), np.argmax(shifted_probs, axis=1)
        )
