"""Transfer-learning classifier: frozen MobileNetV2 base plus a trainable head.

The head is flatten -> dense(dense_units, activation) -> dropout -> dense(3,
softmax), with no batch-normalization layers added. The convolutional base
runs with its batch-norm layers in inference mode (the functional call bakes
``training=False``), so its parameters, including moving statistics, never
change during training.

Backbone weight resolution: ``imagenet`` loads the pretrained weights from
the local cache or network and fails otherwise; ``random`` uses a seeded
random initialization whose batch-norm statistics are then calibrated with a
single momentum-zero forward pass over seeded noise (without calibration a
randomly initialized base attenuates activations to ~1e-12 and the head can
never learn); ``auto`` (the default) prefers imagenet and falls back to the
calibrated random base when pretrained weights are unreachable.
"""

from __future__ import annotations

import configparser
import hashlib
import logging
import os
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "2")

import keras  # noqa: E402
import numpy as np  # noqa: E402
import tensorflow as tf  # noqa: E402

from . import augment as aug  # noqa: E402
from . import metrics as met  # noqa: E402
from .augment import ShapeError  # noqa: E402
from .data import DatasetManifest  # noqa: E402

logger = logging.getLogger(__name__)

BACKBONE_ID = "mobilenet_v2_imagenet_notop"
WEIGHT_MODES = ("auto", "imagenet", "random")
ACTIVATIONS = ("relu", "tanh")
CHECKPOINT_FORMAT = 1
_IMAGENET_CACHE_NAME = "mobilenet_v2_weights_tf_dim_ordering_tf_kernels_1.0_224_no_top.h5"

_determinism_enabled = False


class SpecError(Exception):
    """Classifier specification is invalid or incompatible with the backbone."""


class BackboneWeightsError(Exception):
    """Requested pretrained backbone weights are unavailable."""


class TrainingDivergedError(Exception):
    """Loss became non-finite; message names the epoch and batch."""


class CheckpointError(Exception):
    """A checkpoint directory is missing, corrupt, or version-incompatible."""


@dataclass(frozen=True)
class ClassifierSpec:
    input_shape: tuple[int, int, int] = (150, 150, 3)
    backbone: str = BACKBONE_ID
    freeze_backbone: bool = True
    dense_units: int = 1024
    dropout_rate: float = 0.5
    head_activation: str = "relu"
    output_classes: int = 3
    backbone_weights: str = "auto"
    unfreeze_top_layers: int = 0

    def __post_init__(self):
        if self.backbone != BACKBONE_ID:
            raise SpecError(f"unsupported backbone {self.backbone!r}")
        if len(self.input_shape) != 3 or self.input_shape[2] != 3:
            raise SpecError(f"incompatible input shape {self.input_shape}: expected (H, W, 3)")
        if min(self.input_shape[:2]) < 32:
            raise SpecError(f"incompatible input shape {self.input_shape}: sides must be >= 32")
        if self.dense_units < 1:
            raise SpecError("dense_units must be >= 1")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise SpecError("dropout_rate must lie in [0, 1)")
        if self.head_activation not in ACTIVATIONS:
            raise SpecError(f"head_activation must be one of {ACTIVATIONS}")
        if self.output_classes != 3:
            raise SpecError("output layer is fixed at 3 classes")
        if self.backbone_weights not in WEIGHT_MODES:
            raise SpecError(f"backbone_weights must be one of {WEIGHT_MODES}")
        if self.unfreeze_top_layers < 0:
            raise SpecError("unfreeze_top_layers must be >= 0")


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")


@dataclass(frozen=True)
class EpochRecord:
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    val_precision: float
    val_recall: float


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def to_tsv(self) -> str:
        header = "epoch\ttrain_loss\ttrain_accuracy\tval_loss\tval_accuracy\tval_precision\tval_recall"
        rows = [header]
        for i, r in enumerate(self.records):
            rows.append(
                f"{i}\t{r.train_loss!r}\t{r.train_accuracy!r}\t{r.val_loss!r}"
                f"\t{r.val_accuracy!r}\t{r.val_precision!r}\t{r.val_recall!r}"
            )
        return "\n".join(rows) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "TrainingHistory":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        records = []
        for line in lines[1:]:
            fields = line.split("\t")
            records.append(EpochRecord(*(float(v) for v in fields[1:7])))
        return cls(records=records)


@dataclass(frozen=True)
class PreprocessingContract:
    target_size: tuple[int, int]
    rescale_factor: float


@dataclass
class TrainedClassifier:
    spec: ClassifierSpec
    model: keras.Model
    backbone: keras.Model
    history: TrainingHistory
    preprocessing: PreprocessingContract
    version: str = "unsaved"
    weights_resolution: str = "random"


def _ensure_determinism() -> None:
    global _determinism_enabled
    if not _determinism_enabled:
        tf.config.experimental.enable_op_determinism()
        _determinism_enabled = True


def _imagenet_cached() -> bool:
    keras_home = Path(os.environ.get("KERAS_HOME", Path.home() / ".keras"))
    return (keras_home / "models" / _IMAGENET_CACHE_NAME).is_file()


def _new_backbone(input_shape: tuple[int, int, int], weights: str | None) -> keras.Model:
    try:
        return keras.applications.MobileNetV2(
            input_shape=input_shape, include_top=False, weights=weights, name="backbone"
        )
    except TypeError:
        # older keras without the name parameter
        return keras.applications.MobileNetV2(
            input_shape=input_shape, include_top=False, weights=weights
        )


def calibrate_batchnorm(
    backbone: keras.Model, seed: int, batch: int = 64, feature_scale: float = 0.05
) -> None:
    """Set every batch-norm's moving statistics from one seeded-noise forward pass.

    Running the base once in training mode with momentum 0 stores, layer by
    layer, the exact batch statistics each layer saw, which restores unit-scale
    activations for a randomly initialized network. Must run before freezing:
    a non-trainable batch-norm layer ignores training mode entirely.

    The final batch-norm is then rescaled so the 32000-value flattened feature
    map keeps a conservative magnitude (``feature_scale``); at unit scale, a
    conventional head learning rate of 1e-3 moves the hidden activations by
    ~10 per optimizer step and training oscillates instead of converging.
    """
    bns = [l for l in backbone.layers if isinstance(l, keras.layers.BatchNormalization)]
    saved = [bn.momentum for bn in bns]
    for bn in bns:
        bn.momentum = 0.0
    shape = (batch,) + tuple(backbone.input_shape[1:])
    noise = np.random.default_rng(seed).random(shape).astype(np.float32)
    backbone(noise, training=True)
    for bn, momentum in zip(bns, saved):
        bn.momentum = momentum
    last = bns[-1]
    last.moving_variance.assign(last.moving_variance / feature_scale**2)


_imagenet_known_unavailable = False


def _resolve_backbone(spec: ClassifierSpec, seed: int, allow_fetch: bool) -> tuple[keras.Model, str]:
    global _imagenet_known_unavailable
    mode = spec.backbone_weights
    if mode in ("imagenet", "auto"):
        attempt = not (mode == "auto" and _imagenet_known_unavailable)
        if attempt and (allow_fetch or _imagenet_cached()):
            try:
                return _new_backbone(spec.input_shape, "imagenet"), "imagenet"
            except Exception as exc:
                if mode == "imagenet":
                    raise BackboneWeightsError(
                        f"pretrained backbone weights unavailable: {exc}"
                    ) from exc
                _imagenet_known_unavailable = True
                logger.warning(
                    "pretrained backbone weights unavailable (%s); "
                    "falling back to seeded random initialization",
                    exc,
                )
        elif mode == "imagenet":
            raise BackboneWeightsError(
                "pretrained backbone weights not cached and fetching is disabled"
            )
    backbone = _new_backbone(spec.input_shape, None)
    calibrate_batchnorm(backbone, seed=seed)
    resolution = "random" if mode == "random" else "random (imagenet unavailable)"
    return backbone, resolution


def _assemble(spec: ClassifierSpec, backbone: keras.Model, seed: int) -> keras.Model:
    backbone.trainable = not spec.freeze_backbone
    if spec.freeze_backbone and spec.unfreeze_top_layers > 0:
        for layer in backbone.layers[-spec.unfreeze_top_layers:]:
            layer.trainable = True

    inputs = keras.Input(shape=spec.input_shape, name="image")
    x = backbone(inputs, training=False)
    x = keras.layers.Flatten(name="flatten")(x)
    x = keras.layers.Dense(
        spec.dense_units,
        activation=spec.head_activation,
        kernel_initializer=keras.initializers.GlorotUniform(seed=seed + 1),
        bias_initializer="zeros",
        name="head_dense",
    )(x)
    x = keras.layers.Dropout(spec.dropout_rate, seed=seed + 2, name="head_dropout")(x)
    # the logits stay addressable so training can attach the loss before the
    # softmax (exact gradients; no probability clipping)
    logits = keras.layers.Dense(
        spec.output_classes,
        kernel_initializer=keras.initializers.GlorotUniform(seed=seed + 3),
        bias_initializer="zeros",
        name="head_logits",
    )(x)
    outputs = keras.layers.Softmax(name="head_output")(logits)
    return keras.Model(inputs, outputs, name="classifier")


def build(spec: ClassifierSpec, seed: int = 0, allow_fetch: bool = True) -> TrainedClassifier:
    """Construct the untrained classifier with seeded initialization."""
    _ensure_determinism()
    keras.utils.set_random_seed(seed)
    backbone, resolution = _resolve_backbone(spec, seed, allow_fetch)
    model = _assemble(spec, backbone, seed)
    return TrainedClassifier(
        spec=spec,
        model=model,
        backbone=backbone,
        history=TrainingHistory(),
        preprocessing=PreprocessingContract(
            target_size=tuple(spec.input_shape[:2]), rescale_factor=1.0 / 255.0
        ),
        weights_resolution=resolution,
    )


def backbone_digest(classifier: TrainedClassifier) -> str:
    """Hash of every backbone parameter, including batch-norm moving statistics."""
    h = hashlib.sha256()
    for w in classifier.backbone.weights:
        h.update(np.ascontiguousarray(w.numpy()).tobytes())
    return h.hexdigest()


def head_trainable_parameters(classifier: TrainedClassifier) -> int:
    return int(
        sum(int(np.prod(w.shape)) for w in classifier.model.trainable_weights)
        - sum(int(np.prod(w.shape)) for w in classifier.backbone.trainable_weights)
    )


def _make_optimizer(config: TrainingConfig) -> keras.optimizers.Optimizer:
    if config.optimizer == "adam":
        return keras.optimizers.Adam(learning_rate=config.learning_rate)
    return keras.optimizers.SGD(learning_rate=config.learning_rate)


def _validation_tensors(
    manifest: DatasetManifest, config: aug.AugmentConfig, batch_size: int
) -> tuple[np.ndarray, np.ndarray]:
    batches = list(aug.batch_stream(manifest, "validation", config, batch_size, epochs=1))
    return (
        np.concatenate([b.pixels for b in batches]),
        np.concatenate([b.labels for b in batches]),
    )


def _evaluate_split(
    classifier: TrainedClassifier, pixels: np.ndarray, labels: np.ndarray
) -> tuple[float, float, float, float]:
    probs = predict_batch(classifier, pixels)
    eps = 1e-7
    losses = -np.sum(labels * np.log(np.clip(probs, eps, 1.0)), axis=1)
    truth = np.argmax(labels, axis=1)
    matrix = met.confusion(truth, np.argmax(probs, axis=1))
    summary = met.precision_recall(matrix)
    return (
        float(losses.mean()),
        met.accuracy(matrix),
        summary.precision_macro,
        summary.recall_macro,
    )


def train(
    classifier: TrainedClassifier,
    manifest: DatasetManifest,
    augment_config: aug.AugmentConfig,
    training_config: TrainingConfig,
) -> TrainedClassifier:
    """Run the training loop, appending one history record per epoch.

    Training batches come from the augmenting stream; validation is evaluated
    every epoch on the rescale-only stream. Validation precision/recall are
    macro-averaged over the defined classes. Raises
    :class:`TrainingDivergedError` as soon as a batch loss is non-finite.
    """
    if tuple(augment_config.target_size) != tuple(classifier.spec.input_shape[:2]):
        raise SpecError(
            f"augment target_size {augment_config.target_size} does not match "
            f"model input {classifier.spec.input_shape[:2]}"
        )
    if training_config.epochs == 0:
        return classifier

    _ensure_determinism()
    keras.utils.set_random_seed(training_config.seed)
    classifier.preprocessing = PreprocessingContract(
        target_size=tuple(augment_config.target_size),
        rescale_factor=augment_config.rescale_factor,
    )

    model = classifier.model
    logits_model = keras.Model(model.input, model.get_layer("head_logits").output)
    optimizer = _make_optimizer(training_config)

    # deliberately eager: each tf.function-traced training graph pins ~0.4 GB
    # that outlives the model, so repeated train() calls (tuner trials, test
    # suites) would exhaust memory; conv-bound CPU steps lose little here
    def train_step(x, y):
        with tf.GradientTape() as tape:
            logits = logits_model(x, training=True)
            loss = tf.reduce_mean(
                tf.nn.softmax_cross_entropy_with_logits(labels=y, logits=logits)
            )
        grads = tape.gradient(loss, model.trainable_weights)
        optimizer.apply_gradients(zip(grads, model.trainable_weights))
        hits = tf.reduce_sum(
            tf.cast(tf.equal(tf.argmax(logits, axis=1), tf.argmax(y, axis=1)), tf.int64)
        )
        return loss, hits

    val_pixels, val_labels = _validation_tensors(
        manifest, augment_config, training_config.batch_size
    )

    stream = aug.batch_stream(
        manifest, "train", augment_config, training_config.batch_size, training_config.epochs
    )
    epoch = 0
    batch_in_epoch = 0
    loss_sum = 0.0
    hit_sum = 0
    sample_sum = 0

    def finish_epoch():
        val_loss, val_acc, val_prec, val_rec = _evaluate_split(classifier, val_pixels, val_labels)
        classifier.history.records.append(
            EpochRecord(
                train_loss=loss_sum / max(sample_sum, 1),
                train_accuracy=hit_sum / max(sample_sum, 1),
                val_loss=val_loss,
                val_accuracy=val_acc,
                val_precision=val_prec,
                val_recall=val_rec,
            )
        )

    for batch in stream:
        if batch.epoch_index != epoch:
            finish_epoch()
            epoch = batch.epoch_index
            batch_in_epoch = 0
            loss_sum = 0.0
            hit_sum = 0
            sample_sum = 0
        loss, hits = train_step(
            tf.convert_to_tensor(batch.pixels), tf.convert_to_tensor(batch.labels)
        )
        loss_value = float(loss.numpy())
        if not np.isfinite(loss_value):
            raise TrainingDivergedError(
                f"non-finite loss at epoch {epoch}, batch {batch_in_epoch}"
            )
        n = batch.pixels.shape[0]
        loss_sum += loss_value * n
        hit_sum += int(hits.numpy())
        sample_sum += n
        batch_in_epoch += 1
    finish_epoch()
    return classifier


def predict_batch(classifier: TrainedClassifier, rasters: np.ndarray) -> np.ndarray:
    """Class probabilities for preprocessed rasters; rows sum to 1 within 1e-6."""
    rasters = np.asarray(rasters, dtype=np.float32)
    expected = (None,) + tuple(classifier.spec.input_shape)
    if rasters.ndim != 4 or rasters.shape[1:] != tuple(classifier.spec.input_shape):
        raise ShapeError(f"expected rasters of shape {expected}, got {rasters.shape}")
    if rasters.shape[0] == 0:
        return np.zeros((0, classifier.spec.output_classes), dtype=np.float32)
    chunks = []
    for start in range(0, rasters.shape[0], 64):
        out = classifier.model(rasters[start:start + 64], training=False)
        chunks.append(np.asarray(out))
    return np.concatenate(chunks)


def cross_entropy_from_logits(logits: np.ndarray, target_onehot: np.ndarray) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy loss and its analytic gradient w.r.t. the logits.

    Float64 reference used by the finite-difference gradient checks; the
    gradient is the familiar (softmax(logits) - target).
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(target_onehot, dtype=np.float64)
    shifted = z - z.max()
    p = np.exp(shifted) / np.exp(shifted).sum()
    loss = float(-np.sum(y * np.log(p)))
    return loss, p - y


def _spec_to_config(classifier: TrainedClassifier) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    spec = classifier.spec
    cp["classifier"] = {
        "input_shape": "x".join(str(v) for v in spec.input_shape),
        "backbone": spec.backbone,
        "freeze_backbone": str(int(spec.freeze_backbone)),
        "dense_units": str(spec.dense_units),
        "dropout_rate": repr(spec.dropout_rate),
        "head_activation": spec.head_activation,
        "output_classes": str(spec.output_classes),
        "backbone_weights": spec.backbone_weights,
        "unfreeze_top_layers": str(spec.unfreeze_top_layers),
    }
    cp["preprocess"] = {
        "target_size": "x".join(str(v) for v in classifier.preprocessing.target_size),
        "rescale_factor": repr(classifier.preprocessing.rescale_factor),
    }
    return cp


def _spec_from_config(cp: configparser.ConfigParser) -> tuple[ClassifierSpec, PreprocessingContract]:
    c = cp["classifier"]
    spec = ClassifierSpec(
        input_shape=tuple(int(v) for v in c["input_shape"].split("x")),
        backbone=c["backbone"],
        freeze_backbone=bool(int(c["freeze_backbone"])),
        dense_units=int(c["dense_units"]),
        dropout_rate=float(c["dropout_rate"]),
        head_activation=c["head_activation"],
        output_classes=int(c["output_classes"]),
        backbone_weights=c["backbone_weights"],
        unfreeze_top_layers=int(c["unfreeze_top_layers"]),
    )
    p = cp["preprocess"]
    contract = PreprocessingContract(
        target_size=tuple(int(v) for v in p["target_size"].split("x")),
        rescale_factor=float(p["rescale_factor"]),
    )
    return spec, contract


def save(classifier: TrainedClassifier, path: str | Path) -> str:
    """Write a checkpoint directory; returns the version string.

    Layout: ``weights.npz`` (positional weight store), ``spec.cfg`` (classifier
    spec and preprocessing contract), ``history.tsv``, and ``VERSION``
    (format number, version string, weight digest). Optimizer state is not
    part of a checkpoint.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)

    weights = classifier.model.get_weights()
    np.savez(out / "weights.npz", **{f"w{i}": w for i, w in enumerate(weights)})
    digest = hashlib.sha256()
    for w in weights:
        digest.update(np.ascontiguousarray(w).tobytes())
    version = f"busclass-0.1.0+{digest.hexdigest()[:12]}"

    with open(out / "spec.cfg", "w", encoding="utf-8") as fh:
        _spec_to_config(classifier).write(fh)
    (out / "history.tsv").write_text(classifier.history.to_tsv(), encoding="utf-8")
    (out / "VERSION").write_text(
        f"format={CHECKPOINT_FORMAT}\nversion={version}\n"
        f"weights_sha256={digest.hexdigest()}\n"
        f"weights_resolution={classifier.weights_resolution}\n",
        encoding="utf-8",
    )
    classifier.version = version
    return version


def load(path: str | Path) -> TrainedClassifier:
    """Rebuild a classifier from a checkpoint directory, bit-exactly."""
    root = Path(path)
    for name in ("weights.npz", "spec.cfg", "history.tsv", "VERSION"):
        if not (root / name).is_file():
            raise CheckpointError(f"checkpoint {root} is missing {name}")

    meta = {}
    for line in (root / "VERSION").read_text(encoding="utf-8").splitlines():
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    if meta.get("format") != str(CHECKPOINT_FORMAT):
        raise CheckpointError(
            f"checkpoint format {meta.get('format')!r} unsupported "
            f"(expected {CHECKPOINT_FORMAT}); version={meta.get('version')!r}"
        )

    cp = configparser.ConfigParser()
    try:
        cp.read_string((root / "spec.cfg").read_text(encoding="utf-8"))
        spec, contract = _spec_from_config(cp)
    except (configparser.Error, KeyError, ValueError) as exc:
        raise CheckpointError(f"corrupt spec.cfg in {root}: {exc}") from exc

    _ensure_determinism()
    keras.utils.set_random_seed(0)
    backbone = _new_backbone(spec.input_shape, None)
    model = _assemble(spec, backbone, seed=0)

    try:
        with np.load(root / "weights.npz") as store:
            weights = [store[f"w{i}"] for i in range(len(store.files))]
        model.set_weights(weights)
    except (OSError, KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"corrupt weight store in {root}: {exc}") from exc

    digest = hashlib.sha256()
    for w in model.get_weights():
        digest.update(np.ascontiguousarray(w).tobytes())
    if digest.hexdigest() != meta.get("weights_sha256"):
        raise CheckpointError(f"weight digest mismatch in {root}")

    history = TrainingHistory.from_tsv((root / "history.tsv").read_text(encoding="utf-8"))
    return TrainedClassifier(
        spec=spec,
        model=model,
        backbone=backbone,
        history=history,
        preprocessing=contract,
        version=meta.get("version", "unknown"),
        weights_resolution=meta.get("weights_resolution", "unknown"),
    )
