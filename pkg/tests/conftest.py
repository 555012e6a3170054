import os

import numpy as np
import pytest
from PIL import Image

from busclass import data as dat

os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "3")

_OUTCOME = {"passed": "PASS", "failed": "FAIL", "error": "FAIL", "skipped": "SKIP"}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for outcome in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            if getattr(rep, "when", "call") not in ("call", "setup"):
                continue
            lines.append((nodeid.split("::")[-1], _OUTCOME[outcome]))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, outcome in sorted(set(lines)):
            terminalreporter.write_line(f"ACCEPTANCE {name}: {outcome}")


def write_png(path, array, mode=None):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array, mode=mode).save(path)
    return path


def make_tree(root, counts, mask_counts=None, size=(24, 24), seed=0):
    """Write a dataset tree with ``counts[class_name]`` images (+ optional masks)."""
    rng = np.random.default_rng(seed)
    mask_counts = mask_counts or {}
    for name, n in counts.items():
        for i in range(n):
            img = rng.integers(0, 256, size=size, dtype=np.uint8)
            write_png(root / name / f"{name} ({i + 1}).png", img, mode="L")
        for i in range(mask_counts.get(name, 0)):
            mask = (rng.random(size) > 0.5).astype(np.uint8) * 255
            write_png(root / name / f"{name} ({i + 1})_mask.png", mask, mode="L")
    return root


def synthetic_manifest(per_class, split_assign=None):
    """Manifest with fabricated records (no files on disk); per_class maps label->count."""
    records = []
    k = 0
    for label, n in per_class.items():
        for i in range(n):
            split_name = split_assign(label, i) if split_assign else dat.UNASSIGNED
            records.append(
                dat.ImageRecord(
                    path=f"/data/{label.label_name}/{i}.png",
                    label=label,
                    split=split_name,
                    is_mask=False,
                    byte_digest=f"{int(label)}-{i:04d}-{k:06d}",
                )
            )
            k += 1
    return dat.DatasetManifest(records=tuple(records))


@pytest.fixture(scope="session")
def busi_like_manifest():
    """780 fabricated records with the real per-class distribution (benign 437, malignant 210, normal 133)."""
    return synthetic_manifest(
        {dat.ClassLabel.BENIGN: 437, dat.ClassLabel.MALIGNANT: 210, dat.ClassLabel.NORMAL: 133}
    )


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    """300-image synthetic texture dataset (100 per class)."""
    from busclass import synthetic as syn

    root = tmp_path_factory.mktemp("fixture")
    syn.generate_fixture(root, per_class=100, seed=7)
    return root


@pytest.fixture(scope="session")
def fixture_manifest(fixture_root):
    manifest = dat.ingest(fixture_root)
    return dat.split(manifest, dat.SplitSpec(ratios=(0.64, 0.16, 0.20), seed=11))


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    """10-image texture set (4/3/3) for overfit and tuner smoke tests."""
    from busclass import synthetic as syn

    root = tmp_path_factory.mktemp("toy")
    for name, n in (("normal", 4), ("benign", 3), ("malignant", 3)):
        class_index = dat.CLASS_NAMES.index(name)
        rng = np.random.default_rng(100 + class_index)
        class_dir = root / name
        class_dir.mkdir(parents=True)
        for i in range(n):
            img = syn.texture_image(class_index, rng, (170, 170))
            Image.fromarray(img, mode="L").save(class_dir / f"{name} ({i + 1}).png")
    return root


@pytest.fixture(scope="session")
def toy_manifest(toy_root):
    manifest = dat.ingest(toy_root)
    # every class present in every split: 10 images at (0.4, 0.3, 0.3)
    return dat.split(manifest, dat.SplitSpec(ratios=(0.4, 0.3, 0.3), seed=5))


@pytest.fixture(scope="session")
def overfit_manifest(toy_root):
    """Same 10 images with 9 of them in train, for the memorization smoke test."""
    manifest = dat.ingest(toy_root)
    return dat.split(manifest, dat.SplitSpec(ratios=(0.8, 0.1, 0.1), seed=5))


@pytest.fixture(scope="session")
def toy_trained(overfit_manifest):
    """Overfit-trained toy model shared across model/service/error-analysis tests."""
    from busclass import augment as aug
    from busclass import model as mod

    classifier = mod.build(mod.ClassifierSpec(), seed=0)
    config = aug.AugmentConfig(seed=0)
    training = mod.TrainingConfig(epochs=30, batch_size=10, learning_rate=1e-3, seed=0)
    mod.train(classifier, overfit_manifest, config, training)
    return classifier


@pytest.fixture(scope="session")
def toy_checkpoint(toy_trained, tmp_path_factory):
    from busclass import model as mod

    path = tmp_path_factory.mktemp("ckpt") / "toy"
    mod.save(toy_trained, path)
    return path
