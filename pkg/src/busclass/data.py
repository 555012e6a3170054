"""Dataset ingestion, stratified splitting, and training-set oversampling.

The unit of work is the :class:`DatasetManifest`: an immutable record of every
image file found under a class-labeled directory tree, its content digest, and
its train/validation/test assignment. All operations return new manifests.
"""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

SPLITS = ("train", "validation", "test")
UNASSIGNED = "unassigned"

_IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg"}
_MASK_STEM = re.compile(r"_mask(_\d+)?$", re.IGNORECASE)


class ClassLabel(enum.IntEnum):
    """Fixed label encoding: 0 healthy tissue, 1 non-invasive growth, 2 invasive growth."""

    NORMAL = 0
    BENIGN = 1
    MALIGNANT = 2

    @property
    def label_name(self) -> str:
        return self.name.lower()

    @classmethod
    def from_name(cls, name: str) -> "ClassLabel":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown class label {name!r}") from None


CLASS_NAMES = tuple(label.label_name for label in ClassLabel)


class IngestError(Exception):
    """Dataset root is missing or holds none of the expected class directories."""


class ManifestParseError(Exception):
    """A manifest file could not be parsed; message carries line context."""


class SplitStateError(Exception):
    """An operation requiring assigned splits was called before splitting."""


class StratificationError(Exception):
    """A class has too few records to stratify across the requested splits."""


@dataclass(frozen=True)
class ImageRecord:
    path: str
    label: ClassLabel
    split: str = UNASSIGNED
    is_mask: bool = False
    byte_digest: str = ""


@dataclass(frozen=True)
class SplitSpec:
    """Ratios and seed for a train/validation/test partition."""

    ratios: tuple[float, float, float] = (0.64, 0.16, 0.20)
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if len(self.ratios) != 3:
            raise ValueError("ratios must have exactly three entries")
        if any(not (0.0 < r < 1.0) for r in self.ratios):
            raise ValueError(f"ratios must each lie in (0, 1), got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got sum {sum(self.ratios)!r}")


@dataclass(frozen=True)
class DatasetManifest:
    """Immutable list of labeled image records plus split bookkeeping."""

    records: tuple[ImageRecord, ...]
    split_seed: int = 0
    split_ratios: tuple[float, float, float] = (0.0, 0.0, 0.0)
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def class_counts(self) -> dict[ClassLabel, int]:
        counts = {label: 0 for label in ClassLabel}
        for rec in self.records:
            if not rec.is_mask:
                counts[rec.label] += 1
        return counts

    def classifiable(self) -> tuple[ImageRecord, ...]:
        return tuple(r for r in self.records if not r.is_mask)

    def split_records(self, split: str) -> tuple[ImageRecord, ...]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return tuple(r for r in self.records if not r.is_mask and r.split == split)

    def split_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in SPLITS + (UNASSIGNED,)}
        for rec in self.classifiable():
            counts[rec.split] += 1
        return counts

    def is_split(self) -> bool:
        return all(r.split != UNASSIGNED for r in self.classifiable())


def _digest_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def ingest(root: str | Path) -> DatasetManifest:
    """Scan ``root/{normal,benign,malignant}/`` and build an unsplit manifest.

    Files whose stem ends in ``_mask`` (optionally with a numeric suffix such
    as ``_mask_1``) are kept as mask records and never enter any split.
    Unreadable files are skipped and reported in ``manifest.warnings``.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"dataset root does not exist: {root}")
    class_dirs = {label: root / label.label_name for label in ClassLabel}
    if not any(d.is_dir() for d in class_dirs.values()):
        missing = ", ".join(str(d) for d in class_dirs.values())
        raise IngestError(f"no class directories found; expected any of: {missing}")

    records: list[ImageRecord] = []
    warnings: list[str] = []
    for label in ClassLabel:
        class_dir = class_dirs[label]
        if not class_dir.is_dir():
            warnings.append(f"class directory missing: {class_dir}")
            continue
        for path in sorted(class_dir.iterdir()):
            if not path.is_file() or path.suffix.lower() not in _IMAGE_EXTENSIONS:
                continue
            try:
                digest = _digest_file(path)
            except OSError as exc:
                warnings.append(f"skipped unreadable file {path}: {exc}")
                continue
            records.append(
                ImageRecord(
                    path=str(path),
                    label=label,
                    split=UNASSIGNED,
                    is_mask=bool(_MASK_STEM.search(path.stem)),
                    byte_digest=digest,
                )
            )
    return DatasetManifest(records=tuple(records), warnings=tuple(warnings))


def _largest_remainder_sizes(total: int, ratios: tuple[float, float, float]) -> tuple[int, ...]:
    """Apportion ``total`` into integer split sizes by the largest-remainder rule.

    Guarantees ``|size_i - ratio_i * total| < 1`` for every split. Ties in the
    remainders are broken toward the earlier split (train before validation
    before test), keeping the apportionment deterministic.
    """
    quotas = [r * total for r in ratios]
    sizes = [int(np.floor(q + 1e-9)) for q in quotas]
    leftover = total - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:leftover]:
        sizes[i] += 1
    return tuple(sizes)


def _rng_for(seed: int, *parts) -> np.random.Generator:
    material = "|".join(str(p) for p in (seed,) + parts)
    digest = hashlib.sha256(material.encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def split(manifest: DatasetManifest, spec: SplitSpec) -> DatasetManifest:
    """Assign every classifiable record to train/validation/test.

    Split sizes depend only on (ratios, class counts); which record lands in
    which split depends only on the seed. Stratified mode partitions each
    class by the same ratios. Mask records stay unassigned.
    """
    classifiable = manifest.classifiable()
    if not classifiable:
        raise StratificationError("manifest has no classifiable records")

    if spec.stratified:
        groups = [[r for r in classifiable if r.label == label] for label in ClassLabel]
        for label, group in zip(ClassLabel, groups):
            if not group:
                raise StratificationError(f"class {label.label_name} has no records")
            if len(group) < len(SPLITS):
                raise StratificationError(
                    f"class {label.label_name} has {len(group)} records, "
                    f"fewer than the {len(SPLITS)} splits"
                )
    else:
        groups = [list(classifiable)]

    assignment: dict[str, str] = {}
    for gi, group in enumerate(groups):
        ordered = sorted(group, key=lambda r: r.path)
        perm = _rng_for(spec.seed, "split", gi).permutation(len(ordered))
        sizes = _largest_remainder_sizes(len(ordered), spec.ratios)
        bounds = np.cumsum((0,) + sizes)
        for si, name in enumerate(SPLITS):
            for k in perm[bounds[si]:bounds[si + 1]]:
                assignment[ordered[k].path] = name

    new_records = tuple(
        replace(r, split=assignment[r.path]) if not r.is_mask else r
        for r in manifest.records
    )
    return DatasetManifest(
        records=new_records,
        split_seed=spec.seed,
        split_ratios=tuple(spec.ratios),
        warnings=manifest.warnings,
    )


def oversample_train(manifest: DatasetManifest, seed: int) -> DatasetManifest:
    """Duplicate minority-class training records until all classes match the majority.

    Sampling is with replacement and seeded; validation and test splits are
    untouched. Duplicates are appended after the original records.
    """
    if not manifest.is_split():
        raise SplitStateError("oversample_train called before split assignment")

    train_by_class = {
        label: [r for r in manifest.records if not r.is_mask and r.split == "train" and r.label == label]
        for label in ClassLabel
    }
    target = max(len(v) for v in train_by_class.values())

    extra: list[ImageRecord] = []
    for label in ClassLabel:
        pool = train_by_class[label]
        need = target - len(pool)
        if need <= 0 or not pool:
            continue
        rng = _rng_for(seed, "oversample", int(label))
        for k in rng.integers(0, len(pool), size=need):
            extra.append(pool[int(k)])
    if not extra:
        return manifest
    return replace(manifest, records=manifest.records + tuple(extra))


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write the manifest as UTF-8 text: a header line, then one tab-separated record per line."""
    path = Path(path)
    ratios = ",".join(repr(float(r)) for r in manifest.split_ratios)
    lines = [f"#seed={manifest.split_seed} ratios={ratios}"]
    for r in manifest.records:
        lines.append(
            "\t".join((r.path, r.label.label_name, r.split, "1" if r.is_mask else "0", r.byte_digest))
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse a manifest file written by :func:`save_manifest`."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestParseError(f"cannot read manifest {path}: {exc}") from exc

    lines = text.splitlines()
    if not lines or not lines[0].startswith("#seed="):
        raise ManifestParseError(f"{path}:1: missing '#seed=... ratios=...' header")
    header = lines[0]
    try:
        seed_part, ratio_part = header[1:].split(" ratios=")
        seed = int(seed_part.split("=", 1)[1])
        ratios = tuple(float(x) for x in ratio_part.split(","))
        if len(ratios) != 3:
            raise ValueError("expected three ratios")
    except (ValueError, IndexError) as exc:
        raise ManifestParseError(f"{path}:1: malformed header {header!r}: {exc}") from exc

    records = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise ManifestParseError(f"{path}:{ln}: expected 5 tab-separated fields, got {len(fields)}")
        rec_path, label_name, split_name, mask_flag, digest = fields
        try:
            label = ClassLabel.from_name(label_name)
        except ValueError as exc:
            raise ManifestParseError(f"{path}:{ln}: {exc}") from exc
        if split_name not in SPLITS + (UNASSIGNED,):
            raise ManifestParseError(f"{path}:{ln}: unknown split {split_name!r}")
        if mask_flag not in ("0", "1"):
            raise ManifestParseError(f"{path}:{ln}: mask flag must be 0 or 1, got {mask_flag!r}")
        records.append(
            ImageRecord(
                path=rec_path,
                label=label,
                split=split_name,
                is_mask=mask_flag == "1",
                byte_digest=digest,
            )
        )
    return DatasetManifest(records=tuple(records), split_seed=seed, split_ratios=ratios)
