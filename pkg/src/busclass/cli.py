"""Command-line entry point for the full pipeline.

Subcommands: ingest, split, train, tune, evaluate, intensity, errors, serve,
make-fixture. A run config file (INI) can preload any flag; explicit flags
win over file values. Heavy TensorFlow imports happen only inside the
subcommands that need them, so dataset-only commands stay fast.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import sys
import time
from pathlib import Path

from . import data as dat
from .augment import AugmentConfig

# dest -> (config file section, key, parser)
_CONFIG_MAP = {
    "root": ("paths", "dataset_root", str),
    "manifest": ("paths", "manifest", str),
    "checkpoint": ("paths", "checkpoint", str),
    "out": ("paths", "out", str),
    "ratios": ("split", "ratios", str),
    "seed": ("split", "seed", int),
    "rotation_max": ("augment", "rotation_max_deg", float),
    "shift": ("augment", "shift_fraction", float),
    "shear": ("augment", "shear_fraction", float),
    "fill_mode": ("augment", "fill_mode", str),
    "size": ("augment", "target_size", str),
    "augment_seed": ("augment", "seed", int),
    "dense_units": ("classifier", "dense_units", int),
    "dropout": ("classifier", "dropout_rate", float),
    "activation": ("classifier", "head_activation", str),
    "backbone_weights": ("classifier", "backbone_weights", str),
    "unfreeze_top_layers": ("classifier", "unfreeze_top_layers", int),
    "epochs": ("training", "epochs", int),
    "batch_size": ("training", "batch_size", int),
    "learning_rate": ("training", "learning_rate", float),
    "optimizer": ("training", "optimizer", str),
    "train_seed": ("training", "seed", int),
}


def _parse_ratios(text: str) -> tuple[float, float, float]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated ratios, got {text!r}")
    return tuple(parts)


def _parse_size(text: str) -> tuple[int, int]:
    h, _, w = text.partition("x")
    return (int(h), int(w))


def _augment_config(args) -> AugmentConfig:
    return AugmentConfig(
        rotation_max_deg=args.rotation_max,
        shift_fraction=args.shift,
        shear_fraction=args.shear,
        horizontal_flip=not args.no_flip,
        fill_mode=args.fill_mode,
        target_size=_parse_size(args.size),
        seed=args.augment_seed,
    )


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _write_run_config(args, out_dir: Path, manifest_path: Path) -> None:
    cp = configparser.ConfigParser()
    sections: dict[str, dict[str, str]] = {}
    for dest, (section, key, _) in _CONFIG_MAP.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        sections.setdefault(section, {})[key] = str(value)
    sections.setdefault("paths", {})["manifest_digest"] = _file_digest(manifest_path)
    for name, kv in sections.items():
        cp[name] = kv
    with open(out_dir / "run.cfg", "w", encoding="utf-8") as fh:
        cp.write(fh)


def cmd_ingest(args) -> int:
    manifest = dat.ingest(args.root)
    for warning in manifest.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    dat.save_manifest(manifest, args.manifest)
    counts = manifest.class_counts
    masks = sum(1 for r in manifest.records if r.is_mask)
    print(
        f"ingested {len(manifest.records)} files -> {args.manifest} "
        f"(classifiable {len(manifest.classifiable())}, masks {masks}; "
        + ", ".join(f"{k.label_name}={v}" for k, v in counts.items())
        + ")"
    )
    return 0


def cmd_split(args) -> int:
    manifest = dat.load_manifest(args.manifest)
    spec = dat.SplitSpec(
        ratios=_parse_ratios(args.ratios), seed=args.seed, stratified=not args.no_stratify
    )
    manifest = dat.split(manifest, spec)
    if args.oversample:
        manifest = dat.oversample_train(manifest, seed=args.oversample_seed)
    out = args.out or args.manifest
    dat.save_manifest(manifest, out)
    sizes = manifest.split_counts()
    print(
        f"split -> {out} (train={sizes['train']}, validation={sizes['validation']}, "
        f"test={sizes['test']})"
    )
    return 0


def cmd_train(args) -> int:
    from . import model as mod

    manifest = dat.load_manifest(args.manifest)
    augment_config = _augment_config(args)
    spec = mod.ClassifierSpec(
        input_shape=_parse_size(args.size) + (3,),
        dense_units=args.dense_units,
        dropout_rate=args.dropout,
        head_activation=args.activation,
        backbone_weights=args.backbone_weights,
        unfreeze_top_layers=args.unfreeze_top_layers,
    )
    training = mod.TrainingConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        optimizer=args.optimizer,
        seed=args.train_seed,
    )
    classifier = mod.build(spec, seed=args.train_seed)
    mod.train(classifier, manifest, augment_config, training)
    out = Path(args.out)
    version = mod.save(classifier, out)
    _write_run_config(args, out, Path(args.manifest))
    final = classifier.history.records[-1] if classifier.history.records else None
    summary = (
        f"val_accuracy={final.val_accuracy:.4f} val_loss={final.val_loss:.4f}"
        if final
        else "no epochs run"
    )
    print(f"trained {version} -> {out} ({summary})")
    return 0


def cmd_tune(args) -> int:
    from . import model as mod  # noqa: F401  (surfaces backbone/TF errors early)
    from . import tune as tun

    manifest = dat.load_manifest(args.manifest)
    augment_config = _augment_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ledger = out / "trials.tsv"
    best, results = tun.search(
        tun.SearchSpace(),
        budget=args.budget,
        trial_epochs=args.trial_epochs,
        manifest=manifest,
        augment_config=augment_config,
        seed=args.seed,
        batch_size=args.batch_size,
        ledger_path=ledger,
    )
    cp = configparser.ConfigParser()
    cp["classifier"] = {
        "dense_units": str(best.sample.dense_units),
        "dropout_rate": repr(best.sample.dropout),
        "head_activation": best.sample.activation,
    }
    cp["training"] = {"learning_rate": repr(best.sample.learning_rate)}
    with open(out / "best.cfg", "w", encoding="utf-8") as fh:
        cp.write(fh)
    print(
        f"tuned {len(results)} trials -> {ledger} "
        f"(best objective={best.objective:.4f}, dropout={best.sample.dropout}, "
        f"lr={best.sample.learning_rate:.2e}, units={best.sample.dense_units}, "
        f"activation={best.sample.activation})"
    )
    return 0


def _evaluation_inputs(args):
    import numpy as np

    from . import model as mod
    from .augment import batch_stream

    classifier = mod.load(args.checkpoint)
    manifest = dat.load_manifest(args.manifest)
    config = AugmentConfig(
        target_size=classifier.preprocessing.target_size,
        rescale_factor=classifier.preprocessing.rescale_factor,
    )
    pixels, labels = [], []
    for batch in batch_stream(manifest, args.split, config, batch_size=32, epochs=1):
        pixels.append(batch.pixels)
        labels.append(batch.labels)
    probs = mod.predict_batch(classifier, np.concatenate(pixels))
    truth = np.argmax(np.concatenate(labels), axis=1)
    return classifier, manifest, probs, truth


def cmd_evaluate(args) -> int:
    from . import metrics as met

    _, _, probs, truth = _evaluation_inputs(args)
    report = met.evaluate(probs, truth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "evaluation.txt").write_text(met.report_to_text(report), encoding="utf-8")
    for c in range(met.N_CLASSES):
        if report.roc_curves[c]:
            (out / f"roc_class{c}.csv").write_text(
                met.curve_to_csv(report.roc_curves[c]), encoding="utf-8"
            )
        if report.pr_curves[c]:
            (out / f"pr_class{c}.csv").write_text(
                met.curve_to_csv(report.pr_curves[c]), encoding="utf-8"
            )
    print(
        f"evaluated {len(truth)} samples -> {out} "
        f"(accuracy={report.accuracy:.4f}, mcc={report.mcc:.4f})"
    )
    return 0


def cmd_intensity(args) -> int:
    from . import intensity as inten

    manifest = dat.load_manifest(args.manifest)
    rep = inten.report(manifest)
    out = Path(args.out)
    inten.save_report(rep, out)
    print(f"intensity report -> {out} (median ordering: {'<'.join(rep.median_ordering)})")
    return 0


def cmd_errors(args) -> int:
    from . import erroranalysis as err
    from . import model as mod

    classifier = mod.load(args.checkpoint)
    manifest = dat.load_manifest(args.manifest)
    report = err.analyze(classifier, manifest, args.split)
    out = Path(args.out)
    err.export_gallery(report, out)
    print(
        f"error analysis -> {out} ({len(report.entries)} misclassified "
        f"of {report.sample_count} in {args.split})"
    )
    return 0


def cmd_serve(args) -> int:
    from . import service as svc

    config = svc.ServiceConfig(
        host=args.host,
        port=args.port,
        checkpoint=args.checkpoint,
        max_upload_bytes=args.max_upload_bytes,
    )
    svc.serve(config)
    return 0


def cmd_make_fixture(args) -> int:
    from . import synthetic as syn

    syn.generate_fixture(args.root, per_class=args.per_class, seed=args.seed)
    print(f"fixture -> {args.root} ({args.per_class} images per class)")
    return 0


def _add_augment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rotation-max", type=float, default=20.0, help="max rotation in degrees")
    p.add_argument("--shift", type=float, default=0.2, help="max shift as a fraction of each dimension")
    p.add_argument("--shear", type=float, default=0.2, help="max shear coefficient")
    p.add_argument("--no-flip", action="store_true", help="disable horizontal flips")
    p.add_argument("--fill-mode", default="nearest", choices=["nearest", "reflect", "constant"])
    p.add_argument("--size", default="150x150", help="target size HxW")
    p.add_argument("--augment-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="busclass",
        description="Breast ultrasound tumor classification pipeline",
    )
    parser.add_argument("--config", help="run config file (INI); flags override its values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="scan a dataset root into a manifest")
    p.add_argument("--root", required=True)
    p.add_argument("--manifest", required=True, help="output manifest path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="assign train/validation/test splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratios", default="0.64,0.16,0.20")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-stratify", action="store_true")
    p.add_argument("--oversample", action="store_true", help="oversample the train split to balance")
    p.add_argument("--oversample-seed", type=int, default=0)
    p.add_argument("--out", help="output manifest path (default: overwrite input)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the classifier and write a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
    p.add_argument("--train-seed", type=int, default=0)
    p.add_argument("--dense-units", type=int, default=1024)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--activation", default="relu", choices=["relu", "tanh"])
    p.add_argument("--backbone-weights", default="auto", choices=["auto", "imagenet", "random"])
    p.add_argument("--unfreeze-top-layers", type=int, default=0)
    _add_augment_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="random-search hyperparameters")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="directory for the trial ledger and best config")
    p.add_argument("--budget", type=int, default=10)
    p.add_argument("--trial-epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=32)
    _add_augment_flags(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("evaluate", help="run the evaluation engine on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "validation", "test"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("intensity", help="per-class image intensity report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_intensity)

    p = sub.add_parser("errors", help="misclassification report and gallery")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "validation", "test"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_errors)

    p = sub.add_parser("serve", help="serve predictions over HTTP")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--max-upload-bytes", type=int, default=10 * 1024 * 1024)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("make-fixture", help="generate a synthetic texture dataset")
    p.add_argument("--root", required=True)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_fixture)

    return parser


def _apply_config_file(argv: list[str], parser: argparse.ArgumentParser) -> None:
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return
    cp = configparser.ConfigParser()
    read = cp.read(known.config)
    if not read:
        raise FileNotFoundError(f"config file not found: {known.config}")
    defaults = {}
    for dest, (section, key, cast) in _CONFIG_MAP.items():
        if cp.has_option(section, key):
            defaults[dest] = cast(cp.get(section, key))
    for action in parser._subparsers._group_actions[0].choices.values():  # noqa: SLF001
        action.set_defaults(**{k: v for k, v in defaults.items()})


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(argv, parser)
    except (FileNotFoundError, configparser.Error, ValueError) as exc:
        print(f"error: stage=config: {exc}", file=sys.stderr)
        return 1
    args = parser.parse_args(argv)
    started = time.monotonic()
    try:
        code = args.func(args)
    except KeyboardInterrupt:
        print(f"error: stage={args.command}: interrupted", file=sys.stderr)
        return 1
    except Exception as exc:  # one-line, machine-parsable stage error
        print(f"error: stage={args.command}: {exc}", file=sys.stderr)
        return 1
    if code == 0:
        print(f"done in {time.monotonic() - started:.1f}s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
