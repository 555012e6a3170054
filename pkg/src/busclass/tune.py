"""Random-search hyperparameter optimization over the head configuration.

Each trial samples (dropout, learning rate, dense units, activation), trains
a fresh model for a short number of epochs, and records final-epoch
validation accuracy as the objective. Trial seeds derive from
(search seed, trial index), so trials are independent and the search is
reproducible regardless of execution order.
"""

from __future__ import annotations

import gc
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import augment as aug
from . import model as mod
from .data import DatasetManifest

LEDGER_HEADER = "index\tdropout\tlearning_rate\tdense_units\tactivation\tobjective\tstatus"


@dataclass(frozen=True)
class SearchSpace:
    dropout_grid: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    learning_rate_range: tuple[float, float] = (1e-4, 1e-2)
    dense_units_choices: tuple[int, ...] = (256, 512, 1024)
    activation_choices: tuple[str, ...] = ("relu", "tanh")

    def __post_init__(self):
        if not self.dropout_grid or any(not (0.0 <= d < 1.0) for d in self.dropout_grid):
            raise ValueError("dropout_grid values must lie in [0, 1)")
        lo, hi = self.learning_rate_range
        if not (0.0 < lo < hi):
            raise ValueError("learning_rate_range must be positive with low < high")
        if not self.dense_units_choices or any(u < 1 for u in self.dense_units_choices):
            raise ValueError("dense_units_choices must be positive integers")
        if not self.activation_choices:
            raise ValueError("activation_choices must be nonempty")


@dataclass(frozen=True)
class TrialSample:
    dropout: float
    learning_rate: float
    dense_units: int
    activation: str


@dataclass(frozen=True)
class TrialResult:
    index: int
    sample: TrialSample
    objective: float
    history: mod.TrainingHistory
    seed: int
    status: str = "ok"


def _trial_seed(seed: int, index: int) -> int:
    material = f"{seed}|trial|{index}".encode()
    return int.from_bytes(hashlib.sha256(material).digest()[:4], "big")


def sample_trial(space: SearchSpace, seed: int, index: int) -> TrialSample:
    """Deterministic sample for trial ``index``: grid dropout, log-uniform learning rate."""
    rng = np.random.default_rng(_trial_seed(seed, index))
    dropout = float(space.dropout_grid[rng.integers(0, len(space.dropout_grid))])
    lo, hi = space.learning_rate_range
    lr = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    units = int(space.dense_units_choices[rng.integers(0, len(space.dense_units_choices))])
    activation = str(space.activation_choices[rng.integers(0, len(space.activation_choices))])
    return TrialSample(dropout=dropout, learning_rate=lr, dense_units=units, activation=activation)


def _ledger_row(result: TrialResult) -> str:
    s = result.sample
    return (
        f"{result.index}\t{s.dropout!r}\t{s.learning_rate!r}\t{s.dense_units}"
        f"\t{s.activation}\t{result.objective!r}\t{result.status}"
    )


def search(
    space: SearchSpace,
    budget: int,
    trial_epochs: int,
    manifest: DatasetManifest,
    augment_config: aug.AugmentConfig,
    seed: int = 0,
    batch_size: int = 32,
    ledger_path: str | Path | None = None,
) -> tuple[TrialResult, list[TrialResult]]:
    """Run ``budget`` independent trials and return (best, all).

    The best trial maximizes the objective; ties break toward lower dropout,
    then lower learning rate, then lower trial index. A diverging trial is
    recorded with objective 0.0 and an error note instead of aborting the
    search. When ``ledger_path`` is given, one row per trial is appended as
    it completes.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if trial_epochs < 1:
        raise ValueError("trial_epochs must be >= 1")

    ledger = Path(ledger_path) if ledger_path else None
    if ledger and not ledger.exists():
        ledger.write_text(LEDGER_HEADER + "\n", encoding="utf-8")

    results: list[TrialResult] = []
    for index in range(budget):
        sample = sample_trial(space, seed, index)
        trial_seed = _trial_seed(seed, index)
        spec = mod.ClassifierSpec(
            dense_units=sample.dense_units,
            dropout_rate=sample.dropout,
            head_activation=sample.activation,
        )
        training = mod.TrainingConfig(
            epochs=trial_epochs,
            batch_size=batch_size,
            learning_rate=sample.learning_rate,
            seed=trial_seed,
        )
        classifier = mod.build(spec, seed=trial_seed)
        try:
            mod.train(classifier, manifest, augment_config, training)
            objective = classifier.history.records[-1].val_accuracy
            status = "ok"
        except mod.TrainingDivergedError as exc:
            objective = 0.0
            status = f"diverged: {exc}"
        result = TrialResult(
            index=index,
            sample=sample,
            objective=float(objective),
            history=classifier.history,
            seed=trial_seed,
            status=status,
        )
        results.append(result)
        if ledger:
            with open(ledger, "a", encoding="utf-8") as fh:
                fh.write(_ledger_row(result) + "\n")
        # model and optimizer slots hold hundreds of MB through reference
        # cycles; collect before building the next trial
        del classifier
        gc.collect()

    best = min(
        results,
        key=lambda r: (-r.objective, r.sample.dropout, r.sample.learning_rate, r.index),
    )
    return best, results
