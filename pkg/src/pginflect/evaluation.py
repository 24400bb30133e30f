"""Exact-match accuracy, macro-averaged Low/Other/All reporting, and the
low-resource copy-mechanism comparison harness.

Accuracy compares raw codepoint strings: no case folding, no Unicode
normalization. Group membership (Low = fewer than 1000 original training
instances) is decided by the pre-augmentation train size.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field, replace
from typing import Sequence

import torch

from . import decoding, training
from .data import InflectionExample, Vocabulary
from .errors import DataError
from .model import InflectionTransformer, ModelConfig
from .training import TrainConfig

LOW_RESOURCE_THRESHOLD = 1000
LOW_RESOURCE_SAMPLE = 100


def exact_match_accuracy(gold: Sequence[str], predicted: Sequence[str]) -> float:
    if len(gold) != len(predicted):
        raise DataError(
            f"gold has {len(gold)} items but predictions have {len(predicted)}"
        )
    if not gold:
        raise DataError("accuracy needs at least one item")
    return sum(1 for g, p in zip(gold, predicted) if g == p) / len(gold)


@dataclass
class EvalReport:
    """Per-language accuracies plus unweighted group means."""

    per_language: dict[str, float]
    train_sizes: dict[str, int]
    low_mean: float | None
    other_mean: float | None
    all_mean: float
    low_count: int
    other_count: int

    def group_of(self, lang: str) -> str:
        return "Low" if self.train_sizes[lang] < LOW_RESOURCE_THRESHOLD else "Other"

    def to_tsv(self) -> str:
        lines = ["language\ttrain_size\tgroup\taccuracy"]
        for lang in sorted(self.per_language):
            lines.append(
                f"{lang}\t{self.train_sizes[lang]}\t{self.group_of(lang)}\t"
                f"{self.per_language[lang]:.4f}"
            )
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        def fmt(x: float | None) -> str:
            return "-" if x is None else f"{100 * x:.2f}"

        return (
            f"Low   {fmt(self.low_mean)}  ({self.low_count} languages)\n"
            f"Other {fmt(self.other_mean)}  ({self.other_count} languages)\n"
            f"All   {fmt(self.all_mean)}  ({len(self.per_language)} languages)\n"
        )


def macro_report(
    per_language: dict[str, float], train_sizes: dict[str, int]
) -> EvalReport:
    """Unweighted means per group and overall."""
    if not per_language:
        raise DataError("no languages to report")
    missing = set(per_language) - set(train_sizes)
    if missing:
        raise DataError(f"missing train sizes for: {sorted(missing)}")
    low = [a for l, a in per_language.items() if train_sizes[l] < LOW_RESOURCE_THRESHOLD]
    other = [a for l, a in per_language.items() if train_sizes[l] >= LOW_RESOURCE_THRESHOLD]
    return EvalReport(
        per_language=dict(per_language),
        train_sizes={l: train_sizes[l] for l in per_language},
        low_mean=sum(low) / len(low) if low else None,
        other_mean=sum(other) / len(other) if other else None,
        all_mean=sum(per_language.values()) / len(per_language),
        low_count=len(low),
        other_count=len(other),
    )


@dataclass
class LowResourceCell:
    language: str
    seed: int
    accuracy_copy: float
    accuracy_vanilla: float

    @property
    def delta(self) -> float:
        return self.accuracy_copy - self.accuracy_vanilla


@dataclass
class LowResourceResult:
    cells: list[LowResourceCell]

    def mean_copy(self) -> float:
        return sum(c.accuracy_copy for c in self.cells) / len(self.cells)

    def mean_vanilla(self) -> float:
        return sum(c.accuracy_vanilla for c in self.cells) / len(self.cells)

    def mean_delta(self) -> float:
        return self.mean_copy() - self.mean_vanilla()

    def to_tsv(self) -> str:
        lines = ["language\tseed\tcopy\tvanilla\tdelta"]
        for c in self.cells:
            lines.append(
                f"{c.language}\t{c.seed}\t{c.accuracy_copy:.4f}\t"
                f"{c.accuracy_vanilla:.4f}\t{c.delta:.4f}"
            )
        lines.append(
            f"MEAN\t-\t{self.mean_copy():.4f}\t{self.mean_vanilla():.4f}\t"
            f"{self.mean_delta():.4f}"
        )
        return "\n".join(lines) + "\n"


def subsample(
    examples: Sequence[InflectionExample], n: int, seed: int
) -> list[InflectionExample]:
    """Seeded sample of exactly n examples without replacement."""
    if len(examples) < n:
        raise DataError(
            f"insufficient data for subsample: need {n}, have {len(examples)}"
        )
    return random.Random(seed).sample(list(examples), n)


def _shared_parameter_hash(model: InflectionTransformer) -> str:
    """Hash of all tensors except the copy switch; used to audit that the
    two experiment arms start from identical shared weights."""
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        if name.startswith("copy_switch"):
            continue
        h.update(name.encode())
        h.update(tensor.detach().cpu().to(torch.float64).numpy().tobytes())
    return h.hexdigest()


def _train_and_score(
    train_set: Sequence[InflectionExample],
    dev_set: Sequence[InflectionExample],
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> tuple[float, list[decoding.Prediction], str]:
    pretrain, finetune = training.build_pipeline_data(train_set, train_config)
    checkpoints = training.train(
        pretrain, finetune, dev_set, model_config, train_config
    )
    best = training.select_ensemble(checkpoints, 1)[0]
    from .model import load_model
    import os
    import tempfile

    with tempfile.NamedTemporaryFile(delete=False) as tmp:
        tmp.write(best.payload)
        path = tmp.name
    try:
        model = load_model(path)
    finally:
        os.unlink(path)
    predictions = decoding.greedy_decode_batch(model, dev_set)
    accuracy = exact_match_accuracy(
        [ex.form for ex in dev_set], [p.form for p in predictions]
    )
    init_hash = _init_shared_hash(model_config, train_config, finetune, pretrain)
    return accuracy, predictions, init_hash


def _init_shared_hash(model_config, train_config, finetune, pretrain) -> str:
    """Reconstruct the initial parameter draw for this run's seed and hash
    its shared tensors (everything except the copy switch)."""
    torch.manual_seed(train_config.seed)
    vocab_source = list(finetune) + (list(pretrain) if pretrain else [])
    vocab = Vocabulary.build(vocab_source)
    config = replace(
        model_config, vocab_size=len(vocab), copy_enabled=train_config.use_copy
    )
    model = InflectionTransformer(config, vocab)
    return _shared_parameter_hash(model)


def low_resource_experiment(
    datasets: dict[str, tuple[Sequence[InflectionExample], Sequence[InflectionExample]]],
    seeds: Sequence[int],
    model_config: ModelConfig,
    train_config: TrainConfig,
    collect_predictions: bool = False,
) -> tuple[LowResourceResult, dict]:
    """Copy-enabled vs copy-disabled comparison at 100 training examples.

    For each (language, seed): subsample 100 training instances, train
    both arms with configs identical up to the copy flag, score dev exact
    match. The initial shared parameters of the two arms are audited to
    be identical by hash.
    """
    if not datasets:
        raise DataError("need at least one language")
    if not seeds:
        raise DataError("need at least one seed")
    cells = []
    predictions: dict[tuple[str, int, str], list[decoding.Prediction]] = {}
    for language, (train_set, dev_set) in datasets.items():
        for seed in seeds:
            sample = subsample(train_set, LOW_RESOURCE_SAMPLE, seed)
            base = replace(train_config, seed=seed)
            cfg_copy = replace(base, use_copy=True)
            cfg_vanilla = replace(base, use_copy=False)
            acc_c, preds_c, hash_c = _train_and_score(
                sample, dev_set, model_config, cfg_copy
            )
            acc_v, preds_v, hash_v = _train_and_score(
                sample, dev_set, model_config, cfg_vanilla
            )
            if hash_c != hash_v:
                raise DataError(
                    "experiment arms were initialized with different shared weights"
                )
            cells.append(LowResourceCell(language, seed, acc_c, acc_v))
            if collect_predictions:
                predictions[(language, seed, "copy")] = preds_c
                predictions[(language, seed, "vanilla")] = preds_v
    return LowResourceResult(cells), predictions
