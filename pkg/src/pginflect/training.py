"""Training loop: optional hallucination pretraining, then finetuning on
the (optionally multitask-expanded) training set, with per-epoch dev
scoring, early stopping, and checkpointing.

A run is deterministic given its seed: parameter init, batch shuffling,
dropout, and hallucination sampling all derive from it.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import torch

from . import backend, decoding
from .augment import group_by_lemma, hallucinate, observed_alphabet, to_reinflection
from .data import InflectionExample, Vocabulary, encode_source
from .errors import ConfigError, DataError, NumericError
from .model import (
    InflectionTransformer,
    ModelConfig,
    loss_on_examples,
    save_model,
    serialize_model,
)


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 60
    pretrain_epochs: int = 10
    learning_rate: float = 1e-3
    warmup_steps: int = 400
    patience: int = 10
    seed: int = 0
    use_copy: bool = True
    use_multitask: bool = True
    use_hallucination: bool = True
    hallucination_size: int = 10_000
    low_resource_threshold: int = 1000

    def __post_init__(self):
        if self.batch_size <= 0 or self.max_epochs <= 0:
            raise ConfigError("batch size and epoch count must be positive")
        if self.hallucination_size <= 0 or self.low_resource_threshold <= 0:
            raise ConfigError("hallucination size and threshold must be positive")


@dataclass
class Checkpoint:
    """One per-epoch snapshot: serialized parameters plus dev score."""

    payload: bytes
    epoch: int
    dev_accuracy: float
    phase: str  # "pretrain" | "finetune"

    def __post_init__(self):
        if not 0.0 <= self.dev_accuracy <= 1.0:
            raise DataError("dev accuracy must be in [0, 1]")
        if self.epoch < 0:
            raise DataError("epoch must be non-negative")


def build_pipeline_data(
    train: Sequence[InflectionExample], config: TrainConfig
) -> tuple[list[InflectionExample] | None, list[InflectionExample]]:
    """Derive (pretrain set or None, finetune set) from the raw train set.

    Multitask flag: finetune on the reinflection expansion. Hallucination
    flag: pretrain set of ``hallucination_size`` pseudo-examples, only
    when the original set is below the low-resource threshold.
    """
    if config.use_multitask:
        finetune = to_reinflection(group_by_lemma(train))
    else:
        finetune = list(train)
    pretrain = None
    if config.use_hallucination and len(train) < config.low_resource_threshold:
        pretrain = hallucinate(
            train,
            config.hallucination_size,
            observed_alphabet(train),
            seed=config.seed,
        )
    return pretrain, finetune


def dev_exact_match(
    model: InflectionTransformer, dev: Sequence[InflectionExample]
) -> float:
    """Greedy-decode exact-match accuracy on a frozen model."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            predictions = decoding.greedy_decode_batch(model, dev)
    finally:
        if was_training:
            model.train()
    hits = sum(1 for p, ex in zip(predictions, dev) if p.form == ex.form)
    return hits / len(dev)


def _run_phase(
    model: InflectionTransformer,
    examples: Sequence[InflectionExample],
    dev: Sequence[InflectionExample],
    config: TrainConfig,
    phase: str,
    epochs: int,
    shuffle_rng: random.Random,
) -> list[Checkpoint]:
    params = [p for p in model.parameters() if p.requires_grad]
    state = backend.OptimizerState.for_params(params)
    checkpoints: list[Checkpoint] = []
    best = -1.0
    since_best = 0
    n_batches = math.ceil(len(examples) / config.batch_size)

    for epoch in range(1, epochs + 1):
        model.train()
        order = list(range(len(examples)))
        shuffle_rng.shuffle(order)
        for b in range(n_batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            batch_examples = [examples[i] for i in idx]
            loss = loss_on_examples(model, batch_examples)
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at phase={phase} epoch={epoch} batch={b}"
                )
            grads = backend.gradients(loss, params)
            lr = backend.warmup_inv_sqrt_lr(
                config.learning_rate, config.warmup_steps, state.step + 1
            )
            backend.adam_step(state, params, grads, lr)

        accuracy = dev_exact_match(model, dev)
        checkpoints.append(
            Checkpoint(
                payload=serialize_model(model),
                epoch=epoch,
                dev_accuracy=accuracy,
                phase=phase,
            )
        )
        if accuracy > best:
            best = accuracy
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    return checkpoints


def train(
    pretrain_set: Sequence[InflectionExample] | None,
    finetune_set: Sequence[InflectionExample],
    dev_set: Sequence[InflectionExample],
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> list[Checkpoint]:
    """Run the full pipeline and return per-epoch checkpoints.

    The pretrain phase (if any) runs first with its own optimizer state;
    finetuning restarts the optimizer because the data distribution
    shifts. Only finetune checkpoints count toward ensemble selection,
    but pretrain checkpoints are returned too, labeled by phase.
    """
    if not dev_set:
        raise DataError("dev set must be non-empty (used for checkpoint scoring)")
    if not finetune_set:
        raise DataError("finetune set must be non-empty")
    torch.manual_seed(train_config.seed)
    shuffle_rng = random.Random(train_config.seed ^ 0x5EED)

    vocab_source = list(finetune_set) + (list(pretrain_set) if pretrain_set else [])
    vocab = Vocabulary.build(vocab_source)
    config = replace(model_config, vocab_size=len(vocab),
                     copy_enabled=train_config.use_copy)
    model = InflectionTransformer(config, vocab)

    checkpoints: list[Checkpoint] = []
    if pretrain_set:
        checkpoints.extend(
            _run_phase(
                model, pretrain_set, dev_set, train_config,
                "pretrain", train_config.pretrain_epochs, shuffle_rng,
            )
        )
    checkpoints.extend(
        _run_phase(
            model, finetune_set, dev_set, train_config,
            "finetune", train_config.max_epochs, shuffle_rng,
        )
    )
    return checkpoints


def select_ensemble(checkpoints: Sequence[Checkpoint], k: int) -> list[Checkpoint]:
    """The k checkpoints with highest dev accuracy; ties broken by later
    epoch. Pretrain checkpoints are not eligible."""
    eligible = [c for c in checkpoints if c.phase == "finetune"]
    if len(eligible) < k:
        raise DataError(f"need at least {k} checkpoints, have {len(eligible)}")
    ranked = sorted(eligible, key=lambda c: (c.dev_accuracy, c.epoch), reverse=True)
    return ranked[:k]


def write_checkpoints(
    checkpoints: Sequence[Checkpoint],
    out_dir,
    lang: str,
    train_config: TrainConfig,
    model_config: ModelConfig,
    input_hashes: dict[str, str] | None = None,
) -> list[Path]:
    """Write `{lang}.{phase}.e{epoch}.ckpt` files plus a key=value run
    manifest sufficient to reproduce the run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for ck in checkpoints:
        path = out / f"{lang}.{ck.phase}.e{ck.epoch}.ckpt"
        path.write_bytes(ck.payload)
        paths.append(path)
    lines = [f"lang={lang}"]
    for key, value in vars(train_config).items():
        lines.append(f"train.{key}={value}")
    for key, value in vars(model_config).items():
        lines.append(f"model.{key}={value}")
    for ck in checkpoints:
        lines.append(f"dev_accuracy.{ck.phase}.e{ck.epoch}={ck.dev_accuracy:.6f}")
    for name, digest in (input_hashes or {}).items():
        lines.append(f"input_sha256.{name}={digest}")
    (out / f"{lang}.manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths
