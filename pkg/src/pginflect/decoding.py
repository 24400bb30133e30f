"""Autoregressive generation over the extended vocabulary and ensemble
combination by majority vote.

Default decoding is greedy; beam search with length-normalized scoring
is available behind a width flag. Extension tokens render as their
surface characters, so a copy-dominant model can emit characters missing
from the base vocabulary.
"""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import torch

from .data import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    UNK,
    UNK_ID,
    InflectionExample,
    encode_source,
)
from .errors import DataError
from .model import Batch, InflectionTransformer, make_batch

# Rendered when the argmax token is UNK; keeps output length semantics
# instead of silently dropping a position.
UNK_REPLACEMENT = "□"


@dataclass
class Prediction:
    form: str
    model_id: str
    score: float  # sum of log-probabilities, length-normalized for beam
    unk_emissions: int = 0


def _max_len(source_len: int) -> int:
    return 2 * source_len + 10


def _render(token_id: int, extended) -> tuple[str, bool]:
    """Map an extended-vocabulary id to output text.

    Returns (text, was_unk). BOS/EOS/PAD never reach here.
    """
    if token_id == UNK_ID:
        return UNK_REPLACEMENT, True
    token = extended.id_to_token(token_id)
    return token, False


def greedy_decode_batch(
    model: InflectionTransformer,
    examples: Sequence[InflectionExample],
    model_id: str = "model",
) -> list[Prediction]:
    """Greedy decode a batch of examples in lockstep.

    Argmax ties break toward the lowest token index (torch.argmax
    returns the first maximum).
    """
    if not examples:
        return []
    model.eval()
    vocab = model.vocab
    sources = [encode_source(ex, vocab) for ex in examples]
    batch = make_batch(sources, vocab, copy_enabled=model.config.copy_enabled)
    n = len(examples)
    max_len = max(_max_len(len(s)) for s in sources)

    prefix = torch.full((n, 1), BOS_ID, dtype=torch.long)
    finished = [False] * n
    outputs: list[list[str]] = [[] for _ in range(n)]
    unk_counts = [0] * n
    scores = [0.0] * n

    with torch.no_grad():
        for _ in range(max_len):
            p, _, _, _ = model.distributions(batch, prefix)
            step = p[:, -1, :]
            choice = torch.argmax(step, dim=-1)
            next_in = torch.full((n, 1), PAD_ID, dtype=torch.long)
            for i in range(n):
                if finished[i]:
                    continue
                token_id = int(choice[i])
                scores[i] += math.log(max(float(step[i, token_id]), 1e-300))
                if token_id == EOS_ID:
                    finished[i] = True
                    continue
                text, was_unk = _render(token_id, batch.extended[i])
                outputs[i].append(text)
                unk_counts[i] += int(was_unk)
                # Extension tokens have no embedding; feed UNK back in.
                next_in[i, 0] = token_id if token_id < model.config.vocab_size else UNK_ID
            if all(finished):
                break
            prefix = torch.cat([prefix, next_in], dim=1)

    return [
        Prediction("".join(chars), model_id, score, unk)
        for chars, score, unk in zip(outputs, scores, unk_counts)
    ]


def greedy_decode(
    model: InflectionTransformer,
    example: InflectionExample,
    model_id: str = "model",
) -> Prediction:
    return greedy_decode_batch(model, [example], model_id)[0]


@dataclass
class _Hypothesis:
    tokens: list[int]  # extended-vocabulary ids, no BOS/EOS
    log_prob: float
    finished: bool

    def score(self) -> float:
        return self.log_prob / max(1, len(self.tokens) + int(self.finished))


def beam_decode(
    model: InflectionTransformer,
    example: InflectionExample,
    width: int,
    model_id: str = "model",
) -> Prediction:
    """Beam search with length-normalized log-probability scoring.

    Width 1 reproduces greedy output exactly.
    """
    if width < 1:
        raise DataError("beam width must be at least 1")
    model.eval()
    vocab = model.vocab
    source = encode_source(example, vocab)
    batch = make_batch([source], vocab, copy_enabled=model.config.copy_enabled)
    extended = batch.extended[0]
    max_len = _max_len(len(source))

    beams = [_Hypothesis([], 0.0, False)]
    with torch.no_grad():
        for _ in range(max_len):
            if all(h.finished for h in beams):
                break
            candidates: list[_Hypothesis] = []
            for hyp in beams:
                if hyp.finished:
                    candidates.append(hyp)
                    continue
                prefix_in = [BOS_ID] + [
                    t if t < model.config.vocab_size else UNK_ID for t in hyp.tokens
                ]
                p, _, _, _ = model.distributions(
                    batch, torch.tensor([prefix_in], dtype=torch.long)
                )
                step = p[0, -1, :]
                log_p = step.clamp_min(1e-300).log()
                top = torch.topk(log_p, min(width, log_p.shape[0]))
                for lp, tid in zip(top.values.tolist(), top.indices.tolist()):
                    if tid in (PAD_ID, BOS_ID):
                        continue
                    if tid == EOS_ID:
                        candidates.append(
                            _Hypothesis(hyp.tokens, hyp.log_prob + lp, True)
                        )
                    else:
                        candidates.append(
                            _Hypothesis(hyp.tokens + [tid], hyp.log_prob + lp, False)
                        )
            # Stable sort: ties keep candidate order, which follows topk's
            # lowest-index-first ordering, matching greedy at width 1.
            candidates.sort(key=lambda h: h.score(), reverse=True)
            beams = candidates[:width]

    best = max(beams, key=lambda h: h.score())
    chars = []
    unk = 0
    for tid in best.tokens:
        text, was_unk = _render(tid, extended)
        chars.append(text)
        unk += int(was_unk)
    return Prediction("".join(chars), model_id, best.score(), unk)


def majority_vote(predictions: Sequence[Prediction], seed: int = 0) -> str:
    """Most frequent predicted form; frequency ties resolved uniformly at
    random with the seeded generator."""
    if not predictions:
        raise DataError("majority_vote needs at least one prediction")
    counts = Counter(p.form for p in predictions)
    top = max(counts.values())
    tied = sorted(form for form, c in counts.items() if c == top)
    if len(tied) == 1:
        return tied[0]
    return random.Random(seed).choice(tied)


def ensemble_predict(
    models: Sequence[InflectionTransformer],
    examples: Sequence[InflectionExample],
    seed: int = 0,
) -> list[str]:
    """Per-model greedy decode, then a majority vote per example."""
    if not models:
        raise DataError("ensemble needs at least one model")
    per_model = [
        greedy_decode_batch(m, examples, model_id=f"model-{i}")
        for i, m in enumerate(models)
    ]
    results = []
    for j in range(len(examples)):
        votes = [per_model[i][j] for i in range(len(models))]
        results.append(majority_vote(votes, seed=seed + j))
    return results
