"""Character-level encoder-decoder transformer with a pointer-generator head.

The decoder produces, per step, a generation distribution over the base
vocabulary (linear layer + softmax on the decoder state) and a copy
distribution obtained from the inter-attention weights of the last
decoder layer. A sigmoid switch p_gen mixes the two into one
distribution over the extended vocabulary: the base vocabulary plus any
source-lemma characters missing from it. Copy mass that attends to tag
or special positions is renormalized away, so only lemma characters are
copy targets.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from . import backend
from .backend import AttentionProjections
from .data import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    EncodedSequence,
    InflectionExample,
    Vocabulary,
    encode_source,
)
from .errors import CheckpointError, ConfigError, DataError

CHECKPOINT_MAGIC = b"PGTI"
CHECKPOINT_VERSION = 1

# Floor under probabilities before taking logs; keeps the loss finite
# when the gold character is unreachable (e.g. OOV with copy disabled
# and no UNK mass).
PROB_FLOOR = 1e-12


@dataclass
class ModelConfig:
    """Architecture hyperparameters. Numeric defaults follow the
    submitted inflection systems: 256-dim embeddings, 4+4 layers,
    1024-dim feed-forward blocks, 4 attention heads."""

    vocab_size: int
    embedding_dim: int = 256
    encoder_layers: int = 4
    decoder_layers: int = 4
    feed_forward_dim: int = 1024
    attention_heads: int = 4
    copy_enabled: bool = True
    dropout: float = 0.1
    max_source_length: int = 128

    def __post_init__(self):
        if min(
            self.vocab_size,
            self.embedding_dim,
            self.encoder_layers,
            self.decoder_layers,
            self.feed_forward_dim,
            self.attention_heads,
        ) <= 0:
            raise ConfigError("all model dimensions must be positive")
        if self.embedding_dim % self.attention_heads != 0:
            raise ConfigError(
                f"embedding_dim {self.embedding_dim} not divisible by "
                f"{self.attention_heads} attention heads"
            )


class ExtendedVocabulary:
    """Per-example union of the base vocabulary and the source lemma's
    out-of-vocabulary characters.

    Base tokens keep their indices; extension characters get contiguous
    temporary indices after the base. Never persisted.
    """

    def __init__(self, base: Vocabulary, extension: Sequence[str]):
        self.base = base
        self.extension = tuple(extension)
        self._ext_index = {c: len(base) + i for i, c in enumerate(self.extension)}

    def __len__(self) -> int:
        return len(self.base) + len(self.extension)

    def char_to_id(self, char: str) -> int:
        idx = self.base.index.get(char)
        if idx is not None:
            return idx
        return self._ext_index.get(char, UNK_ID)

    def id_to_token(self, idx: int) -> str:
        if idx < len(self.base):
            return self.base.tokens[idx]
        return self.extension[idx - len(self.base)]


def build_extended_vocabulary(
    source: EncodedSequence, base: Vocabulary
) -> ExtendedVocabulary:
    """Extension = distinct OOV source characters, first-occurrence order."""
    extension: list[str] = []
    seen: set[str] = set()
    for tok in source.surface:
        if len(tok) == 1 and tok not in base.index and tok not in seen:
            seen.add(tok)
            extension.append(tok)
    return ExtendedVocabulary(base, extension)


def sinusoidal_positions(max_len: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(
        torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim)
    )
    pe = torch.zeros(max_len, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)
    return pe.to(dtype)


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.wq = nn.Parameter(torch.empty(dim, dim))
        self.wk = nn.Parameter(torch.empty(dim, dim))
        self.wv = nn.Parameter(torch.empty(dim, dim))
        self.wo = nn.Parameter(torch.empty(dim, dim))
        self.bq = nn.Parameter(torch.zeros(dim))
        self.bk = nn.Parameter(torch.zeros(dim))
        self.bv = nn.Parameter(torch.zeros(dim))
        self.bo = nn.Parameter(torch.zeros(dim))
        for w in (self.wq, self.wk, self.wv, self.wo):
            nn.init.xavier_uniform_(w)
        self.attn_dropout = nn.Dropout(dropout)

    def forward(self, q, k, v, mask):
        proj = AttentionProjections(
            wq=self.wq, wk=self.wk, wv=self.wv, wo=self.wo,
            bq=self.bq, bk=self.bk, bv=self.bv, bo=self.bo,
        )
        return backend.multi_head_attention(
            q, k, v, mask, self.heads, proj, self.attn_dropout
        )


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int, dropout: float):
        super().__init__()
        self.w1 = nn.Linear(dim, hidden)
        self.w2 = nn.Linear(hidden, dim)
        nn.init.xavier_uniform_(self.w1.weight)
        nn.init.xavier_uniform_(self.w2.weight)
        nn.init.zeros_(self.w1.bias)
        nn.init.zeros_(self.w2.bias)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.w2(self.dropout(torch.relu(self.w1(x))))


class EncoderLayer(nn.Module):
    """Self-attention then feed-forward, post-norm residual blocks."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.embedding_dim
        self.self_attn = MultiHeadAttention(d, config.attention_heads, config.dropout)
        self.norm1 = nn.LayerNorm(d)
        self.ff = FeedForward(d, config.feed_forward_dim, config.dropout)
        self.norm2 = nn.LayerNorm(d)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x, src_mask):
        attn_out, _ = self.self_attn(x, x, x, src_mask)
        x = self.norm1(x + self.dropout(attn_out))
        x = self.norm2(x + self.dropout(self.ff(x)))
        return x


class DecoderLayer(nn.Module):
    """Causal self-attention, inter-attention over the encoder states,
    then feed-forward; post-norm residual blocks."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.embedding_dim
        self.self_attn = MultiHeadAttention(d, config.attention_heads, config.dropout)
        self.norm1 = nn.LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, config.attention_heads, config.dropout)
        self.norm2 = nn.LayerNorm(d)
        self.ff = FeedForward(d, config.feed_forward_dim, config.dropout)
        self.norm3 = nn.LayerNorm(d)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x, memory, causal_mask, memory_mask):
        attn_out, _ = self.self_attn(x, x, x, causal_mask)
        x = self.norm1(x + self.dropout(attn_out))
        cross_out, cross_weights = self.cross_attn(x, memory, memory, memory_mask)
        x = self.norm2(x + self.dropout(cross_out))
        x = self.norm3(x + self.dropout(self.ff(x)))
        return x, cross_weights


@dataclass
class Batch:
    """Padded tensors for one training/decoding batch.

    ``copy_index`` holds, per source position, the extended-vocabulary id
    of the character at that position (0 where not copyable — those
    positions carry zero weight and never contribute). ``target_out``
    ids are indexed in each example's extended vocabulary.
    """

    source_ids: torch.Tensor        # (B, Ts) long
    source_mask: torch.Tensor       # (B, Ts) bool, True at real tokens
    copy_index: torch.Tensor        # (B, Ts) long
    copy_mask: torch.Tensor         # (B, Ts) bool, True at lemma characters
    n_extension: int
    extended: list[ExtendedVocabulary]
    target_in: torch.Tensor | None = None   # (B, Tt) long, BOS + base/UNK ids
    target_out: torch.Tensor | None = None  # (B, Tt) long, extended ids + EOS
    target_mask: torch.Tensor | None = None  # (B, Tt) bool


def make_batch(
    sources: Sequence[EncodedSequence],
    vocab: Vocabulary,
    target_forms: Sequence[str] | None = None,
    copy_enabled: bool = True,
    device: torch.device | str = "cpu",
) -> Batch:
    if not sources:
        raise DataError("empty batch")
    batch_size = len(sources)
    ts = max(len(s) for s in sources)
    source_ids = torch.full((batch_size, ts), PAD_ID, dtype=torch.long)
    source_mask = torch.zeros(batch_size, ts, dtype=torch.bool)
    copy_index = torch.zeros(batch_size, ts, dtype=torch.long)
    copy_mask = torch.zeros(batch_size, ts, dtype=torch.bool)
    extended = [build_extended_vocabulary(s, vocab) for s in sources]
    n_extension = max(len(e.extension) for e in extended) if copy_enabled else 0

    for b, (seq, ext) in enumerate(zip(sources, extended)):
        source_ids[b, : len(seq)] = torch.tensor(seq.ids, dtype=torch.long)
        source_mask[b, : len(seq)] = True
        for i, tok in enumerate(seq.surface):
            if len(tok) == 1:
                copy_mask[b, i] = True
                copy_index[b, i] = ext.char_to_id(tok)

    target_in = target_out = target_mask = None
    if target_forms is not None:
        tt = max(len(f) for f in target_forms) + 1
        target_in = torch.full((batch_size, tt), PAD_ID, dtype=torch.long)
        target_out = torch.full((batch_size, tt), PAD_ID, dtype=torch.long)
        target_mask = torch.zeros(batch_size, tt, dtype=torch.bool)
        for b, (form, ext) in enumerate(zip(target_forms, extended)):
            in_ids = [BOS_ID] + [vocab.token_to_id(c) for c in form]
            if copy_enabled:
                out_ids = [ext.char_to_id(c) for c in form] + [EOS_ID]
            else:
                out_ids = [vocab.token_to_id(c) for c in form] + [EOS_ID]
            target_in[b, : len(in_ids)] = torch.tensor(in_ids, dtype=torch.long)
            target_out[b, : len(out_ids)] = torch.tensor(out_ids, dtype=torch.long)
            target_mask[b, : len(out_ids)] = True

    return Batch(
        source_ids=source_ids.to(device),
        source_mask=source_mask.to(device),
        copy_index=copy_index.to(device),
        copy_mask=copy_mask.to(device),
        n_extension=n_extension,
        extended=extended,
        target_in=target_in.to(device) if target_in is not None else None,
        target_out=target_out.to(device) if target_out is not None else None,
        target_mask=target_mask.to(device) if target_mask is not None else None,
    )


def copy_distribution(
    attention: torch.Tensor,
    copy_mask: torch.Tensor,
    copy_index: torch.Tensor,
    ext_size: int,
) -> torch.Tensor:
    """Copy probabilities over the extended vocabulary.

    ``attention`` is (B, Tt, Ts); weight landing on non-copyable source
    positions (tags, specials) is renormalized away, and the remaining
    per-character weights are summed over all positions holding the same
    character.
    """
    weights = attention * copy_mask[:, None, :].to(attention.dtype)
    denom = weights.sum(dim=-1, keepdim=True).clamp_min(1e-30)
    weights = weights / denom
    p_copy = torch.zeros(
        *weights.shape[:-1], ext_size, dtype=weights.dtype, device=weights.device
    )
    index = copy_index[:, None, :].expand_as(weights)
    return p_copy.scatter_add(-1, index, weights)


@dataclass
class DecoderStepOutput:
    """Per-step bundle from decode_step, for the last prefix position."""

    state: torch.Tensor          # (embedding_dim,)
    attention: torch.Tensor      # (source_len,), last layer, head-averaged
    context: torch.Tensor        # (embedding_dim,)
    p_gen: float
    probs: torch.Tensor          # (len(extended),)
    extended: ExtendedVocabulary


class InflectionTransformer(nn.Module):
    """Encoder-decoder transformer plus copy switch.

    The embedding table is shared between source and target. The copy
    switch is always allocated, even with ``copy_enabled=False``, so the
    two variants draw identical initial weights for every shared tensor
    and differ only in the forward path.
    """

    def __init__(self, config: ModelConfig, vocab: Vocabulary):
        super().__init__()
        if config.vocab_size != len(vocab):
            raise ConfigError(
                f"config vocab_size {config.vocab_size} != vocabulary size {len(vocab)}"
            )
        self.config = config
        self.vocab = vocab
        d = config.embedding_dim

        self.embedding = nn.Embedding(config.vocab_size, d, padding_idx=PAD_ID)
        nn.init.xavier_uniform_(self.embedding.weight)
        with torch.no_grad():
            self.embedding.weight[PAD_ID].zero_()
        self.embed_dropout = nn.Dropout(config.dropout)
        self.register_buffer(
            "positions", sinusoidal_positions(1024, d), persistent=False
        )

        self.encoder = nn.ModuleList(
            EncoderLayer(config) for _ in range(config.encoder_layers)
        )
        self.decoder = nn.ModuleList(
            DecoderLayer(config) for _ in range(config.decoder_layers)
        )

        # Output projection of the generation distribution.
        self.out_proj = nn.Linear(d, config.vocab_size)
        nn.init.xavier_uniform_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)
        # Copy switch over [state; context; previous-token embedding].
        self.copy_switch = nn.Linear(3 * d, 1)
        nn.init.xavier_uniform_(self.copy_switch.weight)
        nn.init.zeros_(self.copy_switch.bias)

        gen_mask = torch.zeros(config.vocab_size, dtype=torch.bool)
        gen_mask[vocab.generation_target_ids()] = True
        self.register_buffer("generation_mask", gen_mask, persistent=False)

    # ------------------------------------------------------------------
    # forward pieces
    # ------------------------------------------------------------------

    def _embed(self, ids: torch.Tensor) -> torch.Tensor:
        d = self.config.embedding_dim
        x = self.embedding(ids) * math.sqrt(d)
        x = x + self.positions[: ids.shape[-1]].to(x.dtype)
        return self.embed_dropout(x)

    def encode_ids(
        self, source_ids: torch.Tensor, source_mask: torch.Tensor
    ) -> torch.Tensor:
        # Attention mask: every query may attend to every real source token.
        attn_mask = source_mask[:, None, None, :]
        x = self._embed(source_ids)
        for layer in self.encoder:
            x = layer(x, attn_mask)
        return x

    def decode_states(
        self,
        target_in: torch.Tensor,
        memory: torch.Tensor,
        source_mask: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns decoder states and the last layer's inter-attention
        weights, shape (B, heads, Tt, Ts)."""
        tt = target_in.shape[-1]
        causal = torch.tril(
            torch.ones(tt, tt, dtype=torch.bool, device=target_in.device)
        )
        memory_mask = source_mask[:, None, None, :]
        x = self._embed(target_in)
        cross_weights = None
        for layer in self.decoder:
            x, cross_weights = layer(x, memory, causal, memory_mask)
        return x, cross_weights

    def distributions(
        self,
        batch: Batch,
        target_in: torch.Tensor,
        p_gen_override: float | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        """Extended-vocabulary distributions for every target position.

        Returns (P, p_gen, attention, states):
          P         (B, Tt, vocab+n_extension)
          p_gen     (B, Tt, 1); all-ones when copy is disabled
          attention (B, Tt, Ts) head-averaged last-layer inter-attention
          states    (B, Tt, d)

        ``p_gen_override`` is a test hook pinning the switch to a constant.
        """
        memory = self.encode_ids(batch.source_ids, batch.source_mask)
        states, cross = self.decode_states(target_in, memory, batch.source_mask)
        attention = cross.mean(dim=1)  # average over heads

        logits = self.out_proj(states)
        logits = logits.masked_fill(~self.generation_mask, float("-inf"))
        p_vocab = backend.softmax(logits, axis=-1)

        if not self.config.copy_enabled:
            ones = torch.ones(
                *states.shape[:-1], 1, dtype=states.dtype, device=states.device
            )
            return p_vocab, ones, attention, states

        context = torch.matmul(attention, memory)
        y_prev = self.embedding(target_in)
        switch_in = torch.cat([states, context, y_prev], dim=-1)
        p_gen = torch.sigmoid(self.copy_switch(switch_in))
        if p_gen_override is not None:
            p_gen = torch.full_like(p_gen, p_gen_override)

        p_copy = copy_distribution(
            attention,
            batch.copy_mask,
            batch.copy_index,
            self.config.vocab_size + batch.n_extension,
        )

        if batch.n_extension > 0:
            pad = torch.zeros(
                *p_vocab.shape[:-1],
                batch.n_extension,
                dtype=p_vocab.dtype,
                device=p_vocab.device,
            )
            p_vocab = torch.cat([p_vocab, pad], dim=-1)
        p = p_gen * p_vocab + (1 - p_gen) * p_copy
        return p, p_gen, attention, states

    # ------------------------------------------------------------------
    # public operations
    # ------------------------------------------------------------------

    def encode(self, source: EncodedSequence) -> torch.Tensor:
        """Encoder states for one source sequence, shape (T, dim)."""
        if len(source) < 3:
            raise DataError("source must be at least BOS + one symbol + EOS")
        if len(source) > self.config.max_source_length:
            raise DataError(
                f"source length {len(source)} exceeds maximum "
                f"{self.config.max_source_length}"
            )
        batch = make_batch([source], self.vocab, copy_enabled=self.config.copy_enabled)
        return self.encode_ids(batch.source_ids, batch.source_mask)[0]

    def decode_step(
        self,
        prefix: Sequence[int],
        source: EncodedSequence,
        p_gen_override: float | None = None,
    ) -> DecoderStepOutput:
        """One generation step conditioned on ``prefix`` (base-vocabulary
        token ids beginning with BOS)."""
        if not prefix or prefix[0] != BOS_ID:
            raise DataError("decoder prefix must start with BOS")
        batch = make_batch([source], self.vocab, copy_enabled=self.config.copy_enabled)
        target_in = torch.tensor([list(prefix)], dtype=torch.long)
        with torch.no_grad():
            p, p_gen, attention, states = self.distributions(
                batch, target_in, p_gen_override=p_gen_override
            )
        ext = batch.extended[0]
        n_valid = len(source)
        with torch.no_grad():
            context = torch.matmul(
                attention[0, -1],
                self.encode_ids(batch.source_ids, batch.source_mask)[0],
            )
        return DecoderStepOutput(
            state=states[0, -1],
            attention=attention[0, -1, :n_valid],
            context=context,
            p_gen=float(p_gen[0, -1, 0]),
            probs=p[0, -1, : self.config.vocab_size + len(ext.extension)],
            extended=ext,
        )

    def sequence_loss(self, batch: Batch, p_gen_override: float | None = None) -> torch.Tensor:
        """Mean negative log-likelihood over non-PAD target positions."""
        if batch.target_in is None:
            raise DataError("batch has no targets")
        p, _, _, _ = self.distributions(batch, batch.target_in, p_gen_override)
        gold = p.gather(-1, batch.target_out.unsqueeze(-1)).squeeze(-1)
        nll = -gold.clamp_min(PROB_FLOOR).log()
        mask = batch.target_mask.to(nll.dtype)
        return (nll * mask).sum() / mask.sum()


def loss_on_examples(
    model: InflectionTransformer,
    examples: Sequence[InflectionExample],
    device: torch.device | str = "cpu",
) -> torch.Tensor:
    sources = [encode_source(ex, model.vocab) for ex in examples]
    forms = [ex.form for ex in examples]
    batch = make_batch(
        sources, model.vocab, forms, copy_enabled=model.config.copy_enabled,
        device=device,
    )
    return model.sequence_loss(batch)


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------


def save_model(model: InflectionTransformer, path) -> None:
    """Versioned binary container: magic, JSON header (config, vocabulary,
    tensor manifest), then named tensors as 32-bit little-endian floats in
    declaration order."""
    state = model.state_dict()
    names = list(state.keys())
    header = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "vocab": model.vocab.tokens,
        "vocab_hash": model.vocab.content_hash(),
        "tensors": [[n, list(state[n].shape)] for n in names],
    }
    header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for n in names:
            arr = state[n].detach().cpu().to(torch.float32).numpy()
            f.write(arr.astype("<f4", copy=False).tobytes())


def serialize_model(model: InflectionTransformer) -> bytes:
    import tempfile, os

    with tempfile.NamedTemporaryFile(delete=False) as tmp:
        name = tmp.name
    try:
        save_model(model, name)
        with open(name, "rb") as f:
            return f.read()
    finally:
        os.unlink(name)


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (length,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(length).decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {header.get('version')}"
        )
    return header


def load_model(path) -> InflectionTransformer:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (length,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8 : 8 + length].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {header.get('version')}"
        )
    vocab = Vocabulary(header["vocab"])
    if vocab.content_hash() != header["vocab_hash"]:
        raise CheckpointError(f"{path}: vocabulary hash mismatch")
    config = ModelConfig(**header["config"])
    model = InflectionTransformer(config, vocab)
    offset = 8 + length
    state = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        state[name] = torch.from_numpy(arr.copy()).reshape(shape)
    missing, unexpected = model.load_state_dict(state, strict=False)
    unexpected = [n for n in unexpected]
    missing = [n for n in missing if n not in ("positions", "generation_mask")]
    if missing or unexpected:
        raise CheckpointError(
            f"{path}: tensor mismatch (missing {missing}, unexpected {unexpected})"
        )
    model.eval()
    return model
