"""Shared-task TSV parsing, vocabulary construction, and sequence encoding.

File format: UTF-8, LF line endings, tab-separated columns.
Training rows are ``lemma<TAB>form<TAB>tag;tag;...``; test rows may omit
the form column. Tags are opaque strings, split on ";" and kept in file
order (never sorted).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

from .errors import DataError, ParseError

PAD = "<pad>"
BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

# Tags live in their own namespace so a tag can never collide with a
# single-character token.
TAG_PREFIX = "TAG:"

# Synthetic tag marking "inflect back to the lemma" rows in multitask data.
LEMMA_TAG = "LEMMA"


@dataclass(frozen=True)
class InflectionExample:
    """One (lemma, inflected form, tag sequence) training or test item.

    ``form`` may be empty only for uncovered test items.
    """

    lemma: str
    form: str
    tags: tuple[str, ...]

    def __post_init__(self):
        if not self.lemma:
            raise DataError("lemma must be non-empty")
        if not self.tags:
            raise DataError("tag list must be non-empty")
        for t in self.tags:
            if "\t" in t or "\n" in t:
                raise DataError(f"tag contains tab/newline: {t!r}")

    @property
    def tag_string(self) -> str:
        return ";".join(self.tags)


@dataclass(frozen=True)
class EncodedSequence:
    """Token ids plus the parallel surface strings.

    Surface strings are kept so the copy mechanism can address source
    characters even when their id is UNK.
    """

    ids: tuple[int, ...]
    surface: tuple[str, ...]

    def __post_init__(self):
        if len(self.ids) != len(self.surface):
            raise DataError("ids and surface must have equal length")

    def __len__(self) -> int:
        return len(self.ids)


class Vocabulary:
    """Bidirectional token<->index map over characters, tags, and specials.

    Index layout: the four specials at 0-3, then characters sorted by
    codepoint, then tags (prefixed with ``TAG:``) sorted lexicographically.
    The ordering is deterministic so identical data always yields an
    identical vocabulary.
    """

    def __init__(self, tokens: Sequence[str]):
        self.tokens: list[str] = list(tokens)
        self.index: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise DataError("duplicate tokens in vocabulary")
        if tuple(self.tokens[:4]) != SPECIALS:
            raise DataError("specials must occupy indices 0-3")
        self.num_chars = sum(1 for t in self.tokens[4:] if not t.startswith(TAG_PREFIX))
        self.num_tags = len(self.tokens) - 4 - self.num_chars

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @classmethod
    def build(cls, examples: Iterable[InflectionExample]) -> "Vocabulary":
        """Collect every character and tag from ``examples``.

        Deterministic and invariant to the order of the input multiset.
        """
        chars: set[str] = set()
        tags: set[str] = set()
        empty = True
        for ex in examples:
            empty = False
            chars.update(ex.lemma)
            chars.update(ex.form)
            tags.update(ex.tags)
        if empty:
            raise DataError("cannot build a vocabulary from zero examples")
        tokens = list(SPECIALS)
        tokens.extend(sorted(chars))
        tokens.extend(TAG_PREFIX + t for t in sorted(tags))
        return cls(tokens)

    def token_to_id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def id_to_token(self, idx: int) -> str:
        return self.tokens[idx]

    def is_tag(self, token: str) -> bool:
        return token.startswith(TAG_PREFIX)

    def characters(self) -> list[str]:
        return [t for t in self.tokens[4:] if not t.startswith(TAG_PREFIX)]

    def generation_target_ids(self) -> list[int]:
        """Ids the decoder may emit: characters, EOS, and UNK.

        PAD, BOS, and tag tokens are never legal outputs; inflected forms
        do not contain tags.
        """
        ids = [EOS_ID, UNK_ID]
        ids.extend(
            i
            for i, t in enumerate(self.tokens)
            if i >= 4 and not t.startswith(TAG_PREFIX)
        )
        return ids

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for t in self.tokens:
            h.update(t.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()


def _parse_tags(tag_field: str, line_no: int) -> tuple[str, ...]:
    if not tag_field:
        raise ParseError("empty tag field", line_no)
    return tuple(tag_field.split(";"))


def parse_train_tsv(text: str) -> list[InflectionExample]:
    """Parse a three-column training document, one example per line."""
    examples = []
    for line_no, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split("\t")]
        if len(fields) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", line_no)
        lemma, form, tag_field = fields
        examples.append(InflectionExample(lemma, form, _parse_tags(tag_field, line_no)))
    return examples


def parse_test_tsv(text: str) -> list[InflectionExample]:
    """Parse a test document: 2 columns (lemma, tags) or 3 with a gold form."""
    examples = []
    for line_no, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split("\t")]
        if len(fields) == 2:
            lemma, tag_field = fields
            form = ""
        elif len(fields) == 3:
            lemma, form, tag_field = fields
        else:
            raise ParseError(f"expected 2 or 3 tab-separated fields, got {len(fields)}", line_no)
        examples.append(InflectionExample(lemma, form, _parse_tags(tag_field, line_no)))
    return examples


def encode_source(example: InflectionExample, vocab: Vocabulary) -> EncodedSequence:
    """Encode ``[BOS] lemma-characters tag-tokens [EOS]``.

    Characters missing from the vocabulary map to UNK but keep their
    surface string so the copy path can still emit them.
    """
    surface = [BOS]
    surface.extend(example.lemma)
    surface.extend(TAG_PREFIX + t for t in example.tags)
    surface.append(EOS)
    ids = tuple(vocab.token_to_id(t) for t in surface)
    return EncodedSequence(ids=ids, surface=tuple(surface))


def copyable_positions(seq: EncodedSequence) -> list[int]:
    """Source positions whose surface token is a lemma character.

    Specials and tag tokens are multi-character strings, so a length-1
    surface token is always a lemma character.
    """
    return [i for i, t in enumerate(seq.surface) if len(t) == 1]


def write_predictions(
    items: Sequence[tuple[InflectionExample, str]], sink: IO[str]
) -> None:
    """Write ``lemma<TAB>predicted<TAB>tags`` lines; round-trips through
    parse_train_tsv."""
    for example, predicted in items:
        sink.write(f"{example.lemma}\t{predicted}\t{example.tag_string}\n")


def format_predictions(items: Sequence[tuple[InflectionExample, str]]) -> str:
    import io

    buf = io.StringIO()
    write_predictions(items, buf)
    return buf.getvalue()
