"""Data augmentation: multitask reinflection conversion and hallucination.

The reinflection converter groups inflected forms by lemma and creates a
row for every ordered pair of forms, plus "back to the lemma" rows marked
with the synthetic LEMMA tag. Hallucination replaces the aligned stem of
an existing example with a random string, keeping affixes intact, to make
pseudo training data for low-resource pretraining.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .data import LEMMA_TAG, InflectionExample
from .errors import DataError

# An example is unusable for hallucination when lemma and form share no
# substring of at least this length.
MIN_STEM_LENGTH = 3


@dataclass(frozen=True)
class ParadigmGroup:
    """All (form, tags) slots observed for one lemma, in input order."""

    lemma: str
    slots: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        if not self.slots:
            raise DataError("a paradigm group needs at least one slot")


@dataclass(frozen=True)
class AffixAlignment:
    """Decomposition lemma = prefix_lemma + stem + suffix_lemma and
    form = prefix_form + stem + suffix_form around the shared stem.

    Prefixes are tracked per side: the stem may start at different
    offsets in lemma and form (prefixing morphology), and the invariant
    is that each side reconstructs exactly.
    """

    prefix_lemma: str
    prefix_form: str
    stem: str
    suffix_lemma: str
    suffix_form: str

    def lemma(self) -> str:
        return self.prefix_lemma + self.stem + self.suffix_lemma

    def form(self) -> str:
        return self.prefix_form + self.stem + self.suffix_form

    def substitute_stem(self, new_stem: str) -> tuple[str, str]:
        """Rebuild (lemma, form) with the stem replaced."""
        return (
            self.prefix_lemma + new_stem + self.suffix_lemma,
            self.prefix_form + new_stem + self.suffix_form,
        )


def group_by_lemma(examples: Iterable[InflectionExample]) -> list[ParadigmGroup]:
    """Group examples by exact lemma string, preserving input order."""
    grouped: dict[str, list[tuple[str, tuple[str, ...]]]] = {}
    for ex in examples:
        grouped.setdefault(ex.lemma, []).append((ex.form, ex.tags))
    return [ParadigmGroup(lemma, tuple(slots)) for lemma, slots in grouped.items()]


def to_reinflection(groups: Iterable[ParadigmGroup]) -> list[InflectionExample]:
    """Expand paradigm groups into a reinflection training set.

    Per group, emits:
      - the original lemma -> form rows,
      - form A -> form B with B's tags, for every ordered pair of
        distinct slots,
      - form A -> lemma with tags [POS, LEMMA] where POS is the first
        tag of slot A.

    Identical triples are deduplicated, first occurrence wins.
    """
    out: list[InflectionExample] = []
    seen: set[tuple[str, str, tuple[str, ...]]] = set()

    def emit(source: str, target: str, tags: tuple[str, ...]):
        key = (source, target, tags)
        if key not in seen:
            seen.add(key)
            out.append(InflectionExample(source, target, tags))

    for group in groups:
        for form, tags in group.slots:
            emit(group.lemma, form, tags)
        for i, (form_a, _tags_a) in enumerate(group.slots):
            for j, (form_b, tags_b) in enumerate(group.slots):
                if i != j:
                    emit(form_a, form_b, tags_b)
        for form, tags in group.slots:
            emit(form, group.lemma, (tags[0], LEMMA_TAG))
    return out


def _longest_common_substring(a: str, b: str) -> tuple[int, int, int]:
    """Return (length, end_in_a, end_in_b) of the longest common substring.

    Ties resolved toward the earliest end position in ``a``, then in ``b``.
    Plain O(len(a)*len(b)) dynamic programming; strings here are words.
    """
    best_len, best_i, best_j = 0, 0, 0
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
                if cur[j] > best_len:
                    best_len, best_i, best_j = cur[j], i, j
        prev = cur
    return best_len, best_i, best_j


def align_affixes(lemma: str, form: str) -> AffixAlignment | None:
    """Decompose lemma and form around their longest common substring.

    Returns None when the shared stem is shorter than MIN_STEM_LENGTH;
    such pairs (suppletive forms like go/went) carry no reusable
    affixation rule. The decomposition uses the first occurrence of the
    stem in each string.
    """
    if not lemma or not form:
        raise DataError("align_affixes requires non-empty strings")
    length, end_i, _end_j = _longest_common_substring(lemma, form)
    if length < MIN_STEM_LENGTH:
        return None
    stem = lemma[end_i - length : end_i]
    li = lemma.index(stem)
    fi = form.index(stem)
    return AffixAlignment(
        prefix_lemma=lemma[:li],
        prefix_form=form[:fi],
        stem=stem,
        suffix_lemma=lemma[li + length :],
        suffix_form=form[fi + length :],
    )


def hallucinate(
    examples: Sequence[InflectionExample],
    n: int,
    alphabet: Iterable[str],
    seed: int,
) -> list[InflectionExample]:
    """Generate ``n`` pseudo-examples by random stem substitution.

    Each output picks an alignable source example uniformly, replaces its
    stem with a fresh random string of the same length (characters drawn
    i.i.d. from ``alphabet``), and substitutes into both lemma and form.
    Tags are copied unchanged. Deterministic given ``seed``.
    """
    if n < 0:
        raise DataError("n must be non-negative")
    if n == 0:
        return []
    chars = sorted(set(alphabet))
    if not chars:
        raise DataError("alphabet must be non-empty")
    alignable: list[tuple[InflectionExample, AffixAlignment]] = []
    for ex in examples:
        if not ex.form:
            continue
        alignment = align_affixes(ex.lemma, ex.form)
        if alignment is not None:
            alignable.append((ex, alignment))
    if not alignable:
        raise DataError("no hallucination source: no example has an alignable stem")

    rng = random.Random(seed)
    out = []
    for _ in range(n):
        ex, al = alignable[rng.randrange(len(alignable))]
        stem = "".join(rng.choice(chars) for _ in range(len(al.stem)))
        lemma, form = al.substitute_stem(stem)
        out.append(InflectionExample(lemma, form, ex.tags))
    return out


def observed_alphabet(examples: Iterable[InflectionExample]) -> list[str]:
    """Distinct characters over all lemmas and forms, sorted."""
    chars: set[str] = set()
    for ex in examples:
        chars.update(ex.lemma)
        chars.update(ex.form)
    return sorted(chars)
