"""Deterministic synthetic suffixation language for tests and experiments.

Lemmas are random CV-syllable strings; three inflection rules apply pure
suffixes: plural "+os", past "+ed", third-singular "+s". An optional OOV
mode swaps a fraction of test-lemma characters for characters held out
of the training alphabet, to probe copy-mechanism behavior.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from .data import InflectionExample
from .errors import DataError

CONSONANTS = "bcdfghjklmnprstv"
VOWELS = "aeiou"
# Characters never used when building lemmas; swapping them in makes a
# test character out-of-vocabulary relative to any training set drawn
# from CONSONANTS + VOWELS.
OOV_CHARACTERS = "qwxz"

RULES: tuple[tuple[tuple[str, ...], str], ...] = (
    (("N", "PL"), "os"),
    (("V", "PST"), "ed"),
    (("V", "3", "SG"), "s"),
)


def make_lemma(rng: random.Random, min_syllables: int = 2, max_syllables: int = 4) -> str:
    n = rng.randint(min_syllables, max_syllables)
    return "".join(rng.choice(CONSONANTS) + rng.choice(VOWELS) for _ in range(n))


def inflect(lemma: str, tags: Sequence[str]) -> str:
    for rule_tags, suffix in RULES:
        if tuple(tags) == rule_tags:
            return lemma + suffix
    raise DataError(f"no rule for tags {';'.join(tags)}")


def _with_oov(lemma: str, rng: random.Random, ratio: float) -> str:
    chars = list(lemma)
    for i in range(len(chars)):
        if rng.random() < ratio:
            chars[i] = rng.choice(OOV_CHARACTERS)
    return "".join(chars)


@dataclass
class SyntheticSplit:
    train: list[InflectionExample]
    test: list[InflectionExample]


def generate(
    n_train: int,
    n_test: int,
    seed: int,
    oov_ratio: float = 0.0,
) -> SyntheticSplit:
    """Build a train/test split with disjoint lemma sets.

    Every (lemma, rule) pair is unique. ``oov_ratio`` is the per-character
    probability of replacing a test-lemma character with a held-out one;
    the gold form inflects the modified lemma, so solving the test set
    requires copying those characters.
    """
    rng = random.Random(seed)
    seen: set[str] = set()

    def fresh_lemma() -> str:
        while True:
            lemma = make_lemma(rng)
            if lemma not in seen:
                seen.add(lemma)
                return lemma

    def build(n: int, oov: float) -> list[InflectionExample]:
        out = []
        while len(out) < n:
            lemma = fresh_lemma()
            if oov > 0:
                lemma = _with_oov(lemma, rng, oov)
            for tags, _suffix in RULES:
                if len(out) >= n:
                    break
                out.append(InflectionExample(lemma, inflect(lemma, tags), tags))
        return out

    return SyntheticSplit(train=build(n_train, 0.0), test=build(n_test, oov_ratio))
