"""Sentence-level smoothed BLEU and the sign reward used by the agent."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import InvalidArgument


@dataclass(frozen=True)
class BleuConfig:
    max_ngram_order: int = 4
    # add one to matched and total counts for orders >= 2
    smoothing: bool = True

    def __post_init__(self):
        if self.max_ngram_order < 1:
            raise InvalidArgument("max_ngram_order must be >= 1")


@dataclass(frozen=True)
class RewardConfig:
    equality_tolerance: float = 1e-9

    def __post_init__(self):
        if self.equality_tolerance < 0:
            raise InvalidArgument("equality_tolerance must be >= 0")


DEFAULT_BLEU = BleuConfig()
DEFAULT_REWARD = RewardConfig()


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def smoothed_bleu(candidate: Sequence[int], reference: Sequence[int], config: BleuConfig = DEFAULT_BLEU) -> float:
    """Smoothed sentence BLEU in [0, 1].

    Orders above the candidate length contribute the smoothed precision
    (0 + 1) / (0 + 1) = 1 when smoothing is on. Without smoothing such an
    order has no n-grams and the score is 0.
    """
    if len(reference) == 0:
        raise InvalidArgument("reference must be non-empty")
    c_len, r_len = len(candidate), len(reference)
    if c_len == 0:
        return 0.0
    cand, ref = list(candidate), list(reference)
    log_sum = 0.0
    for n in range(1, config.max_ngram_order + 1):
        cand_counts = _ngrams(cand, n)
        ref_counts = _ngrams(ref, n)
        matched = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
        total = max(c_len - n + 1, 0)
        if config.smoothing and n >= 2:
            matched += 1
            total += 1
        if matched == 0:
            return 0.0
        log_sum += math.log(matched / total)
    brevity = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    return brevity * math.exp(log_sum / config.max_ngram_order)


def reward_from_bleu(previous_score: float, current_score: float, config: RewardConfig = DEFAULT_REWARD) -> int:
    for s in (previous_score, current_score):
        if not 0.0 <= s <= 1.0:
            raise InvalidArgument(f"BLEU score {s} outside [0, 1]")
    diff = current_score - previous_score
    if diff > config.equality_tolerance:
        return 1
    if diff < -config.equality_tolerance:
        return -1
    return 0


def corpus_average_bleu(pairs, config: BleuConfig = DEFAULT_BLEU) -> float:
    """Arithmetic mean of per-sentence smoothed BLEU over (candidate, reference) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise InvalidArgument("no sentence pairs to score")
    return math.fsum(smoothed_bleu(c, r, config) for c, r in pairs) / len(pairs)
