"""Vocabulary, synthetic regeneration corpora, splits and corpus files.

File formats
------------
corpus      UTF-8, one sentence per line, tokens separated by spaces. A line
            of the form ``source ||| target`` holds an explicit pair; any
            other line is a regeneration pair (target = source).
vocabulary  one token per line; the token on line k (0-based) has id k + 4.
            Ids 0-3 are the specials PAD, SOS, EOS, UNK and are not written.
manifest    one line per split: ``<split>: <i> <i> ...`` where the integers
            are 0-based line indices into the corpus file.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidArgument

log = logging.getLogger(__name__)

PAD, SOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<s>", "</s>", "<unk>")
PAIR_SEPARATOR = " ||| "
SPLIT_NAMES = ("train", "validation", "seen_test", "unseen_test")

Pair = tuple[list, list]


@dataclass
class Vocab:
    id_to_token: list[str]
    token_to_id: dict[str, int] = field(init=False)

    def __post_init__(self):
        if tuple(self.id_to_token[:4]) != SPECIALS:
            raise InvalidArgument("vocabulary must start with the four special tokens")
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise InvalidArgument("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def save(self, path) -> None:
        Path(path).write_text("".join(f"{tok}\n" for tok in self.id_to_token[4:]), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        tokens = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(list(SPECIALS) + tokens)


def build_vocab(sentences: Sequence[Sequence[str]], max_size: int) -> Vocab:
    """Keep the ``max_size - 4`` most frequent tokens; ties go to the lexicographically smaller."""
    if not sentences:
        raise InvalidArgument("cannot build a vocabulary from an empty corpus")
    if max_size < 5:
        raise InvalidArgument("max_size must leave room for at least one token besides the specials")
    counts = Counter(tok for sent in sentences for tok in sent if tok not in SPECIALS)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab(list(SPECIALS) + [tok for tok, _ in ranked[: max_size - 4]])


def encode_sentence(vocab: Vocab, tokens) -> list[int]:
    if isinstance(tokens, str):
        tokens = tokens.split()
    return [vocab.token_to_id.get(tok, UNK) for tok in tokens]


def decode_sentence(vocab: Vocab, ids: Sequence[int]) -> list[str]:
    out = []
    for i in ids:
        if not 0 <= i < len(vocab):
            raise InvalidArgument(f"token id {i} outside vocabulary of size {len(vocab)}")
        out.append(vocab.id_to_token[i])
    return out


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    vocab_size: int = 50
    min_length: int = 3
    max_length: int = 10
    n_pairs: int = 500
    zipf_exponent: float = 1.0

    def __post_init__(self):
        if self.vocab_size < 1 or self.n_pairs < 1:
            raise InvalidArgument("vocab_size and n_pairs must be positive")
        if not 1 <= self.min_length <= self.max_length:
            raise InvalidArgument("need 1 <= min_length <= max_length")
        if self.zipf_exponent < 0:
            raise InvalidArgument("zipf_exponent must be non-negative")

    def token_probabilities(self) -> np.ndarray:
        w = 1.0 / np.arange(1, self.vocab_size + 1) ** self.zipf_exponent
        return w / w.sum()

    def token_names(self) -> list[str]:
        width = len(str(self.vocab_size - 1))
        return [f"w{k:0{width}d}" for k in range(self.vocab_size)]


def synthesize_corpus(spec: SyntheticSpec, rng: np.random.Generator) -> list[Pair]:
    """Distinct random sentences as regeneration pairs (target = source)."""
    probs = spec.token_probabilities()
    names = spec.token_names()
    capacity = sum(spec.vocab_size**n for n in range(spec.min_length, spec.max_length + 1))
    if spec.n_pairs > capacity:
        raise InvalidArgument("spec asks for more distinct sentences than exist")
    seen: set[tuple[str, ...]] = set()
    pairs: list[Pair] = []
    while len(pairs) < spec.n_pairs:
        length = int(rng.integers(spec.min_length, spec.max_length + 1))
        sent = tuple(names[k] for k in rng.choice(spec.vocab_size, size=length, p=probs))
        if sent in seen:
            continue
        seen.add(sent)
        pairs.append((list(sent), list(sent)))
    return pairs


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


@dataclass
class DatasetSplits:
    train: list[Pair]
    validation: list[Pair]
    seen_test: list[Pair]
    unseen_test: list[Pair]
    # line indices into the corpus the splits were drawn from
    indices: dict[str, list[int]] = field(default_factory=dict)


def _resolve_sizes(n: int, fractions) -> tuple[int, int, int]:
    if all(isinstance(f, (int, np.integer)) for f in fractions):
        return tuple(int(f) for f in fractions)
    if any(f < 0 for f in fractions) or sum(fractions) > 1 + 1e-12:
        raise InvalidArgument("split fractions must be non-negative and sum to at most 1")
    sizes = [int(round(f * n)) for f in fractions]
    return tuple(sizes)


def split_dataset(pairs: Sequence[Pair], fractions, seen_test_size: int, rng: np.random.Generator) -> DatasetSplits:
    """Partition into train / validation / unseen test; sample seen test from train.

    ``fractions`` is ``(train, validation, unseen)`` as either integer counts
    or fractions of ``len(pairs)``. Duplicate sentences are dropped first so
    the unseen split never shares a sentence with train.
    """
    first_index: dict[tuple, int] = {}
    for i, (src, tgt) in enumerate(pairs):
        first_index.setdefault((tuple(src), tuple(tgt)), i)
    unique = sorted(first_index.values())
    n_train, n_valid, n_unseen = _resolve_sizes(len(pairs), fractions)
    if min(n_train, n_valid, n_unseen, seen_test_size) < 0:
        raise InvalidArgument("split sizes must be non-negative")
    if n_train + n_valid + n_unseen > len(unique) or seen_test_size > n_train:
        raise InvalidArgument(
            f"insufficient data: {len(unique)} distinct pairs for sizes "
            f"{n_train}/{n_valid}/{n_unseen} + seen {seen_test_size}"
        )
    order = [unique[k] for k in rng.permutation(len(unique))]
    train_idx = order[:n_train]
    valid_idx = order[n_train : n_train + n_valid]
    unseen_idx = order[n_train + n_valid : n_train + n_valid + n_unseen]
    seen_idx = [train_idx[k] for k in rng.choice(n_train, size=seen_test_size, replace=False)] if seen_test_size else []
    pick = lambda idx: [(list(pairs[i][0]), list(pairs[i][1])) for i in idx]  # noqa: E731
    return DatasetSplits(
        pick(train_idx),
        pick(valid_idx),
        pick(seen_idx),
        pick(unseen_idx),
        {"train": train_idx, "validation": valid_idx, "seen_test": seen_idx, "unseen_test": unseen_idx},
    )


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def read_corpus(path, max_length: int | None = None) -> list[Pair]:
    """Read a corpus file. Blank lines are skipped with a warning."""
    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            log.warning("%s:%d: skipping empty line", path, lineno)
            continue
        if PAIR_SEPARATOR in line:
            src_text, tgt_text = line.split(PAIR_SEPARATOR, 1)
            src, tgt = src_text.split(), tgt_text.split()
        else:
            src = line.split()
            tgt = list(src)
        if not src or not tgt:
            raise InvalidArgument(f"{path}:{lineno}: empty side of a sentence pair")
        if max_length is not None and max(len(src), len(tgt)) > max_length:
            raise InvalidArgument(f"{path}:{lineno}: sentence longer than max_length={max_length}")
        pairs.append((src, tgt))
    return pairs


def format_pair(src: Sequence[str], tgt: Sequence[str]) -> str:
    if list(src) == list(tgt):
        return " ".join(src)
    return " ".join(src) + PAIR_SEPARATOR + " ".join(tgt)


def write_corpus(path, pairs: Sequence[Pair]) -> None:
    Path(path).write_text("".join(format_pair(s, t) + "\n" for s, t in pairs), encoding="utf-8")


def manifest_text(indices: dict[str, list[int]]) -> str:
    return "".join(f"{name}: {' '.join(str(i) for i in indices.get(name, []))}".rstrip() + "\n" for name in SPLIT_NAMES)


def write_manifest(path, indices: dict[str, list[int]]) -> None:
    Path(path).write_text(manifest_text(indices), encoding="utf-8")


def read_manifest(path) -> dict[str, list[int]]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        name, _, rest = line.partition(":")
        out[name.strip()] = [int(tok) for tok in rest.split()]
    return out


def encode_pairs(vocab: Vocab, pairs: Sequence[Pair]) -> list[tuple[list[int], list[int]]]:
    return [(encode_sentence(vocab, s), encode_sentence(vocab, t)) for s, t in pairs]
