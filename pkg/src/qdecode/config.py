"""Run configuration: a flat ``key = value`` file plus command-line overrides.

Precedence is flag > file > default. Unknown keys and out-of-range values are
rejected before anything is written. Randomness for each phase comes from its
own named sub-stream of the run seed, so changing one phase never shifts the
draws of another.

Example file::

    # toy run
    seed = 3
    hidden_dim = 64
    embed_dim = 64
    pretrain_epochs = 20
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from .corpus import SyntheticSpec
from .dqn import CANDIDATE_RULES, DqnTrainConfig
from .errors import InvalidArgument
from .stategf import PretrainConfig

STREAMS = {"corpus": 0, "pretrain": 1, "dqn": 2, "eval": 3}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # StateGF and optimizer
    hidden_dim: int = 100
    embed_dim: int = 100
    init_halfwidth: float = 0.15
    learning_rate: float = 0.05
    clip_threshold: float = 15.0
    weight_decay: float = 0.00016
    dropout: float = 0.2
    pretrain_epochs: int = 20
    max_length: int = 30
    vocab_size: int = 10000
    # DQN
    discount: float = 0.95
    bleu_threshold: float = 0.92
    epsilon_start: float = 1.0
    epsilon_final: float = 0.1
    epsilon_anneal_steps: int = 20000
    error_bias_weight: float = 3.0
    target_sync_period: int = 100
    episode_length_multiplier: int = 2
    dqn_epochs: int = 10
    dqn_learning_rate: float = 0.05
    replay_capacity: int = 50000
    batch_size: int = 1
    candidate_rule: str = "alternative"
    # synthetic corpus
    corpus_vocab: int = 50
    corpus_min_length: int = 3
    corpus_max_length: int = 10
    corpus_zipf: float = 1.0
    train_size: int = 500
    valid_size: int = 50
    unseen_size: int = 50
    seen_size: int = 50
    # evaluation
    epsilons: str = "0,0.05,0.1,0.2,0.5"

    def __post_init__(self):
        positive_ints = ("hidden_dim", "embed_dim", "max_length", "corpus_vocab", "corpus_min_length",
                         "train_size", "unseen_size", "seen_size")
        for name in positive_ints:
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be >= 1")
        for name in ("pretrain_epochs", "valid_size"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be >= 0")
        if self.vocab_size < 5:
            raise InvalidArgument("vocab_size must leave room for at least one word besides the 4 specials")
        if not 0.0 < self.init_halfwidth:
            raise InvalidArgument("init_halfwidth must be > 0")
        if self.corpus_max_length > self.max_length:
            raise InvalidArgument("corpus_max_length may not exceed max_length")
        if self.candidate_rule not in CANDIDATE_RULES:
            raise InvalidArgument(f"candidate_rule must be one of {CANDIDATE_RULES}")
        if self.seed < 0:
            raise InvalidArgument("seed must be non-negative")
        self.epsilon_list()
        # the phase configs carry their own range checks
        self.pretrain_config()
        self.dqn_config()
        self.synthetic_spec()

    # -- derived configs ---------------------------------------------------

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(
            epochs=self.pretrain_epochs,
            learning_rate=self.learning_rate,
            clip_threshold=self.clip_threshold,
            weight_decay=self.weight_decay,
            dropout=self.dropout,
            max_length=self.max_length,
        )

    def dqn_config(self) -> DqnTrainConfig:
        return DqnTrainConfig(
            discount=self.discount,
            bleu_threshold=self.bleu_threshold,
            epsilon_start=self.epsilon_start,
            epsilon_final=self.epsilon_final,
            epsilon_anneal_steps=self.epsilon_anneal_steps,
            error_bias_weight=self.error_bias_weight,
            target_sync_period=self.target_sync_period,
            episode_length_multiplier=self.episode_length_multiplier,
            epochs=self.dqn_epochs,
            replay_capacity=self.replay_capacity,
            batch_size=self.batch_size,
            learning_rate=self.dqn_learning_rate,
            clip_threshold=self.clip_threshold,
            weight_decay=self.weight_decay,
            init_halfwidth=self.init_halfwidth,
            max_length=self.max_length,
            candidate_rule=self.candidate_rule,
        )

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            vocab_size=self.corpus_vocab,
            min_length=self.corpus_min_length,
            max_length=self.corpus_max_length,
            n_pairs=self.train_size + self.valid_size + self.unseen_size,
            zipf_exponent=self.corpus_zipf,
        )

    def epsilon_list(self) -> list[float]:
        try:
            values = [float(tok) for tok in self.epsilons.split(",") if tok.strip()]
        except ValueError as exc:
            raise InvalidArgument(f"epsilons: {exc}") from None
        if not values:
            raise InvalidArgument("epsilons must list at least one value")
        if any(not 0.0 <= e <= 1.0 for e in values):
            raise InvalidArgument("every epsilon must lie in [0, 1]")
        return values

    def rng(self, stream: str) -> np.random.Generator:
        """Independent generator for one named phase of the run."""
        if stream not in STREAMS:
            raise InvalidArgument(f"unknown random stream {stream!r}")
        return np.random.default_rng([self.seed, STREAMS[stream]])

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def coerce(key: str, raw) -> object:
    """Convert ``raw`` (usually a string) to the declared type of ``key``."""
    if key not in FIELD_TYPES:
        raise InvalidArgument(f"unknown config key {key!r}")
    cast = _CASTS[FIELD_TYPES[key]]
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if cast is int and isinstance(raw, str):
            value = int(raw, 10)
        elif cast is int and isinstance(raw, float):
            if not raw.is_integer():
                raise ValueError(f"{raw} is not an integer")
            value = int(raw)
        else:
            value = cast(raw)
    except ValueError as exc:
        raise InvalidArgument(f"{key}: {exc}") from None
    return value


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, object]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise InvalidArgument(f"{origin}:{lineno}: expected 'key = value'")
        key = key.strip()
        if key in values:
            raise InvalidArgument(f"{origin}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = coerce(key, raw)
        except InvalidArgument as exc:
            raise InvalidArgument(f"{origin}:{lineno}: {exc}") from None
    return values


def load_config(path=None, overrides: Mapping[str, object] | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (None values ignored)."""
    values: dict[str, object] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise InvalidArgument(f"config file not found: {p}")
        values.update(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    for key, raw in (overrides or {}).items():
        if raw is not None:
            values[key] = coerce(key, raw)
    return RunConfig(**values)
