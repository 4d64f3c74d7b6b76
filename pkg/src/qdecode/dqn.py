"""Q-network that edits a decoded sentence one token at a time.

A state is a (source, decoded) pair. The frozen StateGF is run teacher-forced
over the decoded sentence; at each position t it yields a decoder hidden
vector and a probability list over the vocabulary. The Q-network reads, per
position, ``[h_t ; p_t(current) ; p_t(candidate) ; r_t]`` with a
bidirectional LSTM started from the encoder's final state, and outputs one
Q-value per position (replace that token with the position's candidate) plus
one for "no modification". ``r_t`` is the log probability ratio of the
candidate over the current token, clipped to +-5 and scaled to [-1, 1]; raw
probabilities near zero hide how lopsided a position is.

Candidate rules:

``top1``
    the argmax of the position's probability list.
``alternative``
    the highest-ranked word that differs from the current token (specials
    other than UNK excluded). Under teacher forcing a greedy decode is a fixed
    point of ``top1``, so this rule is the default.
"""

from __future__ import annotations

import logging
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import checkpoint
from .corpus import EOS, PAD, SOS
from .errors import InvalidArgument, InvalidState
from .metric import BleuConfig, RewardConfig, corpus_average_bleu, reward_from_bleu, smoothed_bleu
from .nn import (
    BiLstmParams,
    LstmParams,
    LstmState,
    OptimizerState,
    bilstm_backward,
    bilstm_forward_tape,
    clip_gradient_norm,
    init_uniform,
    optimizer_step,
)
from .stategf import DecodeTrace, StateGFParams, decode_forward, encode, greedy_sentence, teacher_inputs

log = logging.getLogger(__name__)

CANDIDATE_RULES = ("alternative", "top1")
N_PROB_FEATURES = 3
RATIO_CLIP = 5.0


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DqnState:
    source: tuple[int, ...]
    decoded: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "source", tuple(int(t) for t in self.source))
        object.__setattr__(self, "decoded", tuple(int(t) for t in self.decoded))
        if not self.source or not self.decoded:
            raise InvalidArgument("source and decoded sentences must be non-empty")


@dataclass(frozen=True)
class ActionChoice:
    kind: str  # "replace" or "noop"
    position: int | None = None
    new_token: int | None = None

    @classmethod
    def noop(cls) -> "ActionChoice":
        return cls("noop")

    def index(self, length: int) -> int:
        """Index of this action in a length-``length`` sentence's Q-vector."""
        return length if self.kind == "noop" else self.position


@dataclass(frozen=True)
class Transition:
    state: DqnState
    action: ActionChoice
    reward: int
    next_state: DqnState
    next_bleu: float
    terminal: bool


@dataclass
class QNetParams:
    bilstm: BiLstmParams
    position_w: np.ndarray  # (1, 2H)
    position_b: np.ndarray  # (1,)
    noop_w: np.ndarray  # (1, 2H)
    noop_b: np.ndarray  # (1,)

    def __post_init__(self):
        width = 2 * self.bilstm.hidden_dim
        for name in ("position_w", "noop_w"):
            if getattr(self, name).shape != (1, width):
                raise InvalidArgument(f"{name} must have shape (1, {width})")
        for name in ("position_b", "noop_b"):
            if getattr(self, name).shape != (1,):
                raise InvalidArgument(f"{name} must have shape (1,)")

    @property
    def hidden_dim(self) -> int:
        return self.bilstm.hidden_dim

    @classmethod
    def init(cls, hidden_dim: int, halfwidth: float, rng: np.random.Generator) -> "QNetParams":
        width = 2 * hidden_dim
        return cls(
            BiLstmParams.init(hidden_dim + N_PROB_FEATURES, hidden_dim, halfwidth, rng),
            init_uniform((1, width), halfwidth, rng),
            np.zeros(1),
            init_uniform((1, width), halfwidth, rng),
            np.zeros(1),
        )

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {f"bilstm.{k}": v for k, v in self.bilstm.named_arrays().items()}
        out.update(position_w=self.position_w, position_b=self.position_b, noop_w=self.noop_w, noop_b=self.noop_b)
        return out

    def copy(self) -> "QNetParams":
        return qnet_from_tensors({k: v.copy() for k, v in self.named_arrays().items()})

    def save(self, path, meta: dict | None = None) -> None:
        info = {"kind": "qnet", "hidden_dim": self.hidden_dim}
        info.update(meta or {})
        checkpoint.save(path, self.named_arrays(), info)


def qnet_from_tensors(t: dict[str, np.ndarray]) -> QNetParams:
    try:
        lstm = lambda p: LstmParams(t[f"bilstm.{p}.w_x"], t[f"bilstm.{p}.w_h"], t[f"bilstm.{p}.b"])  # noqa: E731
        return QNetParams(
            BiLstmParams(lstm("forward"), lstm("backward")),
            *(np.array(t[k], dtype=np.float64) for k in ("position_w", "position_b", "noop_w", "noop_b")),
        )
    except KeyError as exc:
        raise InvalidArgument(f"checkpoint is missing tensor {exc}") from None


def load_qnet(path) -> tuple[QNetParams, dict]:
    tensors, meta = checkpoint.load(path)
    if meta.get("kind") != "qnet":
        raise InvalidArgument(f"{path} is not a Q-network checkpoint")
    return qnet_from_tensors(tensors), meta


class ReplayMemory:
    """Bounded FIFO of transitions with uniform sampling."""

    def __init__(self, capacity: int = 50000):
        if capacity < 1:
            raise InvalidArgument("replay capacity must be positive")
        self.capacity = capacity
        self.buffer: deque[Transition] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.buffer)

    def __iter__(self):
        return iter(self.buffer)


def store_transition(memory: ReplayMemory, transition: Transition) -> None:
    memory.buffer.append(transition)  # deque(maxlen) drops the oldest


def sample_transition(memory: ReplayMemory, rng: np.random.Generator) -> Transition:
    if not memory.buffer:
        raise InvalidState("cannot sample from an empty replay memory")
    return memory.buffer[int(rng.integers(len(memory.buffer)))]


@dataclass
class DqnTrainConfig:
    discount: float = 0.95
    bleu_threshold: float = 0.92
    epsilon_start: float = 1.0
    epsilon_final: float = 0.1
    epsilon_anneal_steps: int = 20000
    error_bias_weight: float = 3.0
    target_sync_period: int = 100
    episode_length_multiplier: int = 2
    epochs: int = 10
    replay_capacity: int = 50000
    batch_size: int = 1
    learning_rate: float = 0.05
    clip_threshold: float = 15.0
    weight_decay: float = 0.00016
    init_halfwidth: float = 0.15
    max_length: int = 30
    candidate_rule: str = "alternative"

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise InvalidArgument("discount must lie in [0, 1)")
        if not 0.0 < self.bleu_threshold < 1.0:
            raise InvalidArgument("bleu_threshold must lie in (0, 1)")
        for name in ("epsilon_start", "epsilon_final"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidArgument(f"{name} must lie in [0, 1]")
        if self.error_bias_weight < 1.0:
            raise InvalidArgument("error_bias_weight must be >= 1")
        for name in ("epsilon_anneal_steps", "target_sync_period", "episode_length_multiplier", "replay_capacity", "batch_size"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be >= 1")
        if self.epochs < 0:
            raise InvalidArgument("epochs must be >= 0")
        if self.learning_rate <= 0 or self.clip_threshold <= 0 or self.init_halfwidth <= 0:
            raise InvalidArgument("learning_rate, clip_threshold and init_halfwidth must be positive")
        if self.weight_decay < 0:
            raise InvalidArgument("weight_decay must be non-negative")
        if self.max_length < 1:
            raise InvalidArgument("max_length must be >= 1")
        if self.candidate_rule not in CANDIDATE_RULES:
            raise InvalidArgument(f"candidate_rule must be one of {CANDIDATE_RULES}")

    def epsilon_at(self, step: int) -> float:
        frac = min(1.0, step / self.epsilon_anneal_steps)
        return self.epsilon_start + frac * (self.epsilon_final - self.epsilon_start)


# ---------------------------------------------------------------------------
# State features from the frozen StateGF
# ---------------------------------------------------------------------------


def candidate_tokens(trace: DecodeTrace, decoded: Sequence[int], rule: str = "alternative") -> list[int]:
    if rule == "top1":
        return list(trace.argmax_tokens)
    probs = trace.probability_lists
    order = np.argsort(-probs, axis=1, kind="stable")
    out = []
    for t, cur in enumerate(decoded):
        for tok in order[t]:
            if tok != cur and tok not in (PAD, SOS, EOS):
                out.append(int(tok))
                break
    return out


@dataclass
class StateView:
    """Everything the Q-network needs about one state."""

    trace: DecodeTrace
    features: np.ndarray  # (T, H + N_PROB_FEATURES)
    candidates: list[int]

    @property
    def init(self) -> LstmState:
        return self.trace.encoder_final


def state_view(stategf: StateGFParams, state: DqnState, rule: str = "alternative") -> StateView:
    enc = encode(stategf, state.source)
    trace = decode_forward(stategf, enc, teacher_inputs(state.decoded))
    cands = candidate_tokens(trace, state.decoded, rule)
    rows = np.arange(len(state.decoded))
    probs = trace.probability_lists
    p_cur = probs[rows, list(state.decoded)]
    p_cand = probs[rows, cands]
    ratio = np.clip(np.log(p_cand + 1e-300) - np.log(p_cur + 1e-300), -RATIO_CLIP, RATIO_CLIP) / RATIO_CLIP
    feats = np.hstack([trace.decoder_hiddens, p_cur[:, None], p_cand[:, None], ratio[:, None]])
    return StateView(trace, feats, cands)


class StateCache:
    """Memoizes state views of a frozen StateGF (a pure function of the state)."""

    def __init__(self, stategf: StateGFParams, rule: str = "alternative", maxsize: int = 20000):
        if not stategf.frozen:
            raise InvalidState("state views may only be cached for a frozen StateGF")
        self.stategf = stategf
        self.rule = rule
        self.maxsize = maxsize
        self._views: OrderedDict[DqnState, StateView] = OrderedDict()
        self._greedy: dict[tuple[int, ...], tuple[int, ...]] = {}

    def view(self, state: DqnState) -> StateView:
        v = self._views.get(state)
        if v is not None:
            self._views.move_to_end(state)
            return v
        v = state_view(self.stategf, state, self.rule)
        self._views[state] = v
        if len(self._views) > self.maxsize:
            self._views.popitem(last=False)
        return v

    def greedy(self, source: Sequence[int], max_length: int) -> tuple[int, ...]:
        key = tuple(source)
        if key not in self._greedy:
            self._greedy[key] = tuple(greedy_sentence(self.stategf, key, max_length))
        return self._greedy[key]


# ---------------------------------------------------------------------------
# Q-network forward / backward
# ---------------------------------------------------------------------------


@dataclass
class QTape:
    bilstm_tape: object
    outputs: np.ndarray  # (T, 2H)
    pooled: np.ndarray


def _q_values(qnet: QNetParams, view: StateView, keep_tape: bool = False):
    out, tape = bilstm_forward_tape(qnet.bilstm, view.features, view.init, view.init)
    pooled = out.mean(axis=0)
    q = np.empty(out.shape[0] + 1)
    q[:-1] = out @ qnet.position_w[0] + qnet.position_b[0]
    q[-1] = pooled @ qnet.noop_w[0] + qnet.noop_b[0]
    return (q, QTape(tape, out, pooled)) if keep_tape else q


def q_forward(qnet: QNetParams, stategf: StateGFParams, state: DqnState, rule: str = "alternative"):
    """Q-values (length T + 1, no-op last) and the StateGF trace of ``state``."""
    view = state_view(stategf, state, rule)
    return _q_values(qnet, view), view.trace


def q_loss_and_grads(qnet: QNetParams, view: StateView, action_index: int, target_q: float):
    """Squared error ``(target_q - Q(s, a))**2`` and its gradient wrt the Q-network."""
    q, tape = _q_values(qnet, view, keep_tape=True)
    residual = target_q - q[action_index]
    dq = -2.0 * residual
    steps = tape.outputs.shape[0]
    d_out = np.zeros_like(tape.outputs)
    grads = {k: np.zeros_like(v) for k, v in (("position_w", qnet.position_w), ("position_b", qnet.position_b),
                                              ("noop_w", qnet.noop_w), ("noop_b", qnet.noop_b))}
    if action_index < steps:
        d_out[action_index] = dq * qnet.position_w[0]
        grads["position_w"][0] = dq * tape.outputs[action_index]
        grads["position_b"][0] = dq
    else:
        d_out += dq * qnet.noop_w[0] / steps
        grads["noop_w"][0] = dq * tape.pooled
        grads["noop_b"][0] = dq
    g_lstm, _, _, _ = bilstm_backward(qnet.bilstm, tape.bilstm_tape, d_out)
    grads.update({f"bilstm.{k}": v for k, v in g_lstm.items()})
    return residual * residual, grads


# ---------------------------------------------------------------------------
# Acting
# ---------------------------------------------------------------------------


def select_action(
    q_values: np.ndarray,
    epsilon: float,
    error_positions,
    rng: np.random.Generator,
    error_bias_weight: float = 3.0,
    candidates: Sequence[int] | None = None,
) -> ActionChoice:
    """Epsilon-greedy choice; exploration favors ``error_positions`` by ``error_bias_weight``.

    Exactly one uniform draw decides explore/exploit, and exploring draws one
    more uniform that is inverted through the weight CDF, so the generator
    advances identically for any Q-values.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidArgument("epsilon must lie in [0, 1]")
    n = len(q_values)
    if rng.random() < epsilon:
        weights = np.ones(n)
        for t in error_positions:
            if 0 <= t < n - 1:
                weights[t] = error_bias_weight
        cdf = np.cumsum(weights)
        idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    else:
        idx = int(np.argmax(q_values))
    if idx == n - 1:
        return ActionChoice.noop()
    return ActionChoice("replace", idx, None if candidates is None else int(candidates[idx]))


def apply_action(state: DqnState, action: ActionChoice, trace: DecodeTrace) -> DqnState:
    if action.kind == "noop":
        return state
    t = action.position
    if t is None or not 0 <= t < len(state.decoded) or t >= len(trace):
        raise InvalidArgument(f"replace position {t} outside sentence of length {len(state.decoded)}")
    new = trace.argmax_tokens[t] if action.new_token is None else action.new_token
    decoded = list(state.decoded)
    decoded[t] = new
    return DqnState(state.source, tuple(decoded))


def compute_error_positions(decoded: Sequence[int], target: Sequence[int]) -> set[int]:
    return {t for t in range(len(decoded)) if t >= len(target) or decoded[t] != target[t]}


# ---------------------------------------------------------------------------
# Learning
# ---------------------------------------------------------------------------


def _target_from_views(transition: Transition, target_qnet: QNetParams, next_view: StateView | None, discount: float):
    if transition.terminal:
        return float(transition.reward)
    return float(transition.reward + discount * _q_values(target_qnet, next_view).max())


def compute_target(transition: Transition, target_qnet: QNetParams, stategf: StateGFParams,
                   config: DqnTrainConfig) -> float:
    """Bellman target: the reward at terminal states, else reward + discount * max Q'."""
    if transition.terminal:
        return float(transition.reward)
    view = state_view(stategf, transition.next_state, config.candidate_rule)
    return _target_from_views(transition, target_qnet, view, config.discount)


def dqn_gradient_step(
    qnet: QNetParams,
    stategf: StateGFParams,
    transition: Transition,
    target_q: float,
    optimizer_state: OptimizerState,
    clip_threshold: float = 15.0,
    view: StateView | None = None,
    rule: str = "alternative",
) -> QNetParams:
    """One clipped AdaGrad step on ``(target_q - Q(s, a))**2``; only the Q-network moves."""
    if view is None:
        view = state_view(stategf, transition.state, rule)
    _, grads = q_loss_and_grads(qnet, view, transition.action.index(len(transition.state.decoded)), target_q)
    return optimizer_step(optimizer_state, qnet, clip_gradient_norm(grads, clip_threshold))


@dataclass
class EpisodeRecord:
    epoch: int
    target_length: int
    actions: int
    total_reward: int
    final_bleu: float
    terminated: bool


@dataclass
class DqnTrainLog:
    epochs: list[int] = field(default_factory=list)
    mean_reward: list[float] = field(default_factory=list)
    mean_bleu: list[float] = field(default_factory=list)
    epsilon: list[float] = field(default_factory=list)
    episodes: list[EpisodeRecord] = field(default_factory=list)

    def rows(self):
        return list(zip(self.epochs, self.mean_reward, self.mean_bleu, self.epsilon))


def train_dqn(
    stategf: StateGFParams,
    corpus: Sequence[tuple[Sequence[int], Sequence[int]]],
    config: DqnTrainConfig,
    rng: np.random.Generator,
    memory: ReplayMemory | None = None,
    on_epoch: Callable[[int, float, float, float], None] | None = None,
    bleu_config: BleuConfig = BleuConfig(),
    reward_config: RewardConfig = RewardConfig(),
) -> tuple[QNetParams, DqnTrainLog]:
    """Deep Q-learning over editing episodes of the training pairs.

    Each episode starts from the greedy decode of the source and runs
    ``episode_length_multiplier * len(target)`` actions, ending early once
    the smoothed BLEU exceeds ``bleu_threshold``. Every action is stored in
    replay memory and followed by updates on ``batch_size`` uniformly sampled
    transitions against a target network synced every ``target_sync_period``
    steps.
    """
    if not stategf.frozen:
        raise InvalidState("train_dqn requires a frozen StateGF")
    if not corpus:
        raise InvalidArgument("empty training corpus")
    cache = StateCache(stategf, config.candidate_rule)
    qnet = QNetParams.init(stategf.hidden_dim, config.init_halfwidth, rng)
    target_net = qnet.copy()
    opt = OptimizerState(config.learning_rate, weight_decay=config.weight_decay)
    memory = memory if memory is not None else ReplayMemory(config.replay_capacity)
    train_log = DqnTrainLog()
    step = 0
    for epoch in range(1, config.epochs + 1):
        rewards, bleus = [], []
        for k in rng.permutation(len(corpus)):
            src, tgt = tuple(corpus[k][0]), tuple(corpus[k][1])
            state = DqnState(src, cache.greedy(src, config.max_length))
            bleu = smoothed_bleu(state.decoded, tgt, bleu_config)
            total, actions, terminated = 0, 0, False
            for _ in range(config.episode_length_multiplier * len(tgt)):
                view = cache.view(state)
                q = _q_values(qnet, view)
                errors = compute_error_positions(state.decoded, tgt)
                action = select_action(q, config.epsilon_at(step), errors, rng, config.error_bias_weight, view.candidates)
                nxt = apply_action(state, action, view.trace)
                next_bleu = smoothed_bleu(nxt.decoded, tgt, bleu_config)
                reward = reward_from_bleu(bleu, next_bleu, reward_config)
                terminal = next_bleu > config.bleu_threshold
                store_transition(memory, Transition(state, action, reward, nxt, next_bleu, terminal))
                grads = None
                for _ in range(config.batch_size):
                    tr = sample_transition(memory, rng)
                    next_view = None if tr.terminal else cache.view(tr.next_state)
                    target_q = _target_from_views(tr, target_net, next_view, config.discount)
                    tr_view = cache.view(tr.state)
                    _, g = q_loss_and_grads(qnet, tr_view, tr.action.index(len(tr.state.decoded)), target_q)
                    grads = g if grads is None else {n: grads[n] + g[n] for n in grads}
                if config.batch_size > 1:
                    grads = {n: v / config.batch_size for n, v in grads.items()}
                optimizer_step(opt, qnet, clip_gradient_norm(grads, config.clip_threshold))
                step += 1
                if step % config.target_sync_period == 0:
                    target_net = qnet.copy()
                total += reward
                actions += 1
                state, bleu = nxt, next_bleu
                if terminal:
                    terminated = True
                    break
            rewards.append(total)
            bleus.append(bleu)
            train_log.episodes.append(EpisodeRecord(epoch, len(tgt), actions, total, bleu, terminated))
        eps = config.epsilon_at(step)
        train_log.epochs.append(epoch)
        train_log.mean_reward.append(float(np.mean(rewards)))
        train_log.mean_bleu.append(float(np.mean(bleus)))
        train_log.epsilon.append(eps)
        log.info("dqn epoch %d mean_reward %.4f mean_bleu %.4f epsilon %.3f", epoch, rewards and np.mean(rewards), np.mean(bleus), eps)
        if on_epoch is not None:
            on_epoch(epoch, train_log.mean_reward[-1], train_log.mean_bleu[-1], eps)
    return qnet, train_log


# ---------------------------------------------------------------------------
# Decoding and evaluation
# ---------------------------------------------------------------------------


def decode_iterative(
    qnet: QNetParams,
    stategf: StateGFParams,
    source: Sequence[int],
    epsilon: float = 0.0,
    config: DqnTrainConfig | None = None,
    rng: np.random.Generator | None = None,
    cache: StateCache | None = None,
) -> list[int]:
    """Greedy decode, then ``multiplier * len(source)`` Q-guided edits.

    Exploration (``epsilon > 0``) is uniform over actions: no reference is
    available to locate errors at test time.
    """
    config = config or DqnTrainConfig()
    if epsilon > 0 and rng is None:
        raise InvalidArgument("exploration needs a random generator")
    if cache is None:
        cache = StateCache(stategf if stategf.frozen else _frozen(stategf), config.candidate_rule)
    src = tuple(source)
    state = DqnState(src, cache.greedy(src, config.max_length))
    rng = rng if rng is not None else np.random.default_rng(0)
    for _ in range(config.episode_length_multiplier * len(src)):
        view = cache.view(state)
        action = select_action(_q_values(qnet, view), epsilon, (), rng, 1.0, view.candidates)
        state = apply_action(state, action, view.trace)
    return list(state.decoded)


def _frozen(stategf: StateGFParams) -> StateGFParams:
    from .stategf import freeze

    return freeze(stategf)


def sentence_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, *keys])


def evaluate(
    qnet: QNetParams | None,
    stategf: StateGFParams,
    testset: Sequence[tuple[Sequence[int], Sequence[int]]],
    epsilon: float = 0.0,
    config: DqnTrainConfig | None = None,
    seed: int = 0,
    cache: StateCache | None = None,
    stream: int = 0,
) -> float:
    """Corpus smoothed BLEU of DQN decoding (or greedy decoding when ``qnet`` is None)."""
    config = config or DqnTrainConfig()
    if not testset:
        raise InvalidArgument("empty test set")
    cache = cache or StateCache(stategf if stategf.frozen else _frozen(stategf), config.candidate_rule)
    pairs = []
    for i, (src, tgt) in enumerate(testset):
        if qnet is None:
            hyp = list(cache.greedy(src, config.max_length))
        else:
            hyp = decode_iterative(qnet, stategf, src, epsilon, config, sentence_rng(seed, stream, i), cache)
        pairs.append((hyp, list(tgt)))
    return corpus_average_bleu(pairs)


def epsilon_sweep(
    qnet: QNetParams,
    stategf: StateGFParams,
    testset,
    epsilons: Sequence[float],
    config: DqnTrainConfig | None = None,
    seed: int = 0,
) -> list[tuple[float, float]]:
    if len(epsilons) == 0:
        raise InvalidArgument("no epsilon values to sweep")
    config = config or DqnTrainConfig()
    cache = StateCache(stategf if stategf.frozen else _frozen(stategf), config.candidate_rule)
    return [
        (float(eps), evaluate(qnet, stategf, testset, eps, config, seed, cache, stream=k))
        for k, eps in enumerate(epsilons)
    ]
