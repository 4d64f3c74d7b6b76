"""Encoder-decoder LSTM that produces decoding states for the Q-network.

The encoder reads the embedded source (with EOS appended) from a zero
state. Its final (hidden, cell) pair initializes the decoder, which is fed
SOS followed by the tokens it should predict, shifted right by one. The
probability list at step t is softmax(output_projection @ h_t).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import checkpoint
from .corpus import EOS, SOS, UNK
from .errors import InvalidArgument, InvalidState
from .metric import smoothed_bleu
from .nn import (
    LstmParams,
    LstmState,
    OptimizerState,
    clip_gradient_norm,
    dropout_mask,
    init_uniform,
    lstm_backward,
    lstm_forward_tape,
    optimizer_step,
    sigmoid,
    softmax_rows,
)

log = logging.getLogger(__name__)


@dataclass
class StateGFParams:
    encoder: LstmParams
    decoder: LstmParams
    embedding: np.ndarray  # (V, E), shared by encoder and decoder inputs
    output_projection: np.ndarray  # (V, H); row c is w_c
    frozen: bool = False

    def __post_init__(self):
        v, e = self.embedding.shape
        if self.encoder.input_dim != e or self.decoder.input_dim != e:
            raise InvalidArgument("LSTM input dim must equal the embedding dim")
        if self.encoder.hidden_dim != self.decoder.hidden_dim:
            raise InvalidArgument("encoder and decoder must share the hidden dim")
        if self.output_projection.shape != (v, self.decoder.hidden_dim):
            raise InvalidArgument("output projection must map hidden dim to vocabulary size")
        for name, arr in self.named_arrays().items():
            if not np.all(np.isfinite(arr)):
                raise InvalidArgument(f"{name} contains non-finite entries")

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.decoder.hidden_dim

    @classmethod
    def init(cls, vocab_size: int, embed_dim: int, hidden_dim: int, halfwidth: float, rng) -> "StateGFParams":
        return cls(
            encoder=LstmParams.init(embed_dim, hidden_dim, halfwidth, rng),
            decoder=LstmParams.init(embed_dim, hidden_dim, halfwidth, rng),
            embedding=init_uniform((vocab_size, embed_dim), halfwidth, rng),
            output_projection=init_uniform((vocab_size, hidden_dim), halfwidth, rng),
        )

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {f"encoder.{k}": v for k, v in self.encoder.named_arrays().items()}
        out.update({f"decoder.{k}": v for k, v in self.decoder.named_arrays().items()})
        out["embedding"] = self.embedding
        out["output_projection"] = self.output_projection
        return out

    def copy(self) -> "StateGFParams":
        return from_tensors({k: v.copy() for k, v in self.named_arrays().items()})

    def save(self, path, meta: dict | None = None) -> None:
        info = {"kind": "stategf", "vocab_size": self.vocab_size, "hidden_dim": self.hidden_dim}
        info.update(meta or {})
        checkpoint.save(path, self.named_arrays(), info)


def from_tensors(t: dict[str, np.ndarray]) -> StateGFParams:
    try:
        return StateGFParams(
            encoder=LstmParams(t["encoder.w_x"], t["encoder.w_h"], t["encoder.b"]),
            decoder=LstmParams(t["decoder.w_x"], t["decoder.w_h"], t["decoder.b"]),
            embedding=np.asarray(t["embedding"], dtype=np.float64),
            output_projection=np.asarray(t["output_projection"], dtype=np.float64),
        )
    except KeyError as exc:
        raise InvalidArgument(f"checkpoint is missing tensor {exc}") from None


def load(path) -> tuple[StateGFParams, dict]:
    tensors, meta = checkpoint.load(path)
    if meta.get("kind") != "stategf":
        raise InvalidArgument(f"{path} is not a StateGF checkpoint")
    return from_tensors(tensors), meta


def freeze(params: StateGFParams) -> StateGFParams:
    """Read-only copy for the Q-learning phase; forward passes never use dropout."""
    frozen = params.copy()
    for arr in frozen.named_arrays().values():
        arr.setflags(write=False)
    frozen.frozen = True
    return frozen


@dataclass
class DecodeTrace:
    encoder_final: LstmState
    decoder_hiddens: np.ndarray  # (T, H)
    probability_lists: np.ndarray  # (T, V)
    argmax_tokens: list[int]
    input_tokens: list[int]

    def __len__(self) -> int:
        return len(self.argmax_tokens)

    def sentence(self) -> list[int]:
        """Argmax tokens up to, not including, the first EOS."""
        out = []
        for tok in self.argmax_tokens:
            if tok == EOS:
                break
            out.append(tok)
        return out


@dataclass
class PretrainConfig:
    epochs: int = 20
    learning_rate: float = 0.05
    clip_threshold: float = 15.0
    weight_decay: float = 0.00016
    dropout: float = 0.2
    max_length: int = 30

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidArgument("epochs must be >= 0")
        if self.learning_rate <= 0 or self.clip_threshold <= 0:
            raise InvalidArgument("learning_rate and clip_threshold must be positive")
        if self.weight_decay < 0:
            raise InvalidArgument("weight_decay must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgument("dropout must lie in [0, 1)")
        if self.max_length < 1:
            raise InvalidArgument("max_length must be >= 1")


@dataclass
class PretrainReport:
    per_epoch_cost: list[float] = field(default_factory=list)
    per_epoch_train_bleu: list[float] = field(default_factory=list)


def _check_ids(params: StateGFParams, ids: Sequence[int], what: str) -> None:
    if len(ids) == 0:
        raise InvalidArgument(f"empty {what}")
    for i in ids:
        if not 0 <= i < params.vocab_size:
            raise InvalidArgument(f"{what} token id {i} outside vocabulary of size {params.vocab_size}")


def encoder_inputs(source: Sequence[int]) -> list[int]:
    src = list(source)
    return src if src and src[-1] == EOS else src + [EOS]


def teacher_inputs(target: Sequence[int]) -> list[int]:
    """Decoder inputs that make step t predict ``target[t]``."""
    return [SOS] + list(target[:-1])


def encode(params: StateGFParams, source: Sequence[int]) -> LstmState:
    _check_ids(params, source, "source")
    x = params.embedding[encoder_inputs(source)]
    h = params.hidden_dim
    hiddens, tape = lstm_forward_tape(params.encoder, x, np.zeros(h), np.zeros(h))
    return LstmState(hiddens[-1].copy(), tape.cells[-1].copy())


def decode_forward(params: StateGFParams, encoder_final: LstmState, decoder_inputs: Sequence[int]) -> DecodeTrace:
    _check_ids(params, decoder_inputs, "decoder input")
    if encoder_final.hidden.shape != (params.hidden_dim,):
        raise InvalidState("encoder state does not match decoder hidden dim")
    x = params.embedding[list(decoder_inputs)]
    hiddens, _ = lstm_forward_tape(params.decoder, x, encoder_final.hidden, encoder_final.cell)
    probs = softmax_rows(hiddens @ params.output_projection.T)
    return DecodeTrace(encoder_final, hiddens, probs, [int(k) for k in probs.argmax(axis=1)], list(decoder_inputs))


def greedy_decode(params: StateGFParams, source: Sequence[int], max_length: int = 30) -> DecodeTrace:
    """Beam-1 left-to-right decoding; stops after emitting EOS or ``max_length`` steps."""
    if max_length < 1:
        raise InvalidArgument("max_length must be at least 1")
    enc = encode(params, source)
    dec, h_dim = params.decoder, params.hidden_dim
    w_x, w_h, b = dec.w_x, dec.w_h, dec.b
    h, c = enc.hidden, enc.cell
    tok = SOS
    inputs, hiddens, probs, tokens = [], [], [], []
    for _ in range(max_length):
        inputs.append(tok)
        z = w_x @ params.embedding[tok] + w_h @ h + b
        i, f, o = sigmoid(z[:h_dim]), sigmoid(z[h_dim : 2 * h_dim]), sigmoid(z[2 * h_dim : 3 * h_dim])
        c = f * c + i * np.tanh(z[3 * h_dim :])
        h = o * np.tanh(c)
        p = softmax_rows(params.output_projection @ h)
        tok = int(p.argmax())
        hiddens.append(h)
        probs.append(p)
        tokens.append(tok)
        if tok == EOS:
            break
    return DecodeTrace(enc, np.vstack(hiddens), np.vstack(probs), tokens, inputs)


def greedy_sentence(params: StateGFParams, source: Sequence[int], max_length: int = 30) -> list[int]:
    """Greedy decode as a non-empty token list (UNK if EOS comes first)."""
    return greedy_decode(params, source, max_length).sentence() or [UNK]


def sentence_loss_and_grads(
    params: StateGFParams,
    source: Sequence[int],
    target: Sequence[int],
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray], int]:
    """Summed teacher-forced cross-entropy of ``target + [EOS]`` and its gradient.

    Dropout masks the embedded inputs of both LSTMs and the decoder output
    feeding the softmax. Returns ``(loss, grads, n_predicted_tokens)``.
    """
    enc_in = encoder_inputs(source)
    dec_in = [SOS] + list(target)
    gold = list(target) + [EOS]
    h_dim = params.hidden_dim
    emb, w_out = params.embedding, params.output_projection
    use_dropout = dropout > 0.0
    if use_dropout and rng is None:
        raise InvalidArgument("dropout needs a random generator")

    x_enc = emb[enc_in]
    x_dec = emb[dec_in]
    if use_dropout:
        m_enc = dropout_mask(x_enc.shape, dropout, rng)
        m_dec = dropout_mask(x_dec.shape, dropout, rng)
        x_enc, x_dec = x_enc * m_enc, x_dec * m_dec
    enc_h, enc_tape = lstm_forward_tape(params.encoder, x_enc, np.zeros(h_dim), np.zeros(h_dim))
    dec_h, dec_tape = lstm_forward_tape(params.decoder, x_dec, enc_h[-1], enc_tape.cells[-1])
    feat = dec_h
    if use_dropout:
        m_out = dropout_mask(dec_h.shape, dropout, rng)
        feat = dec_h * m_out
    probs = softmax_rows(feat @ w_out.T)
    rows = np.arange(len(gold))
    loss = float(-np.log(probs[rows, gold]).sum())

    d_logits = probs
    d_logits[rows, gold] -= 1.0
    grads = {"output_projection": d_logits.T @ feat}
    d_feat = d_logits @ w_out
    d_dec_h = d_feat * m_out if use_dropout else d_feat
    g_dec, dx_dec, dh0, dc0 = lstm_backward(params.decoder, dec_tape, d_dec_h)
    d_enc_h = np.zeros_like(enc_h)
    d_enc_h[-1] = dh0
    g_enc, dx_enc, _, _ = lstm_backward(params.encoder, enc_tape, d_enc_h, d_final_cell=dc0)
    if use_dropout:
        dx_dec, dx_enc = dx_dec * m_dec, dx_enc * m_enc
    d_emb = np.zeros_like(emb)
    np.add.at(d_emb, dec_in, dx_dec)
    np.add.at(d_emb, enc_in, dx_enc)
    grads["embedding"] = d_emb
    grads.update({f"encoder.{k}": v for k, v in g_enc.items()})
    grads.update({f"decoder.{k}": v for k, v in g_dec.items()})
    return loss, grads, len(gold)


def train_bleu(params: StateGFParams, corpus, max_length: int = 30) -> float:
    return float(np.mean([smoothed_bleu(greedy_decode(params, s, max_length).sentence(), t) for s, t in corpus]))


def pretrain(
    params: StateGFParams,
    corpus: Sequence[tuple[Sequence[int], Sequence[int]]],
    config: PretrainConfig,
    rng: np.random.Generator,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> PretrainReport:
    """Per-sentence teacher-forced training with AdaGrad, clipping and dropout.

    Mutates ``params`` in place. The reported cost is the mean per-token
    cross-entropy over the epoch (dropout active); the reported BLEU is the
    mean smoothed BLEU of greedy decodes of the training sources afterwards.
    """
    if params.frozen:
        raise InvalidState("cannot pretrain frozen parameters")
    if not corpus:
        raise InvalidArgument("empty training corpus")
    for src, tgt in corpus:
        _check_ids(params, src, "source")
        _check_ids(params, tgt, "target")
        if max(len(src), len(tgt)) > config.max_length:
            raise InvalidArgument(f"sentence longer than max_length={config.max_length}")
    opt = OptimizerState(config.learning_rate, weight_decay=config.weight_decay)
    report = PretrainReport()
    for epoch in range(config.epochs):
        costs = []
        for k in rng.permutation(len(corpus)):
            src, tgt = corpus[k]
            loss, grads, n_tok = sentence_loss_and_grads(params, src, tgt, config.dropout, rng)
            optimizer_step(opt, params, clip_gradient_norm(grads, config.clip_threshold))
            costs.append(loss / n_tok)
        cost = float(np.mean(costs))
        bleu = train_bleu(params, corpus, config.max_length)
        report.per_epoch_cost.append(cost)
        report.per_epoch_train_bleu.append(bleu)
        log.info("pretrain epoch %d cost %.4f train_bleu %.4f", epoch + 1, cost, bleu)
        if on_epoch is not None:
            on_epoch(epoch + 1, cost, bleu)
    return report
