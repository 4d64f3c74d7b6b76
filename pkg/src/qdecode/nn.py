"""Recurrent network kernel: LSTM, bidirectional LSTM, softmax, AdaGrad.

Everything here works on plain float64 numpy arrays. Forward functions that
need a backward pass return a tape object; the matching ``*_backward``
function consumes it and returns gradients keyed by parameter name.

Gate layout of the stacked LSTM weights (rows of ``w_x``, ``w_h`` and ``b``)::

    [0H:1H) input gate      sigmoid
    [1H:2H) forget gate     sigmoid
    [2H:3H) output gate     sigmoid
    [3H:4H) cell candidate  tanh
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import InvalidArgument, InvalidState

GATES = ("input", "forget", "output", "candidate")

Grads = dict[str, np.ndarray]


def init_uniform(shape, range_halfwidth: float, rng: np.random.Generator) -> np.ndarray:
    """Draw a float64 tensor i.i.d. from U[-range_halfwidth, +range_halfwidth]."""
    if not range_halfwidth > 0:
        raise InvalidArgument(f"range_halfwidth must be positive, got {range_halfwidth}")
    return rng.uniform(-range_halfwidth, range_halfwidth, size=shape)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} contains non-finite entries")


# ---------------------------------------------------------------------------
# Parameters and state
# ---------------------------------------------------------------------------


@dataclass
class LstmParams:
    """Stacked four-gate LSTM weights (see module docstring for row layout)."""

    w_x: np.ndarray  # (4H, I)
    w_h: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    def __post_init__(self):
        self.w_x = np.asarray(self.w_x, dtype=np.float64)
        self.w_h = np.asarray(self.w_h, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        h4 = self.w_h.shape[0]
        if (
            self.w_x.ndim != 2
            or self.w_h.ndim != 2
            or h4 % 4
            or self.w_h.shape != (h4, h4 // 4)
            or self.w_x.shape[0] != h4
            or self.b.shape != (h4,)
        ):
            raise InvalidArgument(
                f"inconsistent LSTM shapes w_x={self.w_x.shape} w_h={self.w_h.shape} b={self.b.shape}"
            )
        for name, arr in self.named_arrays().items():
            _check_finite(name, arr)

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_h.shape[1]

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, halfwidth: float, rng: np.random.Generator) -> "LstmParams":
        return cls(
            w_x=init_uniform((4 * hidden_dim, input_dim), halfwidth, rng),
            w_h=init_uniform((4 * hidden_dim, hidden_dim), halfwidth, rng),
            b=init_uniform((4 * hidden_dim,), halfwidth, rng),
        )

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmParams":
        return cls(
            w_x=np.zeros((4 * hidden_dim, input_dim)),
            w_h=np.zeros((4 * hidden_dim, hidden_dim)),
            b=np.zeros(4 * hidden_dim),
        )

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Views ``(input_weights, recurrent_weights, bias)`` of one gate."""
        k = GATES.index(name)
        h = self.hidden_dim
        rows = slice(k * h, (k + 1) * h)
        return self.w_x[rows], self.w_h[rows], self.b[rows]

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {"w_x": self.w_x, "w_h": self.w_h, "b": self.b}


@dataclass
class LstmState:
    hidden: np.ndarray
    cell: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int) -> "LstmState":
        return cls(np.zeros(hidden_dim), np.zeros(hidden_dim))


@dataclass
class BiLstmParams:
    forward: LstmParams
    backward: LstmParams

    def __post_init__(self):
        if (self.forward.input_dim, self.forward.hidden_dim) != (
            self.backward.input_dim,
            self.backward.hidden_dim,
        ):
            raise InvalidArgument("forward and backward LSTMs must share input and hidden dims")

    @property
    def input_dim(self) -> int:
        return self.forward.input_dim

    @property
    def hidden_dim(self) -> int:
        return self.forward.hidden_dim

    @classmethod
    def init(cls, input_dim, hidden_dim, halfwidth, rng) -> "BiLstmParams":
        return cls(
            LstmParams.init(input_dim, hidden_dim, halfwidth, rng),
            LstmParams.init(input_dim, hidden_dim, halfwidth, rng),
        )

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {f"forward.{k}": v for k, v in self.forward.named_arrays().items()}
        out.update({f"backward.{k}": v for k, v in self.backward.named_arrays().items()})
        return out


# ---------------------------------------------------------------------------
# LSTM forward / backward
# ---------------------------------------------------------------------------


def lstm_cell_forward(params: LstmParams, x: np.ndarray, prev: LstmState) -> LstmState:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.input_dim,):
        raise InvalidArgument(f"input has shape {x.shape}, expected ({params.input_dim},)")
    if prev.hidden.shape != (params.hidden_dim,) or prev.cell.shape != (params.hidden_dim,):
        raise InvalidArgument("previous state does not match hidden dim")
    h = params.hidden_dim
    z = params.w_x @ x + params.w_h @ prev.hidden + params.b
    i, f, o = sigmoid(z[:h]), sigmoid(z[h : 2 * h]), sigmoid(z[2 * h : 3 * h])
    g = np.tanh(z[3 * h :])
    c = f * prev.cell + i * g
    return LstmState(o * np.tanh(c), c)


@dataclass
class LstmTape:
    inputs: np.ndarray  # (T, I)
    h0: np.ndarray
    c0: np.ndarray
    gates: np.ndarray  # (T, 4H) post-activation
    cells: np.ndarray  # (T, H)
    hiddens: np.ndarray  # (T, H)
    tanh_cells: np.ndarray  # (T, H)


def lstm_forward_tape(
    params: LstmParams, inputs: np.ndarray, h0: np.ndarray, c0: np.ndarray
) -> tuple[np.ndarray, LstmTape]:
    """Run the LSTM over the rows of ``inputs``; return hidden states (T, H) and a tape."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise InvalidArgument("LSTM needs a non-empty (T, input_dim) sequence")
    if inputs.shape[1] != params.input_dim:
        raise InvalidArgument(f"input width {inputs.shape[1]} != {params.input_dim}")
    steps, h = inputs.shape[0], params.hidden_dim
    zx = inputs @ params.w_x.T + params.b
    gates = np.empty((steps, 4 * h))
    cells = np.empty((steps, h))
    hiddens = np.empty((steps, h))
    tanh_cells = np.empty((steps, h))
    w_h = params.w_h
    h_prev, c_prev = h0, c0
    for t in range(steps):
        z = zx[t] + w_h @ h_prev
        a = gates[t]
        a[: 3 * h] = sigmoid(z[: 3 * h])
        a[3 * h :] = np.tanh(z[3 * h :])
        c = a[h : 2 * h] * c_prev + a[:h] * a[3 * h :]
        tc = np.tanh(c)
        cells[t] = c
        tanh_cells[t] = tc
        hiddens[t] = a[2 * h : 3 * h] * tc
        h_prev, c_prev = hiddens[t], c
    return hiddens, LstmTape(inputs, h0, c0, gates, cells, hiddens, tanh_cells)


def lstm_backward(
    params: LstmParams,
    tape: LstmTape | None,
    d_hiddens: np.ndarray,
    d_final_cell: np.ndarray | None = None,
) -> tuple[Grads, np.ndarray, np.ndarray, np.ndarray]:
    """Backpropagate through time.

    ``d_hiddens`` is dL/dh_t for every step (the final-hidden gradient goes in
    its last row). Returns ``(grads, d_inputs, d_h0, d_c0)``.
    """
    if tape is None:
        raise InvalidState("no recorded forward pass to backpropagate through")
    steps, h = tape.hiddens.shape
    d_z = np.empty((steps, 4 * h))
    dh_next = np.zeros(h)
    dc_next = np.zeros(h) if d_final_cell is None else np.array(d_final_cell, dtype=np.float64)
    w_h_t = params.w_h.T
    for t in range(steps - 1, -1, -1):
        a = tape.gates[t]
        i, f, o, g = a[:h], a[h : 2 * h], a[2 * h : 3 * h], a[3 * h :]
        tc = tape.tanh_cells[t]
        c_prev = tape.cells[t - 1] if t else tape.c0
        dh = d_hiddens[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = d_z[t]
        dz[:h] = dc * g * i * (1.0 - i)
        dz[h : 2 * h] = dc * c_prev * f * (1.0 - f)
        dz[2 * h : 3 * h] = dh * tc * o * (1.0 - o)
        dz[3 * h :] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = w_h_t @ dz
    h_prev = np.vstack([tape.h0[None, :], tape.hiddens[:-1]])
    grads = {"w_x": d_z.T @ tape.inputs, "w_h": d_z.T @ h_prev, "b": d_z.sum(axis=0)}
    return grads, d_z @ params.w_x, dh_next, dc_next


def lstm_sequence_forward(params: LstmParams, inputs: list, init: LstmState) -> list[LstmState]:
    if len(inputs) == 0:
        raise InvalidArgument("empty input sequence")
    hiddens, tape = lstm_forward_tape(params, np.vstack(inputs), init.hidden, init.cell)
    return [LstmState(hiddens[t].copy(), tape.cells[t].copy()) for t in range(len(inputs))]


@dataclass
class BiLstmTape:
    forward: LstmTape
    backward: LstmTape


def bilstm_forward_tape(
    params: BiLstmParams, inputs: np.ndarray, init_fwd: LstmState, init_bwd: LstmState
) -> tuple[np.ndarray, BiLstmTape]:
    """Returns (T, 2H) outputs: forward hidden[t] then backward hidden[t]."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise InvalidArgument("bidirectional LSTM needs a non-empty sequence")
    fwd, fwd_tape = lstm_forward_tape(params.forward, inputs, init_fwd.hidden, init_fwd.cell)
    bwd, bwd_tape = lstm_forward_tape(params.backward, inputs[::-1], init_bwd.hidden, init_bwd.cell)
    return np.hstack([fwd, bwd[::-1]]), BiLstmTape(fwd_tape, bwd_tape)


def bilstm_backward(params: BiLstmParams, tape: BiLstmTape | None, d_out: np.ndarray):
    """Returns ``(grads, d_inputs, (dh0_fwd, dc0_fwd), (dh0_bwd, dc0_bwd))``."""
    if tape is None:
        raise InvalidState("no recorded forward pass to backpropagate through")
    h = params.hidden_dim
    g_f, dx_f, dh_f, dc_f = lstm_backward(params.forward, tape.forward, d_out[:, :h])
    g_b, dx_b, dh_b, dc_b = lstm_backward(params.backward, tape.backward, d_out[::-1, h:])
    grads = {f"forward.{k}": v for k, v in g_f.items()}
    grads.update({f"backward.{k}": v for k, v in g_b.items()})
    return grads, dx_f + dx_b[::-1], (dh_f, dc_f), (dh_b, dc_b)


def bilstm_forward(
    params: BiLstmParams, inputs: list, init_fwd: LstmState, init_bwd: LstmState
) -> list[np.ndarray]:
    if len(inputs) == 0:
        raise InvalidArgument("empty input sequence")
    out, _ = bilstm_forward_tape(params, np.vstack(inputs), init_fwd, init_bwd)
    return list(out)


# ---------------------------------------------------------------------------
# Output layer
# ---------------------------------------------------------------------------


def softmax(logits) -> np.ndarray:
    v = np.asarray(logits, dtype=np.float64)
    if v.size == 0:
        raise InvalidArgument("softmax of an empty vector")
    _check_finite("logits", v)
    return softmax_rows(v)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; no validation (hot path)."""
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(probabilities, target_index: int) -> float:
    p = np.asarray(probabilities, dtype=np.float64)
    if not 0 <= target_index < p.shape[-1]:
        raise InvalidArgument(f"target index {target_index} out of range for {p.shape[-1]} classes")
    return float(-np.log(p[target_index]))


def softmax_cross_entropy_backward(probabilities: np.ndarray, targets) -> np.ndarray:
    """dL/dlogits for summed cross-entropy: ``p - one_hot(target)`` per row."""
    d = np.array(probabilities, dtype=np.float64)
    d[np.arange(d.shape[0]) if d.ndim == 2 else ..., targets] -= 1.0
    return d


# ---------------------------------------------------------------------------
# Regularization and optimization
# ---------------------------------------------------------------------------


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability ``rate``, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise InvalidArgument(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def apply_dropout(vector, rate: float, rng: np.random.Generator, training_flag: bool) -> np.ndarray:
    if not 0.0 <= rate < 1.0:
        raise InvalidArgument(f"dropout rate must lie in [0, 1), got {rate}")
    v = np.asarray(vector, dtype=np.float64)
    if not training_flag or rate == 0.0:
        return v.copy()
    return v * dropout_mask(v.shape, rate, rng)


def global_norm(gradients: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.vdot(g, g)) for g in gradients.values())))


def clip_gradient_norm(gradients: Mapping[str, np.ndarray], threshold: float) -> Grads:
    if not threshold > 0:
        raise InvalidArgument("clip threshold must be positive")
    norm = global_norm(gradients)
    if norm > threshold:
        scale = threshold / norm
        return {k: g * scale for k, g in gradients.items()}
    return dict(gradients)


def named_arrays(params) -> dict[str, np.ndarray]:
    if isinstance(params, Mapping):
        return dict(params)
    return params.named_arrays()


@dataclass
class OptimizerState:
    """AdaGrad without momentum, with decoupled weight decay."""

    learning_rate: float = 0.05
    epsilon_stabilizer: float = 1e-8
    weight_decay: float = 0.00016
    accumulated_squared_gradients: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidArgument("learning_rate must be positive")
        if self.epsilon_stabilizer < 0 or self.weight_decay < 0:
            raise InvalidArgument("stabilizer and weight decay must be non-negative")


def optimizer_step(state: OptimizerState, params, gradients: Mapping[str, np.ndarray]):
    """Apply one AdaGrad update in place and return ``params``."""
    if getattr(params, "frozen", False):
        raise InvalidState("parameters are frozen")
    arrays = named_arrays(params)
    for name, g in gradients.items():
        if not np.all(np.isfinite(g)):
            raise InvalidArgument(f"non-finite gradient for {name}")
    lr = state.learning_rate
    decay = 1.0 - lr * state.weight_decay
    for name, g in gradients.items():
        theta = arrays[name]
        acc = state.accumulated_squared_gradients.get(name)
        if acc is None:
            acc = state.accumulated_squared_gradients[name] = np.zeros_like(theta)
        acc += g * g
        theta *= decay
        theta -= lr * g / (np.sqrt(acc) + state.epsilon_stabilizer)
    return params


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_relative_error: float
    failing_parameter_indices: list = field(default_factory=list)
    checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.failing_parameter_indices


def finite_difference_check(
    loss_function: Callable[[dict[str, np.ndarray]], tuple[float, Mapping[str, np.ndarray]]],
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    names: Iterable[str] | None = None,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    order: int = 2,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_function(params)`` must return ``(loss, grads)`` and read the
    arrays in ``params`` (which are perturbed in place and restored). With
    ``max_entries`` only a random subset of each array is probed.

    ``order=2`` is the two-point stencil ``(f(x+h) - f(x-h)) / 2h``.
    ``order=4`` uses the five-point stencil, whose O(h^4) truncation error
    permits a larger ``step``; that keeps float64 roundoff in the loss from
    swamping gradient entries of order 1e-7 in deep recurrent stacks.
    """
    if not step > 0:
        raise InvalidArgument("finite-difference step must be positive")
    if order not in (2, 4):
        raise InvalidArgument("order must be 2 or 4")
    _, analytic = loss_function(params)
    analytic = {k: np.array(v, dtype=np.float64) for k, v in analytic.items()}
    worst = 0.0
    failing = []
    checked = 0
    for name in names if names is not None else list(params):
        theta = params[name]
        flat = theta.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        a_flat = analytic.get(name, np.zeros_like(theta)).reshape(-1)
        for j in idx:
            old = flat[j]

            def at(offset):
                flat[j] = old + offset
                return loss_function(params)[0]

            if order == 2:
                numeric = (at(step) - at(-step)) / (2.0 * step)
            else:
                numeric = (8.0 * (at(step) - at(-step)) - (at(2 * step) - at(-2 * step))) / (12.0 * step)
            flat[j] = old
            a = a_flat[j]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            checked += 1
            worst = max(worst, rel)
            if rel > tolerance:
                failing.append((name, int(j)))
    return GradCheckReport(worst, failing, checked)
