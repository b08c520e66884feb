"""A single LSTM cell: forward step, and exact reverse-mode gradients.

The cell is the standard forget-gate variant without peepholes:

    i = sigmoid(W_i x + U_i h + b_i)        input gate
    f = sigmoid(W_f x + U_f h + b_f)        forget gate
    g = tanh   (W_g x + U_g h + b_g)        cell candidate
    o = sigmoid(W_o x + U_o h + b_o)        output gate
    c' = f * c + i * g
    h' = o * tanh(c')

Weights are drawn Uniform(-k, k) with k = 1/sqrt(hidden_dim); biases start
at zero except the forget bias, which starts at 1 so early training does
not erase the cell memory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Rng, ShapeError, sigmoid

# Field order is the canonical parameter order (checkpoints, optimizer walks).
PARAM_FIELDS = (
    "w_i", "w_f", "w_g", "w_o",
    "u_i", "u_f", "u_g", "u_o",
    "b_i", "b_f", "b_g", "b_o",
)


@dataclass
class LstmParams:
    w_i: np.ndarray
    w_f: np.ndarray
    w_g: np.ndarray
    w_o: np.ndarray
    u_i: np.ndarray
    u_f: np.ndarray
    u_g: np.ndarray
    u_o: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.w_i.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_i.shape[0]


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class CellTape:
    """Everything one forward step caches for its backward step."""

    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


def zero_state(hidden_dim: int) -> LstmState:
    return LstmState(np.zeros(hidden_dim), np.zeros(hidden_dim))


def init_lstm_params(input_dim: int, hidden_dim: int, rng: Rng) -> LstmParams:
    """Fresh parameters; draw order matches PARAM_FIELDS."""
    if input_dim < 1 or hidden_dim < 1:
        raise ValueError("input_dim and hidden_dim must be positive")
    k = 1.0 / np.sqrt(hidden_dim)
    fields = {}
    for name in PARAM_FIELDS[:4]:
        fields[name] = rng.uniform_array((hidden_dim, input_dim), -k, k)
    for name in PARAM_FIELDS[4:8]:
        fields[name] = rng.uniform_array((hidden_dim, hidden_dim), -k, k)
    for name in PARAM_FIELDS[8:]:
        fields[name] = np.zeros(hidden_dim)
    fields["b_f"] = np.ones(hidden_dim)
    return LstmParams(**fields)


def zero_lstm_grads(p: LstmParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(getattr(p, name)) for name in PARAM_FIELDS}


def lstm_step(p: LstmParams, x: np.ndarray, s: LstmState) -> tuple[LstmState, CellTape]:
    """One forward step; returns the new state and the tape for backward."""
    if x.shape[0] != p.input_dim:
        raise ShapeError(f"input has length {x.shape[0]}, cell expects {p.input_dim}")
    if s.h.shape[0] != p.hidden_dim or s.c.shape[0] != p.hidden_dim:
        raise ShapeError(f"state has length {s.h.shape[0]}, cell expects {p.hidden_dim}")
    i = sigmoid(p.w_i @ x + p.u_i @ s.h + p.b_i)
    f = sigmoid(p.w_f @ x + p.u_f @ s.h + p.b_f)
    g = np.tanh(p.w_g @ x + p.u_g @ s.h + p.b_g)
    o = sigmoid(p.w_o @ x + p.u_o @ s.h + p.b_o)
    c = f * s.c + i * g
    tc = np.tanh(c)
    h = o * tc
    return LstmState(h, c), CellTape(x, s.h, s.c, i, f, g, o, c, tc)


def lstm_step_backward(
    p: LstmParams,
    tape: CellTape,
    dh: np.ndarray,
    dc_in: np.ndarray,
    acc: dict[str, np.ndarray],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward through one step.

    `dh`/`dc_in` are the loss gradients w.r.t. this step's h and c outputs.
    Parameter gradients accumulate into `acc`; returns the gradients w.r.t.
    the step input, the previous hidden state, and the previous cell memory.
    """
    do = dh * tape.tanh_c
    dc = dc_in + dh * tape.o * (1.0 - tape.tanh_c * tape.tanh_c)
    di = dc * tape.g
    dg = dc * tape.i
    df = dc * tape.c_prev
    dc_prev = dc * tape.f

    da_i = di * tape.i * (1.0 - tape.i)
    da_f = df * tape.f * (1.0 - tape.f)
    da_g = dg * (1.0 - tape.g * tape.g)
    da_o = do * tape.o * (1.0 - tape.o)

    acc["w_i"] += np.outer(da_i, tape.x)
    acc["w_f"] += np.outer(da_f, tape.x)
    acc["w_g"] += np.outer(da_g, tape.x)
    acc["w_o"] += np.outer(da_o, tape.x)
    acc["u_i"] += np.outer(da_i, tape.h_prev)
    acc["u_f"] += np.outer(da_f, tape.h_prev)
    acc["u_g"] += np.outer(da_g, tape.h_prev)
    acc["u_o"] += np.outer(da_o, tape.h_prev)
    acc["b_i"] += da_i
    acc["b_f"] += da_f
    acc["b_g"] += da_g
    acc["b_o"] += da_o

    dx = p.w_i.T @ da_i + p.w_f.T @ da_f + p.w_g.T @ da_g + p.w_o.T @ da_o
    dh_prev = p.u_i.T @ da_i + p.u_f.T @ da_f + p.u_g.T @ da_g + p.u_o.T @ da_o
    return dx, dh_prev, dc_prev


def lstm_run(
    p: LstmParams, xs, state: LstmState
) -> tuple[LstmState, list[np.ndarray], list[CellTape]]:
    """Run the cell over a sequence of inputs; returns final state, h outputs, tapes."""
    hs: list[np.ndarray] = []
    tapes: list[CellTape] = []
    for x in xs:
        state, tape = lstm_step(p, x, state)
        hs.append(state.h)
        tapes.append(tape)
    return state, hs, tapes


def lstm_backward(
    p: LstmParams,
    tapes: list[CellTape],
    grad_h_seq: list[np.ndarray] | None,
    grad_h_final: np.ndarray | None = None,
    grad_c_final: np.ndarray | None = None,
) -> tuple[dict[str, np.ndarray], list[np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """Backpropagation through time over a taped sequence.

    `grad_h_seq[t]` is the loss gradient flowing directly into the step-t
    hidden output (None means all zeros); `grad_h_final`/`grad_c_final` add
    to the last step's state gradients. Returns parameter gradients, the
    gradient w.r.t. each input, and the gradient w.r.t. the initial state.
    """
    n = len(tapes)
    if grad_h_seq is not None and len(grad_h_seq) != n:
        raise ShapeError(f"got {len(grad_h_seq)} hidden gradients for {n} steps")
    hdim = p.hidden_dim
    acc = zero_lstm_grads(p)
    dh = np.zeros(hdim) if grad_h_final is None else grad_h_final.copy()
    dc = np.zeros(hdim) if grad_c_final is None else grad_c_final.copy()
    dxs: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for t in reversed(range(n)):
        if grad_h_seq is not None:
            dh = dh + grad_h_seq[t]
        dx, dh, dc = lstm_step_backward(p, tapes[t], dh, dc, acc)
        dxs[t] = dx
    return acc, dxs, (dh, dc)
