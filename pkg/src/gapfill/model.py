"""The gap-imputation network and its exact gradients.

A window is (before, gap, after). One LSTM encoder reads `before` in
chronological order, a second reads `after` in reverse. Two decoder LSTMs
then fill the gap: the forward decoder starts from the forward encoder's
final state with the last observation before the gap as its first input,
and each step feeds its own local prediction into the next step. The
backward decoder mirrors this from the other side. Both streams run over
the whole gap first; only then is each position's pair of hidden vectors
scaled by the proximity weights (gamma for the forward stream, 1 - gamma
for the backward one) and merged by the output layer into the final
imputation.

Because the proximity weights are fixed constants, the same weights scale
the gradients flowing from the merge layer back into each decoder stream,
so learning is also dominated by whichever stream sits nearer to real
observations.

The gradient of the training loss is computed in closed form by
backpropagation through time, including the paths created by the decoders
consuming their own predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lstm import (
    PARAM_FIELDS,
    CellTape,
    LstmParams,
    init_lstm_params,
    lstm_backward,
    lstm_run,
    lstm_step,
    lstm_step_backward,
    zero_lstm_grads,
    zero_state,
)
from .numerics import Rng, ShapeError, finite_diff_grad, mse

SCHEDULE_VARIANTS = ("linear", "endpoint", "constant")

_LSTM_COMPONENTS = ("enc_fw", "enc_bw", "dec_fw", "dec_bw")


@dataclass(frozen=True)
class ScalingSchedule:
    """Per-position stream weights for a gap of length `gap_len`.

    gamma[t] weighs the forward decoder stream at gap position t+1 and
    gamma_prime[t] the backward stream; the two always sum to 1.
    """

    gap_len: int
    gamma: np.ndarray
    gamma_prime: np.ndarray
    variant: str


def make_schedule(gap_len: int, variant: str = "linear") -> ScalingSchedule:
    """Build the stream-weight schedule for a gap.

    linear:    gamma_t = 1 - t/gap_len            (reaches 0 at the last position)
    endpoint:  gamma_t = (gap_len-t)/(gap_len-1)  (exactly 1 at the first position)
    constant:  gamma_t = 0.5                      (the no-scaling ablation)

    A gap of length 1 uses 0.5 for every variant: with a single position
    neither stream is closer to the observations.
    """
    if gap_len < 1:
        raise ValueError("gap length must be at least 1")
    if variant not in SCHEDULE_VARIANTS:
        raise ValueError(f"unknown schedule variant {variant!r}; expected one of {SCHEDULE_VARIANTS}")
    t = np.arange(1, gap_len + 1, dtype=np.float64)
    if gap_len == 1:
        gamma = np.array([0.5])
    elif variant == "linear":
        gamma = 1.0 - t / gap_len
    elif variant == "endpoint":
        gamma = (gap_len - t) / (gap_len - 1.0)
    else:
        gamma = np.full(gap_len, 0.5)
    return ScalingSchedule(gap_len, gamma, 1.0 - gamma, variant)


@dataclass
class Affine:
    w: np.ndarray  # (out_dim, in_dim)
    b: np.ndarray  # (out_dim,)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.w @ x + self.b


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int = 1
    hidden_dim: int = 64
    schedule_variant: str = "linear"
    merge_hidden: int = 0  # 0 = single linear merge layer, else tanh-MLP width
    forward_only: bool = False  # forward encoder + forward decoder only


@dataclass
class ModelParams:
    """All trainable tensors, plus the structural config they belong to."""

    config: NetworkConfig
    enc_fw: LstmParams
    enc_bw: LstmParams
    dec_fw: LstmParams
    dec_bw: LstmParams
    head_fw: Affine  # local forward-stream prediction, hidden -> input_dim
    head_bw: Affine
    merge: list[Affine]  # [linear] or [hidden_layer, output_layer] with tanh between


def init_model_params(config: NetworkConfig, rng: Rng) -> ModelParams:
    """Initialize all parameters; the draw order equals the checkpoint order."""
    if config.schedule_variant not in SCHEDULE_VARIANTS:
        raise ValueError(f"unknown schedule variant {config.schedule_variant!r}")
    d, h = config.input_dim, config.hidden_dim
    lstms = {name: init_lstm_params(d, h, rng) for name in _LSTM_COMPONENTS}
    k_head = 1.0 / np.sqrt(h)
    head_fw = Affine(rng.uniform_array((d, h), -k_head, k_head), np.zeros(d))
    head_bw = Affine(rng.uniform_array((d, h), -k_head, k_head), np.zeros(d))
    k_merge = 1.0 / np.sqrt(2 * h)
    if config.merge_hidden > 0:
        m = config.merge_hidden
        merge = [
            Affine(rng.uniform_array((m, 2 * h), -k_merge, k_merge), np.zeros(m)),
            Affine(rng.uniform_array((d, m), -1.0 / np.sqrt(m), 1.0 / np.sqrt(m)), np.zeros(d)),
        ]
    else:
        merge = [Affine(rng.uniform_array((d, 2 * h), -k_merge, k_merge), np.zeros(d))]
    return ModelParams(config, lstms["enc_fw"], lstms["enc_bw"], lstms["dec_fw"],
                       lstms["dec_bw"], head_fw, head_bw, merge)


def iter_params(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    """(path, tensor) pairs in the canonical order used everywhere."""
    out: list[tuple[str, np.ndarray]] = []
    for name in _LSTM_COMPONENTS:
        lp = getattr(params, name)
        for field in PARAM_FIELDS:
            out.append((f"{name}.{field}", getattr(lp, field)))
    out.append(("head_fw.w", params.head_fw.w))
    out.append(("head_fw.b", params.head_fw.b))
    out.append(("head_bw.w", params.head_bw.w))
    out.append(("head_bw.b", params.head_bw.b))
    for i, layer in enumerate(params.merge):
        out.append((f"merge.{i}.w", layer.w))
        out.append((f"merge.{i}.b", layer.b))
    return out


def clone_params(params: ModelParams) -> ModelParams:
    return ModelParams(
        params.config,
        *(LstmParams(**{f: getattr(getattr(params, n), f).copy() for f in PARAM_FIELDS})
          for n in _LSTM_COMPONENTS),
        Affine(params.head_fw.w.copy(), params.head_fw.b.copy()),
        Affine(params.head_bw.w.copy(), params.head_bw.b.copy()),
        [Affine(layer.w.copy(), layer.b.copy()) for layer in params.merge],
    )


@dataclass
class ImputationWindow:
    """One sample: observed rows before a gap, the gap itself, observed rows after.

    `missing` holds the ground-truth gap rows and is None in pure inference.
    """

    before: np.ndarray  # (L_b, input_dim)
    missing: np.ndarray | None  # (T, input_dim)
    after: np.ndarray  # (L_a, input_dim)


@dataclass
class ForwardTrace:
    """Everything one forward pass produced, ordered by gap position."""

    h_fw: list[np.ndarray]
    pred_fw: list[np.ndarray]  # local forward-stream predictions
    h_bw: list[np.ndarray] | None
    pred_bw: list[np.ndarray] | None
    merged: list[np.ndarray]  # the final imputation per gap position
    merge_hidden_acts: list[np.ndarray] | None
    enc_fw_tapes: list[CellTape]
    dec_fw_tapes: list[CellTape]
    enc_bw_tapes: list[CellTape] | None
    dec_bw_tapes: list[CellTape] | None  # processing order: gap positions T..1


def _rows(a: np.ndarray, name: str, d: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[1] != d:
        raise ShapeError(f"{name}: expected shape (n, {d}), got {a.shape}")
    if a.shape[0] < 1:
        raise ShapeError(f"{name}: needs at least one row")
    return a


def forward(params: ModelParams, window: ImputationWindow, schedule: ScalingSchedule) -> ForwardTrace:
    """Run the network over one window.

    Stages: both encoders first, then each decoder stream over the whole
    gap (self-feeding its local predictions), and merging last, once both
    hidden sequences exist.
    """
    cfg = params.config
    d, h = cfg.input_dim, cfg.hidden_dim
    T = schedule.gap_len
    before = _rows(window.before, "before", d)
    after = _rows(window.after, "after", d)
    if window.missing is not None:
        miss = _rows(window.missing, "missing", d)
        if miss.shape[0] != T:
            raise ShapeError(f"gap has {miss.shape[0]} rows but schedule covers {T}")

    fw_state, _, enc_fw_tapes = lstm_run(params.enc_fw, list(before), zero_state(h))
    h_fw, pred_fw, dec_fw_tapes = [], [], []
    state, x = fw_state, before[-1]
    for _ in range(T):
        state, tape = lstm_step(params.dec_fw, x, state)
        dec_fw_tapes.append(tape)
        h_fw.append(state.h)
        x = params.head_fw.apply(state.h)
        pred_fw.append(x)

    if cfg.forward_only:
        return ForwardTrace(h_fw, pred_fw, None, None, list(pred_fw), None,
                            enc_fw_tapes, dec_fw_tapes, None, None)

    bw_state, _, enc_bw_tapes = lstm_run(params.enc_bw, list(after[::-1]), zero_state(h))
    h_bw_steps, pred_bw_steps, dec_bw_tapes = [], [], []
    state, x = bw_state, after[0]
    for _ in range(T):
        state, tape = lstm_step(params.dec_bw, x, state)
        dec_bw_tapes.append(tape)
        h_bw_steps.append(state.h)
        x = params.head_bw.apply(state.h)
        pred_bw_steps.append(x)
    h_bw = h_bw_steps[::-1]
    pred_bw = pred_bw_steps[::-1]

    merged, hidden_acts = [], ([] if cfg.merge_hidden > 0 else None)
    for t in range(T):
        u = np.concatenate([schedule.gamma[t] * h_fw[t], schedule.gamma_prime[t] * h_bw[t]])
        if cfg.merge_hidden > 0:
            z = np.tanh(params.merge[0].apply(u))
            hidden_acts.append(z)
            merged.append(params.merge[1].apply(z))
        else:
            merged.append(params.merge[0].apply(u))
    return ForwardTrace(h_fw, pred_fw, h_bw, pred_bw, merged, hidden_acts,
                        enc_fw_tapes, dec_fw_tapes, enc_bw_tapes, dec_bw_tapes)


def loss(trace: ForwardTrace, truth) -> float:
    """Mean over gap positions of the squared-error terms.

    Full network: MSE of the merged output plus MSE of each stream's local
    prediction at every position. Forward-only network: MSE of its single
    prediction stream.
    """
    T = len(trace.merged)
    truth = np.asarray(truth, dtype=np.float64)
    if truth.ndim == 1:
        truth = truth[:, None]
    if truth.shape[0] != T:
        raise ShapeError(f"truth has {truth.shape[0]} rows for a gap of {T}")
    total = 0.0
    for t in range(T):
        total += mse(truth[t], trace.merged[t])
        if trace.pred_bw is not None:
            total += mse(truth[t], trace.pred_fw[t])
            total += mse(truth[t], trace.pred_bw[t])
    return total / T


def _merge_backward(
    params: ModelParams,
    trace: ForwardTrace,
    schedule: ScalingSchedule,
    truth: np.ndarray,
    scale: float,
    g: dict[str, np.ndarray],
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Backward through the merge layer only, with the trace held fixed.

    Returns the merged-loss gradients w.r.t. each decoder hidden vector at
    the merge input: the gamma factors multiply straight through, which is
    what makes the stream weights shape learning as well as prediction.
    """
    h = params.config.hidden_dim
    T = schedule.gap_len
    dh_fw: list[np.ndarray] = []
    dh_bw: list[np.ndarray] = []
    for t in range(T):
        dxhat = scale * (trace.merged[t] - truth[t])
        u = np.concatenate([schedule.gamma[t] * trace.h_fw[t],
                            schedule.gamma_prime[t] * trace.h_bw[t]])
        if params.config.merge_hidden > 0:
            z = trace.merge_hidden_acts[t]
            g["merge.1.w"] += np.outer(dxhat, z)
            g["merge.1.b"] += dxhat
            dz = params.merge[1].w.T @ dxhat
            da = dz * (1.0 - z * z)
            g["merge.0.w"] += np.outer(da, u)
            g["merge.0.b"] += da
            du = params.merge[0].w.T @ da
        else:
            g["merge.0.w"] += np.outer(dxhat, u)
            g["merge.0.b"] += dxhat
            du = params.merge[0].w.T @ dxhat
        dh_fw.append(schedule.gamma[t] * du[:h])
        dh_bw.append(schedule.gamma_prime[t] * du[h:])
    return dh_fw, dh_bw


def merge_input_grads(
    params: ModelParams,
    trace: ForwardTrace,
    schedule: ScalingSchedule,
    truth,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of the merged-output loss w.r.t. each stream's hidden vector
    entering the merge, with the forward trace held fixed."""
    if params.config.forward_only:
        raise ValueError("forward-only network has no merge layer")
    truth = _rows(truth, "truth", params.config.input_dim)
    T = schedule.gap_len
    scratch = {f"merge.{i}.{f}": np.zeros_like(getattr(layer, f))
               for i, layer in enumerate(params.merge) for f in ("w", "b")}
    scale = 2.0 / (T * params.config.input_dim)
    return _merge_backward(params, trace, schedule, truth, scale, scratch)


def loss_and_grads(
    params: ModelParams,
    window: ImputationWindow,
    schedule: ScalingSchedule,
    truth=None,
    term_weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and its exact gradient w.r.t. every parameter.

    `term_weights` scales the (merged, forward-stream, backward-stream)
    loss terms; the default reproduces `loss`. The forward-only network has
    a single term and ignores the weights.
    """
    cfg = params.config
    d, h = cfg.input_dim, cfg.hidden_dim
    T = schedule.gap_len
    if truth is None:
        truth = window.missing
    if truth is None:
        raise ValueError("training needs ground-truth gap rows")
    truth = _rows(truth, "truth", d)
    if truth.shape[0] != T:
        raise ShapeError(f"truth has {truth.shape[0]} rows for a gap of {T}")

    trace = forward(params, window, schedule)
    w_merged, w_fw, w_bw = term_weights
    coef = 2.0 / (T * d)

    head_fw_g = {"w": np.zeros_like(params.head_fw.w), "b": np.zeros_like(params.head_fw.b)}
    dec_fw_g = zero_lstm_grads(params.dec_fw)

    if cfg.forward_only:
        loss_val = sum(mse(truth[t], trace.merged[t]) for t in range(T)) / T
        dh_merge_fw = None
    else:
        loss_val = 0.0
        for t in range(T):
            loss_val += w_merged * mse(truth[t], trace.merged[t])
            loss_val += w_fw * mse(truth[t], trace.pred_fw[t])
            loss_val += w_bw * mse(truth[t], trace.pred_bw[t])
        loss_val /= T
        merge_g = {f"merge.{i}.{f}": np.zeros_like(getattr(layer, f))
                   for i, layer in enumerate(params.merge) for f in ("w", "b")}
        dh_merge_fw, dh_merge_bw = _merge_backward(
            params, trace, schedule, truth, w_merged * coef, merge_g)

    # Forward decoder, newest step first. The gradient w.r.t. a local
    # prediction combines its own loss term with the gradient flowing out of
    # the next step's input, because predictions are self-fed.
    dh_carry = np.zeros(h)
    dc_carry = np.zeros(h)
    dx_next: np.ndarray | None = None
    for t in reversed(range(T)):
        if cfg.forward_only:
            d_pred = coef * (trace.pred_fw[t] - truth[t])
        else:
            d_pred = (w_fw * coef) * (trace.pred_fw[t] - truth[t])
        if dx_next is not None:
            d_pred = d_pred + dx_next
        head_fw_g["w"] += np.outer(d_pred, trace.h_fw[t])
        head_fw_g["b"] += d_pred
        dh = dh_carry + params.head_fw.w.T @ d_pred
        if dh_merge_fw is not None:
            dh = dh + dh_merge_fw[t]
        dx_next, dh_carry, dc_carry = lstm_step_backward(
            params.dec_fw, trace.dec_fw_tapes[t], dh, dc_carry, dec_fw_g)
    enc_fw_g, _, _ = lstm_backward(params.enc_fw, trace.enc_fw_tapes, None, dh_carry, dc_carry)

    grads: dict[str, np.ndarray] = {}
    for field in PARAM_FIELDS:
        grads[f"enc_fw.{field}"] = enc_fw_g[field]
        grads[f"dec_fw.{field}"] = dec_fw_g[field]
    grads["head_fw.w"] = head_fw_g["w"]
    grads["head_fw.b"] = head_fw_g["b"]

    if cfg.forward_only:
        for field in PARAM_FIELDS:
            grads[f"enc_bw.{field}"] = np.zeros_like(getattr(params.enc_bw, field))
            grads[f"dec_bw.{field}"] = np.zeros_like(getattr(params.dec_bw, field))
        grads["head_bw.w"] = np.zeros_like(params.head_bw.w)
        grads["head_bw.b"] = np.zeros_like(params.head_bw.b)
        for i, layer in enumerate(params.merge):
            grads[f"merge.{i}.w"] = np.zeros_like(layer.w)
            grads[f"merge.{i}.b"] = np.zeros_like(layer.b)
        return loss_val, grads

    # Backward decoder: iterate its processing order in reverse, which walks
    # the gap from the position nearest the forward observations outward.
    head_bw_g = {"w": np.zeros_like(params.head_bw.w), "b": np.zeros_like(params.head_bw.b)}
    dec_bw_g = zero_lstm_grads(params.dec_bw)
    dh_carry = np.zeros(h)
    dc_carry = np.zeros(h)
    dx_next = None
    for step in reversed(range(T)):
        t = T - 1 - step  # gap position produced at this step
        d_pred = (w_bw * coef) * (trace.pred_bw[t] - truth[t])
        if dx_next is not None:
            d_pred = d_pred + dx_next
        head_bw_g["w"] += np.outer(d_pred, trace.h_bw[t])
        head_bw_g["b"] += d_pred
        dh = dh_carry + params.head_bw.w.T @ d_pred + dh_merge_bw[t]
        dx_next, dh_carry, dc_carry = lstm_step_backward(
            params.dec_bw, trace.dec_bw_tapes[step], dh, dc_carry, dec_bw_g)
    enc_bw_g, _, _ = lstm_backward(params.enc_bw, trace.enc_bw_tapes, None, dh_carry, dc_carry)

    for field in PARAM_FIELDS:
        grads[f"enc_bw.{field}"] = enc_bw_g[field]
        grads[f"dec_bw.{field}"] = dec_bw_g[field]
    grads["head_bw.w"] = head_bw_g["w"]
    grads["head_bw.b"] = head_bw_g["b"]
    for key, val in merge_g.items():
        grads[key] = val
    return loss_val, grads


def backward(
    params: ModelParams,
    window: ImputationWindow,
    schedule: ScalingSchedule,
    truth=None,
    term_weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> dict[str, np.ndarray]:
    """Exact gradient of the window loss w.r.t. every parameter."""
    return loss_and_grads(params, window, schedule, truth, term_weights)[1]


def impute(
    params: ModelParams,
    before,
    after,
    gap_len: int,
    variant: str | None = None,
) -> np.ndarray:
    """Fill a gap of `gap_len` rows between observed context; no truth needed."""
    schedule = make_schedule(gap_len, variant or params.config.schedule_variant)
    trace = forward(params, ImputationWindow(np.asarray(before, dtype=np.float64), None,
                                             np.asarray(after, dtype=np.float64)), schedule)
    return np.stack(trace.merged)


@dataclass
class GradCheckInstance:
    input_dim: int
    hidden_dim: int
    gap_len: int
    variant: str
    merge_hidden: int
    max_rel_err: float
    worst_path: str


@dataclass
class GradCheckReport:
    instances: list[GradCheckInstance]
    max_rel_err: float
    worst_path: str
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def gradient_check(
    n_instances: int = 20,
    seed: int = 0,
    eps: float = 1e-5,
    tolerance: float = 1e-4,
    max_input_dim: int = 3,
    max_hidden_dim: int = 4,
    max_gap: int = 3,
    context_len: int = 3,
    _corrupt_path: str | None = None,
) -> GradCheckReport:
    """Compare the closed-form gradient against central differences.

    Random small networks and windows; every parameter coordinate of every
    tensor is perturbed. `_corrupt_path` is a test hook that deliberately
    offsets one analytic gradient tensor so the check must fail.
    """
    rng = Rng(seed)
    instances: list[GradCheckInstance] = []
    worst = (0.0, "none")
    for k in range(n_instances):
        d = 1 + rng.randrange(max_input_dim)
        h = 1 + rng.randrange(max_hidden_dim)
        T = 1 + rng.randrange(max_gap)
        variant = SCHEDULE_VARIANTS[k % len(SCHEDULE_VARIANTS)]
        merge_hidden = 3 if k % 4 == 3 else 0
        cfg = NetworkConfig(input_dim=d, hidden_dim=h, schedule_variant=variant,
                            merge_hidden=merge_hidden)
        params = init_model_params(cfg, rng)
        window = ImputationWindow(
            rng.normal_array((context_len, d)),
            rng.normal_array((T, d)),
            rng.normal_array((context_len, d)),
        )
        schedule = make_schedule(T, variant)
        _, analytic = loss_and_grads(params, window, schedule)
        if _corrupt_path is not None and _corrupt_path in analytic:
            analytic[_corrupt_path] = analytic[_corrupt_path] + 1.0

        inst_worst = (0.0, "none")
        for path, tensor in iter_params(params):
            original = tensor.copy()

            def f(candidate: np.ndarray) -> float:
                tensor[...] = candidate
                value = loss(forward(params, window, schedule), window.missing)
                return value

            numeric = finite_diff_grad(f, original, eps)
            tensor[...] = original
            a = analytic[path]
            # central differences bottom out at ~1e-11*|loss| of roundoff, so
            # coordinates near zero are held to an absolute bar instead of a
            # relative one (the 1e-4 floor leaves ~100x margin over that noise)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-4)
            rel = np.abs(a - numeric) / denom
            m = float(rel.max()) if rel.size else 0.0
            if m > inst_worst[0]:
                inst_worst = (m, path)
        instances.append(GradCheckInstance(d, h, T, variant, merge_hidden,
                                           inst_worst[0], inst_worst[1]))
        if inst_worst[0] > worst[0]:
            worst = inst_worst
    return GradCheckReport(instances, worst[0], worst[1], tolerance)
