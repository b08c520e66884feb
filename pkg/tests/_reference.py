"""Independent straight-line oracles used by the tests.

Everything here is written with plain Python floats and explicit loops,
deliberately sharing no code with the package, so that agreement between
the two is evidence rather than tautology.
"""

import math


def sigmoid_scalar(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def lstm_step_scalar(p, x, h_prev, c_prev):
    """One LSTM step, scalar arithmetic only.

    `p` is an LstmParams; x/h_prev/c_prev are Python lists. Returns (h, c).
    """
    hd = len(h_prev)
    h_new, c_new = [], []
    for j in range(hd):
        def pre(w, u, b):
            s = b[j]
            for k in range(len(x)):
                s += float(w[j, k]) * x[k]
            for k in range(hd):
                s += float(u[j, k]) * h_prev[k]
            return s
        i = sigmoid_scalar(pre(p.w_i, p.u_i, p.b_i))
        f = sigmoid_scalar(pre(p.w_f, p.u_f, p.b_f))
        g = math.tanh(pre(p.w_g, p.u_g, p.b_g))
        o = sigmoid_scalar(pre(p.w_o, p.u_o, p.b_o))
        c = f * c_prev[j] + i * g
        c_new.append(c)
        h_new.append(o * math.tanh(c))
    return h_new, c_new


def affine_scalar(aff, x):
    out = []
    for j in range(aff.w.shape[0]):
        s = float(aff.b[j])
        for k in range(len(x)):
            s += float(aff.w[j, k]) * x[k]
        out.append(s)
    return out


def network_forward_scalar(params, before, missing_len, after, gamma, gamma_prime):
    """Whole-network forward pass in scalar arithmetic.

    before/after are lists of lists (rows); returns (merged, pred_fw, pred_bw)
    as lists of rows. Assumes the single linear merge layer.
    """
    hd = params.config.hidden_dim
    h = [0.0] * hd
    c = [0.0] * hd
    for row in before:
        h, c = lstm_step_scalar(params.enc_fw, row, h, c)
    pred_fw, h_fw = [], []
    x = before[-1]
    for _ in range(missing_len):
        h, c = lstm_step_scalar(params.dec_fw, x, h, c)
        h_fw.append(h)
        x = affine_scalar(params.head_fw, h)
        pred_fw.append(x)

    h = [0.0] * hd
    c = [0.0] * hd
    for row in reversed(after):
        h, c = lstm_step_scalar(params.enc_bw, row, h, c)
    pred_bw_steps, h_bw_steps = [], []
    x = after[0]
    for _ in range(missing_len):
        h, c = lstm_step_scalar(params.dec_bw, x, h, c)
        h_bw_steps.append(h)
        x = affine_scalar(params.head_bw, h)
        pred_bw_steps.append(x)
    h_bw = list(reversed(h_bw_steps))
    pred_bw = list(reversed(pred_bw_steps))

    merged = []
    for t in range(missing_len):
        u = [gamma[t] * v for v in h_fw[t]] + [gamma_prime[t] * v for v in h_bw[t]]
        merged.append(affine_scalar(params.merge[0], u))
    return merged, pred_fw, pred_bw


def mae_loop(truth, pred):
    total = 0.0
    for t, p in zip(truth, pred, strict=True):
        total += abs(t - p)
    return total / len(truth)


def mre_loop(truth, pred):
    num = 0.0
    den = 0.0
    for t, p in zip(truth, pred, strict=True):
        num += abs(t - p)
        den += abs(t)
    return num / den


def enumerate_window_starts(n_rows, total, stride):
    """Brute-force window offsets: scan every row, keep the strided fits."""
    starts = []
    for s in range(n_rows):
        if s % stride == 0 and s + total <= n_rows:
            starts.append(s)
    return starts
