"""Engine operations: initialization, evaluation, exact and numeric gradients.

Everything here is a pure function of its arguments; repeated calls with the
same inputs return bit-identical results on the same core.
"""

from __future__ import annotations

import numpy as np

from . import backend
from .losses import (
    loss_gradient,
    loss_gradient_tangent,
    per_sample_losses,
    softmax,
)
from .network import Batch
from .program import (
    ACT_RELU,
    ACT_TANH,
    I_ACT,
    I_DST,
    I_OP,
    I_PRE,
    I_SRC,
    I_SRC_W,
    OP_DENSE,
    S_B,
    S_IN,
    S_OUT,
    S_W,
    Program,
    as_program,
)

__all__ = [
    "init_params",
    "forward",
    "forward_with_cache",
    "per_sample_gradients",
    "mean_loss_and_gradient",
    "finite_diff_gradient",
    "hessian_vector_product",
]


def init_params(net, seed: int) -> np.ndarray:
    """Draw parameters i.i.d. uniform on [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer.

    Weights and biases of each dense segment share the segment's fan-in
    scale.  Same (net, seed) pairs map to bit-identical vectors.
    """
    prog = as_program(net)
    rng = np.random.Generator(np.random.PCG64(seed))
    theta = np.empty(prog.num_params, dtype=np.float64)
    for w_off, b_off, in_w, out_w in prog.segs.tolist():
        bound = 1.0 / np.sqrt(in_w)
        theta[w_off : w_off + in_w * out_w] = rng.uniform(-bound, bound, in_w * out_w)
        if b_off >= 0:
            theta[b_off : b_off + out_w] = rng.uniform(-bound, bound, out_w)
    return theta


def _check_args(prog: Program, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.shape[0] != prog.num_params:
        raise ValueError(
            f"parameter vector has length {theta.size}, network declares {prog.num_params}"
        )
    if x.ndim != 2 or x.shape[1] != prog.input_dim:
        raise ValueError(
            f"layer '{prog.instr_names[0]}' expects input width {prog.input_dim}, "
            f"got {x.shape[1] if x.ndim == 2 else x.shape}"
        )
    return theta


def _inputs(batch) -> np.ndarray:
    if isinstance(batch, Batch):
        return batch.inputs
    return np.ascontiguousarray(np.asarray(batch, dtype=np.float64))


def forward_with_cache(net, theta: np.ndarray, batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the forward pass; returns (logits, packed buffers, packed preactivations)."""
    prog = as_program(net)
    x = _inputs(batch)
    theta = _check_args(prog, theta, x)
    n = x.shape[0]
    bufmat = np.zeros((n, prog.total_buf_width), dtype=np.float64)
    bufmat[:, : prog.input_dim] = x
    premat = np.zeros((n, max(prog.total_pre_width, 1)), dtype=np.float64)
    backend.core().run_forward(prog.instrs, prog.segs, theta, bufmat, premat)
    return bufmat[:, prog.out_slice].copy(), bufmat, premat


def forward(net, theta: np.ndarray, batch) -> np.ndarray:
    """Deterministic forward evaluation; output shape [n, o]."""
    logits, _, _ = forward_with_cache(net, theta, batch)
    return logits


def per_sample_gradients(net, theta: np.ndarray, batch: Batch, kind: str) -> np.ndarray:
    """Exact reverse-mode gradient of each sample's own loss; shape [n, m]."""
    prog = as_program(net)
    logits, bufmat, premat = forward_with_cache(net, theta, batch)
    dlogits = loss_gradient(logits, batch.labels, kind)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    n = batch.n
    dbufmat = np.zeros_like(bufmat)
    dbufmat[:, prog.out_slice] = dlogits
    gmat = np.zeros((n, prog.num_params), dtype=np.float64)
    backend.core().run_backward_per_sample(prog.instrs, prog.segs, theta, bufmat, premat, dbufmat, gmat)
    return gmat


def mean_loss_and_gradient(
    net, theta: np.ndarray, batch: Batch, kind: str, dbuf_out: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Mean loss over the batch and its gradient vector.

    ``dbuf_out`` optionally receives the packed buffer adjoints (the fisher
    metric reads per-activation gradients from it).
    """
    prog = as_program(net)
    logits, bufmat, premat = forward_with_cache(net, theta, batch)
    losses = per_sample_losses(logits, batch.labels, kind)
    dlogits = loss_gradient(logits, batch.labels, kind) / batch.n
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    dbufmat = np.zeros_like(bufmat) if dbuf_out is None else dbuf_out
    dbufmat[:, prog.out_slice] = dlogits
    gvec = np.zeros(prog.num_params, dtype=np.float64)
    backend.core().run_backward_sum(prog.instrs, prog.segs, theta, bufmat, premat, dbufmat, gvec)
    return float(losses.mean()), gvec


def seeded_gradient(net, theta: np.ndarray, x, dlogits: np.ndarray) -> np.ndarray:
    """Gradient of ``sum_i dlogits_i . f(x_i)`` with respect to the parameters."""
    prog = as_program(net)
    _, bufmat, premat = forward_with_cache(net, theta, x)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    dbufmat = np.zeros_like(bufmat)
    dbufmat[:, prog.out_slice] = dlogits
    gvec = np.zeros(prog.num_params, dtype=np.float64)
    backend.core().run_backward_sum(prog.instrs, prog.segs, theta, bufmat, premat, dbufmat, gvec)
    return gvec


def finite_diff_gradient(net, theta: np.ndarray, sample: Batch, kind: str, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a single sample's loss (verification oracle)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if sample.n != 1:
        raise ValueError("finite_diff_gradient expects a single-sample batch")
    prog = as_program(net)
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty(prog.num_params, dtype=np.float64)

    def loss_at(t):
        return float(per_sample_losses(forward(net, t, sample), sample.labels, kind)[0])

    for k in range(prog.num_params):
        t = theta.copy()
        t[k] = theta[k] + eps
        up = loss_at(t)
        t[k] = theta[k] - eps
        down = loss_at(t)
        grad[k] = (up - down) / (2.0 * eps)
    return grad


def hessian_vector_product(net, theta: np.ndarray, batch: Batch, kind: str, v: np.ndarray) -> np.ndarray:
    """Exact product of the mean-loss Hessian with ``v`` (forward-over-reverse).

    Propagates a directional tangent through the forward evaluation and then
    through the adjoint pass, so no second-order finite differencing is
    involved.  Always runs on numpy; this path is not performance critical.
    """
    prog = as_program(net)
    x = _inputs(batch)
    theta = _check_args(prog, theta, x)
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.shape != theta.shape:
        raise ValueError("direction vector must match the parameter vector")
    n = x.shape[0]
    instrs = prog.instrs.tolist()
    segs = prog.segs.tolist()

    buf = np.zeros((n, prog.total_buf_width))
    buf_dot = np.zeros_like(buf)
    buf[:, : prog.input_dim] = x
    pres: list[np.ndarray] = []
    pres_dot: list[np.ndarray] = []
    for op, so, do, sw, dw, seg, act, _po in instrs:
        src = buf[:, so : so + sw]
        src_dot = buf_dot[:, so : so + sw]
        if op == OP_DENSE:
            w_off, b_off, in_w, out_w = segs[seg]
            w = theta[w_off : w_off + in_w * out_w].reshape(out_w, in_w)
            vw = v[w_off : w_off + in_w * out_w].reshape(out_w, in_w)
            pre = src @ w.T
            pre_dot = src_dot @ w.T + src @ vw.T
            if b_off >= 0:
                pre += theta[b_off : b_off + out_w]
                pre_dot += v[b_off : b_off + out_w]
            pres.append(pre)
            pres_dot.append(pre_dot)
            buf[:, do : do + dw] += _act_np(act, pre)
            buf_dot[:, do : do + dw] += _dact_np(act, pre) * pre_dot
        else:
            pres.append(None)
            pres_dot.append(None)
            buf[:, do : do + dw] += src
            buf_dot[:, do : do + dw] += src_dot

    logits = buf[:, prog.out_slice]
    logits_dot = buf_dot[:, prog.out_slice]
    dbuf = np.zeros_like(buf)
    dbuf_dot = np.zeros_like(buf)
    dbuf[:, prog.out_slice] = loss_gradient(logits, batch.labels, kind) / n
    dbuf_dot[:, prog.out_slice] = loss_gradient_tangent(logits, logits_dot, batch.labels, kind) / n

    hv = np.zeros(prog.num_params)
    for idx in range(len(instrs) - 1, -1, -1):
        op, so, do, sw, dw, seg, act, _po = instrs[idx]
        ddst = dbuf[:, do : do + dw]
        ddst_dot = dbuf_dot[:, do : do + dw]
        if op == OP_DENSE:
            w_off, b_off, in_w, out_w = segs[seg]
            w = theta[w_off : w_off + in_w * out_w].reshape(out_w, in_w)
            vw = v[w_off : w_off + in_w * out_w].reshape(out_w, in_w)
            pre = pres[idx]
            da = _dact_np(act, pre)
            dpre = ddst * da
            dpre_dot = ddst_dot * da + ddst * _d2act_np(act, pre) * pres_dot[idx]
            src = buf[:, so : so + sw]
            src_dot = buf_dot[:, so : so + sw]
            hv[w_off : w_off + in_w * out_w] += (dpre_dot.T @ src + dpre.T @ src_dot).ravel()
            if b_off >= 0:
                hv[b_off : b_off + out_w] += dpre_dot.sum(axis=0)
            dbuf[:, so : so + sw] += dpre @ w
            dbuf_dot[:, so : so + sw] += dpre_dot @ w + dpre @ vw
        else:
            dbuf[:, so : so + sw] += ddst
            dbuf_dot[:, so : so + sw] += ddst_dot
    return hv


def _act_np(act: int, pre: np.ndarray) -> np.ndarray:
    if act == ACT_RELU:
        return np.maximum(pre, 0.0)
    if act == ACT_TANH:
        return np.tanh(pre)
    return pre


def _dact_np(act: int, pre: np.ndarray) -> np.ndarray:
    if act == ACT_RELU:
        return (pre > 0.0).astype(np.float64)
    if act == ACT_TANH:
        t = np.tanh(pre)
        return 1.0 - t * t
    return np.ones_like(pre)


def _d2act_np(act: int, pre: np.ndarray) -> np.ndarray:
    if act == ACT_TANH:
        t = np.tanh(pre)
        return -2.0 * t * (1.0 - t * t)
    return np.zeros_like(pre)


def relu_activation_patterns(net, theta: np.ndarray, batch) -> np.ndarray:
    """Binary activation pattern of every relu unit, one row per sample."""
    prog = as_program(net)
    _, _, premat = forward_with_cache(net, theta, batch)
    cols = []
    for row in prog.instrs.tolist():
        if row[I_OP] == OP_DENSE and row[I_ACT] == ACT_RELU:
            out_w = prog.segs[row[5], S_OUT]
            cols.append(premat[:, row[I_PRE] : row[I_PRE] + out_w] > 0.0)
    if not cols:
        return np.zeros((_inputs(batch).shape[0], 0), dtype=bool)
    return np.concatenate(cols, axis=1)
