"""Pure-numpy program executor (fallback for the compiled core).

All three entry points mutate caller-allocated arrays in place and share
their signatures with the Cython module ``_ccore``.
"""

from __future__ import annotations

import numpy as np

from .program import ACT_RELU, ACT_TANH, OP_DENSE, S_B, S_IN, S_OUT, S_W

NAME = "python"


def _activate(act: int, pre: np.ndarray) -> np.ndarray:
    if act == ACT_RELU:
        return np.maximum(pre, 0.0)
    if act == ACT_TANH:
        return np.tanh(pre)
    return pre


def _activate_deriv(act: int, pre: np.ndarray) -> np.ndarray:
    if act == ACT_RELU:
        return (pre > 0.0).astype(np.float64)
    if act == ACT_TANH:
        t = np.tanh(pre)
        return 1.0 - t * t
    return np.ones_like(pre)


def run_forward(instrs, segs, params, bufmat, premat) -> None:
    for op, so, do, sw, dw, seg, act, po in instrs.tolist():
        src = bufmat[:, so : so + sw]
        if op == OP_DENSE:
            w_off, b_off, in_w, out_w = segs[seg].tolist()
            w = params[w_off : w_off + in_w * out_w].reshape(out_w, in_w)
            pre = src @ w.T
            if b_off >= 0:
                pre += params[b_off : b_off + out_w]
            premat[:, po : po + out_w] = pre
            bufmat[:, do : do + dw] += _activate(act, pre)
        else:
            bufmat[:, do : do + dw] += src


def _backward(instrs, segs, params, bufmat, premat, dbufmat, grad_out, per_sample: bool) -> None:
    n = bufmat.shape[0]
    for op, so, do, sw, dw, seg, act, po in instrs.tolist()[::-1]:
        ddst = dbufmat[:, do : do + dw]
        if op == OP_DENSE:
            w_off, b_off, in_w, out_w = segs[seg].tolist()
            w = params[w_off : w_off + in_w * out_w].reshape(out_w, in_w)
            pre = premat[:, po : po + out_w]
            dpre = ddst * _activate_deriv(act, pre)
            src = bufmat[:, so : so + sw]
            if per_sample:
                grad_out[:, w_off : w_off + in_w * out_w] += (
                    dpre[:, :, None] * src[:, None, :]
                ).reshape(n, -1)
                if b_off >= 0:
                    grad_out[:, b_off : b_off + out_w] += dpre
            else:
                grad_out[w_off : w_off + in_w * out_w] += (dpre.T @ src).ravel()
                if b_off >= 0:
                    grad_out[b_off : b_off + out_w] += dpre.sum(axis=0)
            dbufmat[:, so : so + sw] += dpre @ w
        else:
            dbufmat[:, so : so + sw] += ddst


def run_backward_per_sample(instrs, segs, params, bufmat, premat, dbufmat, gmat) -> None:
    _backward(instrs, segs, params, bufmat, premat, dbufmat, gmat, per_sample=True)


def run_backward_sum(instrs, segs, params, bufmat, premat, dbufmat, gvec) -> None:
    _backward(instrs, segs, params, bufmat, premat, dbufmat, gvec, per_sample=False)
