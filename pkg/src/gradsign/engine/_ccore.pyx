# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled program executor: same contract as ``_pycore``."""

from libc.math cimport tanh as ctanh

NAME = "compiled"


cdef inline double _act(long act, double x) noexcept nogil:
    if act == 1:
        return x if x > 0.0 else 0.0
    if act == 2:
        return ctanh(x)
    return x


cdef inline double _dact(long act, double x) noexcept nogil:
    cdef double t
    if act == 1:
        return 1.0 if x > 0.0 else 0.0
    if act == 2:
        t = ctanh(x)
        return 1.0 - t * t
    return 1.0


def run_forward(const long[:, ::1] instrs, const long[:, ::1] segs,
                const double[::1] params, double[:, ::1] bufmat,
                double[:, ::1] premat):
    cdef Py_ssize_t n = bufmat.shape[0]
    cdef Py_ssize_t k, i, r, c
    cdef long op, so, do, sw, dw, seg, act, po
    cdef long w_off, b_off, in_w, out_w
    cdef double acc
    with nogil:
        for k in range(instrs.shape[0]):
            op = instrs[k, 0]; so = instrs[k, 1]; do = instrs[k, 2]
            sw = instrs[k, 3]; dw = instrs[k, 4]; seg = instrs[k, 5]
            act = instrs[k, 6]; po = instrs[k, 7]
            if op == 0:
                w_off = segs[seg, 0]; b_off = segs[seg, 1]
                in_w = segs[seg, 2]; out_w = segs[seg, 3]
                for i in range(n):
                    for r in range(out_w):
                        if b_off >= 0:
                            acc = params[b_off + r]
                        else:
                            acc = 0.0
                        for c in range(in_w):
                            acc += params[w_off + r * in_w + c] * bufmat[i, so + c]
                        premat[i, po + r] = acc
                        bufmat[i, do + r] += _act(act, acc)
            else:
                for i in range(n):
                    for c in range(sw):
                        bufmat[i, do + c] += bufmat[i, so + c]


def run_backward_per_sample(const long[:, ::1] instrs, const long[:, ::1] segs,
                            const double[::1] params, const double[:, ::1] bufmat,
                            const double[:, ::1] premat, double[:, ::1] dbufmat,
                            double[:, ::1] gmat):
    cdef Py_ssize_t n = bufmat.shape[0]
    cdef Py_ssize_t k, i, r, c
    cdef long op, so, do, sw, dw, seg, act, po
    cdef long w_off, b_off, in_w, out_w
    cdef double dpre
    with nogil:
        for k in range(instrs.shape[0] - 1, -1, -1):
            op = instrs[k, 0]; so = instrs[k, 1]; do = instrs[k, 2]
            sw = instrs[k, 3]; dw = instrs[k, 4]; seg = instrs[k, 5]
            act = instrs[k, 6]; po = instrs[k, 7]
            if op == 0:
                w_off = segs[seg, 0]; b_off = segs[seg, 1]
                in_w = segs[seg, 2]; out_w = segs[seg, 3]
                for i in range(n):
                    for r in range(out_w):
                        dpre = dbufmat[i, do + r] * _dact(act, premat[i, po + r])
                        if dpre != 0.0:
                            for c in range(in_w):
                                gmat[i, w_off + r * in_w + c] += dpre * bufmat[i, so + c]
                                dbufmat[i, so + c] += dpre * params[w_off + r * in_w + c]
                            if b_off >= 0:
                                gmat[i, b_off + r] += dpre
            else:
                for i in range(n):
                    for c in range(sw):
                        dbufmat[i, so + c] += dbufmat[i, do + c]


def run_backward_sum(const long[:, ::1] instrs, const long[:, ::1] segs,
                     const double[::1] params, const double[:, ::1] bufmat,
                     const double[:, ::1] premat, double[:, ::1] dbufmat,
                     double[::1] gvec):
    cdef Py_ssize_t n = bufmat.shape[0]
    cdef Py_ssize_t k, i, r, c
    cdef long op, so, do, sw, dw, seg, act, po
    cdef long w_off, b_off, in_w, out_w
    cdef double dpre
    with nogil:
        for k in range(instrs.shape[0] - 1, -1, -1):
            op = instrs[k, 0]; so = instrs[k, 1]; do = instrs[k, 2]
            sw = instrs[k, 3]; dw = instrs[k, 4]; seg = instrs[k, 5]
            act = instrs[k, 6]; po = instrs[k, 7]
            if op == 0:
                w_off = segs[seg, 0]; b_off = segs[seg, 1]
                in_w = segs[seg, 2]; out_w = segs[seg, 3]
                for i in range(n):
                    for r in range(out_w):
                        dpre = dbufmat[i, do + r] * _dact(act, premat[i, po + r])
                        if dpre != 0.0:
                            for c in range(in_w):
                                gvec[w_off + r * in_w + c] += dpre * bufmat[i, so + c]
                                dbufmat[i, so + c] += dpre * params[w_off + r * in_w + c]
                            if b_off >= 0:
                                gvec[b_off + r] += dpre
            else:
                for i in range(n):
                    for c in range(sw):
                        dbufmat[i, so + c] += dbufmat[i, do + c]
