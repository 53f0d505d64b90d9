# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernels: fused minibatch forward, loss, backward and Adam.

Drop-in replacement for ``mlab._pykernels``; see that module for the
contract. A whole epoch runs without returning to Python: matrix products
go straight to BLAS, the elementwise work is plain C loops.

Arrays are row-major, BLAS is column-major, so every product below is
written for the transposed operands.
"""

import numpy as np
from libc.math cimport exp, log, sqrt, tanh, pow
from libc.stdint cimport int64_t
from scipy.linalg.cython_blas cimport dgemm

cdef enum:
    TANH = 0


cdef void _affine(const double[:, ::1] a, const double[:, ::1] w, const double[::1] b,
                  double[:, ::1] z, Py_ssize_t n) noexcept nogil:
    # z = a @ w.T + b, computed as z.T = w @ a.T
    cdef Py_ssize_t r, o
    cdef int n_out = <int>w.shape[0], n_in = <int>w.shape[1], rows = <int>n
    cdef double one = 1.0
    for r in range(n):
        for o in range(n_out):
            z[r, o] = b[o]
    if rows == 0:
        return
    dgemm("T", "N", &n_out, &rows, &n_in, &one, <double*>&w[0, 0], &n_in,
          <double*>&a[0, 0], &n_in, &one, &z[0, 0], &n_out)


cdef void _activate(double[:, ::1] z, Py_ssize_t n, int act) noexcept nogil:
    cdef Py_ssize_t r, c
    for r in range(n):
        for c in range(z.shape[1]):
            if act == TANH:
                z[r, c] = tanh(z[r, c])
            elif z[r, c] < 0.0:
                z[r, c] = 0.0


cdef double _loss_dlogits(const double[:, ::1] logits, const int64_t[::1] y,
                          const double[:, ::1] teacher, bint has_teacher,
                          double temperature, double mix, double[:, ::1] dz,
                          Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t r, c, C = logits.shape[1]
    cdef double mx, lse, mx_s, lse_s, mx_t, lse_t, lq_s, lq_t, q_t
    cdef double ce = 0.0, kl = 0.0
    cdef double inv_t = 1.0 / temperature
    cdef double w_ce = (1.0 - mix) / n
    cdef double w_kl = mix * temperature / n
    for r in range(n):
        mx = logits[r, 0]
        for c in range(1, C):
            if logits[r, c] > mx:
                mx = logits[r, c]
        lse = 0.0
        for c in range(C):
            lse += exp(logits[r, c] - mx)
        lse = log(lse)
        ce -= logits[r, y[r]] - mx - lse
        for c in range(C):
            dz[r, c] = exp(logits[r, c] - mx - lse)
        dz[r, y[r]] -= 1.0
        for c in range(C):
            dz[r, c] *= w_ce
        if has_teacher and mix > 0.0:
            mx_s = logits[r, 0] * inv_t
            mx_t = teacher[r, 0] * inv_t
            for c in range(1, C):
                if logits[r, c] * inv_t > mx_s:
                    mx_s = logits[r, c] * inv_t
                if teacher[r, c] * inv_t > mx_t:
                    mx_t = teacher[r, c] * inv_t
            lse_s = 0.0
            lse_t = 0.0
            for c in range(C):
                lse_s += exp(logits[r, c] * inv_t - mx_s)
                lse_t += exp(teacher[r, c] * inv_t - mx_t)
            lse_s = log(lse_s)
            lse_t = log(lse_t)
            for c in range(C):
                lq_s = logits[r, c] * inv_t - mx_s - lse_s
                lq_t = teacher[r, c] * inv_t - mx_t - lse_t
                q_t = exp(lq_t)
                kl += q_t * (lq_t - lq_s)
                dz[r, c] += w_kl * (exp(lq_s) - q_t)
    return (1.0 - mix) * ce / n + mix * temperature * temperature * kl / n


cdef void _param_grads(const double[:, ::1] delta, const double[:, ::1] a_in,
                       double[:, ::1] gw, double[::1] gb, Py_ssize_t n) noexcept nogil:
    # gw = delta.T @ a_in, computed as gw.T = a_in.T @ delta
    cdef Py_ssize_t r, o
    cdef int n_out = <int>gw.shape[0], n_in = <int>gw.shape[1], rows = <int>n
    cdef double one = 1.0, zero = 0.0
    dgemm("N", "T", &n_in, &n_out, &rows, &one, <double*>&a_in[0, 0], &n_in,
          <double*>&delta[0, 0], &n_out, &zero, &gw[0, 0], &n_in)
    for o in range(n_out):
        gb[o] = 0.0
    for r in range(n):
        for o in range(n_out):
            gb[o] += delta[r, o]


cdef void _backprop(const double[:, ::1] delta, const double[:, ::1] w,
                    const double[:, ::1] a_in, double[:, ::1] out,
                    Py_ssize_t n, int act) noexcept nogil:
    # out = (delta @ w) * act'(a_in), the product computed as out.T = w.T @ delta.T
    cdef Py_ssize_t r, k
    cdef int n_out = <int>w.shape[0], n_in = <int>w.shape[1], rows = <int>n
    cdef double one = 1.0, zero = 0.0, a
    dgemm("N", "N", &n_in, &rows, &n_out, &one, <double*>&w[0, 0], &n_in,
          <double*>&delta[0, 0], &n_out, &zero, &out[0, 0], &n_in)
    for r in range(n):
        for k in range(n_in):
            a = a_in[r, k]
            if act == TANH:
                out[r, k] *= 1.0 - a * a
            elif a <= 0.0:
                out[r, k] = 0.0


cdef void _adam(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps,
                double c1, double c2) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(p.shape[0]):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i])
        p[i] -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps)


cdef class _Workspace:
    """Preallocated activation, delta and gradient buffers for one network."""

    cdef public list acts, deltas, gw, gb
    cdef public object logits
    cdef Py_ssize_t n_layers

    def __init__(self, list weights, Py_ssize_t rows):
        cdef Py_ssize_t i, last = len(weights) - 1
        self.n_layers = last + 1
        self.acts = [np.empty((rows, weights[0].shape[1]))]
        self.deltas = []
        for i in range(last + 1):
            self.deltas.append(np.empty((rows, weights[i].shape[0])))
            if i < last:
                self.acts.append(np.empty((rows, weights[i].shape[0])))
        self.logits = np.empty((rows, weights[last].shape[0]))
        self.gw = [np.empty_like(w) for w in weights]
        self.gb = [np.empty(w.shape[0]) for w in weights]

    cdef double run(self, list weights, list biases, const int64_t[::1] y,
                    object teacher, double temperature, double mix,
                    Py_ssize_t n, int act):
        cdef Py_ssize_t i, last = self.n_layers - 1
        cdef double[:, ::1] z
        cdef double[:, ::1] empty = np.zeros((1, 1))
        cdef const double[:, ::1] t_view
        cdef bint has_teacher = teacher is not None
        cdef double loss
        t_view = teacher if has_teacher else empty
        for i in range(self.n_layers):
            z = self.logits if i == last else self.acts[i + 1]
            _affine(self.acts[i], weights[i], biases[i], z, n)
            if i < last:
                _activate(z, n, act)
        loss = _loss_dlogits(self.logits, y, t_view, has_teacher, temperature, mix,
                             self.deltas[last], n)
        for i in range(last, -1, -1):
            _param_grads(self.deltas[i], self.acts[i], self.gw[i], self.gb[i], n)
            if i > 0:
                _backprop(self.deltas[i], weights[i], self.acts[i], self.deltas[i - 1], n, act)
        return loss


def _as_list(arrays):
    return [np.ascontiguousarray(a, dtype=np.float64) for a in arrays]


def batch_grads(weights, biases, x, y, teacher_logits, int activation,
                double temperature, double mix):
    weights = _as_list(weights)
    biases = _as_list(biases)
    x = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    cdef _Workspace ws = _Workspace(weights, n)
    ws.acts[0][...] = x
    teacher = None if teacher_logits is None else np.ascontiguousarray(teacher_logits, dtype=np.float64)
    loss = ws.run(weights, biases, np.ascontiguousarray(y, dtype=np.int64), teacher,
                  temperature, mix, n, activation)
    return loss, [g.copy() for g in ws.gw], [g.copy() for g in ws.gb]


def train_epoch(list weights, list biases, list m_w, list v_w, list m_b, list v_b,
                x, y, teacher_logits, order, Py_ssize_t batch_size, int activation,
                double temperature, double mix, double lr, double beta1, double beta2,
                double eps, long step):
    """One Adam epoch; parameter and moment arrays must be C-contiguous float64."""
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const int64_t[::1] yv = np.ascontiguousarray(y, dtype=np.int64)
    cdef const int64_t[::1] ov = np.ascontiguousarray(order, dtype=np.int64)
    cdef bint has_teacher = teacher_logits is not None
    cdef const double[:, ::1] tv
    cdef double[:, ::1] xb, tb
    cdef int64_t[::1] yb
    cdef Py_ssize_t n_total = ov.shape[0], start, n, r, c, idx, i
    cdef Py_ssize_t n_layers = len(weights)
    cdef double total = 0.0, loss, c1, c2
    cdef _Workspace ws = _Workspace(weights, batch_size)
    xb = ws.acts[0]
    yb_arr = np.empty(batch_size, dtype=np.int64)
    yb = yb_arr
    if has_teacher:
        tv = np.ascontiguousarray(teacher_logits, dtype=np.float64)
        tb_arr = np.empty((batch_size, tv.shape[1]))
        tb = tb_arr
    else:
        tb_arr = None
    flat_p = [w.reshape(-1) for w in weights] + list(biases)
    flat_g = [g.reshape(-1) for g in ws.gw] + ws.gb
    flat_m = [m.reshape(-1) for m in m_w] + list(m_b)
    flat_v = [v.reshape(-1) for v in v_w] + list(v_b)
    for a in weights + biases + m_w + v_w + m_b + v_b:
        if not a.flags.c_contiguous:
            raise ValueError("parameter and moment arrays must be C-contiguous")
    start = 0
    while start < n_total:
        n = min(batch_size, n_total - start)
        for r in range(n):
            idx = ov[start + r]
            for c in range(xv.shape[1]):
                xb[r, c] = xv[idx, c]
            yb[r] = yv[idx]
            if has_teacher:
                for c in range(tv.shape[1]):
                    tb[r, c] = tv[idx, c]
        loss = ws.run(weights, biases, yb, tb_arr, temperature, mix, n, activation)
        total += loss * n
        step += 1
        c1 = 1.0 - pow(beta1, step)
        c2 = 1.0 - pow(beta2, step)
        for i in range(len(flat_p)):
            _adam(flat_p[i], flat_g[i], flat_m[i], flat_v[i], lr, beta1, beta2, eps, c1, c2)
        start += n
    return total, step
