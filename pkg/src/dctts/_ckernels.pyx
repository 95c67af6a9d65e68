# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled conv1d / highway kernels.

Convolution runs one BLAS gemm per (batch item, kernel tap) directly on the
unpadded input, so no padded copy or im2col buffer is ever built. Row-major
(channels, time) blocks are handed to column-major BLAS as (time, channels)
matrices with leading dimension T.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport exp, fabs, fabsf, sqrt, sqrtf
from scipy.linalg.cython_blas cimport sgemm, dgemm

cnp.import_array()


cdef inline void _gemm(char ta, char tb, int m, int n, int k,
                       floating* a, int lda, floating* b, int ldb,
                       floating* c, int ldc) noexcept nogil:
    cdef floating one = 1
    if floating is float:
        sgemm(&ta, &tb, &m, &n, &k, &one, a, &lda, b, &ldb, &one, c, &ldc)
    else:
        dgemm(&ta, &tb, &m, &n, &k, &one, a, &lda, b, &ldb, &one, c, &ldc)


def _conv_fwd(floating[:, :, ::1] x, floating[:, :, ::1] wt, floating[::1] bias,
              floating[:, :, ::1] out, int dilation, int pad_left):
    cdef int B = x.shape[0], I = x.shape[1], T = x.shape[2]
    cdef int K = wt.shape[0], O = wt.shape[1]
    cdef int b, o, t, j, shift, t0, t1
    with nogil:
        for b in range(B):
            for o in range(O):
                for t in range(T):
                    out[b, o, t] = bias[o]
            for j in range(K):
                shift = j * dilation - pad_left
                t0 = -shift if shift < 0 else 0
                t1 = T - shift if shift > 0 else T
                if t1 <= t0:
                    continue
                # out[b][:, t0:t1] += W_j @ x[b][:, t0+shift:t1+shift]
                _gemm(c'N', c'N', t1 - t0, O, I,
                      &x[b, 0, t0 + shift], T, &wt[j, 0, 0], I,
                      &out[b, 0, t0], T)


def _conv_bwd(floating[:, :, ::1] gout, floating[:, :, ::1] x, floating[:, :, ::1] wt,
              floating[:, :, ::1] gx, floating[:, :, ::1] gwt, int dilation, int pad_left):
    cdef int B = x.shape[0], I = x.shape[1], T = x.shape[2]
    cdef int K = wt.shape[0], O = wt.shape[1]
    cdef int b, j, shift, t0, t1
    with nogil:
        for j in range(K):
            shift = j * dilation - pad_left
            t0 = -shift if shift < 0 else 0
            t1 = T - shift if shift > 0 else T
            if t1 <= t0:
                continue
            for b in range(B):
                # gx[b][:, t0+shift:t1+shift] += W_j^T @ gout[b][:, t0:t1]
                _gemm(c'N', c'T', t1 - t0, I, O,
                      &gout[b, 0, t0], T, &wt[j, 0, 0], I,
                      &gx[b, 0, t0 + shift], T)
                # gW_j += gout[b][:, t0:t1] @ x[b][:, t0+shift:t1+shift]^T
                _gemm(c'T', c'N', I, O, t1 - t0,
                      &x[b, 0, t0 + shift], T, &gout[b, 0, t0], T,
                      &gwt[j, 0, 0], I)


def conv1d_forward(x, w, b, dilation, pad_left):
    B, _, T = x.shape
    O = w.shape[0]
    wt = np.ascontiguousarray(w.transpose(2, 0, 1))
    out = np.empty((B, O, T), dtype=x.dtype)
    _conv_fwd(np.ascontiguousarray(x), wt, np.ascontiguousarray(b), out,
              int(dilation), int(pad_left))
    return out


def conv1d_backward(gout, x, w, dilation, pad_left):
    wt = np.ascontiguousarray(w.transpose(2, 0, 1))
    x = np.ascontiguousarray(x)
    gout = np.ascontiguousarray(gout)
    gx = np.zeros_like(x)
    gwt = np.zeros_like(wt)
    _conv_bwd(gout, x, wt, gx, gwt, int(dilation), int(pad_left))
    gw = np.ascontiguousarray(gwt.transpose(1, 2, 0))
    return gx, gw, gout.sum(axis=(0, 2))


cdef union _f32bits:
    float f
    int i


cdef inline float _expf_neg(float x) noexcept nogil:
    """exp(x) for x <= 0: range reduction by ln 2 and a degree-6 polynomial.

    About 1 ulp over [-87, 0]; inputs below -87 are clamped.
    """
    cdef float fx, z, y
    cdef int n
    cdef _f32bits scale
    # selects rather than branches so the caller's loop vectorizes
    x = -87.0 if x < -87.0 else x
    # truncation of a non-positive value rounds toward zero, so this is round(x / ln 2)
    n = <int>(x * 1.44269504088896341 - 0.5)
    fx = n
    x = x - fx * 0.693359375
    x = x - fx * -2.12194440e-4
    z = x * x
    y = ((((1.9875691500e-4 * x + 1.3981999507e-3) * x + 8.3334519073e-3) * x
          + 4.1665795894e-2) * x + 1.6666665459e-1) * x + 5.0000001201e-1
    y = y * z + x + 1
    scale.i = (n + 127) << 23
    return y * scale.f


cdef inline floating _sigmoid(floating z) noexcept nogil:
    # branchless: exp of a non-positive argument only
    cdef floating e, r
    if floating is float:
        e = _expf_neg(-fabsf(z))
    else:
        e = exp(-fabs(z))
    r = 1 / (1 + e)
    return r if z >= 0 else e * r


def _sigmoid_f32(float[::1] z, float[::1] out):
    """Test hook for the float sigmoid."""
    cdef Py_ssize_t i
    for i in range(z.shape[0]):
        out[i] = _sigmoid(z[i])


cdef void _hw_fwd(floating* x, floating* h, floating* out, floating* gate,
                  Py_ssize_t B, Py_ssize_t C, Py_ssize_t T) noexcept nogil:
    cdef Py_ssize_t b, i, n = C * T
    cdef floating g
    cdef floating* hb
    for b in range(B):
        hb = h + 2 * b * n
        for i in range(n):
            g = _sigmoid(hb[i])
            gate[b * n + i] = g
            out[b * n + i] = g * hb[n + i] + (1 - g) * x[b * n + i]


cdef void _hw_bwd(floating* gout, floating* x, floating* h, floating* gate,
                  floating* gx, floating* gh, Py_ssize_t B, Py_ssize_t C, Py_ssize_t T) noexcept nogil:
    cdef Py_ssize_t b, i, k, n = C * T
    cdef floating g, go
    for b in range(B):
        for i in range(n):
            k = b * n + i
            g = gate[k]
            go = gout[k]
            gh[2 * b * n + i] = go * (h[2 * b * n + n + i] - x[k]) * g * (1 - g)
            gh[2 * b * n + n + i] = go * g
            gx[k] = go * (1 - g)


def _hw_fwd_py(floating[:, :, ::1] x, floating[:, :, ::1] h,
               floating[:, :, ::1] out, floating[:, :, ::1] gate):
    with nogil:
        _hw_fwd(&x[0, 0, 0], &h[0, 0, 0], &out[0, 0, 0], &gate[0, 0, 0],
                x.shape[0], x.shape[1], x.shape[2])


def _hw_bwd_py(floating[:, :, ::1] gout, floating[:, :, ::1] x, floating[:, :, ::1] h,
               floating[:, :, ::1] gate, floating[:, :, ::1] gx, floating[:, :, ::1] gh):
    with nogil:
        _hw_bwd(&gout[0, 0, 0], &x[0, 0, 0], &h[0, 0, 0], &gate[0, 0, 0],
                &gx[0, 0, 0], &gh[0, 0, 0], x.shape[0], x.shape[1], x.shape[2])


def highway_forward(x, h):
    x = np.ascontiguousarray(x)
    h = np.ascontiguousarray(h)
    out = np.empty_like(x)
    gate = np.empty_like(x)
    if x.size:
        _hw_fwd_py(x, h, out, gate)
    return out, gate


def highway_backward(gout, x, h, gate):
    gout = np.ascontiguousarray(gout)
    gx = np.empty_like(gout)
    gh = np.empty(h.shape, dtype=gout.dtype)
    if gout.size:
        _hw_bwd_py(gout, np.ascontiguousarray(x), np.ascontiguousarray(h),
                   np.ascontiguousarray(gate), gx, gh)
    return gx, gh


cdef void _adam(floating* value, floating* grad, floating* m, floating* v, Py_ssize_t n,
                floating b1, floating b2, floating step_size, floating inv_sqrt_c2,
                floating eps) noexcept nogil:
    cdef Py_ssize_t i
    cdef floating g, mi, vi
    for i in range(n):
        g = grad[i]
        mi = b1 * m[i] + (1 - b1) * g
        vi = b2 * v[i] + (1 - b2) * g * g
        m[i] = mi
        v[i] = vi
        if floating is float:
            value[i] -= step_size * mi / (sqrtf(vi) * inv_sqrt_c2 + eps)
        else:
            value[i] -= step_size * mi / (sqrt(vi) * inv_sqrt_c2 + eps)


def _adam_py(floating[::1] value, floating[::1] grad, floating[::1] m, floating[::1] v,
             double b1, double b2, double step_size, double inv_sqrt_c2, double eps):
    if value.shape[0] == 0:
        return
    with nogil:
        _adam(&value[0], &grad[0], &m[0], &v[0], value.shape[0],
              <floating>b1, <floating>b2, <floating>step_size, <floating>inv_sqrt_c2, <floating>eps)


def adam_update(value, grad, m, v, lr, beta1, beta2, eps, step):
    """Bias-corrected ADAM on flat views; returns the new value array.

    ``m`` and ``v`` are updated in place; ``value`` is copied first.
    """
    new = np.array(value, copy=True)
    # lr * m_hat / (sqrt(v_hat) + eps) with the bias corrections folded in
    _adam_py(new.reshape(-1), np.ascontiguousarray(grad, dtype=new.dtype).reshape(-1),
             m.reshape(-1), v.reshape(-1), beta1, beta2, lr / (1 - beta1 ** step),
             1 / (1 - beta2 ** step) ** 0.5, eps)
    return new
