# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled mirror of fedsim.kernels.pyref.

Same parameter layouts and loss definitions. The matmul-heavy kernels route
their O(n*h*d) work through BLAS dgemm (scipy's Cython bindings) and keep
the elementwise passes -- bias, activation, softmax, loss -- as fused C
loops, so they beat the reference's chain of numpy temporaries at small
batch sizes and stay level at large ones. Linear regression is cheap enough
that plain per-sample loops win outright. Summation orders differ from the
reference, so the backends agree to roundoff rather than bit-for-bit.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

ACT_TANH = 0
ACT_RELU = 1


cdef inline void _gemm(char transa, char transb, int m, int n, int k,
                       double alpha, const double* A, int lda,
                       const double* B, int ldb,
                       double beta, double* C, int ldc) noexcept nogil:
    # Fortran-convention wrapper; callers phrase C-order products as the
    # transposed Fortran product (C^T = op(B)^T op(A)^T).
    dgemm(&transa, &transb, &m, &n, &k, &alpha, <double*> A, &lda,
          <double*> B, &ldb, &beta, C, &ldc)


def linreg_loss_grad(const double[::1] params, const double[:, ::1] X,
                     const double[::1] y):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef cnp.ndarray[double, ndim=1] grad_arr = np.zeros(d + 1)
    cdef double[::1] grad = grad_arr
    cdef double loss = 0.0, r, s, scale
    cdef Py_ssize_t i, j

    for i in range(n):
        s = params[d]
        for j in range(d):
            s += params[j] * X[i, j]
        r = s - y[i]
        loss += r * r
        for j in range(d):
            grad[j] += r * X[i, j]
        grad[d] += r

    scale = 2.0 / n
    for j in range(d + 1):
        grad[j] *= scale
    return loss / n, grad_arr


def logistic_loss_grad(const double[::1] params, const double[:, ::1] X,
                       const cnp.int64_t[::1] y, int n_classes):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t C = n_classes
    cdef cnp.ndarray[double, ndim=1] grad_arr = np.zeros(C * d + C)
    cdef double[::1] grad = grad_arr
    cdef cnp.ndarray[double, ndim=2] Z_arr = np.empty((n, C))
    cdef double[:, ::1] Z = Z_arr          # logits, then dZ
    cdef double loss = 0.0, s, zmax, sumexp, zy, p
    cdef double inv_n = 1.0 / n
    cdef Py_ssize_t i, c, yi

    # Z = X @ W^T
    _gemm(b'T', b'N', <int> C, <int> n, <int> d, 1.0,
          &params[0], <int> d, &X[0, 0], <int> d, 0.0, &Z[0, 0], <int> C)
    for i in range(n):
        yi = y[i]
        zmax = -1e300
        for c in range(C):
            s = Z[i, c] + params[C * d + c]
            Z[i, c] = s
            if s > zmax:
                zmax = s
        zy = Z[i, yi]
        sumexp = 0.0
        for c in range(C):
            p = exp(Z[i, c] - zmax)
            Z[i, c] = p
            sumexp += p
        loss += log(sumexp) + zmax - zy
        for c in range(C):
            p = Z[i, c] / sumexp
            if c == yi:
                p -= 1.0
            Z[i, c] = p * inv_n
            grad[C * d + c] += Z[i, c]

    # W gradient = dZ^T @ X
    _gemm(b'N', b'T', <int> d, <int> C, <int> n, 1.0,
          &X[0, 0], <int> d, &Z[0, 0], <int> C, 0.0, &grad[0], <int> d)
    return loss / n, grad_arr


cdef void _activate(cnp.ndarray[double, ndim=2] H_arr, double[:, ::1] D,
                    const double[::1] params, Py_ssize_t ob1,
                    Py_ssize_t n, Py_ssize_t h, int activation):
    """Add the hidden bias to pre-activations in H, apply the nonlinearity
    in place, and record its derivative in D.

    The tanh itself goes through numpy's SIMD ufunc: at n*h in the
    thousands, scalar libm tanh calls would dominate the whole kernel.
    """
    cdef double[:, ::1] H = H_arr
    cdef Py_ssize_t i, k
    cdef double s, t
    if activation == 0:
        for i in range(n):
            for k in range(h):
                H[i, k] += params[ob1 + k]
        np.tanh(H_arr, out=H_arr)
        for i in range(n):
            for k in range(h):
                t = H[i, k]
                D[i, k] = 1.0 - t * t
    else:
        for i in range(n):
            for k in range(h):
                s = H[i, k] + params[ob1 + k]
                if s > 0.0:
                    H[i, k] = s
                    D[i, k] = 1.0
                else:
                    H[i, k] = 0.0
                    D[i, k] = 0.0


def mlp_ce_loss_grad(const double[::1] params, const double[:, ::1] X,
                     const cnp.int64_t[::1] y, int hidden, int n_classes,
                     int activation):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t h = hidden
    cdef Py_ssize_t C = n_classes
    cdef Py_ssize_t ow1 = 0, ob1 = h * d, ow2 = h * d + h, ob2 = h * d + h + C * h
    cdef Py_ssize_t total = h * d + h + C * h + C
    cdef cnp.ndarray[double, ndim=1] grad_arr = np.zeros(total)
    cdef double[::1] grad = grad_arr
    cdef cnp.ndarray[double, ndim=2] H_arr = np.empty((n, h))
    cdef cnp.ndarray[double, ndim=2] D_arr = np.empty((n, h))
    cdef cnp.ndarray[double, ndim=2] G_arr = np.empty((n, h))
    cdef cnp.ndarray[double, ndim=2] Z_arr = np.empty((n, C))
    cdef double[:, ::1] H = H_arr          # hidden activations
    cdef double[:, ::1] D = D_arr          # activation derivative, then dZh
    cdef double[:, ::1] G = G_arr          # dH scratch
    cdef double[:, ::1] Z = Z_arr          # logits, then dZ
    cdef double loss = 0.0, s, zmax, sumexp, zy, p
    cdef double inv_n = 1.0 / n
    cdef Py_ssize_t i, k, c, yi

    # H = X @ W1^T, then bias + nonlinearity in place
    _gemm(b'T', b'N', <int> h, <int> n, <int> d, 1.0,
          &params[ow1], <int> d, &X[0, 0], <int> d, 0.0, &H[0, 0], <int> h)
    _activate(H_arr, D, params, ob1, n, h, activation)

    # logits Z = H @ W2^T, then fused bias + softmax + loss + dZ
    _gemm(b'T', b'N', <int> C, <int> n, <int> h, 1.0,
          &params[ow2], <int> h, &H[0, 0], <int> h, 0.0, &Z[0, 0], <int> C)
    for i in range(n):
        yi = y[i]
        zmax = -1e300
        for c in range(C):
            s = Z[i, c] + params[ob2 + c]
            Z[i, c] = s
            if s > zmax:
                zmax = s
        zy = Z[i, yi]
        sumexp = 0.0
        for c in range(C):
            p = exp(Z[i, c] - zmax)
            Z[i, c] = p
            sumexp += p
        loss += log(sumexp) + zmax - zy
        for c in range(C):
            p = Z[i, c] / sumexp
            if c == yi:
                p -= 1.0
            Z[i, c] = p * inv_n
            grad[ob2 + c] += Z[i, c]

    # W2 gradient = dZ^T @ H; dH = dZ @ W2; dZh = dH * dact
    _gemm(b'N', b'T', <int> h, <int> C, <int> n, 1.0,
          &H[0, 0], <int> h, &Z[0, 0], <int> C, 0.0, &grad[ow2], <int> h)
    _gemm(b'N', b'N', <int> h, <int> n, <int> C, 1.0,
          &params[ow2], <int> h, &Z[0, 0], <int> C, 0.0, &G[0, 0], <int> h)
    for i in range(n):
        for k in range(h):
            D[i, k] = G[i, k] * D[i, k]
            grad[ob1 + k] += D[i, k]

    # W1 gradient = dZh^T @ X
    _gemm(b'N', b'T', <int> d, <int> h, <int> n, 1.0,
          &X[0, 0], <int> d, &D[0, 0], <int> h, 0.0, &grad[ow1], <int> d)
    return loss / n, grad_arr


def mlp_mse_loss_grad(const double[::1] params, const double[:, ::1] X,
                      const double[::1] y, int hidden, int activation):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t h = hidden
    cdef Py_ssize_t ow1 = 0, ob1 = h * d, ow2 = h * d + h, ob2 = h * d + h + h
    cdef Py_ssize_t total = h * d + h + h + 1
    cdef cnp.ndarray[double, ndim=1] grad_arr = np.zeros(total)
    cdef double[::1] grad = grad_arr
    cdef cnp.ndarray[double, ndim=2] H_arr = np.empty((n, h))
    cdef cnp.ndarray[double, ndim=2] D_arr = np.empty((n, h))
    cdef double[:, ::1] H = H_arr
    cdef double[:, ::1] D = D_arr          # activation derivative, then dZh
    cdef double loss = 0.0, s, r, coef
    cdef double inv_n = 1.0 / n
    cdef Py_ssize_t i, k

    _gemm(b'T', b'N', <int> h, <int> n, <int> d, 1.0,
          &params[ow1], <int> d, &X[0, 0], <int> d, 0.0, &H[0, 0], <int> h)
    _activate(H_arr, D, params, ob1, n, h, activation)

    for i in range(n):
        s = params[ob2]
        for k in range(h):
            s += params[ow2 + k] * H[i, k]
        r = s - y[i]
        loss += r * r
        coef = 2.0 * r * inv_n
        grad[ob2] += coef
        for k in range(h):
            grad[ow2 + k] += coef * H[i, k]
            D[i, k] = coef * params[ow2 + k] * D[i, k]
            grad[ob1 + k] += D[i, k]

    _gemm(b'N', b'T', <int> d, <int> h, <int> n, 1.0,
          &X[0, 0], <int> d, &D[0, 0], <int> h, 0.0, &grad[ow1], <int> d)
    return loss / n, grad_arr
