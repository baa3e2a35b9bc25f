# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernels.

Same contract as ``_pycore``. Matrix products go through BLAS dgemm on
row-major buffers (computed as transposed column-major products).
"""
import numpy as np

from libc.math cimport exp, fabs, log, log1p
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_blas cimport dgemm

NAME = "cython"


def logistic_loss_grad(const double[:, ::1] X, const double[::1] y,
                       const double[::1] w, double b, double l2):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], i, j
    gw = np.zeros(d)
    cdef double[::1] g = gw
    cdef double z, e, p, r, loss = 0.0, gb = 0.0, ww = 0.0
    with nogil:
        for i in range(n):
            z = b
            for j in range(d):
                z = z + X[i, j] * w[j]
            # one exp serves both the stable log-loss and the sigmoid
            e = exp(-fabs(z))
            if z > 0:
                loss += z + log1p(e) - y[i] * z
                p = 1.0 / (1.0 + e)
            else:
                loss += log1p(e) - y[i] * z
                p = e / (1.0 + e)
            r = (p - y[i]) / n
            gb += r
            if r != 0.0:
                for j in range(d):
                    g[j] += r * X[i, j]
        for j in range(d):
            g[j] += l2 * w[j]
            ww += w[j] * w[j]
    return loss / n + 0.5 * l2 * ww, gw, gb


# C[m x n] = A[m x k] @ B[k x n]
cdef inline void _gemm_nn(int m, int n, int k, double* A, double* B, double* C) noexcept nogil:
    cdef char N = b'N'
    cdef double one = 1.0, zero = 0.0
    dgemm(&N, &N, &n, &m, &k, &one, B, &n, A, &k, &zero, C, &n)


# C[k x n] = A[m x k]^T @ B[m x n]
cdef inline void _gemm_tn(int m, int n, int k, double* A, double* B, double* C) noexcept nogil:
    cdef char N = b'N', T = b'T'
    cdef double one = 1.0, zero = 0.0
    dgemm(&N, &T, &n, &k, &m, &one, B, &n, A, &k, &zero, C, &n)


# C[m x k] = A[m x n] @ B[k x n]^T
cdef inline void _gemm_nt(int m, int n, int k, double* A, double* B, double* C) noexcept nogil:
    cdef char N = b'N', T = b'T'
    cdef double one = 1.0, zero = 0.0
    dgemm(&T, &N, &k, &m, &n, &one, B, &n, A, &n, &zero, C, &k)


cdef class _Net:
    """Pointer tables and scratch buffers for one network and batch size."""
    cdef int L
    cdef int* width
    cdef double** W
    cdef double** b
    cdef double** gW
    cdef double** gb
    cdef double** act
    cdef double* d0
    cdef double* d1
    cdef list _keep

    def __cinit__(self, list Ws, list bs, int batch):
        cdef int i, maxw
        cdef double[:, ::1] mv2
        cdef double[::1] mv1
        self.L = len(Ws)
        self.width = <int*> malloc((self.L + 1) * sizeof(int))
        self.W = <double**> malloc(self.L * sizeof(double*))
        self.b = <double**> malloc(self.L * sizeof(double*))
        self.gW = <double**> malloc(self.L * sizeof(double*))
        self.gb = <double**> malloc(self.L * sizeof(double*))
        self.act = <double**> malloc((self.L + 1) * sizeof(double*))
        self._keep = []
        self.width[0] = Ws[0].shape[0]
        maxw = self.width[0]
        for i in range(self.L):
            self.width[i + 1] = Ws[i].shape[1]
            if self.width[i + 1] > maxw:
                maxw = self.width[i + 1]
            mv2 = Ws[i]
            self.W[i] = &mv2[0, 0]
            mv1 = bs[i]
            self.b[i] = &mv1[0]
            g2 = np.zeros((self.width[i], self.width[i + 1]))
            g1 = np.zeros(self.width[i + 1])
            self._keep += [g2, g1]
            mv2 = g2
            self.gW[i] = &mv2[0, 0]
            mv1 = g1
            self.gb[i] = &mv1[0]
        for i in range(self.L + 1):
            a = np.zeros(batch * self.width[i])
            self._keep.append(a)
            mv1 = a
            self.act[i] = &mv1[0]
        dd0 = np.zeros(batch * maxw)
        dd1 = np.zeros(batch * maxw)
        self._keep += [dd0, dd1]
        mv1 = dd0
        self.d0 = &mv1[0]
        mv1 = dd1
        self.d1 = &mv1[0]

    def __dealloc__(self):
        free(self.width)
        free(self.W)
        free(self.b)
        free(self.gW)
        free(self.gb)
        free(self.act)

    def grads(self):
        return self._keep[0:2 * self.L:2], self._keep[1:2 * self.L:2]

    cdef double batch_grad(self, const double[:, ::1] X, const long long[::1] y,
                           const long long[::1] order, Py_ssize_t start, int m,
                           double l2) noexcept nogil:
        """Forward/backward on rows order[start:start+m]; fills gW/gb, returns loss."""
        cdef int L = self.L, i, r, c, j, win, wout, C = self.width[L]
        cdef Py_ssize_t row
        cdef double* a0 = self.act[0]
        cdef double* z
        cdef double* h
        cdef double* delta
        cdef double* nd
        cdef double* tmp
        cdef double zmax, s, loss = 0.0, reg = 0.0, acc
        win = self.width[0]
        for r in range(m):
            row = order[start + r]
            for j in range(win):
                a0[r * win + j] = X[row, j]
        for i in range(L):
            win = self.width[i]
            wout = self.width[i + 1]
            h = self.act[i + 1]
            _gemm_nn(m, wout, win, self.act[i], self.W[i], h)
            for r in range(m):
                for j in range(wout):
                    acc = h[r * wout + j] + self.b[i][j]
                    if i < L - 1 and acc < 0.0:
                        acc = 0.0
                    h[r * wout + j] = acc
        z = self.act[L]
        delta = self.d0
        for r in range(m):
            zmax = z[r * C]
            for c in range(1, C):
                if z[r * C + c] > zmax:
                    zmax = z[r * C + c]
            s = 0.0
            for c in range(C):
                delta[r * C + c] = exp(z[r * C + c] - zmax)
                s += delta[r * C + c]
            loss += log(s) + zmax - z[r * C + y[order[start + r]]]
            for c in range(C):
                delta[r * C + c] = delta[r * C + c] / s
            delta[r * C + y[order[start + r]]] -= 1.0
            for c in range(C):
                delta[r * C + c] = delta[r * C + c] / m
        loss = loss / m
        nd = self.d1
        for i in range(L - 1, -1, -1):
            win = self.width[i]
            wout = self.width[i + 1]
            _gemm_tn(m, wout, win, self.act[i], delta, self.gW[i])
            for j in range(win * wout):
                reg += self.W[i][j] * self.W[i][j]
                self.gW[i][j] += l2 * self.W[i][j]
            for j in range(wout):
                self.gb[i][j] = 0.0
            for r in range(m):
                for j in range(wout):
                    self.gb[i][j] += delta[r * wout + j]
            if i > 0:
                _gemm_nt(m, wout, win, delta, self.W[i], nd)
                h = self.act[i]
                for j in range(m * win):
                    if h[j] <= 0.0:
                        nd[j] = 0.0
                tmp = delta
                delta = nd
                nd = tmp
        return loss + 0.5 * l2 * reg


def mlp_loss_grad(list Ws, list bs, const double[:, ::1] X, const long long[::1] y, double l2):
    cdef int m = X.shape[0]
    cdef _Net net = _Net(Ws, bs, m)
    order = np.arange(m, dtype=np.int64)
    cdef const long long[::1] o = order
    cdef double loss
    with nogil:
        loss = net.batch_grad(X, y, o, 0, m, l2)
    gWs, gbs = net.grads()
    return loss, [g.copy() for g in gWs], [g.copy() for g in gbs]


def mlp_epoch(list Ws, list bs, list vWs, list vbs, const double[:, ::1] X,
              const long long[::1] y, const long long[::1] order, double lr,
              double momentum, double l2, int batch_size):
    cdef Py_ssize_t n = order.shape[0], start
    cdef int m, i, j, L = len(Ws), size
    cdef _Net net = _Net(Ws, bs, batch_size)
    cdef double total = 0.0
    cdef double** vW = <double**> malloc(L * sizeof(double*))
    cdef double** vb = <double**> malloc(L * sizeof(double*))
    cdef double[:, ::1] mv2
    cdef double[::1] mv1
    try:
        for i in range(L):
            mv2 = vWs[i]
            vW[i] = &mv2[0, 0]
            mv1 = vbs[i]
            vb[i] = &mv1[0]
        with nogil:
            start = 0
            while start < n:
                m = batch_size if n - start > batch_size else <int>(n - start)
                total += net.batch_grad(X, y, order, start, m, l2) * m
                for i in range(L):
                    size = net.width[i] * net.width[i + 1]
                    for j in range(size):
                        vW[i][j] = momentum * vW[i][j] + net.gW[i][j]
                        net.W[i][j] -= lr * vW[i][j]
                    for j in range(net.width[i + 1]):
                        vb[i][j] = momentum * vb[i][j] + net.gb[i][j]
                        net.b[i][j] -= lr * vb[i][j]
                start += batch_size
    finally:
        free(vW)
        free(vb)
    return total / n
