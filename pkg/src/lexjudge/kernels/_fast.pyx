# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Numeric kernels, compiled backend.

Mirrors reference.py loop-for-loop; both backends must stay
bit-identical (build uses -ffp-contract=off, no fast-math).
"""

from cpython cimport array
import array

from libc.math cimport exp, sqrt

BACKEND_NAME = "fast"

cdef array.array _D_TEMPLATE = array.array("d", [])
cdef array.array _Q_TEMPLATE = array.array("q", [])


def dot(double[::1] a, double[::1] b):
    cdef Py_ssize_t i, n = a.shape[0]
    cdef double s = 0.0
    for i in range(n):
        s += a[i] * b[i]
    return s


def norm(double[::1] a):
    cdef Py_ssize_t i, n = a.shape[0]
    cdef double s = 0.0
    for i in range(n):
        s += a[i] * a[i]
    return sqrt(s)


def cosine(double[::1] a, double[::1] b):
    cdef Py_ssize_t i, n = a.shape[0]
    cdef double num = 0.0, na = 0.0, nb = 0.0, x, y
    for i in range(n):
        x = a[i]
        y = b[i]
        num += x * y
        na += x * x
        nb += y * y
    if na == 0.0 or nb == 0.0:
        return 0.0
    return num / (sqrt(na) * sqrt(nb))


def cosine_scores(double[::1] query, double[::1] mat, Py_ssize_t n, Py_ssize_t d):
    cdef Py_ssize_t r, j, base
    cdef double nq = 0.0, num, nr, v
    for j in range(d):
        nq += query[j] * query[j]
    nq = sqrt(nq)
    cdef array.array out = array.clone(_D_TEMPLATE, n, zero=True)
    cdef double[::1] ov = out
    if nq == 0.0:
        return out
    for r in range(n):
        base = r * d
        num = 0.0
        nr = 0.0
        for j in range(d):
            v = mat[base + j]
            num += v * query[j]
            nr += v * v
        if nr != 0.0:
            ov[r] = num / (nq * sqrt(nr))
    return out


def maxpool(double[::1] rows, Py_ssize_t n, Py_ssize_t d):
    cdef array.array pooled = array.clone(_D_TEMPLATE, d, zero=False)
    cdef array.array argmax = array.clone(_Q_TEMPLATE, d, zero=True)
    cdef double[::1] pv = pooled
    cdef long long[::1] av = argmax
    cdef Py_ssize_t r, j, base
    cdef double v
    for j in range(d):
        pv[j] = rows[j]
    for r in range(1, n):
        base = r * d
        for j in range(d):
            v = rows[base + j]
            if v > pv[j]:
                pv[j] = v
                av[j] = r
    return pooled, argmax


def affine(double[::1] w, double[::1] b, double[::1] x, Py_ssize_t m, Py_ssize_t d):
    cdef array.array out = array.clone(_D_TEMPLATE, m, zero=True)
    cdef double[::1] ov = out
    cdef Py_ssize_t i, j, base
    cdef double s
    for i in range(m):
        base = i * d
        s = b[i]
        for j in range(d):
            s += w[base + j] * x[j]
        ov[i] = s
    return out


def softmax_inplace(double[::1] v):
    cdef Py_ssize_t i, n = v.shape[0]
    cdef double hi = v[0], total = 0.0, e, inv
    for i in range(1, n):
        if v[i] > hi:
            hi = v[i]
    for i in range(n):
        e = exp(v[i] - hi)
        v[i] = e
        total += e
    inv = 1.0 / total
    for i in range(n):
        v[i] *= inv


def head_backward(double[::1] probs, Py_ssize_t gold, double[::1] x,
                  double[::1] w, Py_ssize_t m, Py_ssize_t d):
    cdef array.array gb = array.clone(_D_TEMPLATE, m, zero=True)
    cdef array.array gw = array.clone(_D_TEMPLATE, m * d, zero=True)
    cdef array.array gx = array.clone(_D_TEMPLATE, d, zero=True)
    cdef double[::1] gbv = gb, gwv = gw, gxv = gx
    cdef Py_ssize_t i, j, base
    cdef double gi
    for i in range(m):
        gbv[i] = probs[i]
    gbv[gold] -= 1.0
    for i in range(m):
        gi = gbv[i]
        base = i * d
        for j in range(d):
            gwv[base + j] = gi * x[j]
            gxv[j] += w[base + j] * gi
    return gw, gb, gx


def pair_scores(double[::1] a, double[::1] b, Py_ssize_t n, Py_ssize_t d):
    cdef array.array out = array.clone(_D_TEMPLATE, n * n, zero=True)
    cdef double[::1] ov = out
    cdef Py_ssize_t i, j, k, abase, bbase, obase
    cdef double s
    for i in range(n):
        abase = i * d
        obase = i * n
        for j in range(n):
            bbase = j * d
            s = 0.0
            for k in range(d):
                s += a[abase + k] * b[bbase + k]
            ov[obase + j] = s
    return out


def gather_rows(double[::1] table, long long[::1] ids, Py_ssize_t d):
    cdef Py_ssize_t k = ids.shape[0]
    cdef array.array out = array.clone(_D_TEMPLATE, k * d, zero=True)
    cdef double[::1] ov = out
    cdef Py_ssize_t i, j, base, pos = 0
    for i in range(k):
        base = ids[i] * d
        for j in range(d):
            ov[pos] = table[base + j]
            pos += 1
    return out


def gather_mean(double[::1] table, long long[::1] ids, Py_ssize_t d):
    cdef Py_ssize_t k = ids.shape[0]
    cdef array.array out = array.clone(_D_TEMPLATE, d, zero=True)
    cdef double[::1] ov = out
    cdef Py_ssize_t i, j, base
    cdef double inv
    for i in range(k):
        base = ids[i] * d
        for j in range(d):
            ov[j] += table[base + j]
    inv = 1.0 / k
    for j in range(d):
        ov[j] *= inv
    return out


def scatter_add(double[::1] table, long long[::1] ids, double[::1] vec,
                Py_ssize_t d, double scale):
    cdef Py_ssize_t i, j, base, k = ids.shape[0]
    for i in range(k):
        base = ids[i] * d
        for j in range(d):
            table[base + j] += scale * vec[j]


def add_scaled(double[::1] dst, double[::1] src, double alpha):
    cdef Py_ssize_t i, n = dst.shape[0]
    for i in range(n):
        dst[i] += alpha * src[i]


def scale_inplace(double[::1] v, double alpha):
    cdef Py_ssize_t i, n = v.shape[0]
    for i in range(n):
        v[i] *= alpha


def weighted_sum_rows(double[::1] weights, double[::1] mat, Py_ssize_t n, Py_ssize_t d):
    cdef array.array out = array.clone(_D_TEMPLATE, d, zero=True)
    cdef double[::1] ov = out
    cdef Py_ssize_t r, j, base
    cdef double wr
    for r in range(n):
        wr = weights[r]
        if wr == 0.0:
            continue
        base = r * d
        for j in range(d):
            ov[j] += wr * mat[base + j]
    return out
