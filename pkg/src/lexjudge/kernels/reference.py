"""Numeric kernels, pure-Python backend.

Every kernel operates on flat ``array('d')`` buffers (row-major, shapes
passed explicitly) plus ``array('q')`` index buffers. The compiled twin
in ``_fast.pyx`` mirrors the loop structure and accumulation order of
this file exactly, so the two backends produce bit-identical doubles;
keep them in sync when changing either.
"""

from array import array
from math import exp, sqrt

BACKEND_NAME = "reference"


def dot(a, b):
    s = 0.0
    for i in range(len(a)):
        s += a[i] * b[i]
    return s


def norm(a):
    s = 0.0
    for i in range(len(a)):
        s += a[i] * a[i]
    return sqrt(s)


def cosine(a, b):
    """Cosine of two equal-length vectors; 0.0 when either norm is zero."""
    num = 0.0
    na = 0.0
    nb = 0.0
    for i in range(len(a)):
        x = a[i]
        y = b[i]
        num += x * y
        na += x * x
        nb += y * y
    if na == 0.0 or nb == 0.0:
        return 0.0
    return num / (sqrt(na) * sqrt(nb))


def cosine_scores(query, mat, n, d):
    """Cosine of query against each of n rows of a flat (n x d) matrix."""
    nq = 0.0
    for j in range(d):
        nq += query[j] * query[j]
    nq = sqrt(nq)
    out = array("d", bytes(8 * n))
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
            out[r] = num / (nq * sqrt(nr))
    return out


def maxpool(rows, n, d):
    """Column-wise max over n rows; returns (pooled, argmax-row per column)."""
    pooled = array("d", rows[0:d])
    argmax = array("q", bytes(8 * d))
    for r in range(1, n):
        base = r * d
        for j in range(d):
            v = rows[base + j]
            if v > pooled[j]:
                pooled[j] = v
                argmax[j] = r
    return pooled, argmax


def affine(w, b, x, m, d):
    """Logits b + W.x for a flat (m x d) weight matrix."""
    out = array("d", bytes(8 * m))
    for i in range(m):
        base = i * d
        s = b[i]
        for j in range(d):
            s += w[base + j] * x[j]
        out[i] = s
    return out


def softmax_inplace(v):
    """Max-shifted softmax, overwriting v."""
    hi = v[0]
    for i in range(1, len(v)):
        if v[i] > hi:
            hi = v[i]
    total = 0.0
    for i in range(len(v)):
        e = exp(v[i] - hi)
        v[i] = e
        total += e
    inv = 1.0 / total
    for i in range(len(v)):
        v[i] *= inv


def head_backward(probs, gold, x, w, m, d):
    """Cross-entropy gradients for softmax(W.x + b).

    Returns (gw, gb, gx): gb = probs - onehot(gold), gw = gb outer x,
    gx = W^T gb.
    """
    gb = array("d", probs)
    gb[gold] -= 1.0
    gw = array("d", bytes(8 * m * d))
    gx = array("d", bytes(8 * d))
    for i in range(m):
        gi = gb[i]
        base = i * d
        for j in range(d):
            gw[base + j] = gi * x[j]
            gx[j] += w[base + j] * gi
    return gw, gb, gx


def pair_scores(a, b, n, d):
    """All-pairs dot products of two flat (n x d) matrices -> flat (n x n)."""
    out = array("d", bytes(8 * n * n))
    for i in range(n):
        abase = i * d
        obase = i * n
        for j in range(n):
            bbase = j * d
            s = 0.0
            for k in range(d):
                s += a[abase + k] * b[bbase + k]
            out[obase + j] = s
    return out


def gather_rows(table, ids, d):
    """Stack table rows ids[0..k) into a flat (k x d) matrix."""
    out = array("d", bytes(8 * len(ids) * d))
    pos = 0
    for t in ids:
        base = t * d
        for j in range(d):
            out[pos] = table[base + j]
            pos += 1
    return out


def gather_mean(table, ids, d):
    """Mean of the table rows named by ids."""
    out = array("d", bytes(8 * d))
    for t in ids:
        base = t * d
        for j in range(d):
            out[j] += table[base + j]
    inv = 1.0 / len(ids)
    for j in range(d):
        out[j] *= inv
    return out


def scatter_add(table, ids, vec, d, scale):
    """table[row] += scale * vec for each row in ids (rows may repeat)."""
    for t in ids:
        base = t * d
        for j in range(d):
            table[base + j] += scale * vec[j]


def add_scaled(dst, src, alpha):
    for i in range(len(dst)):
        dst[i] += alpha * src[i]


def scale_inplace(v, alpha):
    for i in range(len(v)):
        v[i] *= alpha


def weighted_sum_rows(weights, mat, n, d):
    """Sum_r weights[r] * mat[r] over a flat (n x d) matrix."""
    out = array("d", bytes(8 * d))
    for r in range(n):
        wr = weights[r]
        if wr == 0.0:
            continue
        base = r * d
        for j in range(d):
            out[j] += wr * mat[base + j]
    return out
