"""Independent reference computations used to freeze expected values."""
import itertools
import math

import numpy as np


def det_cofactor(A):
    """Determinant by Laplace expansion along the first row."""
    A = [list(map(float, row)) for row in A]
    n = len(A)
    if n == 1:
        return A[0][0]
    if n == 2:
        return A[0][0] * A[1][1] - A[0][1] * A[1][0]
    total = 0.0
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in A[1:]]
        total += (-1) ** j * A[0][j] * det_cofactor(minor)
    return total


def conv1d_loops(x, k, b):
    B, C, T = x.shape
    O, _, W = k.shape
    out = np.zeros((B, O, T - W + 1))
    for bb, o, t in itertools.product(range(B), range(O), range(T - W + 1)):
        out[bb, o, t] = b[o] + sum(x[bb, i, t + w] * k[o, i, w] for i in range(C) for w in range(W))
    return out


def central_difference(f, x, h=1e-5):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def binary_entropy(p):
    return -p * math.log(p) - (1 - p) * math.log(1 - p)


def entropy_dict(counts):
    tot = sum(counts.values())
    return -sum(c / tot * math.log(c / tot) for c in counts.values() if c)


def coarse_pair_law_by_paths(P, pi, f):
    """p(y, y') summed path by path, without any array algebra."""
    n = len(pi)
    law = {}
    for x in range(n):
        for x2 in range(n):
            key = (int(f[x]), int(f[x2]))
            law[key] = law.get(key, 0.0) + pi[x] * P[x][x2]
    return law


def ipred_from_pair_law(law):
    py2, py = {}, {}
    for (a, b), p in law.items():
        py2[b] = py2.get(b, 0.0) + p
        py[a] = py.get(a, 0.0) + p
    h_next = -sum(p * math.log(p) for p in py2.values() if p > 0)
    h_joint = -sum(p * math.log(p) for p in law.values() if p > 0)
    h_now = -sum(p * math.log(p) for p in py.values() if p > 0)
    return h_next - (h_joint - h_now)
