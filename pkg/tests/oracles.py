"""Slow, obviously-correct reference implementations used only by tests."""

from __future__ import annotations

import itertools
import math

import numpy as np


def direct_causal_conv(x, kernel, bias, dilation):
    """out[o, s] = bias[o] + sum_c sum_i kernel[o, c, i] * x[c, s - i*d], zero before the start."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    kernel = np.asarray(kernel, dtype=float)
    cout, cin, k = kernel.shape
    length = x.shape[1]
    out = np.zeros((cout, length))
    for o in range(cout):
        for s in range(length):
            acc = bias[o]
            for c in range(cin):
                for i in range(k):
                    t = s - i * dilation
                    if t >= 0:
                        acc += kernel[o, c, i] * x[c, t]
            out[o, s] = acc
    return out


def alignment_paths(n, m):
    """Every monotone path from (0, 0) to (n-1, m-1) with unit steps right, down or diagonal."""
    def walk(i, j, path):
        if (i, j) == (n - 1, m - 1):
            yield list(path)
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            a, b = i + di, j + dj
            if a < n and b < m:
                path.append((a, b))
                yield from walk(a, b, path)
                path.pop()

    yield from walk(0, 0, [(0, 0)])


def brute_soft_dtw(x, y, gamma):
    costs = []
    for path in alignment_paths(len(x), len(y)):
        costs.append(sum((x[i] - y[j]) ** 2 for i, j in path))
    costs = np.asarray(costs, dtype=float)
    if gamma == 0:
        return float(costs.min())
    lo = costs.min()
    return float(lo - gamma * math.log(np.sum(np.exp(-(costs - lo) / gamma))))


def hard_dtw(x, y):
    n, m = len(x), len(y)
    d = np.full((n + 1, m + 1), np.inf)
    d[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = (x[i - 1] - y[j - 1]) ** 2
            d[i, j] = cost + min(d[i - 1, j], d[i, j - 1], d[i - 1, j - 1])
    return float(d[n, m])


def mann_whitney_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for p, q in itertools.product(pos, neg):
        wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def central_difference(f, x, step=1e-5):
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        hi = f(x)
        x[idx] = orig - step
        lo = f(x)
        x[idx] = orig
        grad[idx] = (hi - lo) / (2 * step)
    return grad
