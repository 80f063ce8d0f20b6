"""Independent reference implementations shared by unit and acceptance tests."""

import itertools
import math

import numpy as np


def brute_krum_scores(rows, f):
    n = len(rows)
    k = n - f - 2
    scores = []
    for i in range(n):
        others = [j for j in range(n) if j != i]
        best = min(
            sum(float(np.sum((rows[i] - rows[j]) ** 2)) for j in subset)
            for subset in itertools.combinations(others, k)
        )
        scores.append(best)
    return np.array(scores)


def mimic_literal(vectors, f):
    """Plain transcription of the most-surrounded-outlier selection."""
    h = len(vectors)
    s = [0.0] * h
    center = [sum(v[k] for v in vectors) / h for k in range(len(vectors[0]))]

    def dist(a, b):
        return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))

    def rank(i, j):
        order = sorted((j2 for j2 in range(h) if j2 != i), key=lambda j2: (-dist(vectors[i], vectors[j2]), j2))
        order.append(i)
        return order.index(j) + 1

    for i in range(h):
        for j in range(h):
            r = rank(i, j)
            s[j] = s[j] + min(f, r) * dist(vectors[j], center)
    best = 0
    for j in range(1, h):
        if s[j] > s[best]:
            best = j
    return best


def grid_min(rows, step=1e-3, coarse=0.02):
    """Minimum of the geometric-median objective on a 2-d grid.

    A coarse pass over the bounding box locates the basin, then a pass with
    spacing ``step`` refines around it.
    """

    def best_on(xs, ys):
        gx, gy = np.meshgrid(xs, ys)
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        obj = np.linalg.norm(pts[:, None, :] - rows[None, :, :], axis=2).sum(axis=1)
        k = int(np.argmin(obj))
        return pts[k], float(obj[k])

    lo, hi = rows.min(axis=0), rows.max(axis=0)
    c, _ = best_on(np.arange(lo[0], hi[0] + coarse, coarse), np.arange(lo[1], hi[1] + coarse, coarse))
    _, val = best_on(
        np.arange(c[0] - coarse, c[0] + coarse + step, step), np.arange(c[1] - coarse, c[1] + coarse + step, step)
    )
    return val
