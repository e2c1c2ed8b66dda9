"""Brute-force reference implementations shared by the test modules.

Everything here is written as plain loops over pixels, deliberately
ignoring the vectorized forms under test.  Distances use exact integer
squares, so the only float operations (sqrt, the final reductions) are
applied to identical values in identical order on both sides and the
comparisons can demand exact equality.
"""

import math

import numpy as np


def confusion_loop(pred, gt):
    tp = fp = fn = tn = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            p, g = bool(pred[i, j]), bool(gt[i, j])
            tp += p and g
            fp += p and not g
            fn += (not p) and g
            tn += (not p) and (not g)
    return tp, fp, fn, tn


def border_loop(mask):
    """Border = mask pixel with a 4-neighbour off the mask or on the edge."""
    h, w = mask.shape
    out = []
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            edge = i == 0 or j == 0 or i == h - 1 or j == w - 1
            off = any(not mask[i + di, j + dj]
                      for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1))
                      if 0 <= i + di < h and 0 <= j + dj < w)
            if edge or off:
                out.append((i, j))
    return out


def surface_pool_loop(pred, gt):
    """Directed border distances pooled both ways, row-major order."""
    bp = border_loop(pred)
    bg = border_loop(gt)
    pool = []
    for (i, j) in bp:
        pool.append(min(math.sqrt((i - y) ** 2 + (j - x) ** 2) for (y, x) in bg))
    for (y, x) in bg:
        pool.append(min(math.sqrt((i - y) ** 2 + (j - x) ** 2) for (i, j) in bp))
    return np.array(pool)
