"""Slow, obviously-correct reference implementations used by the tests."""

import itertools

import numpy as np


def box_iou(a, b):
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union > 0 else 0.0


def max_matching(dets, gts, thr):
    """Largest number of det/GT pairs with IoU >= thr, by trying every assignment."""
    best = 0
    for perm in itertools.permutations(range(len(gts)), min(len(dets), len(gts))):
        for dsel in itertools.permutations(range(len(dets)), len(perm)):
            n = sum(box_iou(dets[d], gts[g]) >= thr for d, g in zip(dsel, perm))
            best = max(best, n)
    return best


def brute_ap(scores, tp, n_gt):
    """101-point AP straight from the definition: for each recall level take the
    best precision among all confidence cutoffs reaching that recall."""
    if n_gt == 0:
        return 1.0 if len(scores) == 0 else 0.0
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    cut = []
    for k in range(1, len(order) + 1):
        hits = sum(tp[i] for i in order[:k])
        cut.append((hits / n_gt, hits / k))
    total = 0.0
    for i in range(101):
        r = i / 100
        total += max([p for rec, p in cut if rec >= r - 1e-12], default=0.0)
    return total / 101


def rasterize_even_odd(px, py, xy):
    inside = np.zeros(np.shape(px), dtype=bool)
    for (x0, y0), (x1, y1) in zip(xy, np.roll(xy, -1, axis=0)):
        cond = (y0 > py) != (y1 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= cond & (px < xcross)
    return inside
