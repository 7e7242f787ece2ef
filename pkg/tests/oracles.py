"""Independent brute-force references used by the tests.

Nothing here imports the package's implementations of the quantity being
checked; each function recomputes from definitions with plain loops.
"""
import math
from itertools import combinations

import numpy as np


def auroc_pairwise(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def ap_thresholds(scores, labels):
    """Step-wise average precision by enumerating every distinct score as a threshold."""
    n_pos = sum(1 for y in labels if y)
    ap, prev_recall = 0.0, 0.0
    for thr in sorted(set(scores), reverse=True):
        picked = [y for s, y in zip(scores, labels) if s >= thr]
        tp = sum(1 for y in picked if y)
        recall = tp / n_pos
        ap += (recall - prev_recall) * (tp / len(picked))
        prev_recall = recall
    return ap


def diag_weights(records):
    """{(a, b): count(a,b) / sum_c count(a,c)} from lists of codes."""
    counts = {}
    for codes in records:
        codes = sorted(set(codes))
        for i in range(len(codes)):
            for j in range(len(codes)):
                if i != j:
                    key = (codes[i], codes[j])
                    counts[key] = counts.get(key, 0) + 1
    out = {}
    for (a, b), c in counts.items():
        row = sum(v for (h, _), v in counts.items() if h == a)
        out[(a, b)] = c / row
    return out


def record_weights(X, conditions):
    """All unordered pairs: 1 / (1 + ||[mean, std]_a - [mean, std]_b||) with explicit cell loops."""
    prof = {}
    for code in sorted(set(conditions)):
        F = X.shape[-1]
        vec = []
        cells = [[] for _ in range(F)]
        for x, c in zip(X, conditions):
            if c == code:
                for row in x:
                    for f in range(F):
                        cells[f].append(float(row[f]))
        for f in range(F):
            vec.append(sum(cells[f]) / len(cells[f]))
        for f in range(F):
            m = vec[f]
            vec.append(math.sqrt(sum((v - m) ** 2 for v in cells[f]) / len(cells[f])))
        prof[code] = vec
    out = {}
    for a, b in combinations(sorted(prof), 2):
        dist = math.sqrt(sum((u - v) ** 2 for u, v in zip(prof[a], prof[b])))
        out[(a, b)] = 1.0 / (1.0 + dist)
    return out


def jaccard_weights(drug_sets):
    out = {}
    for a, b in combinations(sorted(drug_sets), 2):
        union = drug_sets[a] | drug_sets[b]
        inter = drug_sets[a] & drug_sets[b]
        if union and inter:
            out[(a, b)] = len(inter) / len(union)
    return out


def prune_full_sort(weights, fraction):
    """Keep ceil(fraction * n) (>= 1) pairs after a complete sort by (-weight, key)."""
    ranked = sorted(weights.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = max(1, math.ceil(fraction * len(ranked) - 1e-12)) if ranked else 0
    return dict(ranked[:keep])


def tucker_naive(W, eh, r, et):
    d = len(eh)
    total = 0.0
    for i in range(d):
        for j in range(r.shape[0]):
            for k in range(d):
                total += W[i, j, k] * eh[i] * r[j] * et[k]
    return total


def central_difference(f, x, eps=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + eps
        up = f(x)
        x[i] = orig - eps
        down = f(x)
        x[i] = orig
        g[i] = (up - down) / (2 * eps)
    return g
