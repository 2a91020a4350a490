"""Brute-force reference implementations used as test oracles.

These are deliberately naive (plain loops, no shared code with the package)
so that agreement with the optimized implementations means something.
"""

from __future__ import annotations

import math


def cusum_max_form(z):
    """S_t = max(0, max_{0<=k<=t} sum_{i=k}^{t} z_i) for every t."""
    out = []
    for t in range(len(z)):
        best = 0.0
        for k in range(t + 1):
            best = max(best, math.fsum(z[k:t + 1]))
        out.append(best)
    return out


def sr_double_sum(lams):
    """R_t = sum_{k=1}^{t} prod_{i=k}^{t} Lambda_i (1-based, R_0 = 0)."""
    out = []
    for t in range(1, len(lams) + 1):
        total = 0.0
        for k in range(1, t + 1):
            prod = 1.0
            for i in range(k, t + 1):
                prod *= lams[i - 1]
            total += prod
        out.append(total)
    return out


def changes(labels):
    """(index, new_label) for every position whose label differs from the previous one."""
    return [(i, labels[i]) for i in range(1, len(labels)) if labels[i] != labels[i - 1]]


def excluded(actual, k):
    ch = [i for i, _ in changes(actual)]
    return [any(t - k <= i < t + k for t in ch) for i in range(len(actual))]


def accuracy_l(actual, predicted, k=15):
    ex = excluded(actual, k)
    kept = [i for i in range(len(actual)) if not ex[i]]
    if not kept:
        return math.nan
    return sum(actual[i] == predicted[i] for i in kept) / len(kept)


def accuracy_n(actual, predicted, k=15):
    ex = excluded(actual, k)
    cuts = {i for i, _ in changes(actual)} | {i for i, _ in changes(predicted)}
    intervals = []
    current = None
    for i in range(len(actual)):
        if ex[i]:
            current = None
            continue
        if current is None or i in cuts:
            current = [i]
            intervals.append(current)
        else:
            current.append(i)
    if not intervals:
        return math.nan
    good = 0
    for iv in intervals:
        assert len({actual[i] for i in iv}) == 1 and len({predicted[i] for i in iv}) == 1
        good += actual[iv[0]] == predicted[iv[0]]
    return good / len(intervals)


def match(actual, predicted, window=200):
    """Greedy earliest unused same-direction prediction within ``window`` samples."""
    used = set()
    out = []
    for a, d in changes(actual):
        hit = None
        for p, e in changes(predicted):
            if e == d and p not in used and a <= p <= a + window:
                hit = p
                break
        if hit is not None:
            used.add(hit)
        out.append((a, hit))
    return out


def change_report(actual, predicted, step=0.1, window=200, alarm=30):
    """(mean_delay_m, pct_within, tp, fp) by direct enumeration."""
    pairs = match(actual, predicted, window)
    delays = [(p - a) * step for a, p in pairs if p is not None]
    if pairs:
        mean_delay = sum(delays) / len(delays) if delays else math.nan
        pct = len(delays) / len(pairs)
    else:
        mean_delay = pct = math.nan
    tp = sum(1 for a, p in pairs if p is not None and p - a <= alarm)
    act = changes(actual)
    fp = 0
    for p, e in changes(predicted):
        if not any(d == e and 0 <= p - a <= alarm for a, d in act):
            fp += 1
    return mean_delay, pct, tp, fp


def roc_auc_pairs(y, s):
    """Share of (positive, negative) pairs ranked correctly, ties counted half."""
    pos = [v for v, c in zip(s, y) if c]
    neg = [v for v, c in zip(s, y) if not c]
    if not pos or not neg:
        return math.nan
    score = 0.0
    for a in pos:
        for b in neg:
            score += 1.0 if a > b else 0.5 if a == b else 0.0
    return score / (len(pos) * len(neg))
