"""Independent brute-force reference implementations used as test oracles.

Deliberately written in plain Python loops, sharing no code with the package.
"""

from __future__ import annotations

import math


def pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        return None
    return sxy / math.sqrt(sxx * syy)


def average_ranks(x):
    """1-based ranks, ties get the mean of the positions they span."""
    order = sorted(range(len(x)), key=lambda i: x[i])
    ranks = [0.0] * len(x)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and x[order[j + 1]] == x[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman(x, y):
    return pearson(average_ranks(x), average_ranks(y))


def pearson_at_k(pred, truth, k):
    """Keep the k items with the largest truth values (earlier index wins ties)."""
    idx = list(range(len(truth)))
    chosen = []
    for _ in range(min(k, len(truth))):
        best = None
        for i in idx:
            if i in chosen:
                continue
            if best is None or truth[i] > truth[best]:
                best = i
        chosen.append(best)
    return pearson([pred[i] for i in chosen], [truth[i] for i in chosen])


def ndcg(order, grades, k, gain="exp"):
    def g(v):
        return 2.0 ** v - 1.0 if gain == "exp" else float(v)

    dcg = 0.0
    for rank, item in enumerate(order[:k], start=1):
        dcg += g(grades.get(item, 0)) / math.log2(rank + 1)
    ideal = sorted(grades.values(), reverse=True)[:k]
    idcg = sum(g(v) / math.log2(r + 1) for r, v in enumerate(ideal, start=1))
    return 0.0 if idcg == 0 else dcg / idcg


def wlm(inlinks_a, inlinks_b, total):
    a, b = set(inlinks_a), set(inlinks_b)
    common = a & b
    if not a or not b or not common:
        return 0.0
    num = math.log(max(len(a), len(b))) - math.log(len(common))
    den = math.log(total) - math.log(min(len(a), len(b)))
    if num == 0:
        return 1.0
    if den <= 0:
        return 0.0
    return min(1.0, max(0.0, 1.0 - num / den))


def decay(T, w, alpha):
    return [1.0 / ((T - k + w) ** alpha + 1.0) for k in range(1, T - w + 2)]


def conv1d(x, filters, bias):
    """x: [D][T]; filters: [F][w][D] -> [F][T-w+1]."""
    D, T = len(x), len(x[0])
    out = []
    for f, filt in enumerate(filters):
        w = len(filt)
        row = []
        for k in range(T - w + 1):
            s = bias[f]
            for j in range(w):
                for d in range(D):
                    s += filt[j][d] * x[d][k + j]
            row.append(s)
        out.append(row)
    return out


def trigraphs(term):
    s = "#" + term + "#"
    return [s[i:i + 3] for i in range(len(s) - 2)] if term else []


def histogram_counts(vecs_s, vecs_t, ids_s, ids_t, bins):
    counts = [0] * bins
    for a, ia in zip(vecs_s, ids_s):
        for b, ib in zip(vecs_t, ids_t):
            na = math.sqrt(sum(v * v for v in a))
            nb = math.sqrt(sum(v * v for v in b))
            cos = sum(p * q for p, q in zip(a, b)) / (na * nb)
            if ia == ib or cos >= 1 - 1e-12:
                counts[bins - 1] += 1
                continue
            width = 2.0 / (bins - 1)
            idx = int((cos + 1.0) // width)
            counts[min(max(idx, 0), bins - 2)] += 1
    return counts


def clickstream_seeds_and_candidates(abstracts_path, clicks_path, engines, k, min_count, top_n):
    """Read raw dumps with plain string handling; malformed lines are skipped."""
    ids = {}
    with open(abstracts_path, encoding="utf-8") as fh:
        for line in fh:
            i, title, _ = line.rstrip("\n").split("\t")
            ids[title] = int(i)
    rows = []
    with open(clicks_path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) == 4 and parts[3].isdigit():
                rows.append(parts)
    traffic = {}
    for src, tgt, kind, count in rows:
        if src in engines and tgt in ids:
            traffic[ids[tgt]] = traffic.get(ids[tgt], 0) + int(count)
    seeds = sorted(traffic, key=lambda e: (-traffic[e], e))[:k]
    candidates = {}
    for s in seeds:
        counts = {}
        for src, tgt, kind, count in rows:
            if kind == "link" and ids.get(src) == s and tgt in ids:
                counts[ids[tgt]] = counts.get(ids[tgt], 0) + int(count)
        kept = [t for t in counts if counts[t] >= min_count]
        candidates[s] = sorted(kept, key=lambda t: (-counts[t], t))[:top_n]
    return seeds, candidates
