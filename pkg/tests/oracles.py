"""Reference implementations used only by the tests.

Each one is deliberately naive (loops, pure Python floats, brute force) and
imports nothing from the package, so agreement with the library is evidence
rather than tautology.
"""
from __future__ import annotations

import math


def pair_count_auc(scores, labels) -> float:
    """Exhaustive P(pos > neg) + 0.5 P(tie) over every positive/negative pair."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def _cos(a, b) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def brute_csls_scores(sources, targets, neighborhood: int) -> list[list[float]]:
    """Full CSLS score table, every cosine recomputed from scratch."""
    cos = [[_cos(s, t) for t in targets] for s in sources]
    r_t = [sum(sorted(row, reverse=True)[:neighborhood]) / neighborhood for row in cos]
    cols = [[cos[i][j] for i in range(len(sources))] for j in range(len(targets))]
    r_s = [sum(sorted(col, reverse=True)[:neighborhood]) / neighborhood for col in cols]
    return [[2 * cos[i][j] - r_t[i] - r_s[j] for j in range(len(targets))] for i in range(len(sources))]


def brute_ranking(scores: list[float], k: int) -> list[int]:
    """Descending by score, ascending id among equal scores."""
    return sorted(range(len(scores)), key=lambda j: (-scores[j], j))[:k]


def brute_nn_scores(query, targets) -> list[float]:
    return [_cos(query, t) for t in targets]


def adam_first_step(param: float, grad: float, lr: float, beta1: float, beta2: float, eps: float) -> float:
    m = (1 - beta1) * grad
    v = (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1)
    v_hat = v / (1 - beta2)
    return param - lr * m_hat / (math.sqrt(v_hat) + eps)


def separation_bisect(target_auc: float) -> float:
    """Solve Phi(delta / sqrt 2) = target by bisection on math.erf."""
    phi = lambda z: 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))
    lo, hi = 0.0, 20.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if phi(mid / math.sqrt(2.0)) < target_auc:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def leaky(v: float, slope: float = 0.2) -> float:
    return v if v > 0 else slope * v


def central_difference(f, params, h: float = 1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. every entry of each numpy array in ``params``."""
    grads = []
    for p in params:
        g = p.copy()
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f()
            flat[i] = old - h
            down = f()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads
