"""Independent reference computations used as test oracles.

Nothing here imports heatcast; each routine is a direct, slow transcription
of the defining formula.
"""

import math

import numpy as np


def check_loss(y, yhat, tau):
    d = y - yhat
    return tau * d if d >= 0 else (tau - 1) * d


def generalized_inverse_quantile(values, q):
    """inf{v : F_n(v) >= q} for the empirical CDF of ``values``."""
    v = sorted(values)
    n = len(v)
    for i, x in enumerate(v):
        if (i + 1) / n >= q - 1e-12:
            return x
    return v[-1]


def best_split(X, y, min_node=1):
    """Exhaustive variance-reduction split: (feature, threshold, gain) or None.

    Ties go to the lowest feature, then the smallest threshold.
    """
    n, p = X.shape
    best = None
    base = float(np.sum((y - y.mean()) ** 2))
    for j in range(p):
        vals = np.unique(X[:, j])
        for lo, hi in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (lo + hi)
            left = X[:, j] <= thr
            nl = int(left.sum())
            if nl < min_node or n - nl < min_node:
                continue
            yl, yr = y[left], y[~left]
            sse = float(np.sum((yl - yl.mean()) ** 2) + np.sum((yr - yr.mean()) ** 2))
            gain = base - sse
            if best is None or gain > best[2] * (1 + 1e-9) + 1e-12:
                best = (j, thr, gain)
    if best is None or best[2] <= 1e-12 * base:
        return None
    return best


def regularized_gamma_q(a, x):
    """Q(a, x) = Gamma(a, x) / Gamma(a) by series (x < a + 1) or Lentz continued fraction."""
    if x <= 0:
        return 1.0
    log_pre = -x + a * math.log(x) - math.lgamma(a)
    if x < a + 1:
        term = 1.0 / a
        total = term
        k = a
        for _ in range(10000):
            k += 1
            term *= x / k
            total += term
            if abs(term) < abs(total) * 1e-17:
                break
        return 1.0 - math.exp(log_pre) * total
    tiny = 1e-300
    b = x + 1 - a
    c = 1 / tiny
    d = 1 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1 / d
        delta = d * c
        h *= delta
        if abs(delta - 1) < 1e-16:
            break
    return math.exp(log_pre) * h


def ljung_box_direct(e, max_lag):
    e = np.asarray(e, dtype=float)
    n = len(e)
    m = e.mean()
    den = sum((v - m) ** 2 for v in e)
    q = 0.0
    for k in range(1, max_lag + 1):
        num = sum((e[t] - m) * (e[t - k] - m) for t in range(k, n))
        q += (num / den) ** 2 / (n - k)
    return n * (n + 2) * q


def loess_direct(x, y, x0, span, degree):
    """Tricube-weighted local polynomial at x0, solved by the normal equations."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    q = min(n, max(math.ceil(span * n), degree + 2))
    d = np.abs(x - x0)
    dmax = np.sort(d)[q - 1]
    w = np.where(d <= dmax, (1 - (d / dmax) ** 3) ** 3, 0.0)
    A = np.vstack([x ** k for k in range(degree + 1)]).T
    W = np.diag(w)
    beta = np.linalg.solve(A.T @ W @ A, A.T @ W @ y)
    return float(sum(beta[k] * x0 ** k for k in range(degree + 1)))
