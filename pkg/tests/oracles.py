"""Independent reference implementations used only by the tests.

Each oracle is deliberately naive (brute force, textbook loops) so that it
shares no code path with the package.
"""

from itertools import combinations

import numpy as np

from grenkit.gcm import StepFunction


def chord_minorant(u, g, t):
    """Greatest convex minorant of a point set by a double loop over chords.

    In one dimension the lower hull at ``t`` is the smallest chord value
    over all point pairs bracketing ``t``.
    """
    u = np.asarray(u, float)
    g = np.asarray(g, float)
    t = np.asarray(t, float)
    out = np.full(t.shape, np.inf)
    m = u.size
    for i in range(m):
        hit = t == u[i]
        out[hit] = np.minimum(out[hit], g[i])
        for j in range(m):
            if u[j] <= u[i]:
                continue
            inside = (t >= u[i]) & (t <= u[j])
            lam = (t[inside] - u[i]) / (u[j] - u[i])
            out[inside] = np.minimum(out[inside], (1 - lam) * g[i] + lam * g[j])
    return out


def random_diagram(rng, max_points=12):
    m = int(rng.integers(2, max_points + 1))
    u = np.concatenate([[0.0], np.cumsum(rng.uniform(0.05, 1.0, m - 1))])
    if rng.random() < 0.5:
        g = np.cumsum(rng.uniform(0, 1, m))
    else:
        g = rng.normal(0, 1, m)
    return u, g


def random_step_pair(rng):
    """Random ``(gamma, phi, u_max, x)`` for switch-relation checks.

    ``phi`` may have plateaus (equal values at consecutive knots); ``u_max``
    sometimes truncates the diagram.
    """
    m = int(rng.integers(2, 10))
    knots = np.cumsum(rng.uniform(0.1, 1.0, m))
    inc = rng.uniform(0.05, 1.0, m) * (rng.random(m) < 0.8)
    inc[0] = rng.uniform(0.05, 1.0)
    phi_vals = np.cumsum(inc)
    gamma_vals = rng.normal(0, 1, m).cumsum() if rng.random() < 0.5 else rng.normal(0, 1, m)
    phi = StepFunction(knots, phi_vals, monotone=True)
    gamma = StepFunction(knots, gamma_vals, left_limit_value=float(rng.normal(0, 0.5)))
    if rng.random() < 0.5:
        u_max = float(phi_vals[-1])
    else:
        u_max = float(rng.uniform(phi_vals[0], phi_vals[-1] + 0.5))
    ok = np.flatnonzero(phi_vals <= u_max)
    j = int(rng.choice(ok))
    # evaluate at a knot or strictly between it and the next one
    nxt = knots[j + 1] if j + 1 < m else knots[j] + 1.0
    x = float(knots[j] if rng.random() < 0.5 else rng.uniform(knots[j], nxt))
    return gamma, phi, u_max, x


def isotonic_bruteforce(a, y):
    """Least-squares non-decreasing fit by enumerating level-set partitions.

    Points are sorted by ``a`` (tied ``a`` forced into the same block).  Each
    of the ``2^(m-1)`` ways of cutting the distinct values into contiguous
    blocks is fitted by block means; the best monotone candidate wins.
    """
    a = np.asarray(a, float)
    y = np.asarray(y, float)
    order = np.argsort(a, kind="stable")
    a_s, y_s = a[order], y[order]
    levels, inv = np.unique(a_s, return_inverse=True)
    k = levels.size
    best, best_fit = np.inf, None
    for r in range(k):
        for cuts in combinations(range(1, k), r):
            bounds = [0, *cuts, k]
            fit_level = np.empty(k)
            for lo, hi in zip(bounds[:-1], bounds[1:]):
                sel = (inv >= lo) & (inv < hi)
                fit_level[lo:hi] = y_s[sel].mean()
            if np.any(np.diff(fit_level) < -1e-12):
                continue
            sse = np.sum((y_s - fit_level[inv]) ** 2)
            if sse < best - 1e-13:
                best, best_fit = sse, fit_level
    out = np.empty_like(y)
    out[order] = best_fit[inv]
    return out


def km_textbook(y, delta):
    """Product-limit survival at each distinct observed time (events before censorings)."""
    y = np.asarray(y, float)
    delta = np.asarray(delta, int)
    times = np.unique(y)
    S = 1.0
    out = []
    for t in times:
        at_risk = sum(1 for yi in y if yi >= t)
        d = sum(1 for yi, di in zip(y, delta) if yi == t and di == 1)
        if at_risk > 0:
            S *= 1.0 - d / at_risk
        out.append(S)
    return times, np.array(out)


def cox_loglik_1d(beta, y, delta, w):
    """Breslow partial log-likelihood, written as a plain double loop."""
    ll = 0.0
    for i in range(len(y)):
        if not delta[i]:
            continue
        risk = sum(np.exp(beta * w[j]) for j in range(len(y)) if y[j] >= y[i])
        ll += beta * w[i] - np.log(risk)
    return ll
