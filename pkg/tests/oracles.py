"""Slow, independent reference implementations used to pin expected values.

Everything here deliberately avoids the package's solution paths: the
minimax sequence is evaluated by its double optimization, the penalized
stacking program by support enumeration with exact per-support quadratic
solves, reduced isotonic regression by exhaustive segmentation search,
Q-aggregation by a simplex grid, and the population-optimal weights by a
monotone-projection closed form.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def direct_gamma(seq) -> np.ndarray:
    """Minimax sequence by direct double optimization over (i, j)."""
    d = np.concatenate([[0.0], np.asarray(seq.d, dtype=float)])
    risks = np.concatenate([[seq.R0], np.asarray(seq.R, dtype=float)])
    rate = seq.sigma2 / seq.n
    m = len(seq.d)
    gamma = np.empty(m)
    for k in range(1, m + 1):
        outer = math.inf
        for i in range(k, m + 1):
            inner = -math.inf
            for j in range(0, k):
                inner = max(inner, (d[i] - d[j]) / (risks[j] - risks[i]))
            outer = min(outer, inner)
        gamma[k - 1] = rate * outer
    return gamma


def combination_risk_ref(R0, delta_R, alpha) -> float:
    c = np.cumsum(np.asarray(alpha, dtype=float)[::-1])[::-1]
    return float(R0 + np.sum(np.asarray(delta_R) * (c * c - 2.0 * c)))


def bruteforce_stack(seq, tau, lam):
    """Global minimum of the penalized program by support enumeration.

    For each candidate support {k_1 < ... < k_t} the telescoping
    coefficients are constant on the segments (k_{j-1}, k_j] and zero
    beyond k_t, so the risk + df part separates into per-segment
    quadratics solved exactly; candidates whose solution violates the
    ordering/positivity needed for that exact support are skipped (the
    true optimum shows up under its own support).  Returns
    (alpha, objective).
    """
    m = len(seq.d)
    dR = np.asarray(seq.delta_R, dtype=float)
    dd = np.asarray(seq.delta_d, dtype=float)
    d = np.asarray(seq.d, dtype=float)
    rate = seq.sigma2 / seq.n
    xi = (max(lam - tau, 0.0) ** 2) / lam

    best_alpha = np.zeros(m)
    best_obj = float(seq.R0)  # null combination, dim = 0
    for t in range(1, m + 1):
        for support in itertools.combinations(range(1, m + 1), t):
            bounds = (0,) + support
            a_seg = []
            b_seg = []
            for lo, hi in zip(bounds[:-1], bounds[1:]):
                sl = slice(lo, hi)
                a_seg.append(float(np.sum(dR[sl])))
                b_seg.append(float(np.sum(dR[sl] - tau * rate * dd[sl])))
            u = [b / a for a, b in zip(a_seg, b_seg)]
            if any(u2 >= u1 for u1, u2 in zip(u, u[1:])) or u[-1] <= 0:
                continue
            obj = float(seq.R0) + sum(a * uu * uu - 2.0 * b * uu for a, b, uu in zip(a_seg, b_seg, u))
            obj += xi * rate * d[support[-1] - 1]
            if obj < best_obj:
                best_obj = obj
                alpha = np.zeros(m)
                u_ext = u + [0.0]
                for j, k in enumerate(support):
                    alpha[k - 1] = u_ext[j] - u_ext[j + 1]
                best_alpha = alpha
    return best_alpha, best_obj


def exhaustive_reduced(z, w, upper, penalty):
    """Exhaustive search for jump-penalized bounded isotonic regression.

    Enumerates every partition into consecutive segments and, per segment,
    the choice between its weighted mean (when below the bound) and the
    bound itself; keeps the best nondecreasing candidate.  The objective
    counts jumps from the assembled fit directly, with beta_{M+1} = upper.
    """
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    m = z.size
    best_obj = math.inf
    best_beta = None
    for pattern in itertools.product([False, True], repeat=m - 1):
        cuts = [0] + [i + 1 for i, c in enumerate(pattern) if c] + [m]
        nseg = len(cuts) - 1
        means = []
        for s in range(nseg):
            sl = slice(cuts[s], cuts[s + 1])
            means.append(float(np.sum(w[sl] * z[sl]) / np.sum(w[sl])))
        for choice in itertools.product([0, 1], repeat=nseg):
            values = []
            ok = True
            for s in range(nseg):
                if choice[s] == 1:
                    values.append(upper)
                elif means[s] < upper:
                    values.append(means[s])
                else:
                    ok = False
                    break
            if not ok or any(v2 < v1 for v1, v2 in zip(values, values[1:])):
                continue
            beta = np.empty(m)
            for s in range(nseg):
                beta[cuts[s]:cuts[s + 1]] = values[s]
            nxt = np.concatenate([beta[1:], [upper]])
            jumps = int(np.count_nonzero(beta != nxt))
            obj = float(np.sum(w * (z - beta) ** 2)) + penalty * jumps
            if obj < best_obj:
                best_obj = obj
                best_beta = beta
    return best_beta, best_obj


def qagg_objective(seq, eta, alpha) -> float:
    """Objective of the simplex aggregation program at weights alpha."""
    alpha = np.asarray(alpha, dtype=float)
    risk = combination_risk_ref(seq.R0, seq.delta_R, alpha)
    rate = seq.sigma2 / seq.n
    d = np.asarray(seq.d, dtype=float)
    risks = np.asarray(seq.R, dtype=float)
    linear = (2.0 * rate * d + eta * risks) / (1.0 - eta)
    return risk + float(alpha @ linear)


def qagg_grid_minimum(seq, eta, steps=50):
    """Grid search over the simplex with resolution 1/steps."""
    m = len(seq.d)
    best = (math.inf, None)
    for combo in itertools.combinations(range(steps + m - 1), m - 1):
        counts = []
        prev = -1
        for c in combo:
            counts.append(c - prev - 1)
            prev = c
        counts.append(steps + m - 2 - prev)
        alpha = np.asarray(counts, dtype=float) / steps
        obj = qagg_objective(seq, eta, alpha)
        if obj < best[0]:
            best = (obj, alpha)
    return best


def antitonic_population_weights(scenario):
    """Population-optimal telescoping coefficients by monotone projection.

    The population risk separates per increment into
    ``T_k (1 - c_k)^2 + (sigma^2/n) dd_k c_k^2``; the optimum over
    nonincreasing nonnegative ``c`` is the antitonic regression of the
    per-block targets ``T_k / (T_k + v_k)`` with weights ``T_k + v_k``,
    clipped below at zero.
    """
    d = np.concatenate([[0], np.asarray(scenario.d)])
    m = len(scenario.d)
    energy = np.array([float(np.sum(scenario.theta[d[k]:d[k + 1]] ** 2)) for k in range(m)])
    noise = (scenario.sigma2 / scenario.n) * np.diff(d.astype(float))
    weight = energy + noise
    target = energy / weight
    # antitonic = isotonic on the reversed sequence
    rev_t = target[::-1]
    rev_w = weight[::-1]
    stack = []
    for i in range(m):
        length, ws, wzs, val = 1, rev_w[i], rev_w[i] * rev_t[i], rev_t[i]
        while stack and stack[-1][3] > val:
            plen, pw, pwz, _ = stack.pop()
            length += plen
            ws += pw
            wzs += pwz
            val = wzs / ws
        stack.append((length, ws, wzs, val))
    rev_fit = np.concatenate([[val] * length for length, _, _, val in stack])
    c = np.clip(rev_fit[::-1], 0.0, None)
    return c


def population_risk(scenario, c) -> float:
    d = np.concatenate([[0], np.asarray(scenario.d)])
    m = len(scenario.d)
    energy = np.array([float(np.sum(scenario.theta[d[k]:d[k + 1]] ** 2)) for k in range(m)])
    noise = (scenario.sigma2 / scenario.n) * np.diff(d.astype(float))
    tail = float(np.sum(scenario.theta[d[-1]:] ** 2))
    c = np.asarray(c, dtype=float)
    return float(np.sum(energy * (1.0 - c) ** 2 + noise * c * c)) + tail


def restricted_selection_indicators(seq, knots, lam) -> np.ndarray:
    """Telescoping indicators of the best single model restricted to knots."""
    d = np.concatenate([[0.0], np.asarray(seq.d, dtype=float)])
    risks = np.concatenate([[seq.R0], np.asarray(seq.R, dtype=float)])
    rate = seq.sigma2 / seq.n
    pool = [0] + sorted(int(i) for i in knots)
    crit = {j: risks[j] + lam * rate * d[j] for j in pool}
    m_hat = min(pool, key=lambda j: (crit[j], j))
    return (np.arange(1, len(seq.d) + 1) <= m_hat).astype(float)
