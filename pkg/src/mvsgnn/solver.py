"""Minimal-variance Bernoulli inclusion probabilities.

Given per-sample gradient-norm bounds g and an expected budget B, the
probabilities minimising sum(g**2 / p) subject to sum(p) = B, 0 < p <= 1
have the form p = min(1, g / mu). Three independent routes to mu live here:
the sorted closed form, a quick-select threshold search, and an iterative
water-filling oracle used by the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllZeroGradients, BudgetExceedsN, RegimeViolation

ZERO_FLOOR = 1e-12


@dataclass(frozen=True)
class ProbabilityVector:
    probs: np.ndarray
    budget: float
    kappa: int
    mu: float

    def check(self, tol: float = 1e-9) -> None:
        assert np.all(self.probs > 0) and np.all(self.probs <= 1)
        assert abs(self.probs.sum() - self.budget) <= tol


def _prepare(g_bar, B) -> tuple[np.ndarray, float]:
    """Validated norms divided by their maximum and floored, plus that maximum."""
    g = np.asarray(g_bar, dtype=np.float64).reshape(-1)
    if g.size == 0:
        raise AllZeroGradients("empty gradient vector")
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise ValueError("gradient norms must be finite and nonnegative")
    if B > g.size:
        raise BudgetExceedsN(f"budget {B} exceeds {g.size} candidates")
    if B <= 0:
        raise ValueError("budget must be positive")
    gmax = g.max()
    if gmax <= 0:
        raise AllZeroGradients("all gradient norms are zero")
    # solving on g / max(g) keeps tiny or huge scales representable; the
    # relative floor keeps every p > 0
    return np.maximum(g / gmax, ZERO_FLOOR), float(gmax)


def optimal_probs(g_bar, B) -> ProbabilityVector:
    g, scale = _prepare(g_bar, B)
    n = g.size
    order = np.argsort(g, kind="stable")
    gs = g[order]
    cs = np.cumsum(gs)
    k = np.arange(1, n + 1)
    ok = (B + k - n) * gs <= cs
    kappa = int(k[ok][-1])
    coef = B + kappa - n
    total = cs[kappa - 1]
    p = np.ones(n)
    p[order[:kappa]] = coef * gs[:kappa] / total
    np.minimum(p, 1.0, out=p)
    return ProbabilityVector(p, float(B), kappa, float(total / coef) * scale)


def quickselect_threshold(g_bar, B) -> float:
    """Threshold mu by pivot partitioning, expected O(N) comparisons.

    ``sum_small`` accumulates the norms known to sit below the threshold and
    ``n_large`` counts the entries known to be clamped at p = 1.
    """
    g, scale = _prepare(g_bar, B)
    if B == g.size:
        return float(g.min()) * scale
    cand = g
    sum_small = 0.0
    n_large = 0
    while cand.size:
        pivot = cand[0]
        small = cand[cand < pivot]
        large = cand[cand > pivot]
        equal = cand[cand == pivot]
        below = sum_small + small.sum() + equal.sum()
        size_at_pivot = below / pivot + large.size + n_large
        if size_at_pivot > B:
            # threshold lies above the pivot: pivot and smaller are unclamped
            sum_small = below
            cand = large
        else:
            n_large += large.size + equal.size
            cand = small
    return float(sum_small / (B - n_large)) * scale


def probs_from_threshold(g_bar, B, mu: float) -> np.ndarray:
    g, scale = _prepare(g_bar, B)
    return np.minimum(1.0, g / (mu / scale))


def oracle_probs(g_bar, B) -> ProbabilityVector:
    """Water-filling: clamp everything at or above the current level, repeat."""
    g, scale = _prepare(g_bar, B)
    clamped = np.zeros(g.size, dtype=bool)
    while True:
        free = ~clamped
        mu = g[free].sum() / (B - clamped.sum())
        newly = free & (g >= mu)
        if not newly.any():
            break
        clamped |= newly
        if clamped.sum() >= B:
            # only reachable when B == N
            mu = g.min()
            break
    p = np.where(clamped, 1.0, np.minimum(1.0, g / mu))
    return ProbabilityVector(p, float(B), int((~clamped).sum()), float(mu) * scale)


def objective(g_bar, p) -> float:
    g = np.asarray(g_bar, dtype=np.float64)
    return float(np.sum(g * g / np.asarray(p)))


def G_value(g_bar, p) -> float:
    """Stochastic gradient variance proxy (1/N^2) sum g^2/p."""
    g = np.asarray(g_bar, dtype=np.float64)
    return objective(g, p) / g.size**2


@dataclass(frozen=True)
class VarianceStats:
    G_value: float
    G_uniform: float
    gap: float
    gap_closed_form: float
    kappa_is_n: bool


def variance_stats(g_bar, p) -> VarianceStats:
    """Compare G(p) with uniform sampling at the same budget.

    ``p`` may be a ProbabilityVector, an array, or a scalar budget (uniform).
    The closed-form gap (sum g)^2/(B^3 N) ||p - B/N||^2 is exact only when
    no entry is clamped (p proportional to g).
    """
    g = np.asarray(g_bar, dtype=np.float64)
    n = g.size
    if isinstance(p, ProbabilityVector):
        probs, B = p.probs, p.budget
    elif np.ndim(p) == 0:
        B = float(p)
        probs = np.full(n, B / n)
    else:
        probs = np.asarray(p, dtype=np.float64)
        B = float(probs.sum())
    gv = G_value(g, probs)
    gu = float(np.sum(g * g) / (n * B))
    closed = float(g.sum() ** 2 / (B**3 * n) * np.sum((probs - B / n) ** 2))
    kappa_n = bool(np.all(probs < 1.0) or B * g.max() <= g.sum())
    return VarianceStats(gv, gu, gu - gv, closed, kappa_n)


def uplift_smallest(g_bar, B) -> np.ndarray:
    """Raise the smallest norms to the least common floor giving B*max(g) <= sum(g)."""
    g = np.asarray(g_bar, dtype=np.float64)
    n = g.size
    gmax = g.max()
    target = B * gmax
    if target <= g.sum():
        return g.copy()
    if B > n:
        raise RegimeViolation("budget exceeds candidate count")
    if B == n:
        return np.full(n, gmax)  # B * max <= sum forces every entry to the max
    gs = np.sort(g)
    suffix = np.concatenate([np.cumsum(gs[::-1])[::-1], [0.0]])
    # raising the k smallest to c: k*c + suffix[k] == target, with gs[k-1] <= c <= gs[k]
    for k in range(1, n + 1):
        c = (target - suffix[k]) / k
        hi = gs[k] if k < n else np.inf
        if c <= hi:
            c = min(c, gmax)
            out = np.maximum(g, c)
            # roundoff can leave the sum a few ulps short of the target
            while c < gmax and optimal_probs(out, B).kappa < n:
                c = min(np.nextafter(c, np.inf) + 4 * np.spacing(c), gmax)
                out = np.maximum(g, c)
            return out
    return np.full(n, gmax)
