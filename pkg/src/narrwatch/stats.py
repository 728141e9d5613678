"""Cohen's d and the Mann-Whitney U test."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

EXACT_MAX_PRODUCT = 400


class DegenerateGroups(ValueError):
    pass


def cohens_d(a: Sequence[float], b: Sequence[float]) -> float:
    """Standardized mean difference ``(mean(a) - mean(b)) / pooled sd``.

    The pooled variance uses n-1 denominators. Raises DegenerateGroups when
    a group has fewer than two values or the pooled variance is zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise DegenerateGroups("each group needs at least two values")
    va = np.var(a, ddof=1)
    vb = np.var(b, ddof=1)
    pooled = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
    if pooled <= 0:
        raise DegenerateGroups("pooled variance is zero")
    return float((a.mean() - b.mean()) / math.sqrt(pooled))


def midranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties given the mean of the ranks they span."""
    x = np.asarray(values, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _rank_sum_distribution(doubled_ranks: np.ndarray, k: int) -> np.ndarray:
    """counts[s] = number of k-subsets of the items whose doubled ranks sum to s."""
    total = int(doubled_ranks.sum())
    dp = np.zeros((k + 1, total + 1), dtype=np.int64)
    dp[0, 0] = 1
    for idx, r in enumerate(doubled_ranks.astype(np.int64)):
        for j in range(min(idx + 1, k), 0, -1):
            dp[j, r:] += dp[j - 1, : total + 1 - r]
    return dp[k]


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def mann_whitney_u(
    a: Sequence[float], b: Sequence[float], two_sided: bool = True, method: str = "auto"
) -> tuple[float, float]:
    """Return ``(U, p)`` where U is the statistic for ``a``.

    ``method="auto"`` enumerates the exact permutation distribution of the
    midrank sum when ``len(a) * len(b) <= 400`` and otherwise uses the
    normal approximation with tie-corrected variance and a continuity
    correction. One-sided tests the alternative that ``a`` is larger.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = len(a), len(b)
    if na == 0 or nb == 0:
        raise ValueError("both groups must be non-empty")
    ranks = midranks(np.concatenate([a, b]))
    r_a = float(ranks[:na].sum())
    u = r_a - na * (na + 1) / 2.0

    if method == "auto":
        method = "exact" if na * nb <= EXACT_MAX_PRODUCT else "asymptotic"
    if method == "exact":
        dist = _rank_sum_distribution(np.rint(2 * ranks).astype(np.int64), na)
        s_obs = int(round(2 * r_a))
        total = dist.sum()
        upper = dist[s_obs:].sum() / total
        lower = dist[: s_obs + 1].sum() / total
        p = min(1.0, 2.0 * min(upper, lower)) if two_sided else float(upper)
        return u, float(p)
    if method != "asymptotic":
        raise ValueError(f"unknown method {method!r}")

    n = na + nb
    _, counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(counts.astype(np.float64) ** 3 - counts)) / (n * (n - 1))
    var = na * nb / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return u, 1.0
    mu = na * nb / 2.0
    sd = math.sqrt(var)
    if two_sided:
        z = (max(u, na * nb - u) - mu - 0.5) / sd
        p = 2.0 * _norm_sf(z)
    else:
        z = (u - mu - 0.5) / sd
        p = _norm_sf(z)
    return u, float(min(1.0, max(0.0, p)))
