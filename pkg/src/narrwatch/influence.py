"""Originators, amplifiers and per-site influence statistics.

External-article counts are weighted by ``1 / log2(rank + 1)`` of the
writing site's popularity bucket and averaged over bootstrap draws of
external-site subsets. One subset is drawn per iteration and shared by
every narrative, and each site gets its own generator seeded from
``(rng_seed, site, role)``, so reports do not depend on evaluation order.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .fingerprints import RANK_BUCKETS, UNRANKED
from .stats import DegenerateGroups, cohens_d, mann_whitney_u
from .store import NarrativeStore

logger = logging.getLogger(__name__)

ORIGINATE = "originate"
AMPLIFY = "amplify"


@dataclass
class InfluenceConfig:
    bootstrap_iterations: int = 250
    subset_size: int = 100
    window_days: int = 7
    amplify_cutoff: float = 0.15
    min_instances: int = 25
    alpha: float = 0.05
    num_comparisons: int | None = None
    rng_seed: int = 0
    weight_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.amplify_cutoff < 1.0:
            raise ValueError("amplify_cutoff must lie in (0, 1)")
        if self.bootstrap_iterations < 1 or self.subset_size < 1:
            raise ValueError("bootstrap_iterations and subset_size must be positive")


@dataclass
class Timeline:
    """Distinct articles of one narrative in (date, article_id) order."""

    cluster_id: int
    articles: list[tuple[dt.date, str, str]]  # (date, article_id, domain)

    @property
    def first_day(self) -> dt.date:
        return self.articles[0][0]

    @property
    def total_articles(self) -> int:
        return len(self.articles)

    def daily_counts(self) -> dict[dt.date, int]:
        return dict(Counter(d for d, _, _ in self.articles))

    def domain_first_dates(self) -> dict[str, dt.date]:
        out: dict[str, dt.date] = {}
        for d, _, dom in self.articles:
            out.setdefault(dom, d)
        return out

    def domains(self) -> set[str]:
        return {dom for _, _, dom in self.articles}


def build_timelines(store: NarrativeStore, retained: Sequence[int]) -> dict[int, Timeline]:
    out = {}
    for k in retained:
        seen = {}
        for i in store.members(k):
            aid = store.article_ids[i]
            if aid not in seen:
                seen[aid] = (store.dates[i], aid, store.domains[i])
        if seen:
            out[k] = Timeline(k, sorted(seen.values()))
    return out


def peak_day(daily_counts: Mapping[dt.date, int]) -> dt.date:
    """Day with the most articles; the earliest wins ties."""
    if not daily_counts:
        raise ValueError("narrative has no articles")
    return min(daily_counts, key=lambda d: (-daily_counts[d], d))


@dataclass
class RoleAssignment:
    cluster_id: int
    originators: set[str]
    amplifiers: set[str]
    first_day: dt.date
    peak_day: dt.date
    total_articles: int


def amplify_rank_cutoff(total: int, fraction: float) -> int:
    # round first so 0.15 * 100 does not ceil to 16
    return math.ceil(round(fraction * total, 9))


def classify_roles(timeline: Timeline, amplify_cutoff: float = 0.15) -> RoleAssignment:
    first = timeline.first_day
    peak = peak_day(timeline.daily_counts())
    originators = {dom for d, _, dom in timeline.articles if d == first}
    cutoff = amplify_rank_cutoff(timeline.total_articles, amplify_cutoff)
    amplifiers = set()
    seen = set()
    for pos, (d, _, dom) in enumerate(timeline.articles, start=1):
        if dom in seen:
            continue
        seen.add(dom)
        if dom in originators:
            continue
        if d < peak and pos <= cutoff:
            amplifiers.add(dom)
    return RoleAssignment(timeline.cluster_id, originators, amplifiers, first, peak, timeline.total_articles)


def rank_weight(bucket: int | str | None, scale: float = 1.0) -> float:
    """``scale / log2(rank + 1)``; unranked sites take the last bucket."""
    rank = RANK_BUCKETS[-1] if bucket in (None, UNRANKED) else float(bucket)
    return scale / math.log2(rank + 1.0)


@dataclass
class EffectReport:
    domain: str
    role: str
    eligible_narratives: int
    comparison_narratives: int
    weighted_external_delta: float
    cohens_d: float
    u_statistic: float
    p_value: float
    significant: bool
    peak_delta_days: float
    peak_cohens_d: float
    peak_p_value: float
    num_comparisons: int
    seed: int

    def to_record(self) -> dict:
        return asdict(self)


class InsufficientInstances(ValueError):
    def __init__(self, domain: str, role: str, reason: str, counts: tuple[int, int]):
        super().__init__(f"{domain} ({role}): {reason} (role={counts[0]}, comparison={counts[1]})")
        self.domain = domain
        self.role = role
        self.reason = reason
        self.counts = counts


def effect_size(a: Sequence[float], b: Sequence[float]) -> float:
    """Cohen's d, with zero-variance groups mapped to 0 (equal means) or +/-inf."""
    try:
        return cohens_d(a, b)
    except DegenerateGroups:
        diff = float(np.mean(a) - np.mean(b)) if len(a) and len(b) else 0.0
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)


def _domain_seed(seed: int, domain: str, role: str) -> list[int]:
    h = hashlib.sha256(f"{domain}\x00{role}".encode()).digest()
    return [seed, int.from_bytes(h[:8], "little")]


class InfluenceAnalyzer:
    """Role and effect computations over a fixed set of narrative timelines."""

    def __init__(
        self,
        timelines: Mapping[int, Timeline],
        rank_buckets: Mapping[str, int | str] | None = None,
        config: InfluenceConfig | None = None,
    ):
        self.config = config or InfluenceConfig()
        self.timelines = dict(sorted(timelines.items()))
        self.rank_buckets = dict(rank_buckets or {})
        self.roles = {k: classify_roles(t, self.config.amplify_cutoff) for k, t in self.timelines.items()}
        self.all_domains = sorted(set().union(*(t.domains() for t in self.timelines.values()))) if self.timelines else []
        self._first_dates = {k: t.domain_first_dates() for k, t in self.timelines.items()}

    @classmethod
    def from_store(cls, store, retained, rank_buckets=None, config=None) -> "InfluenceAnalyzer":
        return cls(build_timelines(store, retained), rank_buckets, config)

    def weight(self, domain: str) -> float:
        return rank_weight(self.rank_buckets.get(domain, UNRANKED), self.config.weight_scale)

    def groups(self, domain: str, role: str) -> tuple[list[int], list[int]]:
        """Narratives where ``domain`` holds ``role`` and the comparison narratives it also wrote about."""
        held, other = [], []
        for k, ra in self.roles.items():
            if domain not in self._first_dates[k]:
                continue
            if role == ORIGINATE:
                (held if domain in ra.originators else other).append(k)
            elif role == AMPLIFY:
                if domain in ra.amplifiers:
                    held.append(k)
                elif domain not in ra.originators:
                    other.append(k)
            else:
                raise ValueError(f"unknown role {role!r}")
        return held, other

    def check_eligible(self, domain: str, role: str) -> tuple[list[int], list[int]]:
        held, other = self.groups(domain, role)
        need = self.config.min_instances
        counts = (len(held), len(other))
        if len(held) < need:
            raise InsufficientInstances(domain, role, f"fewer than {need} {role} instances", counts)
        if role == ORIGINATE and len(other) < need:
            raise InsufficientInstances(domain, role, f"fewer than {need} comparison narratives", counts)
        if len(other) < 2:
            raise InsufficientInstances(domain, role, "fewer than 2 comparison narratives", counts)
        return held, other

    def _anchor(self, k: int, domain: str, role: str) -> dt.date:
        if role == ORIGINATE:
            return self.roles[k].first_day
        return self._first_dates[k][domain]

    def _window_matrix(self, narratives: Sequence[int], domain: str, role: str, pool: Sequence[str]) -> np.ndarray:
        col = {d: j for j, d in enumerate(pool)}
        window = dt.timedelta(days=self.config.window_days)
        mat = np.zeros((len(narratives), len(pool)), dtype=np.float64)
        for i, k in enumerate(narratives):
            anchor = self._anchor(k, domain, role)
            excluded = self.roles[k].originators | {domain}
            for d, _, dom in self.timelines[k].articles:
                if dom in excluded or not (anchor < d <= anchor + window):
                    continue
                mat[i, col[dom]] += 1.0
        return mat * np.array([self.weight(d) for d in pool])

    def external_values(self, narratives: Sequence[int], domain: str, role: str, seed: int) -> np.ndarray:
        """Bootstrap-averaged weighted external article counts, one per narrative."""
        pool = [d for d in self.all_domains if d != domain]
        if not pool or not narratives:
            return np.zeros(len(narratives))
        mat = self._window_matrix(narratives, domain, role, pool)
        size = min(self.config.subset_size, len(pool))
        rng = np.random.default_rng(_domain_seed(seed, domain, role))
        hits = np.zeros(len(pool), dtype=np.int64)
        for _ in range(self.config.bootstrap_iterations):
            hits[rng.choice(len(pool), size=size, replace=False)] += 1
        frac = hits / self.config.bootstrap_iterations
        return np.sum(mat * frac[None, :], axis=1)

    def days_to_peak(self, narratives: Sequence[int], domain: str, role: str) -> np.ndarray:
        return np.array(
            [(self.roles[k].peak_day - self._anchor(k, domain, role)).days for k in narratives], dtype=np.float64
        )

    def effect(self, domain: str, role: str, num_comparisons: int | None = None) -> EffectReport:
        held, other = self.check_eligible(domain, role)
        cfg = self.config
        ncomp = num_comparisons or cfg.num_comparisons or 1
        vals = self.external_values(held + other, domain, role, cfg.rng_seed)
        a, b = vals[: len(held)], vals[len(held) :]
        u, p = mann_whitney_u(a, b)
        pa = self.days_to_peak(held, domain, role)
        pb = self.days_to_peak(other, domain, role)
        _, peak_p = mann_whitney_u(pa, pb)
        return EffectReport(
            domain=domain,
            role=role,
            eligible_narratives=len(held),
            comparison_narratives=len(other),
            weighted_external_delta=float(a.mean() - b.mean()),
            cohens_d=effect_size(a, b),
            u_statistic=u,
            p_value=p,
            significant=p < cfg.alpha / ncomp,
            peak_delta_days=float(pa.mean() - pb.mean()),
            peak_cohens_d=effect_size(pa, pb),
            peak_p_value=peak_p,
            num_comparisons=ncomp,
            seed=cfg.rng_seed,
        )

    def origination_effect(self, domain: str, num_comparisons: int | None = None) -> EffectReport:
        return self.effect(domain, ORIGINATE, num_comparisons)

    def amplification_effect(self, domain: str, num_comparisons: int | None = None) -> EffectReport:
        return self.effect(domain, AMPLIFY, num_comparisons)

    def time_to_peak_effect(self, domain: str, role: str) -> tuple[float, float, float]:
        held, other = self.check_eligible(domain, role)
        pa = self.days_to_peak(held, domain, role)
        pb = self.days_to_peak(other, domain, role)
        _, p = mann_whitney_u(pa, pb)
        return float(pa.mean() - pb.mean()), effect_size(pa, pb), p

    def run(
        self, role: str, domains: Iterable[str] | None = None
    ) -> tuple[list[EffectReport], list[InsufficientInstances]]:
        """Effect reports for every eligible domain; Bonferroni over the domains tested."""
        candidates = sorted(domains) if domains is not None else self.all_domains
        eligible, skipped = [], []
        for d in candidates:
            try:
                self.check_eligible(d, role)
                eligible.append(d)
            except InsufficientInstances as exc:
                skipped.append(exc)
        ncomp = self.config.num_comparisons or max(1, len(eligible))
        return [self.effect(d, role, ncomp) for d in eligible], skipped

    def lag_profile(self, buckets: Iterable[int | str] | None = None) -> "LagProfile":
        """Article-day offsets from each narrative's peak, for sites in ``buckets`` (None = all)."""
        allowed = None if buckets is None else set(buckets)
        hist: Counter = Counter()
        for k, t in self.timelines.items():
            peak = self.roles[k].peak_day
            for d, _, dom in t.articles:
                if allowed is not None and self.rank_buckets.get(dom, UNRANKED) not in allowed:
                    continue
                hist[(d - peak).days] += 1
        return LagProfile(dict(sorted(hist.items())))


@dataclass
class LagProfile:
    histogram: dict[int, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.histogram.values())

    @property
    def before_peak(self) -> int:
        return sum(n for off, n in self.histogram.items() if off < 0)

    @property
    def proportion_before(self) -> float:
        return self.before_peak / self.total if self.total else 0.0


def buckets_in_range(lo: float = 0, hi: float = math.inf, include_unranked: bool = False) -> set:
    """Rank buckets with ``lo < bucket <= hi``."""
    out: set = {b for b in RANK_BUCKETS if lo < b <= hi}
    if include_unranked:
        out.add(UNRANKED)
    return out
