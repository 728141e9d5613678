"""Trending narratives, corpus matching and fact-check efficacy."""

from __future__ import annotations

import datetime as dt
import json
import logging
import statistics
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import parse_date
from .embeddings import EmbeddingRejected, similarity_matrix, validate_vector
from .influence import Timeline, peak_day
from .services import HttpJsonTransport, ServiceError, Transport, call_with_retries, require
from .store import NarrativeStore

logger = logging.getLogger(__name__)

SUPPORTS = "supports"
REFUTES = "refutes"
NOT_ENOUGH_INFO = "not_enough_info"
PENDING = "pending"
VERDICTS = (SUPPORTS, REFUTES, NOT_ENOUGH_INFO)

DEFAULT_THRESHOLD = 0.60
PREFILTER_MARGIN = 0.1
SWEEP_THRESHOLDS = (0.60, 0.65, 0.70, 0.75, 0.80)


# -- trending ---------------------------------------------------------------


@dataclass
class TrendEntry:
    cluster_id: int
    current_week_count: int
    previous_week_count: int
    pct_increase: float | None  # None when the previous week was empty
    is_new: bool = False

    def to_record(self) -> dict:
        return asdict(self)


def _count_between(daily: Mapping[dt.date, int], lo: dt.date, hi: dt.date) -> int:
    return sum(n for d, n in daily.items() if lo <= d <= hi)


def trending(
    store: NarrativeStore,
    as_of: dt.date,
    cluster_ids: Sequence[int] | None = None,
    min_weekly_volume: int = 25,
) -> list[TrendEntry]:
    """Week-over-week volume changes ending on ``as_of``.

    The current week is ``as_of - 6 .. as_of``, the previous week the seven
    days before it. Narratives new this week (previous count 0) come first
    by current volume, then the rest by percentage increase.
    """
    if not store.committed_days:
        raise ValueError("store has no committed days")
    if store.committed_days[0] > as_of - dt.timedelta(days=13):
        raise ValueError(f"trending needs 14 days of history before {as_of}")
    ids = range(store.cluster_count) if cluster_ids is None else cluster_ids
    entries = []
    for k in ids:
        daily = store.per_day_articles[k]
        cur = _count_between(daily, as_of - dt.timedelta(days=6), as_of)
        if cur < min_weekly_volume:
            continue
        prev = _count_between(daily, as_of - dt.timedelta(days=13), as_of - dt.timedelta(days=7))
        if prev == 0:
            entries.append(TrendEntry(k, cur, 0, None, True))
        else:
            entries.append(TrendEntry(k, cur, prev, cur / prev - 1.0))
    entries.sort(
        key=lambda e: (
            0 if e.is_new else 1,
            0.0 if e.is_new else -e.pct_increase,
            -e.current_week_count,
            e.cluster_id,
        )
    )
    return entries


# -- matching -----------------------------------------------------------------


@dataclass
class QueryPassage:
    passage_id: str
    vector: np.ndarray
    text: str | None = None


def _stack(queries: Sequence[QueryPassage], dim: int) -> np.ndarray:
    return np.array([q.vector for q in queries], dtype=np.float64).reshape(len(queries), dim)


def match_single_best(
    store: NarrativeStore,
    queries: Sequence[QueryPassage],
    cluster_ids: Sequence[int],
    threshold: float = DEFAULT_THRESHOLD,
    workers: int = 1,
) -> dict[str, set[int]]:
    """Each query joins its most similar narrative if that similarity reaches ``threshold``."""
    out: dict[str, set[int]] = {q.passage_id: set() for q in queries}
    if not queries or not cluster_ids:
        return out
    ids = np.asarray(cluster_ids)
    sims = similarity_matrix(_stack(queries, store.dim), store.centroids[ids], workers)
    best = np.argmax(sims, axis=1)
    for i, q in enumerate(queries):
        if sims[i, best[i]] >= threshold:
            out[q.passage_id] = {int(ids[best[i]])}
    return out


def _member_spread(store: NarrativeStore, ids: Sequence[int], cents: np.ndarray) -> np.ndarray:
    """Largest angle between each narrative's centroid and any of its members."""
    out = np.zeros(len(ids))
    for j, k in enumerate(ids):
        rows = store.members(k)
        if len(rows):
            sims = similarity_matrix(store.vectors[rows], cents[j][None, :])[:, 0]
            out[j] = float(np.arccos(np.clip(sims.min(), -1.0, 1.0)))
    return out


def match_all(
    store: NarrativeStore,
    queries: Sequence[QueryPassage],
    cluster_ids: Sequence[int],
    threshold: float = DEFAULT_THRESHOLD,
    margin: float = PREFILTER_MARGIN,
    workers: int = 1,
) -> dict[str, dict[int, list[str]]]:
    """Every narrative with at least one member passage at ``threshold`` or above.

    A narrative is scanned passage by passage only if its centroid reaches
    ``threshold - margin`` or the angular bound below cannot rule it out.
    Returns ``{query_id: {cluster_id: [matched article passage ids]}}``.
    """
    out: dict[str, dict[int, list[str]]] = {q.passage_id: {} for q in queries}
    if not queries or not cluster_ids:
        return out
    Q = _stack(queries, store.dim)
    ids = list(cluster_ids)
    cents = store.centroids[np.asarray(ids)]
    csims = similarity_matrix(Q, cents, workers)
    spread = _member_spread(store, ids, cents)
    # angle(q, p) >= angle(q, c) - angle(p, c), so no member can beat this bound
    theta_q = np.arccos(np.clip(csims, -1.0, 1.0))
    bound = np.cos(np.maximum(0.0, theta_q - spread[None, :]))
    scan = (csims >= threshold - margin) | (bound >= threshold - 1e-9)
    for j, k in enumerate(ids):
        hit_q = np.flatnonzero(scan[:, j])
        if len(hit_q) == 0:
            continue
        rows = store.members(k)
        psims = similarity_matrix(Q[hit_q], store.vectors[rows], workers)
        for qi, srow in zip(hit_q, psims):
            matched = rows[srow >= threshold]
            if len(matched):
                out[queries[qi].passage_id][k] = sorted(store.passage_ids[r] for r in matched)
    return out


def match_corpus(
    store: NarrativeStore,
    queries: Sequence[QueryPassage],
    cluster_ids: Sequence[int],
    threshold: float = DEFAULT_THRESHOLD,
    mode: str = "single",
    workers: int = 1,
) -> dict[str, set[int]]:
    """``mode="single"`` for social posts, ``"all"`` for fact-check passages."""
    if mode == "single":
        return match_single_best(store, queries, cluster_ids, threshold, workers)
    if mode == "all":
        return {q: set(m) for q, m in match_all(store, queries, cluster_ids, threshold, workers=workers).items()}
    raise ValueError(f"unknown match mode {mode!r}")


# -- fact checks ------------------------------------------------------------


@dataclass
class FactCheckRecord:
    factcheck_id: str
    org: str
    published_date: dt.date
    passages: list[QueryPassage]

    @classmethod
    def from_record(cls, rec: dict, dim: int) -> "FactCheckRecord":
        fid = str(rec["factcheck_id"])
        passages = []
        for i, p in enumerate(rec.get("passages") or []):
            try:
                vec, _ = validate_vector(p["vector"], dim)
            except (EmbeddingRejected, KeyError) as exc:
                raise ValueError(f"fact-check {fid} passage {i}: invalid vector") from exc
            passages.append(QueryPassage(f"{fid}:{i}", vec, p.get("text")))
        return cls(fid, str(rec["org"]), parse_date(rec["published_date"]), passages)


def read_factchecks(lines: Iterable[str], dim: int) -> list[FactCheckRecord]:
    out = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(FactCheckRecord.from_record(json.loads(line), dim))
        except (json.JSONDecodeError, KeyError) as exc:
            raise ValueError(f"line {lineno}: bad fact-check record ({exc})") from None
    return out


@dataclass
class FactCheckMatch:
    factcheck_id: str
    cluster_id: int
    matched_article_passages: list[str]
    pairs: list[tuple[str, str]] = field(default_factory=list)  # (article passage, fact-check passage)
    verdict: str = PENDING
    verdict_score: float = 0.0
    pair_verdicts: list[tuple[str, float]] = field(default_factory=list)

    @property
    def refuted(self) -> bool:
        return self.verdict == REFUTES

    def to_record(self) -> dict:
        return {
            "factcheck_id": self.factcheck_id,
            "cluster_id": self.cluster_id,
            "matched_article_passages": self.matched_article_passages,
            "verdict": self.verdict,
            "verdict_score": self.verdict_score,
            "pairs": [list(pr) for pr in self.pairs],
            "pair_verdicts": [list(v) for v in self.pair_verdicts],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "FactCheckMatch":
        return cls(
            factcheck_id=rec["factcheck_id"],
            cluster_id=int(rec["cluster_id"]),
            matched_article_passages=list(rec["matched_article_passages"]),
            pairs=[tuple(pr) for pr in rec.get("pairs", [])],
            verdict=rec.get("verdict", PENDING),
            verdict_score=float(rec.get("verdict_score", 0.0)),
            pair_verdicts=[(v, float(s)) for v, s in rec.get("pair_verdicts", [])],
        )


def match_factchecks(
    store: NarrativeStore,
    factchecks: Sequence[FactCheckRecord],
    cluster_ids: Sequence[int],
    threshold: float = DEFAULT_THRESHOLD,
    workers: int = 1,
) -> list[FactCheckMatch]:
    """One match per (fact-check, narrative) pair with at least one passage pair over ``threshold``."""
    queries = [q for fc in factchecks for q in fc.passages]
    hits = match_all(store, queries, cluster_ids, threshold, workers=workers)
    out = []
    for fc in factchecks:
        per_cluster: dict[int, list[tuple[str, str]]] = defaultdict(list)
        for q in fc.passages:
            for k, arts in hits[q.passage_id].items():
                per_cluster[k].extend((a, q.passage_id) for a in arts)
        for k in sorted(per_cluster):
            pairs = sorted(set(per_cluster[k]))
            out.append(FactCheckMatch(fc.factcheck_id, k, sorted({a for a, _ in pairs}), pairs))
    return out


@dataclass
class ClaimClassifier:
    """Remote claim classifier: ``{"claim", "query"}`` -> ``{"verdict", "score"}``."""

    endpoint: str = ""
    timeout: float = 30.0
    retries: int = 2
    transport: Transport | None = None

    def __call__(self, claim: str, query: str) -> tuple[str, float]:
        transport = self.transport or HttpJsonTransport(self.endpoint, self.timeout)
        data = call_with_retries(transport, {"claim": claim, "query": query}, self.retries)
        verdict = require(data, "verdict", str)
        score = require(data, "score", (int, float))
        if verdict not in VERDICTS:
            raise ServiceError("malformed_response", f"unknown verdict {verdict!r}")
        return verdict, float(score)


def classify_refutations(
    matches: Sequence[FactCheckMatch],
    classifier: Callable[[str, str], tuple[str, float]] | None,
    article_text: Callable[[str], str],
    factcheck_text: Callable[[str], str],
    cache: dict[tuple[str, str], tuple[str, float]] | None = None,
) -> int:
    """Fill in verdicts; returns the number of matches left pending.

    A match is ``refutes`` if any of its passage pairs is refuted. Otherwise
    it takes ``supports`` if any pair supports, else ``not_enough_info``.
    When the classifier is missing or fails, the match stays ``pending``.
    """
    cache = {} if cache is None else cache
    pending = 0
    for m in matches:
        results = []
        try:
            for pair in m.pairs:
                if pair not in cache:
                    if classifier is None:
                        raise ServiceError("unreachable", "no classifier configured")
                    cache[pair] = classifier(article_text(pair[0]), factcheck_text(pair[1]))
                results.append(cache[pair])
        except ServiceError as exc:
            logger.warning("classifier unavailable for %s/%s: %s", m.factcheck_id, m.cluster_id, exc)
            m.verdict, m.verdict_score, m.pair_verdicts = PENDING, 0.0, []
            pending += 1
            continue
        m.pair_verdicts = results
        for verdict in (REFUTES, SUPPORTS, NOT_ENOUGH_INFO):
            scores = [s for v, s in results if v == verdict]
            if scores:
                m.verdict, m.verdict_score = verdict, max(scores)
                break
    return pending


@dataclass
class EfficacyReport:
    org: str
    narratives_factchecked: int = 0
    # medians stay None when nothing was refuted
    median_articles_prior: float | None = None
    median_days_to_factcheck: float | None = None
    median_days_from_peak: float | None = None
    zero_day_factchecks: int = 0
    pending_matches: int = 0

    def to_record(self) -> dict:
        return asdict(self)


def factcheck_efficacy(
    org: str,
    matches: Sequence[FactCheckMatch],
    factchecks: Mapping[str, FactCheckRecord],
    timelines: Mapping[int, Timeline],
) -> EfficacyReport:
    """Timing of one organization's refuting fact-checks relative to each narrative.

    Per narrative the earliest refuting fact-check counts. Pending matches
    are excluded and reported separately.
    """
    earliest: dict[int, dt.date] = {}
    pending = 0
    for m in matches:
        fc = factchecks[m.factcheck_id]
        if fc.org != org:
            continue
        if m.verdict == PENDING:
            pending += 1
            continue
        if not m.refuted or m.cluster_id not in timelines:
            continue
        d = fc.published_date
        if m.cluster_id not in earliest or d < earliest[m.cluster_id]:
            earliest[m.cluster_id] = d
    if not earliest:
        return EfficacyReport(org, pending_matches=pending)
    prior, to_fc, from_peak = [], [], []
    for k, d in sorted(earliest.items()):
        t = timelines[k]
        prior.append(sum(1 for ad, _, _ in t.articles if ad < d))
        to_fc.append((d - t.first_day).days)
        from_peak.append((d - peak_day(t.daily_counts())).days)
    return EfficacyReport(
        org=org,
        narratives_factchecked=len(earliest),
        median_articles_prior=float(statistics.median(prior)),
        median_days_to_factcheck=float(statistics.median(to_fc)),
        median_days_from_peak=float(statistics.median(from_peak)),
        zero_day_factchecks=sum(1 for x in to_fc if x == 0),
        pending_matches=pending,
    )


@dataclass
class SweepRow:
    threshold: float
    org: str
    narratives_matched: int
    efficacy: EfficacyReport | None = None


def threshold_sweep(
    store: NarrativeStore,
    factchecks: Sequence[FactCheckRecord],
    cluster_ids: Sequence[int],
    timelines: Mapping[int, Timeline] | None = None,
    thresholds: Sequence[float] = SWEEP_THRESHOLDS,
    classifier: Callable[[str, str], tuple[str, float]] | None = None,
    workers: int = 1,
) -> list[SweepRow]:
    """Narratives matched per organization at each threshold.

    With a classifier and timelines, efficacy is recomputed at each
    threshold; pair verdicts are cached across thresholds.
    """
    by_id = {fc.factcheck_id: fc for fc in factchecks}
    orgs = sorted({fc.org for fc in factchecks})
    art_text = lambda pid: store.texts[store.passage_index(pid)] or ""
    fc_text = {q.passage_id: q.text or "" for fc in factchecks for q in fc.passages}
    cache: dict = {}
    rows = []
    for th in sorted(thresholds):
        matches = match_factchecks(store, factchecks, cluster_ids, th, workers)
        if classifier is not None and timelines is not None:
            classify_refutations(matches, classifier, art_text, fc_text.__getitem__, cache)
        for org in orgs:
            n = len({m.cluster_id for m in matches if by_id[m.factcheck_id].org == org})
            eff = None
            if classifier is not None and timelines is not None:
                eff = factcheck_efficacy(org, matches, by_id, timelines)
            rows.append(SweepRow(th, org, n, eff))
    return rows
