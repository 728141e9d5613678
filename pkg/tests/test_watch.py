from __future__ import annotations

import datetime as dt

import numpy as np
import pytest
from hypothesis import given, strategies as st

from narrwatch.clusterer import fit_days, partial_fit_day
from narrwatch.embeddings import PassageRecord, record_from_dict
from narrwatch.influence import Timeline
from narrwatch.services import ServiceError
from narrwatch.store import NarrativeStore
from narrwatch.watch import (
    NOT_ENOUGH_INFO,
    PENDING,
    REFUTES,
    SUPPORTS,
    ClaimClassifier,
    FactCheckMatch,
    FactCheckRecord,
    QueryPassage,
    classify_refutations,
    factcheck_efficacy,
    match_all,
    match_corpus,
    match_single_best,
    threshold_sweep,
    trending,
)

from synth import noisy, planted_points

D0 = dt.date(2022, 6, 1)


def volume_store(volumes, days=14, dim=4):
    """``volumes[k] = (previous week count, current week count)``; one passage per article."""
    store = NarrativeStore(dim)
    for d in range(days):
        day = D0 + dt.timedelta(days=d)
        pts = []
        for k, (prev, cur) in enumerate(volumes):
            n = prev if d < 7 else cur
            per_day = n // 7 + (1 if d % 7 < n % 7 else 0)
            for i in range(per_day):
                aid = f"k{k}-d{d:02d}-{i:03d}"
                pts.append(PassageRecord(aid + ":0", aid, f"s{i % 9}.example", day, 0, np.eye(dim)[k], None))
        partial_fit_day(store, day, pts)
    return store


def cid(store, k):
    prefix = f"k{k}-"
    return int(next(store.labels[i] for i, p in enumerate(store.passage_ids) if p.startswith(prefix)))


def test_trending_new_first_and_percentages():
    store = volume_store([(0, 364), (10, 30), (30, 45), (40, 20)])
    as_of = D0 + dt.timedelta(days=13)
    entries = trending(store, as_of, min_weekly_volume=25)
    by = {e.cluster_id: e for e in entries}
    assert entries[0].cluster_id == cid(store, 0) and entries[0].is_new and entries[0].current_week_count == 364
    assert by[cid(store, 1)].pct_increase == pytest.approx(2.0)
    assert [e.cluster_id for e in entries] == [cid(store, 0), cid(store, 1), cid(store, 2)]
    assert cid(store, 3) not in by  # below the weekly volume floor


def test_trending_needs_two_weeks():
    store = volume_store([(5, 5)], days=10)
    with pytest.raises(ValueError, match="14 days"):
        trending(store, D0 + dt.timedelta(days=9))


@pytest.fixture(scope="module")
def matched_store():
    recs, _, centers = planted_points(k=8, per=125, dim=16, days=2, noise=0.12, seed=11)
    store = NarrativeStore(16)
    fit_days(store, [record_from_dict(r, 16)[0] for r in recs])
    return store, centers


def brute_all(store, queries, ids, th):
    out = {q.passage_id: {} for q in queries}
    for q in queries:
        for k in ids:
            rows = [i for i in range(store.passage_count) if store.labels[i] == k and float(np.dot(store.vectors[i], q.vector)) >= th]
            if rows:
                out[q.passage_id][k] = sorted(store.passage_ids[i] for i in rows)
    return out


@given(st.integers(0, 10_000), st.sampled_from([0.5, 0.6, 0.7, 0.8]), st.sampled_from([0.0, 0.1]))
def test_pruned_equals_brute_force(matched_store, seed, th, margin):
    store, centers = matched_store
    rng = np.random.default_rng(seed)
    qs = [QueryPassage(f"q{i}", noisy(centers[i % 8] + rng.normal(scale=0.6, size=16), 0.2, rng)) for i in range(12)]
    ids = list(range(store.cluster_count))
    got = match_all(store, qs, ids, th, margin=margin)
    assert got == brute_all(store, qs, ids, th)


def test_single_best(matched_store):
    store, centers = matched_store
    q = [QueryPassage("a", centers[3]), QueryPassage("b", -centers[3])]
    got = match_single_best(store, q, list(range(store.cluster_count)), 0.6)
    k = int(np.argmax(store.centroids @ centers[3]))
    assert got == {"a": {k}, "b": set()}
    assert match_corpus(store, q, list(range(store.cluster_count)), 0.6, mode="single") == got
    with pytest.raises(ValueError):
        match_corpus(store, q, [0], mode="bogus")


def test_classify_precedence_and_pending():
    m1 = FactCheckMatch("f1", 0, ["a1"], [("a1", "f1:0"), ("a2", "f1:0")])
    m2 = FactCheckMatch("f2", 1, ["a3"], [("a3", "f2:0")])
    m3 = FactCheckMatch("f3", 2, ["a4"], [("a4", "f3:0")])
    verdicts = {"a1": (SUPPORTS, 0.9), "a2": (REFUTES, 0.7), "a3": (NOT_ENOUGH_INFO, 0.5)}

    def clf(claim, query):
        if claim == "a4":
            raise ServiceError("unreachable", "down")
        return verdicts[claim]

    pending = classify_refutations([m1, m2, m3], clf, lambda p: p, lambda p: p)
    assert pending == 1
    assert (m1.verdict, m1.verdict_score) == (REFUTES, 0.7)
    assert m2.verdict == NOT_ENOUGH_INFO and m3.verdict == PENDING
    assert FactCheckMatch.from_record(m1.to_record()) == m1


def test_classifier_contract(service):
    svc = service(lambda p: (200, {"verdict": "refutes", "score": 0.8}))
    assert ClaimClassifier(svc.url)("claim", "q") == ("refutes", 0.8)
    assert svc.calls == [{"claim": "claim", "query": "q"}]
    bad = service(lambda p: (200, {"verdict": "maybe", "score": 1}))
    with pytest.raises(ServiceError) as ei:
        ClaimClassifier(bad.url)("c", "q")
    assert ei.value.kind == "malformed_response"


def test_efficacy_medians():
    d = dt.date(2022, 7, 1)
    tls = {
        0: Timeline(0, [(d, "x1", "a"), (d, "x2", "b"), (d + dt.timedelta(days=2), "x3", "c")]),
        1: Timeline(1, [(d, "y1", "a"), (d + dt.timedelta(days=1), "y2", "b"), (d + dt.timedelta(days=1), "y3", "c")]),
    }
    fcs = {
        "f0": FactCheckRecord("f0", "org", d, []),
        "f1": FactCheckRecord("f1", "org", d + dt.timedelta(days=4), []),
        "f2": FactCheckRecord("f2", "org", d + dt.timedelta(days=3), []),
        "g": FactCheckRecord("g", "other", d, []),
    }
    ms = [
        FactCheckMatch("f0", 0, [], verdict=REFUTES),
        FactCheckMatch("f1", 1, [], verdict=REFUTES),
        FactCheckMatch("f2", 1, [], verdict=REFUTES),  # earlier refutation of the same narrative wins
        FactCheckMatch("f1", 0, [], verdict=SUPPORTS),
        FactCheckMatch("f2", 0, [], verdict=PENDING),
        FactCheckMatch("g", 1, [], verdict=REFUTES),
    ]
    rep = factcheck_efficacy("org", ms, fcs, tls)
    assert rep.narratives_factchecked == 2
    assert rep.median_days_to_factcheck == 1.5  # 0 and 3 days
    assert rep.zero_day_factchecks == 1
    assert rep.median_articles_prior == 1.5  # 0 and 3 prior articles
    assert rep.median_days_from_peak == 1.0  # 0 and 2
    assert rep.pending_matches == 1
    none = factcheck_efficacy("nobody", ms, {**fcs, "z": FactCheckRecord("z", "nobody", d, [])}, tls)
    assert none.narratives_factchecked == 0 and none.median_days_to_factcheck is None


def test_sweep_monotone(matched_store):
    store, centers = matched_store
    rng = np.random.default_rng(4)
    fcs = [
        FactCheckRecord(f"f{i}", "A" if i % 2 else "B", D0, [QueryPassage(f"f{i}:0", noisy(centers[i % 8], 0.25 + 0.05 * (i % 4), rng))])
        for i in range(16)
    ]
    rows = threshold_sweep(store, fcs, list(range(store.cluster_count)))
    for org in ("A", "B"):
        counts = [r.narratives_matched for r in rows if r.org == org]
        assert len(counts) == 5 and all(b <= a for a, b in zip(counts, counts[1:]))
