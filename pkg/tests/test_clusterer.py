from __future__ import annotations

import datetime as dt

import numpy as np
import pytest
from hypothesis import given, strategies as st

from narrwatch.clusterer import FitConfig, FitError, assign_batch, fit_days, partial_fit_day
from narrwatch.embeddings import record_from_dict
from narrwatch.store import NarrativeStore

from conftest import make_record
from reference_dpmeans import reference_fit
from synth import planted_points


def _records(recs, dim):
    return [record_from_dict(r, dim)[0] for r in recs]


def _by_day(records):
    days = {}
    for r in records:
        days.setdefault(r.published_date, []).append(r)
    return [days[d] for d in sorted(days)]


def test_matches_reference_on_small_fixture():
    recs, _, _ = planted_points(k=6, per=40, dim=12, days=3, noise=0.15, seed=3)
    records = _records(recs, 12)
    store = NarrativeStore(12)
    fit_days(store, records, FitConfig())
    ref_labels, ref_cents = reference_fit([[(r.passage_id, r.vector) for r in day] for day in _by_day(records)])
    got = dict(zip(store.passage_ids, store.labels.tolist()))
    assert got == ref_labels
    np.testing.assert_allclose(store.centroids, np.array(ref_cents), atol=1e-9, rtol=0)


def test_assign_batch_ties_and_empty():
    pts = np.array([[1.0, 0.0], [0.0, 1.0]])
    labels, best, worst = assign_batch(pts, np.array([[1.0, 0.0], [1.0, 0.0]]))
    assert labels.tolist()[0] == 0  # tie goes to the lower id
    assert worst == 1
    labels, best, worst = assign_batch(pts, np.zeros((0, 2)))
    assert labels.tolist() == [-1, -1] and worst == 0
    labels, best, worst = assign_batch(np.zeros((0, 2)), np.array([[1.0, 0.0]]))
    assert worst is None and len(labels) == 0


def test_one_new_cluster_per_pass(record, day0):
    # three orthogonal points need three passes to seed three clusters
    pts = [record(f"p{i}", np.eye(3)[i], day0) for i in range(3)]
    store = NarrativeStore(3)
    rep = partial_fit_day(store, day0, pts, FitConfig(lam=0.8, max_iterations=2))
    assert rep.clusters_created == 2 and not rep.converged
    store2 = NarrativeStore(3)
    rep2 = partial_fit_day(store2, day0, pts, FitConfig(lam=0.8))
    assert rep2.clusters_created == 3 and rep2.converged
    assert rep2.iterations_run >= 3


def test_creation_cap_raises_when_points_unassigned(record, day0):
    pts = [record(f"p{i}", np.eye(3)[i], day0) for i in range(3)]
    store = NarrativeStore(3)
    with pytest.raises(FitError):
        partial_fit_day(store, day0, pts, FitConfig(max_new_clusters_per_day=0))
    assert store.passage_count == 0


def test_history_is_frozen(record, day0):
    store = NarrativeStore(2)
    partial_fit_day(store, day0, [record("a", [1, 0], day0), record("b", [1, 0.1], day0)])
    before = (store.labels.copy(), store.sims.copy(), store.vectors.copy())
    d1 = day0 + dt.timedelta(days=1)
    partial_fit_day(store, d1, [record("c", [0.9, 0.5], d1), record("d", [0, 1], d1)])
    np.testing.assert_array_equal(store.labels[:2], before[0])
    np.testing.assert_array_equal(store.sims[:2], before[1])
    np.testing.assert_array_equal(store.vectors[:2], before[2])
    assert store.passage_count == 4


@pytest.mark.parametrize(
    "case",
    ["past_day", "same_day", "dup_in_batch", "already_committed", "wrong_date", "wrong_dim"],
)
def test_rejections_leave_store_untouched(record, day0, case):
    store = NarrativeStore(2)
    partial_fit_day(store, day0, [record("a", [1, 0], day0)])
    blob = store.to_bytes()
    d1 = day0 + dt.timedelta(days=1)
    batches = {
        "past_day": (day0 - dt.timedelta(days=1), [record("z", [1, 0], day0 - dt.timedelta(days=1))]),
        "same_day": (day0, [record("z", [1, 0], day0)]),
        "dup_in_batch": (d1, [record("z", [1, 0], d1), record("z", [0, 1], d1)]),
        "already_committed": (d1, [record("a", [1, 0], d1)]),
        "wrong_date": (d1, [record("z", [1, 0], day0)]),
        "wrong_dim": (d1, [make_record("z", [1, 0, 0], d1)]),
    }
    day, pts = batches[case]
    with pytest.raises(FitError):
        partial_fit_day(store, day, pts)
    assert store.to_bytes() == blob


def test_input_order_does_not_matter(day0):
    recs, _, _ = planted_points(k=4, per=30, dim=8, days=1, noise=0.2, seed=9)
    records = _records(recs, 8)
    a, b = NarrativeStore(8), NarrativeStore(8)
    partial_fit_day(a, day0, records)
    partial_fit_day(b, day0, list(reversed(records)))
    assert a.to_bytes() == b.to_bytes()


def test_empty_day_commits(day0):
    store = NarrativeStore(4)
    rep = partial_fit_day(store, day0, [])
    assert rep.points_assigned == 0 and rep.iterations_run == 0 and store.committed_days == [day0]


@given(
    st.integers(min_value=1, max_value=25),
    st.integers(min_value=2, max_value=6),
    st.integers(min_value=0, max_value=10_000),
    st.floats(min_value=0.2, max_value=0.9),
)
def test_invariants(n, dim, seed, lam):
    rng = np.random.default_rng(seed)
    day = dt.date(2022, 1, 5)
    pts = [make_record(f"p{i:03d}", rng.normal(size=dim) + 1e-3, day) for i in range(n)]
    store = NarrativeStore(dim)
    rep = partial_fit_day(store, day, pts, FitConfig(lam=lam))
    assert store.passage_count == n
    assert np.all(store.labels >= 0) and np.all(store.labels < store.cluster_count)
    # every cluster is non-empty and at most one was created per pass
    assert np.all(store.member_count > 0) and store.member_count.sum() == n
    assert rep.clusters_created <= rep.iterations_run
    np.testing.assert_allclose(np.linalg.norm(store.centroids, axis=1), 1.0, atol=1e-12)
    if rep.converged:
        # at convergence every point reaches lam with its centroid unless it seeded a cluster
        ok = (store.sims >= lam - 1e-12) | store.seeded
        assert ok.all() or rep.clusters_created > 0


@given(st.integers(min_value=0, max_value=10_000), st.integers(min_value=1, max_value=3))
def test_reference_agreement_planted(seed, days):
    # exact agreement needs no near-ties, so the points carry planted structure
    recs, _, _ = planted_points(k=5, per=12, dim=10, days=days, noise=0.1, seed=seed)
    records = _records(recs, 10)
    store = NarrativeStore(10)
    fit_days(store, records)
    ref_labels, ref_cents = reference_fit([[(r.passage_id, r.vector) for r in d] for d in _by_day(records)])
    assert dict(zip(store.passage_ids, store.labels.tolist())) == ref_labels
    np.testing.assert_allclose(store.centroids, np.array(ref_cents), atol=1e-9, rtol=0)
