from __future__ import annotations

import datetime as dt
import struct

import numpy as np
import pytest

from narrwatch.clusterer import fit_days
from narrwatch.embeddings import record_from_dict
from narrwatch.store import NarrativeStore, SnapshotError, snapshot_id, snapshot_load, snapshot_save

from synth import planted_points


@pytest.fixture(scope="module")
def fitted():
    recs, _, _ = planted_points(k=4, per=25, dim=8, days=3, noise=0.1, seed=2)
    store = NarrativeStore(8)
    fit_days(store, [record_from_dict(r, 8)[0] for r in recs])
    return store


def test_round_trip_is_exact(fitted):
    blob = snapshot_save(fitted)
    back = snapshot_load(blob)
    assert snapshot_save(back) == blob
    assert back.passage_ids == fitted.passage_ids
    assert np.array_equal(back.resultants, fitted.resultants)
    assert back.per_domain_articles == fitted.per_domain_articles
    assert back.per_day_articles == fitted.per_day_articles
    assert back.last_day == fitted.last_day
    assert list(back.iter_cluster_records()) == list(fitted.iter_cluster_records())
    assert snapshot_id(blob) == snapshot_id(snapshot_save(back))


def test_empty_store_round_trip():
    s = NarrativeStore(5, 0.7)
    back = snapshot_load(snapshot_save(s))
    assert back.dim == 5 and back.lam == 0.7 and back.cluster_count == 0 and back.last_day is None


def test_corruption_is_detected(fitted):
    blob = bytearray(snapshot_save(fitted))
    blob[-5] ^= 0xFF
    with pytest.raises(SnapshotError) as ei:
        snapshot_load(bytes(blob))
    assert ei.value.kind == "checksum"


def test_bad_magic_and_version(fitted):
    blob = snapshot_save(fitted)
    with pytest.raises(SnapshotError) as ei:
        snapshot_load(b"garbage!" + blob[8:])
    assert ei.value.kind == "format"
    with pytest.raises(SnapshotError) as ei:
        snapshot_load(blob[:8] + struct.pack("<H", 99) + blob[10:])
    assert ei.value.kind == "version"
    with pytest.raises(SnapshotError):
        snapshot_load(blob[:20])


def test_view_is_isolated(fitted):
    v = fitted.view()
    day = fitted.last_day + dt.timedelta(days=1)
    from narrwatch.clusterer import partial_fit_day
    from narrwatch.embeddings import PassageRecord

    before = snapshot_save(fitted)
    partial_fit_day(v, day, [PassageRecord("new:0", "new", "z.example", day, 0, np.eye(8)[0], None)])
    assert snapshot_save(fitted) == before
    assert v.passage_count == fitted.passage_count + 1


def test_cluster_accessors(fitted):
    total = sum(fitted.cluster(k).member_count for k in range(fitted.cluster_count))
    assert total == fitted.passage_count
    for k in range(fitted.cluster_count):
        assert len(fitted.members(k)) == fitted.cluster(k).member_count
    pid = fitted.passage_ids[7]
    assert fitted.passage(fitted.passage_index(pid)).passage_id == pid
