"""Daily incremental DP-Means on the unit sphere with delayed cluster creation.

Each day's passages are fitted against the clusters carried over from
earlier days. One assignment pass maps every point to its most similar
centroid; if the worst-served point is below the similarity threshold it
alone seeds a new cluster. Centroids are then recomputed as the normalized
sum of the historical resultant and the day's current members, and the
loop repeats until nothing moves. Earlier days' assignments are frozen;
only the resultants absorb new mass.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embeddings import PassageRecord, similarity_matrix, unit_rows
from .store import NarrativeStore

logger = logging.getLogger(__name__)

UNASSIGNED = -1


@dataclass
class FitConfig:
    lam: float = 0.60
    max_iterations: int = 50
    centroid_shift_tol: float = 1e-4
    max_new_clusters_per_day: int | None = None
    workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lambda must lie in (0, 1), got {self.lam}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class FitReport:
    day: dt.date
    points_assigned: int
    clusters_created: int
    iterations_run: int
    mean_assignment_similarity: float
    converged: bool = True

    def to_record(self) -> dict:
        return {
            "day": self.day.isoformat(),
            "points_assigned": self.points_assigned,
            "clusters_created": self.clusters_created,
            "iterations_run": self.iterations_run,
            "mean_assignment_similarity": self.mean_assignment_similarity,
            "converged": self.converged,
        }


class FitError(ValueError):
    pass


def assign_batch(
    points: np.ndarray, centroids: np.ndarray, workers: int = 1
) -> tuple[np.ndarray, np.ndarray, int | None]:
    """Map each point to its most similar centroid.

    Returns ``(labels, best_sims, worst)``. Ties go to the lowest cluster
    id; ``worst`` is the index of the point with the lowest best similarity
    (lowest index on ties), or None for no points. With no centroids every
    label is ``UNASSIGNED`` with similarity ``-inf``.
    """
    n = points.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0), None
    if centroids.shape[0] == 0:
        return np.full(n, UNASSIGNED, dtype=np.int64), np.full(n, -np.inf), 0
    sims = similarity_matrix(points, centroids, workers=workers)
    labels = np.argmax(sims, axis=1).astype(np.int64)
    best = sims[np.arange(n), labels]
    worst = int(np.argmin(best))
    return labels, best, worst


def converged(
    prev_centroids: np.ndarray,
    next_centroids: np.ndarray,
    assignments_changed: bool,
    created: bool,
    tol: float = 1e-4,
) -> bool:
    if created or assignments_changed:
        return False
    if prev_centroids.shape != next_centroids.shape:
        return False
    if prev_centroids.shape[0] == 0:
        return True
    shift = 1.0 - np.sum(prev_centroids * next_centroids, axis=-1)
    return float(np.max(shift)) <= tol


def _recompute(hist: np.ndarray, points: np.ndarray, labels: np.ndarray, fallback: np.ndarray):
    res = hist.copy()
    mask = labels != UNASSIGNED
    np.add.at(res, labels[mask], points[mask])
    cents = unit_rows(res)
    empty = ~np.any(res != 0.0, axis=1)
    if np.any(empty):
        cents[empty] = fallback[empty]
    return res, cents


def fit_day_arrays(
    hist_resultants: np.ndarray,
    points: np.ndarray,
    config: FitConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[int], int, bool]:
    """Run the within-day loop on raw arrays.

    ``points`` must already be in canonical (passage id) order. Returns
    ``(labels, resultants, centroids, seeds, iterations, converged)`` where
    ``seeds[j]`` is the point that created cluster ``K0 + j``.
    """
    k0 = hist_resultants.shape[0]
    res = hist_resultants.copy()
    cents = unit_rows(res)
    labels = None
    seeds: list[int] = []
    cap = config.max_new_clusters_per_day
    it = 0
    done = False
    if points.shape[0] == 0:
        return np.zeros(0, dtype=np.int64), res, cents, seeds, 0, True
    while it < config.max_iterations:
        it += 1
        new_labels, best, worst = assign_batch(points, cents, config.workers)
        created = False
        if worst is not None and best[worst] < config.lam and (cap is None or len(seeds) < cap):
            seeds.append(worst)
            new_labels[worst] = k0 + len(seeds) - 1
            res = np.vstack([res, np.zeros((1, res.shape[1]))])
            cents = np.vstack([cents, points[worst][None, :]])
            created = True
        changed = labels is None or labels.shape != new_labels.shape or bool(np.any(labels != new_labels))
        labels = new_labels
        hist = np.vstack([hist_resultants, np.zeros((len(seeds), res.shape[1]))])
        res, next_cents = _recompute(hist, points, labels, cents)
        done = converged(cents, next_cents, changed, created, config.centroid_shift_tol)
        cents = next_cents
        if done:
            break
    if labels is None:
        labels = np.zeros(0, dtype=np.int64)
    if np.any(labels == UNASSIGNED):
        raise FitError("points left unassigned: no clusters exist and creation is capped")
    return labels, res, cents, seeds, it, done


def partial_fit_day(
    store: NarrativeStore,
    day: dt.date,
    points: Sequence[PassageRecord],
    config: FitConfig | None = None,
) -> FitReport:
    """Fit one day's passages into ``store`` and commit atomically.

    On any error the store is left untouched.
    """
    config = config or FitConfig()
    pts = sorted(points, key=lambda p: p.passage_id)
    for p in pts:
        if p.published_date != day:
            raise FitError(f"passage {p.passage_id} is dated {p.published_date}, fitting {day}")
        if p.vector.shape != (store.dim,):
            raise FitError(f"passage {p.passage_id} has dimension {p.vector.shape}, store has {store.dim}")
    if store.last_day is not None and day <= store.last_day:
        raise FitError(f"day {day} is not after last committed day {store.last_day}")
    ids = [p.passage_id for p in pts]
    if len(set(ids)) != len(ids):
        raise FitError("duplicate passage ids within the day")
    known = set(store.passage_ids)
    clash = [pid for pid in ids if pid in known]
    if clash:
        raise FitError(f"passage {clash[0]} is already committed")

    X = np.array([p.vector for p in pts], dtype=np.float64).reshape(len(pts), store.dim)
    labels, res, cents, seeds, iterations, done = fit_day_arrays(store.resultants, X, config)
    if not done:
        logger.warning("fit for %s stopped at max_iterations=%d", day, config.max_iterations)

    k0 = store.cluster_count
    # a seeded cluster can lose every member in later passes; it is not committed
    sizes = np.bincount(labels, minlength=res.shape[0]) if len(labels) else np.zeros(res.shape[0], dtype=np.int64)
    keep = [k0 + j for j in range(len(seeds)) if sizes[k0 + j] > 0]
    remap = np.arange(res.shape[0])
    for new_id, old_id in enumerate(keep, start=k0):
        remap[old_id] = new_id
    labels = remap[labels] if len(labels) else labels
    keep_rows = list(range(k0)) + keep
    res = res[keep_rows]
    cents = cents[keep_rows]
    seed_points = {seeds[old - k0] for old in keep}

    if len(labels):
        final_sims = np.sum(X * cents[labels], axis=-1)
    else:
        final_sims = np.zeros(0)
    seeded = np.zeros(len(pts), dtype=bool)
    for i in seed_points:
        seeded[i] = True

    with store.write_lock:
        _commit(store, day, pts, X, labels, res, final_sims, seeded, len(keep), config.lam)

    report = FitReport(
        day=day,
        points_assigned=len(pts),
        clusters_created=len(keep),
        iterations_run=iterations,
        mean_assignment_similarity=float(np.mean(final_sims)) if len(pts) else 0.0,
        converged=done,
    )
    logger.info(
        "fit %s: %d points, %d new clusters (%d total), %d iterations",
        day, report.points_assigned, report.clusters_created, store.cluster_count, iterations,
    )
    return report


def _commit(store, day, pts, X, labels, res, sims, seeded, n_new, lam):
    counts = np.bincount(labels, minlength=res.shape[0]).astype(np.int64) if len(labels) else np.zeros(res.shape[0], dtype=np.int64)
    member_count = np.concatenate([store.member_count, np.zeros(n_new, dtype=np.int64)]) + counts

    per_domain = [{d: set(a) for d, a in m.items()} for m in store.per_domain_articles]
    per_day = [dict(m) for m in store.per_day_articles]
    per_domain += [{} for _ in range(n_new)]
    per_day += [{} for _ in range(n_new)]
    seen_articles = [set().union(*m.values()) if m else set() for m in per_domain]
    fresh: dict[int, set[str]] = {}
    for p, k in zip(pts, labels.tolist()):
        per_domain[k].setdefault(p.domain, set()).add(p.article_id)
        if p.article_id not in seen_articles[k]:
            fresh.setdefault(k, set()).add(p.article_id)
    for k, arts in fresh.items():
        per_day[k][day] = per_day[k].get(day, 0) + len(arts)

    store.resultants = res
    store.member_count = member_count
    store.created_on = store.created_on + [day] * n_new
    store.per_domain_articles = per_domain
    store.per_day_articles = per_day
    store.vectors = np.vstack([store.vectors, X]) if len(pts) else store.vectors
    store.labels = np.concatenate([store.labels, labels.astype(np.int64)])
    store.sims = np.concatenate([store.sims, sims])
    store.seeded = np.concatenate([store.seeded, seeded])
    store.passage_ids = store.passage_ids + [p.passage_id for p in pts]
    store.article_ids = store.article_ids + [p.article_id for p in pts]
    store.domains = store.domains + [p.domain for p in pts]
    store.dates = store.dates + [p.published_date for p in pts]
    store.ordinals = store.ordinals + [p.ordinal for p in pts]
    store.texts = store.texts + [p.text for p in pts]
    store.committed_days = store.committed_days + [day]
    store.lam = float(lam)
    store._centroids = None
    store._passage_index = None


def fit_days(
    store: NarrativeStore,
    records: Sequence[PassageRecord],
    config: FitConfig | None = None,
) -> list[FitReport]:
    """Fit every day present in ``records`` in date order."""
    by_day: dict[dt.date, list[PassageRecord]] = {}
    for r in records:
        by_day.setdefault(r.published_date, []).append(r)
    return [partial_fit_day(store, d, by_day[d], config) for d in sorted(by_day)]
