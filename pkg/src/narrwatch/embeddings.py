"""Passage embeddings: validation on ingest, the similarity kernel, remote encoding.

All similarities go through :func:`similarity_matrix`. It multiplies
elementwise and reduces along the contiguous last axis, which numpy does
with a fixed pairwise summation per output entry. A given (row, column)
value is therefore the same bits however the rows are chunked or spread
over threads, and ``cosine_similarity(a, b) == cosine_similarity(b, a)``.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import parse_date
from .services import HttpJsonTransport, ServiceError, Transport, call_with_retries, require

logger = logging.getLogger(__name__)

DEFAULT_DIM = 768
NORM_TOLERANCE = 1e-3

# elements per chunk of the (rows x cols x dim) product
_CHUNK_ELEMENTS = 1 << 22


@dataclass
class PassageRecord:
    passage_id: str
    article_id: str
    domain: str
    published_date: dt.date
    ordinal: int
    vector: np.ndarray
    text: str | None = None

    def to_record(self) -> dict:
        rec = {
            "passage_id": self.passage_id,
            "article_id": self.article_id,
            "domain": self.domain,
            "published_date": self.published_date.isoformat(),
            "ordinal": self.ordinal,
            "vector": [float(x) for x in self.vector],
        }
        if self.text is not None:
            rec["text"] = self.text
        return rec


@dataclass
class IngestReport:
    accepted: int = 0
    rejected: int = 0
    reasons: dict[str, int] = field(default_factory=dict)
    renormalized_outside_tolerance: int = 0

    def reject(self, reason: str):
        self.rejected += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1


class EmbeddingRejected(ValueError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def validate_vector(values, dim: int) -> tuple[np.ndarray, bool]:
    """Return the unit-normalized vector and whether its norm was outside tolerance.

    Raises :class:`EmbeddingRejected` with reason ``bad_dimension``,
    ``non_finite`` or ``zero_vector``.
    """
    try:
        vec = np.asarray(values, dtype=np.float64)
    except (TypeError, ValueError):
        raise EmbeddingRejected("non_finite") from None
    if vec.ndim != 1 or vec.shape[0] != dim:
        raise EmbeddingRejected("bad_dimension")
    if not np.all(np.isfinite(vec)):
        raise EmbeddingRejected("non_finite")
    norm = math.sqrt(float(np.sum(vec * vec)))
    if norm == 0.0:
        raise EmbeddingRejected("zero_vector")
    outside = abs(norm - 1.0) > NORM_TOLERANCE
    return vec / norm, outside


def record_from_dict(rec: dict, dim: int) -> tuple[PassageRecord, bool]:
    try:
        vec, outside = validate_vector(rec["vector"], dim)
        pr = PassageRecord(
            passage_id=str(rec["passage_id"]),
            article_id=str(rec["article_id"]),
            domain=str(rec["domain"]).strip().lower(),
            published_date=parse_date(rec["published_date"]),
            ordinal=int(rec.get("ordinal", 0)),
            vector=vec,
            text=rec.get("text"),
        )
    except KeyError:
        raise EmbeddingRejected("missing_field") from None
    except ValueError as exc:
        if isinstance(exc, EmbeddingRejected):
            raise
        raise EmbeddingRejected("bad_field") from None
    if not pr.domain:
        raise EmbeddingRejected("missing_field")
    return pr, outside


class EmbeddingStore:
    """Passage records keyed by passage id. Writes go through one lock."""

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim
        self._records: dict[str, PassageRecord] = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._records)

    def __contains__(self, passage_id: str):
        return passage_id in self._records

    def get(self, passage_id: str) -> PassageRecord | None:
        return self._records.get(passage_id)

    def records(self) -> list[PassageRecord]:
        return [self._records[k] for k in sorted(self._records)]

    def by_day(self) -> dict[dt.date, list[PassageRecord]]:
        out: dict[dt.date, list[PassageRecord]] = {}
        for rec in self.records():
            out.setdefault(rec.published_date, []).append(rec)
        return out

    def ingest(self, records: Iterable[dict], report: IngestReport | None = None) -> IngestReport:
        report = report or IngestReport()
        for raw in records:
            try:
                rec, outside = record_from_dict(raw, self.dim)
            except EmbeddingRejected as exc:
                report.reject(exc.reason)
                continue
            with self._lock:
                if rec.passage_id in self._records:
                    report.reject("duplicate_passage_id")
                    continue
                self._records[rec.passage_id] = rec
            report.accepted += 1
            if outside:
                report.renormalized_outside_tolerance += 1
        if report.renormalized_outside_tolerance:
            logger.warning(
                "%d vectors had norms outside 1 +/- %g and were renormalized",
                report.renormalized_outside_tolerance,
                NORM_TOLERANCE,
            )
        return report


def ingest_embeddings(records: Iterable[dict], dim: int = DEFAULT_DIM) -> tuple[IngestReport, EmbeddingStore]:
    store = EmbeddingStore(dim)
    report = store.ingest(records)
    return report, store


def read_embedding_lines(lines: Iterable[str]) -> Iterable[dict]:
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {lineno}: invalid JSON ({exc.msg})") from None


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors."""
    return float(np.sum(np.asarray(a, dtype=np.float64) * np.asarray(b, dtype=np.float64)))


def _sim_block(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return np.sum(rows[:, None, :] * cols[None, :, :], axis=-1)


def similarity_matrix(rows: np.ndarray, cols: np.ndarray, workers: int = 1) -> np.ndarray:
    """All pairwise dot products, shape ``(len(rows), len(cols))``.

    Bit-identical for any ``workers``.
    """
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    n, m = rows.shape[0], cols.shape[0]
    out = np.empty((n, m), dtype=np.float64)
    if n == 0 or m == 0:
        return out
    step = max(1, _CHUNK_ELEMENTS // max(1, m * rows.shape[1]))
    bounds = [(i, min(n, i + step)) for i in range(0, n, step)]

    def run(span):
        lo, hi = span
        out[lo:hi] = _sim_block(rows[lo:hi], cols)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, bounds))
    else:
        for span in bounds:
            run(span)
    return out


def unit_rows(mat: np.ndarray) -> np.ndarray:
    """Normalize rows to unit length; zero rows stay zero."""
    norms = np.sqrt(np.sum(mat * mat, axis=-1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    return mat / safe


@dataclass
class EmbeddingProvider:
    """Remote encoder: ``{"texts": [...]}`` -> ``{"vectors": [[...], ...]}``."""

    endpoint: str = ""
    timeout: float = 30.0
    retries: int = 2
    dim: int = DEFAULT_DIM
    transport: Transport | None = None

    def send(self, payload: dict) -> dict:
        transport = self.transport or HttpJsonTransport(self.endpoint, self.timeout)
        return call_with_retries(transport, payload, self.retries)


def embed_remote(texts: Sequence[str], provider: EmbeddingProvider) -> list[np.ndarray]:
    if not texts:
        return []
    data = provider.send({"texts": list(texts)})
    vectors = require(data, "vectors", list)
    if len(vectors) != len(texts):
        raise ServiceError(
            "malformed_response", f"provider returned {len(vectors)} vectors for {len(texts)} texts"
        )
    out = []
    for v in vectors:
        try:
            vec, _ = validate_vector(v, provider.dim)
        except EmbeddingRejected as exc:
            raise ServiceError("malformed_response", f"invalid vector ({exc.reason})") from None
        out.append(vec)
    return out
