"""Persistent cluster state and its snapshot container.

Snapshot layout (little endian)::

    magic        8 bytes   b"NWSNAP\\x00\\x01"
    version      u16
    dim          u32
    lambda       f64
    clusters     u32
    checksum     32 bytes  sha256 of the payload
    payload_len  u64
    payload      meta_len u64, meta JSON, then raw array blobs

The meta JSON is written with sorted keys and the arrays as raw bytes, so
saving the same store twice gives the same blob.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import struct
import threading
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .embeddings import PassageRecord, unit_rows

FORMAT_VERSION = 1
MAGIC = b"NWSNAP\x00\x01"
_HEADER = struct.Struct("<8sHIdI32sQ")
_U64 = struct.Struct("<Q")


class SnapshotError(ValueError):
    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


@dataclass
class ClusterState:
    cluster_id: int
    resultant: np.ndarray
    centroid: np.ndarray
    member_count: int
    per_domain_articles: dict[str, set[str]]
    per_day_articles: dict[dt.date, int]
    created_on: dt.date

    @property
    def article_count(self) -> int:
        return len(set().union(*self.per_domain_articles.values())) if self.per_domain_articles else 0


class NarrativeStore:
    """Committed clusters plus every committed passage and its assignment.

    Commits replace the column arrays with new objects instead of writing
    into them, so a reader that grabbed :meth:`view` keeps a consistent
    picture while the next day is being fitted.
    """

    def __init__(self, dim: int, lam: float = 0.60):
        self.dim = dim
        self.lam = lam
        self.resultants = np.zeros((0, dim), dtype=np.float64)
        self.member_count = np.zeros(0, dtype=np.int64)
        self.created_on: list[dt.date] = []
        self.per_domain_articles: list[dict[str, set[str]]] = []
        self.per_day_articles: list[dict[dt.date, int]] = []
        self.committed_days: list[dt.date] = []

        self.vectors = np.zeros((0, dim), dtype=np.float64)
        self.labels = np.zeros(0, dtype=np.int64)
        self.sims = np.zeros(0, dtype=np.float64)
        self.seeded = np.zeros(0, dtype=bool)
        self.passage_ids: list[str] = []
        self.article_ids: list[str] = []
        self.domains: list[str] = []
        self.dates: list[dt.date] = []
        self.ordinals: list[int] = []
        self.texts: list[str | None] = []

        self.write_lock = threading.Lock()
        self._centroids: np.ndarray | None = None
        self._passage_index: dict[str, int] | None = None

    # -- read side ---------------------------------------------------------

    @property
    def cluster_count(self) -> int:
        return int(self.resultants.shape[0])

    @property
    def passage_count(self) -> int:
        return len(self.passage_ids)

    @property
    def last_day(self) -> dt.date | None:
        return self.committed_days[-1] if self.committed_days else None

    @property
    def centroids(self) -> np.ndarray:
        if self._centroids is None or self._centroids.shape[0] != self.cluster_count:
            self._centroids = unit_rows(self.resultants)
        return self._centroids

    def cluster(self, k: int) -> ClusterState:
        if not 0 <= k < self.cluster_count:
            raise KeyError(f"unknown cluster {k}")
        return ClusterState(
            cluster_id=k,
            resultant=self.resultants[k],
            centroid=self.centroids[k],
            member_count=int(self.member_count[k]),
            per_domain_articles=self.per_domain_articles[k],
            per_day_articles=self.per_day_articles[k],
            created_on=self.created_on[k],
        )

    def clusters(self) -> Iterator[ClusterState]:
        for k in range(self.cluster_count):
            yield self.cluster(k)

    def members(self, k: int) -> np.ndarray:
        """Row indices of passages assigned to cluster ``k``, in commit order."""
        return np.flatnonzero(self.labels == k)

    def passage_index(self, passage_id: str) -> int:
        if self._passage_index is None or len(self._passage_index) != self.passage_count:
            self._passage_index = {pid: i for i, pid in enumerate(self.passage_ids)}
        return self._passage_index[passage_id]

    def passage(self, row: int) -> PassageRecord:
        return PassageRecord(
            passage_id=self.passage_ids[row],
            article_id=self.article_ids[row],
            domain=self.domains[row],
            published_date=self.dates[row],
            ordinal=self.ordinals[row],
            vector=self.vectors[row],
            text=self.texts[row],
        )

    def article_dates(self) -> dict[str, tuple[str, dt.date]]:
        """article_id -> (domain, published date)."""
        out = {}
        for aid, dom, day in zip(self.article_ids, self.domains, self.dates):
            out.setdefault(aid, (dom, day))
        return out

    def view(self) -> "NarrativeStore":
        """Shallow copy sharing the current (immutable-by-convention) arrays."""
        other = NarrativeStore.__new__(NarrativeStore)
        other.__dict__.update(self.__dict__)
        other.per_domain_articles = [{d: set(a) for d, a in m.items()} for m in self.per_domain_articles]
        other.per_day_articles = [dict(m) for m in self.per_day_articles]
        other.created_on = list(self.created_on)
        other.committed_days = list(self.committed_days)
        for name in ("passage_ids", "article_ids", "domains", "dates", "ordinals", "texts"):
            setattr(other, name, list(getattr(self, name)))
        other.write_lock = threading.Lock()
        return other

    # -- serialization -----------------------------------------------------

    def _meta(self) -> dict:
        return {
            "dim": self.dim,
            "lambda": self.lam,
            "committed_days": [d.isoformat() for d in self.committed_days],
            "clusters": [
                {
                    "created_on": self.created_on[k].isoformat(),
                    "per_domain_articles": {d: sorted(a) for d, a in sorted(self.per_domain_articles[k].items())},
                    "per_day_articles": {d.isoformat(): n for d, n in sorted(self.per_day_articles[k].items())},
                }
                for k in range(self.cluster_count)
            ],
            "passages": {
                "passage_id": self.passage_ids,
                "article_id": self.article_ids,
                "domain": self.domains,
                "published_date": [d.isoformat() for d in self.dates],
                "ordinal": self.ordinals,
                "text": self.texts,
            },
        }

    def _arrays(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("resultants", self.resultants),
            ("member_count", self.member_count),
            ("vectors", self.vectors),
            ("labels", self.labels),
            ("sims", self.sims),
            ("seeded", self.seeded.astype(np.uint8)),
        ]

    def to_bytes(self) -> bytes:
        arrays = self._arrays()
        meta = self._meta()
        meta["arrays"] = [
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)} for name, arr in arrays
        ]
        meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
        parts = [_U64.pack(len(meta_bytes)), meta_bytes]
        parts += [np.ascontiguousarray(arr).tobytes() for _, arr in arrays]
        payload = b"".join(parts)
        header = _HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            self.dim,
            float(self.lam),
            self.cluster_count,
            hashlib.sha256(payload).digest(),
            len(payload),
        )
        return header + payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "NarrativeStore":
        if len(blob) < _HEADER.size:
            raise SnapshotError("format", "blob shorter than header")
        magic, version, dim, lam, count, checksum, plen = _HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise SnapshotError("format", "not a snapshot (bad magic)")
        if version != FORMAT_VERSION:
            raise SnapshotError("version", f"snapshot format {version}, expected {FORMAT_VERSION}")
        payload = blob[_HEADER.size :]
        if len(payload) != plen or hashlib.sha256(payload).digest() != checksum:
            raise SnapshotError("checksum", "payload does not match header checksum")

        (mlen,) = _U64.unpack_from(payload)
        meta = json.loads(payload[_U64.size : _U64.size + mlen])
        offset = _U64.size + mlen
        arrays = {}
        for entry in meta["arrays"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
            arrays[entry["name"]] = np.frombuffer(payload, dtype=dtype, count=int(np.prod(shape)), offset=offset).reshape(shape).copy()
            offset += nbytes

        store = cls(dim, lam)
        store.resultants = arrays["resultants"]
        store.member_count = arrays["member_count"]
        store.vectors = arrays["vectors"]
        store.labels = arrays["labels"]
        store.sims = arrays["sims"]
        store.seeded = arrays["seeded"].astype(bool)
        store.committed_days = [dt.date.fromisoformat(d) for d in meta["committed_days"]]
        for c in meta["clusters"]:
            store.created_on.append(dt.date.fromisoformat(c["created_on"]))
            store.per_domain_articles.append({d: set(a) for d, a in c["per_domain_articles"].items()})
            store.per_day_articles.append({dt.date.fromisoformat(d): n for d, n in c["per_day_articles"].items()})
        p = meta["passages"]
        store.passage_ids = p["passage_id"]
        store.article_ids = p["article_id"]
        store.domains = p["domain"]
        store.dates = [dt.date.fromisoformat(d) for d in p["published_date"]]
        store.ordinals = p["ordinal"]
        store.texts = p["text"]
        if store.cluster_count != count:
            raise SnapshotError("format", "cluster count disagrees with header")
        return store

    def iter_cluster_records(self) -> Iterator[dict]:
        """One JSON-ready record per cluster, for inspection exports."""
        cents = self.centroids
        for k in range(self.cluster_count):
            arts = set().union(*self.per_domain_articles[k].values()) if self.per_domain_articles[k] else set()
            yield {
                "cluster_id": k,
                "created_on": self.created_on[k].isoformat(),
                "member_count": int(self.member_count[k]),
                "article_count": len(arts),
                "domain_count": len(self.per_domain_articles[k]),
                "per_day_articles": {d.isoformat(): n for d, n in sorted(self.per_day_articles[k].items())},
                "centroid": [float(x) for x in cents[k]],
            }


def snapshot_save(store: NarrativeStore) -> bytes:
    return store.to_bytes()


def snapshot_load(blob: bytes) -> NarrativeStore:
    return NarrativeStore.from_bytes(blob)


def snapshot_id(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()[:16]
