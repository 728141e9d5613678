"""Data-root layout, the run ledger and the daily fit orchestration.

Layout under ``data_root``::

    staging/passages/<day>.jsonl   validated embedding records awaiting a fit
    staging/segments/<day>.jsonl   segmented passages still needing vectors
    snapshots/<day>.snap           store snapshot after each committed day
    ledger.jsonl                   one line per committed day
    labels.jsonl                   latest narrative labels
    factchecks.jsonl               loaded fact-check corpus
    matches.jsonl                  fact-check matches with verdicts
    ranks.jsonl                    optional {domain, rank} popularity records
"""

from __future__ import annotations

import contextlib
import datetime as dt
import fcntl
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from . import __version__
from .clusterer import FitReport, partial_fit_day
from .config import PipelineConfig
from .corpus import prepare_articles, read_articles
from .curation import filter_clusters
from .embeddings import (
    EmbeddingProvider,
    EmbeddingStore,
    IngestReport,
    PassageRecord,
    embed_remote,
    read_embedding_lines,
    record_from_dict,
)
from .fingerprints import rank_bucket
from .store import NarrativeStore, snapshot_id, snapshot_load, snapshot_save

logger = logging.getLogger(__name__)


class PipelineError(ValueError):
    pass


class AlreadyCommitted(PipelineError):
    pass


@dataclass
class LedgerEntry:
    date: dt.date
    fit: dict
    snapshot_id: str
    snapshot_file: str
    config_hash: str
    retained_clusters: int

    def to_record(self) -> dict:
        return {
            "date": self.date.isoformat(),
            "fit": self.fit,
            "snapshot_id": self.snapshot_id,
            "snapshot_file": self.snapshot_file,
            "config_hash": self.config_hash,
            "retained_clusters": self.retained_clusters,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "LedgerEntry":
        return cls(
            dt.date.fromisoformat(rec["date"]),
            rec["fit"],
            rec["snapshot_id"],
            rec["snapshot_file"],
            rec["config_hash"],
            rec.get("retained_clusters", 0),
        )


def _write_jsonl(path: Path, records: Iterable[dict]):
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _read_jsonl(path: Path) -> Iterator[dict]:
    if not path.exists():
        return
    with open(path) as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


class Workspace:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.root = Path(config.data_root)

    # paths
    @property
    def passages_dir(self) -> Path:
        return self.root / "staging" / "passages"

    @property
    def segments_dir(self) -> Path:
        return self.root / "staging" / "segments"

    @property
    def snapshots_dir(self) -> Path:
        return self.root / "snapshots"

    @property
    def ledger_path(self) -> Path:
        return self.root / "ledger.jsonl"

    @property
    def labels_path(self) -> Path:
        return self.root / "labels.jsonl"

    @property
    def factchecks_path(self) -> Path:
        return self.root / "factchecks.jsonl"

    @property
    def matches_path(self) -> Path:
        return self.root / "matches.jsonl"

    def init(self):
        for d in (self.passages_dir, self.segments_dir, self.snapshots_dir):
            d.mkdir(parents=True, exist_ok=True)

    @contextlib.contextmanager
    def lock(self):
        """Exclusive lock on the store for the duration of a write."""
        self.init()
        with open(self.root / ".lock", "w") as fh:
            try:
                fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
            except BlockingIOError:
                raise PipelineError("another process holds the store lock") from None
            try:
                yield
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)

    # ledger and snapshots
    def ledger(self) -> list[LedgerEntry]:
        return [LedgerEntry.from_record(r) for r in _read_jsonl(self.ledger_path)]

    def head(self) -> LedgerEntry | None:
        entries = self.ledger()
        return entries[-1] if entries else None

    def load_store(self) -> NarrativeStore:
        entry = self.head()
        if entry is None:
            return NarrativeStore(self.config.dim, self.config.lam)
        blob = (self.snapshots_dir / entry.snapshot_file).read_bytes()
        store = snapshot_load(blob)
        if store.dim != self.config.dim:
            raise PipelineError(f"snapshot dimension {store.dim} != configured {self.config.dim}")
        return store

    def head_snapshot_id(self) -> str:
        entry = self.head()
        return entry.snapshot_id if entry else "empty"

    def provenance(self) -> dict:
        return {
            "config_hash": self.config.hash(),
            "snapshot_id": self.head_snapshot_id(),
            "code_version": __version__,
        }

    # ingest
    def _stage(self, directory: Path, records_by_day: dict[dt.date, list[dict]]):
        directory.mkdir(parents=True, exist_ok=True)
        for day, recs in sorted(records_by_day.items()):
            path = directory / f"{day.isoformat()}.jsonl"
            existing = {r["passage_id"]: r for r in _read_jsonl(path)}
            for r in recs:
                existing.setdefault(r["passage_id"], r)
            _write_jsonl(path, (existing[k] for k in sorted(existing)))

    def staged_ids(self) -> set[str]:
        ids = set()
        if self.passages_dir.exists():
            for path in self.passages_dir.glob("*.jsonl"):
                ids.update(r["passage_id"] for r in _read_jsonl(path))
        return ids

    def ingest_embeddings(self, lines: Iterable[str]) -> IngestReport:
        """Validate embedding records and stage them by publication day."""
        self.init()
        committed = set(self.load_store().passage_ids) | self.staged_ids()
        store = EmbeddingStore(self.config.dim)
        report = IngestReport()
        fresh = []
        for raw in read_embedding_lines(lines):
            pid = str(raw.get("passage_id", ""))
            if pid and pid in committed:
                report.reject("duplicate_passage_id")
                continue
            fresh.append(raw)
        store.ingest(fresh, report)
        window = self.config.window
        by_day: dict[dt.date, list[dict]] = {}
        for rec in store.records():
            if rec.published_date not in window:
                report.accepted -= 1
                report.reject("out_of_window")
                continue
            by_day.setdefault(rec.published_date, []).append(rec.to_record())
        head = self.head()
        for day in list(by_day):
            if head is not None and day <= head.date:
                n = len(by_day.pop(day))
                report.accepted -= n
                for _ in range(n):
                    report.reject("day_already_committed")
        self._stage(self.passages_dir, by_day)
        return report

    def ingest_articles(self, lines: Iterable[str], provider: EmbeddingProvider | None = None) -> dict:
        """Admit and segment articles; embed them when a provider is given.

        Without a provider the segments are staged for an upstream encoder.
        """
        self.init()
        cfg = self.config
        admitted, rejected = prepare_articles(read_articles(lines), cfg.window, cfg.max_tokens, cfg.include_title)
        plain_by_day: dict[dt.date, list[dict]] = {}
        for art, passages in admitted:
            for p in passages:
                plain_by_day.setdefault(art.published_date, []).append(
                    {
                        "passage_id": p.passage_id,
                        "article_id": art.article_id,
                        "domain": art.domain,
                        "published_date": art.published_date.isoformat(),
                        "ordinal": p.ordinal,
                        "text": p.text,
                    }
                )
        summary = {
            "articles_admitted": len(admitted),
            "articles_rejected": rejected,
            "passages": sum(len(v) for v in plain_by_day.values()),
        }
        if provider is None:
            self._stage(self.segments_dir, plain_by_day)
            summary["staged"] = "segments"
            return summary
        embedded = []
        for day, recs in sorted(plain_by_day.items()):
            vecs = embed_remote([r["text"] for r in recs], provider)
            for r, v in zip(recs, vecs):
                embedded.append(json.dumps(dict(r, vector=[float(x) for x in v])))
        report = self.ingest_embeddings(embedded)
        summary["staged"] = "passages"
        summary["embeddings"] = report.__dict__
        return summary

    def staged_passages(self, day: dt.date) -> list[PassageRecord]:
        path = self.passages_dir / f"{day.isoformat()}.jsonl"
        out = []
        for rec in _read_jsonl(path):
            pr, _ = record_from_dict(rec, self.config.dim)
            out.append(pr)
        return out

    def staged_days(self) -> list[dt.date]:
        if not self.passages_dir.exists():
            return []
        return sorted(dt.date.fromisoformat(p.stem) for p in self.passages_dir.glob("*.jsonl"))

    # the daily step
    def run_daily(self, day: dt.date) -> LedgerEntry:
        """ingest staged passages -> fit -> curation refresh -> snapshot -> ledger.

        Nothing is appended to the ledger unless every stage succeeds.
        """
        with self.lock():
            if day not in self.config.window:
                raise PipelineError(f"{day} is outside the study window")
            head = self.head()
            if head is not None and day <= head.date:
                if any(e.date == day for e in self.ledger()):
                    raise AlreadyCommitted(f"{day} is already committed")
                raise PipelineError(f"{day} precedes the last committed day {head.date}")
            # no silent gaps: every day after the first is committed in turn
            if head is not None and day != head.date + dt.timedelta(days=1):
                raise PipelineError(f"{head.date + dt.timedelta(days=1)} must be committed before {day}")
            store = self.load_store()
            points = self.staged_passages(day)
            if not points:
                logger.warning("no staged passages for %s; committing an empty day", day)
            report: FitReport = partial_fit_day(store, day, points, self.config.fit_config())
            retained = filter_clusters(store, self.config.curation_config())
            blob = snapshot_save(store)
            fname = f"{day.isoformat()}.snap"
            tmp = self.snapshots_dir / (fname + ".tmp")
            tmp.write_bytes(blob)
            os.replace(tmp, self.snapshots_dir / fname)
            entry = LedgerEntry(day, report.to_record(), snapshot_id(blob), fname, self.config.hash(), len(retained))
            with open(self.ledger_path, "a") as fh:
                fh.write(json.dumps(entry.to_record(), sort_keys=True) + "\n")
            return entry

    def run_range(self, start: dt.date, end: dt.date) -> list[LedgerEntry]:
        out = []
        day = start
        while day <= end:
            out.append(self.run_daily(day))
            day += dt.timedelta(days=1)
        return out

    # side tables
    def rank_buckets(self) -> dict[str, int | str]:
        path = Path(self.config.ranks_path) if self.config.ranks_path else self.root / "ranks.jsonl"
        out = {}
        for rec in _read_jsonl(path):
            rank = rec.get("rank")
            out[str(rec["domain"]).lower()] = rank_bucket(None if rank is None else float(rank))
        return out

    def write_labels(self, records: Iterable[dict]):
        _write_jsonl(self.labels_path, records)

    def read_labels(self) -> list[dict]:
        return list(_read_jsonl(self.labels_path))

    def write_factchecks(self, records: Iterable[dict]):
        _write_jsonl(self.factchecks_path, records)

    def read_factcheck_lines(self) -> list[str]:
        if not self.factchecks_path.exists():
            raise PipelineError("no fact-check corpus loaded; run `factcheck load` first")
        return self.factchecks_path.read_text().splitlines()

    def write_matches(self, records: Iterable[dict]):
        _write_jsonl(self.matches_path, records)

    def read_matches(self) -> list[dict]:
        if not self.matches_path.exists():
            raise PipelineError("no fact-check matches; run `factcheck match` first")
        return list(_read_jsonl(self.matches_path))
