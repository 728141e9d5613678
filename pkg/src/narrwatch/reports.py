"""Report tables built from a workspace, and their serialization.

A report is a list of :class:`Table`. Each table is written as
tab-delimited text with ``#`` provenance lines on top, or as JSON lines
whose first record carries the provenance.
"""

from __future__ import annotations

import datetime as dt
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence, TextIO

from . import plots
from .curation import cluster_stats, filter_clusters, label_clusters
from .fingerprints import (
    aggregate_counts,
    build_profiles,
    build_site_graph,
    community_top_narratives,
    corpus_similarity,
    louvain_communities,
)
from .influence import AMPLIFY, ORIGINATE, InfluenceAnalyzer, buckets_in_range
from .pipeline import Workspace
from .watch import (
    FactCheckMatch,
    factcheck_efficacy,
    read_factchecks,
    threshold_sweep,
    trending,
)

LAG_GROUPS = {
    "rank<=10K": buckets_in_range(0, 10_000),
    "10K<rank<=1M": buckets_in_range(10_000, 1_000_000),
    "rank>1M": buckets_in_range(1_000_000, math.inf, include_unranked=True),
}

REPORTS = ("clusters", "labels", "communities", "influence", "lag", "trending", "efficacy", "sweep", "ledger")


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[dict]


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, (list, tuple, set)):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, dt.date):
        return v.isoformat()
    return str(v)


def write_tsv(table: Table, fh: TextIO, provenance: dict):
    fh.write(f"# report={table.name}\n")
    for k in sorted(provenance):
        fh.write(f"# {k}={provenance[k]}\n")
    fh.write("\t".join(table.columns) + "\n")
    for row in table.rows:
        fh.write("\t".join(_fmt(row.get(c)) for c in table.columns) + "\n")


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if isinstance(v, dt.date):
        return v.isoformat()
    if isinstance(v, set):
        return sorted(v)
    return v


def write_jsonl(table: Table, fh: TextIO, provenance: dict):
    fh.write(json.dumps({"report": table.name, "provenance": provenance}, sort_keys=True) + "\n")
    for row in table.rows:
        fh.write(json.dumps({c: _jsonable(row.get(c)) for c in table.columns}, sort_keys=True) + "\n")


def render_text(table: Table, limit: int = 40) -> str:
    """Aligned plain-text table for terminals."""
    rows = table.rows[:limit]
    cells = [[_fmt_short(r.get(c)) for c in table.columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(table.columns)]
    out = io.StringIO()
    out.write(f"[{table.name}] {len(table.rows)} rows\n")
    out.write("  ".join(c.ljust(w) for c, w in zip(table.columns, widths)).rstrip() + "\n")
    for row in cells:
        out.write("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() + "\n")
    if len(table.rows) > limit:
        out.write(f"... {len(table.rows) - limit} more\n")
    return out.getvalue()


def _fmt_short(v):
    if isinstance(v, float) and math.isfinite(v):
        return f"{v:.4g}"
    s = _fmt(v)
    return s if len(s) <= 60 else s[:57] + "..."


def write_tables(tables: Sequence[Table], out_dir: Path, provenance: dict, fmt: str = "tsv") -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in tables:
        path = out_dir / f"{t.name}.{fmt}"
        with open(path, "w") as fh:
            (write_tsv if fmt == "tsv" else write_jsonl)(t, fh, provenance)
        paths.append(path)
    return paths


# -- builders ------------------------------------------------------------------


class ReportBuilder:
    """Computes report tables (and optional figures) from one committed snapshot."""

    def __init__(self, ws: Workspace):
        self.ws = ws
        self.cfg = ws.config
        self.store = ws.load_store()
        self._retained = None
        self._analyzer = None

    @property
    def retained(self) -> list[int]:
        if self._retained is None:
            self._retained = filter_clusters(self.store, self.cfg.curation_config())
        return self._retained

    @property
    def analyzer(self) -> InfluenceAnalyzer:
        if self._analyzer is None:
            self._analyzer = InfluenceAnalyzer.from_store(
                self.store, self.retained, self.ws.rank_buckets(), self.cfg.influence_config()
            )
        return self._analyzer

    def require_cluster(self, k: int):
        if not 0 <= k < self.store.cluster_count:
            raise KeyError(f"unknown cluster {k}")

    def clusters(self) -> list[Table]:
        kept = set(self.retained)
        rows = []
        for rec in self.store.iter_cluster_records():
            k = rec["cluster_id"]
            _, share, _ = cluster_stats(self.store, k)
            rows.append(
                {
                    "cluster_id": k,
                    "created_on": rec["created_on"],
                    "member_count": rec["member_count"],
                    "article_count": rec["article_count"],
                    "domain_count": rec["domain_count"],
                    "top_site_share": share,
                    "retained": k in kept,
                }
            )
        cols = ["cluster_id", "created_on", "member_count", "article_count", "domain_count", "top_site_share", "retained"]
        return [Table("clusters", cols, rows)]

    def labels(self, summarizer=None, summarize: bool = False) -> list[Table]:
        labs = label_clusters(self.store, self.retained, self.cfg.curation_config(), summarizer, summarize)
        rows = [lab.to_record() for lab in labs]
        cols = ["cluster_id", "keywords", "summary", "representative_passage_ids", "summary_fallback"]
        return [Table("labels", cols, rows)]

    def communities(self, figures_dir: Path | None = None) -> list[Table]:
        profiles = build_profiles(self.store, self.retained, self.ws.rank_buckets(), self.cfg.epsilon)
        graph = build_site_graph(profiles, self.cfg.prune_below)
        part = louvain_communities(graph, self.cfg.louvain_resolution, self.cfg.rng_seed)
        edges = Table(
            "community_edges",
            ["domain_a", "domain_b", "weight"],
            [{"domain_a": a, "domain_b": b, "weight": w} for a, b, w in graph.edges],
        )
        partition = Table(
            "community_partition",
            ["domain", "community_id", "rank_bucket"],
            [
                {"domain": p.domain, "community_id": part.membership[p.domain], "rank_bucket": p.rank_bucket}
                for p in profiles
            ],
        )
        tops = community_top_narratives(profiles, part)
        top_rows = [
            {"community_id": c, "rank": i + 1, "cluster_id": k, "articles": n}
            for c, items in tops.items()
            for i, (k, n) in enumerate(items)
        ]
        summary = Table("community_summary", ["modularity", "communities", "sites"], [
            {"modularity": part.modularity, "communities": len(part.communities()), "sites": len(profiles)}
        ])
        if figures_dir is not None:
            plots.community_sizes(part.communities(), figures_dir / "communities.png")
        return [edges, partition, Table("community_narratives", ["community_id", "rank", "cluster_id", "articles"], top_rows), summary]

    INFLUENCE_COLUMNS = [
        "domain", "rank_bucket", "role", "eligible_narratives", "comparison_narratives",
        "weighted_external_delta", "cohens_d", "u_statistic", "p_value", "significant",
        "peak_delta_days", "peak_cohens_d", "peak_p_value", "num_comparisons", "seed",
    ]

    def influence(self, domain: str | None = None, roles=(ORIGINATE, AMPLIFY), figures_dir: Path | None = None) -> tuple[list[Table], list]:
        an = self.analyzer
        if domain is not None and domain not in an.all_domains:
            raise KeyError(f"unknown domain {domain}")
        reports, skipped = [], []
        for role in roles:
            r, s = an.run(role, None if domain is None else [domain])
            reports += r
            skipped += s
        buckets = self.ws.rank_buckets()
        rows = [dict(r.to_record(), rank_bucket=buckets.get(r.domain, "unranked")) for r in reports]
        skip_rows = [
            {"domain": s.domain, "role": s.role, "reason": s.reason, "role_count": s.counts[0], "comparison_count": s.counts[1]}
            for s in skipped
        ]
        if figures_dir is not None and reports:
            plots.influence_scatter(reports, buckets, figures_dir / "influence.png")
        return [
            Table("influence", self.INFLUENCE_COLUMNS, rows),
            Table("influence_skipped", ["domain", "role", "reason", "role_count", "comparison_count"], skip_rows),
        ], skipped

    def lag(self, figures_dir: Path | None = None) -> list[Table]:
        profiles = {name: self.analyzer.lag_profile(b) for name, b in LAG_GROUPS.items()}
        hist_rows = [
            {"group": name, "offset_days": off, "articles": n}
            for name, prof in profiles.items()
            for off, n in prof.histogram.items()
        ]
        summary = [
            {"group": name, "articles": p.total, "before_peak": p.before_peak, "proportion_before": p.proportion_before}
            for name, p in profiles.items()
        ]
        if figures_dir is not None:
            plots.lag_profiles(profiles, figures_dir / "lag.png")
        return [
            Table("lag_histogram", ["group", "offset_days", "articles"], hist_rows),
            Table("lag_summary", ["group", "articles", "before_peak", "proportion_before"], summary),
        ]

    def trending(self, as_of: dt.date | None = None, figures_dir: Path | None = None) -> list[Table]:
        as_of = as_of or self.store.last_day
        if as_of is None:
            raise ValueError("nothing committed yet")
        entries = trending(self.store, as_of, self.retained, self.cfg.min_weekly_volume)
        labels = {r["cluster_id"]: r.get("keywords") for r in self.ws.read_labels()}
        rows = [dict(e.to_record(), as_of=as_of.isoformat(), keywords=labels.get(e.cluster_id)) for e in entries]
        if figures_dir is not None:
            plots.trending_bars(entries, figures_dir / "trending.png")
        cols = ["as_of", "cluster_id", "current_week_count", "previous_week_count", "pct_increase", "is_new", "keywords"]
        return [Table("trending", cols, rows)]

    def factchecks(self):
        return read_factchecks(self.ws.read_factcheck_lines(), self.cfg.dim)

    def efficacy(self, org: str | None = None) -> list[Table]:
        fcs = {fc.factcheck_id: fc for fc in self.factchecks()}
        matches = [FactCheckMatch.from_record(r) for r in self.ws.read_matches()]
        orgs = sorted({fc.org for fc in fcs.values()})
        if org is not None:
            if org not in orgs:
                raise KeyError(f"unknown fact-check organization {org}")
            orgs = [org]
        rows = [factcheck_efficacy(o, matches, fcs, self.analyzer.timelines).to_record() for o in orgs]
        cols = ["org", "narratives_factchecked", "median_articles_prior", "median_days_to_factcheck",
                "median_days_from_peak", "zero_day_factchecks", "pending_matches"]
        return [Table("efficacy", cols, rows)]

    def sweep(self, classifier=None, figures_dir: Path | None = None) -> list[Table]:
        rows = threshold_sweep(
            self.store, self.factchecks(), self.retained, self.analyzer.timelines,
            self.cfg.sweep_thresholds, classifier, self.cfg.workers,
        )
        out = []
        for r in rows:
            rec = {"threshold": r.threshold, "org": r.org, "narratives_matched": r.narratives_matched}
            if r.efficacy is not None:
                e = r.efficacy
                rec.update(narratives_factchecked=e.narratives_factchecked, median_days_to_factcheck=e.median_days_to_factcheck,
                           median_days_from_peak=e.median_days_from_peak, zero_day_factchecks=e.zero_day_factchecks)
            out.append(rec)
        if figures_dir is not None:
            plots.sweep_lines(rows, figures_dir / "sweep.png")
        cols = ["threshold", "org", "narratives_matched", "narratives_factchecked",
                "median_days_to_factcheck", "median_days_from_peak", "zero_day_factchecks"]
        return [Table("sweep", cols, out)]

    def ledger(self) -> list[Table]:
        rows = []
        for e in self.ws.ledger():
            rows.append(dict(e.fit, date=e.date.isoformat(), snapshot_id=e.snapshot_id,
                             config_hash=e.config_hash, retained_clusters=e.retained_clusters))
        cols = ["date", "points_assigned", "clusters_created", "iterations_run", "mean_assignment_similarity",
                "converged", "retained_clusters", "snapshot_id", "config_hash"]
        return [Table("ledger", cols, rows)]

    def corpus_match(self, counts_by_cluster: dict[int, int]) -> float:
        """JSD of an external corpus's narrative counts against all sites pooled."""
        profiles = build_profiles(self.store, self.retained, None, self.cfg.epsilon)
        agg = aggregate_counts(profiles, self.retained)
        ext = [counts_by_cluster.get(k, 0) for k in self.retained]
        return corpus_similarity(ext, agg, self.cfg.epsilon)
