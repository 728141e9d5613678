"""Command line interface.

Machine-readable output (tab-delimited by default, ``--format jsonl`` for
JSON lines) goes to stdout; a human-readable table goes to stderr unless
``-q``. Exit codes: 0 ok, 1 usage, 2 data error, 3 external service failure.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import shutil
import sys
from pathlib import Path

from . import __version__
from .clusterer import FitError
from .config import ConfigError, PipelineConfig, load_config
from .curation import Summarizer
from .embeddings import EmbeddingProvider, validate_vector, EmbeddingRejected
from .pipeline import PipelineError, Workspace
from .reports import REPORTS, ReportBuilder, Table, render_text, write_jsonl, write_tables, write_tsv
from .services import ServiceError
from .store import SnapshotError, snapshot_id, snapshot_load
from .watch import (
    ClaimClassifier,
    FactCheckMatch,
    QueryPassage,
    classify_refutations,
    match_factchecks,
    match_single_best,
    read_factchecks,
)

logger = logging.getLogger("narrwatch")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SERVICE = 0, 1, 2, 3


FIGURES = {name: f"{name}.png" for name in ("communities", "influence", "lag", "trending", "sweep")}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _date(s: str) -> dt.date:
    try:
        return dt.date.fromisoformat(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad date {s!r}, expected YYYY-MM-DD") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat YAML config file")
    common.add_argument("--data-root", help="workspace directory (env NARRWATCH_DATA_ROOT wins)")
    common.add_argument("--seed", type=int, help="rng seed override")
    common.add_argument("--format", choices=("tsv", "jsonl"), default="tsv")
    common.add_argument("-q", "--quiet", action="store_true", help="no human-readable table on stderr")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="narrwatch", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[common], help="stage articles or embeddings")
    s.add_argument("kind", choices=("articles", "embeddings"))
    s.add_argument("path", help="JSON-lines file, '-' for stdin")
    s.add_argument("--embed", action="store_true", help="encode article passages with the configured provider")

    s = sub.add_parser("fit", parents=[common], help="fit one day or a range of days")
    s.add_argument("--date", type=_date)
    s.add_argument("--start", type=_date)
    s.add_argument("--end", type=_date)

    s = sub.add_parser("curate", parents=[common], help="filter clusters and label the survivors")
    s.add_argument("--summarize", action="store_true", help="also produce summaries (summarizer or fallback)")

    sub.add_parser("communities", parents=[common], help="site communities from narrative fingerprints")

    s = sub.add_parser("influence", parents=[common], help="origination/amplification effects")
    s.add_argument("--domain")
    s.add_argument("--role", choices=("originate", "amplify", "both"), default="both")

    s = sub.add_parser("trending", parents=[common], help="week-over-week narrative growth")
    s.add_argument("--as-of", type=_date)

    s = sub.add_parser("factcheck", parents=[common], help="fact-check corpus operations")
    s.add_argument("action", choices=("load", "match", "classify", "efficacy", "sweep"))
    s.add_argument("path", nargs="?", help="fact-check JSON-lines file (load)")
    s.add_argument("--threshold", type=float)
    s.add_argument("--org")

    s = sub.add_parser("match-corpus", parents=[common], help="match external posts to narratives")
    s.add_argument("path", help="JSON-lines posts {passage_id, vector, text?}")
    s.add_argument("--threshold", type=float)

    s = sub.add_parser("export", parents=[common], help="write a report (tables plus figures) to a directory")
    s.add_argument("--report", required=True, choices=REPORTS)
    s.add_argument("--out", default=None, help="output directory (default <data-root>/reports)")
    s.add_argument("--as-of", type=_date)
    s.add_argument("--no-figures", action="store_true")

    s = sub.add_parser("snapshot", parents=[common], help="inspect snapshots")
    s.add_argument("action", choices=("save", "load", "list"))
    s.add_argument("path", nargs="?")
    s.add_argument("--jsonl", action="store_true", help="save: write cluster records as JSON lines instead of the binary")
    return p


def _emit(tables, args, ws: Workspace):
    prov = ws.provenance()
    for t in tables:
        (write_jsonl if args.format == "jsonl" else write_tsv)(t, sys.stdout, prov)
        if not args.quiet:
            sys.stderr.write(render_text(t))


def _open_lines(path: str):
    if path == "-":
        return sys.stdin.read().splitlines()
    try:
        return Path(path).read_text().splitlines()
    except OSError as exc:
        raise PipelineError(f"cannot read {path}: {exc}") from None


def _provider(cfg: PipelineConfig) -> EmbeddingProvider:
    if not cfg.embedding_endpoint:
        raise UsageError("--embed needs embedding_endpoint in the config")
    return EmbeddingProvider(cfg.embedding_endpoint, cfg.service_timeout, cfg.service_retries, cfg.dim)


def _summarizer(cfg):
    return Summarizer(cfg.summarizer_endpoint, cfg.service_timeout, cfg.service_retries) if cfg.summarizer_endpoint else None


def _classifier(cfg):
    return ClaimClassifier(cfg.classifier_endpoint, cfg.service_timeout, cfg.service_retries) if cfg.classifier_endpoint else None


def cmd_ingest(args, ws):
    lines = _open_lines(args.path)
    if args.kind == "embeddings":
        rep = ws.ingest_embeddings(lines)
        row = {"accepted": rep.accepted, "rejected": rep.rejected,
               "reasons": json.dumps(rep.reasons, sort_keys=True), "renormalized": rep.renormalized_outside_tolerance}
    else:
        summ = ws.ingest_articles(lines, _provider(ws.config) if args.embed else None)
        row = {"accepted": summ["articles_admitted"], "rejected": sum(summ["articles_rejected"].values()),
               "reasons": json.dumps(summ["articles_rejected"], sort_keys=True), "passages": summ["passages"],
               "staged": summ["staged"]}
    _emit([Table("ingest", list(row), [row])], args, ws)


def cmd_fit(args, ws):
    if args.date and (args.start or args.end):
        raise UsageError("use either --date or --start/--end")
    if args.date:
        entries = [ws.run_daily(args.date)]
    elif args.start and args.end:
        entries = ws.run_range(args.start, args.end)
    else:
        raise UsageError("fit needs --date or both --start and --end")
    rows = [dict(e.fit, snapshot_id=e.snapshot_id, retained_clusters=e.retained_clusters) for e in entries]
    cols = ["day", "points_assigned", "clusters_created", "iterations_run", "mean_assignment_similarity",
            "converged", "retained_clusters", "snapshot_id"]
    _emit([Table("fit", cols, rows)], args, ws)


def cmd_curate(args, ws):
    rb = ReportBuilder(ws)
    tables = rb.labels(_summarizer(ws.config), summarize=args.summarize)
    ws.write_labels(tables[0].rows)
    _emit(tables, args, ws)


def cmd_communities(args, ws):
    _emit(ReportBuilder(ws).communities(), args, ws)


def cmd_influence(args, ws):
    roles = ("originate", "amplify") if args.role == "both" else (args.role,)
    tables, skipped = ReportBuilder(ws).influence(args.domain, roles)
    for s in skipped:
        sys.stderr.write(f"skipped {s}\n")
    _emit(tables, args, ws)


def cmd_trending(args, ws):
    _emit(ReportBuilder(ws).trending(args.as_of), args, ws)


def cmd_factcheck(args, ws):
    cfg = ws.config
    if args.action == "load":
        if not args.path:
            raise UsageError("factcheck load needs a path")
        lines = _open_lines(args.path)
        fcs = read_factchecks(lines, cfg.dim)
        ws.write_factchecks(json.loads(line) for line in lines if line.strip())
        row = {"factchecks": len(fcs), "passages": sum(len(f.passages) for f in fcs),
               "orgs": ",".join(sorted({f.org for f in fcs}))}
        _emit([Table("factcheck_load", list(row), [row])], args, ws)
        return
    rb = ReportBuilder(ws)
    if args.action == "match":
        th = cfg.match_threshold if args.threshold is None else args.threshold
        matches = match_factchecks(rb.store, rb.factchecks(), rb.retained, th, cfg.workers)
        ws.write_matches(m.to_record() for m in matches)
        rows = [{"factcheck_id": m.factcheck_id, "cluster_id": m.cluster_id,
                 "matched_passages": len(m.matched_article_passages), "verdict": m.verdict} for m in matches]
        _emit([Table("factcheck_matches", ["factcheck_id", "cluster_id", "matched_passages", "verdict"], rows)], args, ws)
    elif args.action == "classify":
        matches = [FactCheckMatch.from_record(r) for r in ws.read_matches()]
        fc_text = {q.passage_id: q.text or "" for fc in rb.factchecks() for q in fc.passages}
        art_text = lambda pid: rb.store.texts[rb.store.passage_index(pid)] or ""
        pending = classify_refutations(matches, _classifier(cfg), art_text, fc_text.__getitem__)
        ws.write_matches(m.to_record() for m in matches)
        rows = [{"factcheck_id": m.factcheck_id, "cluster_id": m.cluster_id, "verdict": m.verdict,
                 "verdict_score": m.verdict_score} for m in matches]
        _emit([Table("factcheck_verdicts", ["factcheck_id", "cluster_id", "verdict", "verdict_score"], rows)], args, ws)
        if pending:
            sys.stderr.write(f"{pending} matches left pending (classifier unavailable)\n")
            if pending == len(matches) and cfg.classifier_endpoint:
                raise ServiceError("unreachable", "classifier failed for every match")
    elif args.action == "efficacy":
        _emit(rb.efficacy(args.org), args, ws)
    elif args.action == "sweep":
        _emit(rb.sweep(_classifier(cfg)), args, ws)


def cmd_match_corpus(args, ws):
    cfg = ws.config
    rb = ReportBuilder(ws)
    queries = []
    for i, line in enumerate(_open_lines(args.path), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        try:
            vec, _ = validate_vector(rec["vector"], cfg.dim)
        except (KeyError, EmbeddingRejected) as exc:
            raise PipelineError(f"line {i}: invalid post vector") from exc
        queries.append(QueryPassage(str(rec.get("passage_id") or rec.get("post_id") or i), vec, rec.get("text")))
    th = cfg.match_threshold if args.threshold is None else args.threshold
    hits = match_single_best(rb.store, queries, rb.retained, th, cfg.workers)
    rows = [{"passage_id": q.passage_id, "cluster_id": next(iter(hits[q.passage_id]), None)} for q in queries]
    counts: dict[int, int] = {}
    for r in rows:
        if r["cluster_id"] is not None:
            counts[r["cluster_id"]] = counts.get(r["cluster_id"], 0) + 1
    matched = sum(counts.values())
    summary = {"posts": len(queries), "matched": matched,
               "matched_share": matched / len(queries) if queries else 0.0,
               "jsd_vs_sites": rb.corpus_match(counts) if rb.retained else None}
    _emit([Table("corpus_matches", ["passage_id", "cluster_id"], rows),
           Table("corpus_summary", list(summary), [summary])], args, ws)


def cmd_export(args, ws):
    out = Path(args.out) if args.out else ws.root / "reports"
    out.mkdir(parents=True, exist_ok=True)
    figs = None if args.no_figures else out
    rb = ReportBuilder(ws)
    name = args.report
    if name == "clusters":
        tables = rb.clusters()
    elif name == "labels":
        stored = ws.read_labels()
        tables = [Table("labels", ["cluster_id", "keywords", "summary", "representative_passage_ids", "summary_fallback"], stored)] if stored else rb.labels()
    elif name == "communities":
        tables = rb.communities(figs)
    elif name == "influence":
        tables, _ = rb.influence(figures_dir=figs)
    elif name == "lag":
        tables = rb.lag(figs)
    elif name == "trending":
        tables = rb.trending(args.as_of, figs)
    elif name == "efficacy":
        tables = rb.efficacy()
    elif name == "sweep":
        tables = rb.sweep(_classifier(ws.config), figs)
    else:
        tables = rb.ledger()
    paths = write_tables(tables, out, ws.provenance(), args.format)
    fig = out / FIGURES.get(name, "")
    if figs is not None and name in FIGURES and fig.exists():
        paths.append(fig)
    _emit([Table("export", ["file"], [{"file": str(p)} for p in paths])], args, ws)


def cmd_snapshot(args, ws):
    if args.action == "list":
        rows = [{"date": e.date.isoformat(), "snapshot_id": e.snapshot_id, "file": e.snapshot_file,
                 "config_hash": e.config_hash} for e in ws.ledger()]
        _emit([Table("snapshots", ["date", "snapshot_id", "file", "config_hash"], rows)], args, ws)
    elif args.action == "save":
        head = ws.head()
        if head is None:
            raise PipelineError("nothing committed yet")
        src = ws.snapshots_dir / head.snapshot_file
        dest = Path(args.path or head.snapshot_file)
        if args.jsonl:
            store = snapshot_load(src.read_bytes())
            with open(dest, "w") as fh:
                for rec in store.iter_cluster_records():
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
        else:
            shutil.copyfile(src, dest)
        _emit([Table("snapshot_save", ["file", "snapshot_id"], [{"file": str(dest), "snapshot_id": head.snapshot_id}])], args, ws)
    else:
        if not args.path:
            raise UsageError("snapshot load needs a path")
        try:
            blob = Path(args.path).read_bytes()
        except OSError as exc:
            raise PipelineError(f"cannot read {args.path}: {exc}") from None
        store = snapshot_load(blob)
        row = {"snapshot_id": snapshot_id(blob), "dim": store.dim, "lambda": store.lam,
               "clusters": store.cluster_count, "passages": store.passage_count,
               "last_day": store.last_day.isoformat() if store.last_day else None}
        _emit([Table("snapshot", list(row), [row])], args, ws)


COMMANDS = {
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "curate": cmd_curate,
    "communities": cmd_communities,
    "influence": cmd_influence,
    "trending": cmd_trending,
    "factcheck": cmd_factcheck,
    "match-corpus": cmd_match_corpus,
    "export": cmd_export,
    "snapshot": cmd_snapshot,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {"data_root": args.data_root, "rng_seed": args.seed})
        ws = Workspace(cfg)
        COMMANDS[args.command](args, ws)
    except UsageError as exc:
        sys.stderr.write(f"narrwatch: {exc}\n")
        return EXIT_USAGE
    except ServiceError as exc:
        sys.stderr.write(f"narrwatch: external service failure: {exc}\n")
        return EXIT_SERVICE
    except KeyError as exc:
        sys.stderr.write(f"narrwatch: {exc.args[0] if exc.args else exc}\n")
        return EXIT_DATA
    except (ConfigError, PipelineError, FitError, SnapshotError, ValueError) as exc:
        sys.stderr.write(f"narrwatch: {exc}\n")
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
