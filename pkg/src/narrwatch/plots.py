"""Matplotlib figures written next to the delimited reports."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# no version/date metadata, so re-rendering identical data gives identical files
_SAVE = {"dpi": 120, "metadata": {"Software": None}}


def _finish(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def lag_profiles(profiles: Mapping[str, "object"], path: Path, span: int = 30) -> Path:
    """Share of each group's articles by day offset from the narrative peak."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for label, prof in profiles.items():
        total = prof.total or 1
        offs = [o for o in range(-span, span + 1)]
        ax.plot(offs, [prof.histogram.get(o, 0) / total for o in offs], label=f"{label} ({prof.proportion_before:.1%} before)")
    ax.axvline(0, color="k", lw=0.8, ls=":")
    ax.set_xlabel("days from narrative peak")
    ax.set_ylabel("share of articles")
    ax.legend(fontsize=8, frameon=False)
    return _finish(fig, path)


def trending_bars(entries: Sequence, path: Path, top: int = 15) -> Path:
    entries = list(entries)[:top]
    fig, ax = plt.subplots(figsize=(6, max(2.0, 0.3 * len(entries) + 1)))
    labels = [str(e.cluster_id) for e in entries][::-1]
    cur = [e.current_week_count for e in entries][::-1]
    prev = [e.previous_week_count for e in entries][::-1]
    y = range(len(entries))
    ax.barh([i + 0.2 for i in y], cur, height=0.4, label="this week")
    ax.barh([i - 0.2 for i in y], prev, height=0.4, label="previous week", color="0.6")
    ax.set_yticks(list(y))
    ax.set_yticklabels(labels, fontsize=8)
    ax.set_xlabel("articles")
    ax.set_ylabel("narrative")
    ax.legend(fontsize=8, frameon=False)
    return _finish(fig, path)


def sweep_lines(rows: Sequence, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    orgs = sorted({r.org for r in rows})
    for org in orgs:
        pts = sorted((r.threshold, r.narratives_matched) for r in rows if r.org == org)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=org)
    ax.set_xlabel("similarity threshold")
    ax.set_ylabel("narratives matched")
    ax.legend(fontsize=8, frameon=False)
    return _finish(fig, path)


def influence_scatter(reports: Sequence, rank_buckets: Mapping[str, object], path: Path) -> Path:
    from .influence import rank_weight

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for role, marker in (("originate", "o"), ("amplify", "^")):
        rs = [r for r in reports if r.role == role]
        if not rs:
            continue
        x = [1.0 / rank_weight(rank_buckets.get(r.domain)) for r in rs]
        ax.scatter(x, [r.cohens_d for r in rs], marker=marker, label=role, s=18)
    ax.axhline(0, color="k", lw=0.8, ls=":")
    ax.set_xlabel("log2(popularity rank + 1)")
    ax.set_ylabel("Cohen's d, external articles")
    ax.legend(fontsize=8, frameon=False)
    return _finish(fig, path)


def community_sizes(communities: Mapping[int, Sequence[str]], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(4, 3))
    ids = sorted(communities)
    ax.bar([str(c) for c in ids], [len(communities[c]) for c in ids])
    ax.set_xlabel("community")
    ax.set_ylabel("sites")
    return _finish(fig, path)
