"""Spam filtering, PMI keywords, representative passages and summaries."""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .embeddings import similarity_matrix
from .services import HttpJsonTransport, ServiceError, Transport, call_with_retries, require
from .store import NarrativeStore

logger = logging.getLogger(__name__)

STOPWORDS = frozenset(
    """
    a about above after again against all also am an and any are aren't as at be because been
    before being below between both but by can can't cannot could couldn't did didn't do does
    doesn't doing don't down during each few for from further had hadn't has hasn't have haven't
    having he he'd he'll he's her here here's hers herself him himself his how how's i i'd i'll
    i'm i've if in into is isn't it it's its itself just let's me more most mustn't my myself no
    nor not now of off on once only or other ought our ours ourselves out over own said same
    say says shan't she she'd she'll she's should shouldn't so some such than that that's the
    their theirs them themselves then there there's these they they'd they'll they're they've
    this those through to too under until up upon us very was wasn't we we'd we'll we're we've
    were weren't what what's when when's where where's which while who who's whom why why's will
    with won't would wouldn't you you'd you'll you're you've your yours yourself yourselves
    s t don didn doesn isn wasn aren weren hasn haven hadn won wouldn shouldn couldn ll re ve d m
    one two also like get got would could may might must shall new
    """.split()
)

_NON_ALNUM = re.compile(r"[^0-9a-z]+")
_SUFFIXES = ("ations", "ation", "ities", "ness", "ments", "ment", "ingly", "ing", "ism", "ists",
             "ist", "ies", "ied", "edly", "ed", "es", "ly", "s")
_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


@dataclass
class CurationConfig:
    min_articles: int = 25
    max_single_site_share: float = 0.5
    pmi_alpha: float = 1.0
    top_k_keywords: int = 5
    representatives: int = 5
    stem: bool = False
    stopwords: frozenset[str] | None = None

    def __post_init__(self):
        if not 0.0 < self.max_single_site_share <= 1.0:
            raise ValueError("max_single_site_share must lie in (0, 1]")
        if self.pmi_alpha < 0:
            raise ValueError("pmi_alpha must be non-negative")


@dataclass
class NarrativeLabel:
    cluster_id: int
    keywords: list[str]
    summary: str | None = None
    representative_passage_ids: list[str] = field(default_factory=list)
    summary_fallback: bool = False

    def to_record(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "keywords": self.keywords,
            "summary": self.summary,
            "representative_passage_ids": self.representative_passage_ids,
            "summary_fallback": self.summary_fallback,
        }


def cluster_stats(store: NarrativeStore, k: int) -> tuple[int, float, int]:
    """(distinct articles, top single-site passage share, passages) for cluster ``k``."""
    rows = store.members(k)
    if len(rows) == 0:
        return 0, 0.0, 0
    per_domain = Counter(store.domains[i] for i in rows)
    articles = {store.article_ids[i] for i in rows}
    return len(articles), max(per_domain.values()) / len(rows), len(rows)


def filter_clusters(store: NarrativeStore, config: CurationConfig | None = None) -> list[int]:
    """Cluster ids that pass the spam filters, by article count descending.

    Dropped: clusters where one site holds ``max_single_site_share`` or more
    of the passages, and clusters with fewer than ``min_articles`` distinct
    articles.
    """
    config = config or CurationConfig()
    kept = []
    for k in range(store.cluster_count):
        n_articles, share, _ = cluster_stats(store, k)
        if n_articles < config.min_articles or share >= config.max_single_site_share:
            continue
        kept.append((n_articles, k))
    kept.sort(key=lambda t: (-t[0], t[1]))
    return [k for _, k in kept]


def light_stem(word: str) -> str:
    for suf in _SUFFIXES:
        if word.endswith(suf) and len(word) - len(suf) >= 3:
            return word[: -len(suf)]
    return word


def tokenize(text: str, stopwords: frozenset[str] = STOPWORDS, stem: bool = False) -> list[str]:
    words = [w for w in _NON_ALNUM.split(text.lower()) if w and w not in stopwords]
    if stem:
        words = [light_stem(w) for w in words]
    return words


@dataclass
class VocabularyTable:
    """Word x cluster raw token counts over a fixed set of clusters."""

    words: list[str]
    cluster_ids: list[int]
    counts: np.ndarray  # (len(words), len(cluster_ids))

    @classmethod
    def from_texts(
        cls,
        texts_by_cluster: dict[int, Iterable[str]],
        stopwords: frozenset[str] = STOPWORDS,
        stem: bool = False,
    ) -> "VocabularyTable":
        cluster_ids = sorted(texts_by_cluster)
        per_cluster = []
        vocab: set[str] = set()
        for k in cluster_ids:
            c = Counter()
            for t in texts_by_cluster[k]:
                c.update(tokenize(t or "", stopwords, stem))
            per_cluster.append(c)
            vocab.update(c)
        words = sorted(vocab)
        index = {w: i for i, w in enumerate(words)}
        counts = np.zeros((len(words), len(cluster_ids)), dtype=np.float64)
        for j, c in enumerate(per_cluster):
            for w, n in c.items():
                counts[index[w], j] = n
        return cls(words, cluster_ids, counts)

    @classmethod
    def from_store(cls, store: NarrativeStore, cluster_ids: Sequence[int], config: CurationConfig) -> "VocabularyTable":
        stop = config.stopwords if config.stopwords is not None else STOPWORDS
        texts = {k: [store.texts[i] or "" for i in store.members(k)] for k in cluster_ids}
        return cls.from_texts(texts, stop, config.stem)

    def pmi(self, alpha: float = 1.0) -> np.ndarray:
        """log2 P(w, c) / (P(w) P(c)) on alpha-smoothed counts."""
        n = self.counts + alpha
        total = n.sum()
        p_joint = n / total
        p_word = n.sum(axis=1, keepdims=True) / total
        p_cluster = n.sum(axis=0, keepdims=True) / total
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log2(p_joint / (p_word * p_cluster))


def pmi_keywords(table: VocabularyTable, cluster_id: int, alpha: float = 1.0, top_k: int = 5) -> list[str]:
    """Top ``top_k`` words of one cluster by PMI.

    Only words that occur in the cluster are candidates. Ties go to the
    higher raw in-cluster count, then alphabetical order.
    """
    if not table.words:
        return []
    j = table.cluster_ids.index(cluster_id)
    scores = table.pmi(alpha)[:, j]
    raw = table.counts[:, j]
    cand = [i for i in range(len(table.words)) if raw[i] > 0]
    # scores equal up to rounding noise count as ties
    cand.sort(key=lambda i: (-round(float(scores[i]), 12), -raw[i], table.words[i]))
    return [table.words[i] for i in cand[:top_k]]


def representative_passages(store: NarrativeStore, cluster_id: int, n: int = 5) -> list[str]:
    rows = store.members(cluster_id)
    if len(rows) == 0:
        return []
    sims = similarity_matrix(store.vectors[rows], store.centroids[cluster_id][None, :])[:, 0]
    order = sorted(range(len(rows)), key=lambda i: (-sims[i], store.passage_ids[rows[i]]))
    return [store.passage_ids[rows[i]] for i in order[:n]]


def first_sentence(text: str) -> str:
    text = (text or "").strip()
    if not text:
        return ""
    return _SENTENCE_END.split(text, maxsplit=1)[0]


def extractive_summary(texts: Sequence[str]) -> str:
    return " ".join(s for s in (first_sentence(t) for t in texts) if s)


@dataclass
class Summarizer:
    """Remote summarizer: ``{"passages": [...]}`` -> ``{"summary": "..."}``."""

    endpoint: str = ""
    timeout: float = 60.0
    retries: int = 2
    transport: Transport | None = None

    def __call__(self, passages: Sequence[str]) -> str:
        transport = self.transport or HttpJsonTransport(self.endpoint, self.timeout)
        data = call_with_retries(transport, {"passages": list(passages)}, self.retries)
        summary = require(data, "summary", str)
        if not summary.strip():
            raise ServiceError("malformed_response", "empty summary")
        return summary


def summarize_cluster(
    texts: Sequence[str], summarizer: Callable[[Sequence[str]], str] | None
) -> tuple[str, bool]:
    """Return ``(summary, used_fallback)``.

    Without a summarizer, or when it fails, the summary is the first
    sentence of each representative joined in order.
    """
    if summarizer is not None:
        try:
            return summarizer(texts), False
        except ServiceError as exc:
            logger.warning("summarizer failed (%s); using extractive fallback", exc)
    return extractive_summary(texts), True


def label_clusters(
    store: NarrativeStore,
    cluster_ids: Sequence[int],
    config: CurationConfig | None = None,
    summarizer: Callable[[Sequence[str]], str] | None = None,
    summarize: bool = True,
) -> list[NarrativeLabel]:
    config = config or CurationConfig()
    table = VocabularyTable.from_store(store, cluster_ids, config)
    labels = []
    for k in cluster_ids:
        reps = representative_passages(store, k, config.representatives)
        label = NarrativeLabel(
            cluster_id=k,
            keywords=pmi_keywords(table, k, config.pmi_alpha, config.top_k_keywords),
            representative_passage_ids=reps,
        )
        if summarize and reps:
            texts = [store.texts[store.passage_index(pid)] or "" for pid in reps]
            label.summary, label.summary_fallback = summarize_cluster(texts, summarizer)
        labels.append(label)
    return labels
