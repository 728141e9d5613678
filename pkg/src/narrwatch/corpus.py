"""Article records, text normalization and passage segmentation."""

from __future__ import annotations

import datetime as dt
import json
import re
from dataclasses import dataclass
from typing import Iterable, Iterator

DEFAULT_MAX_TOKENS = 100

_TAG_RE = re.compile(r"<[^<>]*>")
_URL_RE = re.compile(r"(?:https?://|ftp://|www\.)\S+", re.IGNORECASE)
_EMOJI_RE = re.compile(
    "["
    "\U0001F000-\U0001FAFF"  # pictographs, emoticons, transport, flags, symbols
    "\U00002600-\U000027BF"  # misc symbols and dingbats
    "\U00002B00-\U00002BFF"
    "\U0000FE00-\U0000FE0F"  # variation selectors
    "\U0000200D"  # zero width joiner
    "\U000020E3"  # keycap
    "\U000E0020-\U000E007F"  # tag sequences
    "]+"
)
_WS_RUN_RE = re.compile(r"\s+")
_PARAGRAPH_RE = re.compile(r"[\n\t]+")

REJECT_NON_ENGLISH = "non_english"
REJECT_EMPTY_BODY = "empty_body"
REJECT_OUT_OF_WINDOW = "out_of_window"


@dataclass(frozen=True)
class StudyWindow:
    start_date: dt.date
    end_date: dt.date

    def __post_init__(self):
        if self.start_date > self.end_date:
            raise ValueError(f"window start {self.start_date} is after end {self.end_date}")

    def __contains__(self, day: dt.date) -> bool:
        return self.start_date <= day <= self.end_date


@dataclass(frozen=True)
class ArticleDoc:
    article_id: str
    domain: str
    published_date: dt.date
    language_tag: str
    body: str
    title: str | None = None

    @classmethod
    def from_record(cls, rec: dict) -> "ArticleDoc":
        try:
            article_id = str(rec["article_id"])
            domain = str(rec["domain"]).strip().lower()
            published = parse_date(rec["published_date"])
        except KeyError as exc:
            raise ValueError(f"article record missing field {exc.args[0]!r}") from None
        if not article_id:
            raise ValueError("article record has empty article_id")
        if not domain:
            raise ValueError(f"article {article_id} has empty domain")
        return cls(
            article_id=article_id,
            domain=domain,
            published_date=published,
            language_tag=str(rec.get("language_tag") or ""),
            body=str(rec.get("body") or ""),
            title=rec.get("title"),
        )


@dataclass(frozen=True)
class PassagePlain:
    passage_id: str
    article_id: str
    ordinal: int
    token_count: int
    text: str


def parse_date(value) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError:
        raise ValueError(f"bad date {value!r}, expected YYYY-MM-DD") from None


def _collapse_ws(match: re.Match) -> str:
    run = match.group(0)
    if "\n" in run:
        return "\n"
    if "\t" in run:
        return "\t"
    return " "


def _normalize_once(text: str) -> str:
    text = _TAG_RE.sub(" ", text)
    text = _URL_RE.sub(" ", text)
    text = _EMOJI_RE.sub("", text)
    text = _WS_RUN_RE.sub(_collapse_ws, text)
    return text.strip()


def normalize_text(raw: str) -> str:
    """Strip markup tags, URLs and emoji; collapse whitespace.

    Runs of whitespace become one space, except that a run containing a
    newline (or tab) collapses to that single character so paragraph
    boundaries survive. Removal can splice fragments into a new URL or tag,
    so passes repeat until the text stops changing.
    """
    prev = None
    text = raw
    while text != prev:
        prev, text = text, _normalize_once(text)
    return text


def paragraphs(body: str) -> list[str]:
    return [p for p in _PARAGRAPH_RE.split(body) if p.strip()]


def segment_article(
    article: ArticleDoc,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    include_title: bool = False,
) -> list[PassagePlain]:
    if max_tokens < 1:
        raise ValueError("max_tokens must be positive")
    paras = paragraphs(article.body)
    if include_title and article.title and article.title.strip():
        paras.insert(0, article.title)

    out: list[PassagePlain] = []
    for para in paras:
        words = para.split()
        for i in range(0, len(words), max_tokens):
            chunk = words[i : i + max_tokens]
            ordinal = len(out)
            out.append(
                PassagePlain(
                    passage_id=f"{article.article_id}:{ordinal}",
                    article_id=article.article_id,
                    ordinal=ordinal,
                    token_count=len(chunk),
                    text=" ".join(chunk),
                )
            )
    return out


def is_english(language_tag: str) -> bool:
    primary = re.split(r"[-_]", language_tag.strip().lower(), maxsplit=1)[0]
    return primary in ("en", "eng")


def admit_article(article: ArticleDoc, window: StudyWindow) -> tuple[bool, str | None]:
    """Return ``(True, None)`` or ``(False, reason)``."""
    if not is_english(article.language_tag):
        return False, REJECT_NON_ENGLISH
    if not normalize_text(article.body):
        return False, REJECT_EMPTY_BODY
    if article.published_date not in window:
        return False, REJECT_OUT_OF_WINDOW
    return True, None


def read_articles(lines: Iterable[str]) -> Iterator[ArticleDoc]:
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        yield ArticleDoc.from_record(rec)


def prepare_articles(
    articles: Iterable[ArticleDoc],
    window: StudyWindow,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    include_title: bool = False,
) -> tuple[list[tuple[ArticleDoc, list[PassagePlain]]], dict[str, int]]:
    """Admit, normalize and segment a batch of articles.

    Returns the admitted articles with their passages and a count of
    rejections by reason. Duplicate article ids are rejected.
    """
    seen: set[str] = set()
    admitted = []
    rejected: dict[str, int] = {}
    for art in articles:
        if art.article_id in seen:
            rejected["duplicate_article"] = rejected.get("duplicate_article", 0) + 1
            continue
        ok, reason = admit_article(art, window)
        if not ok:
            rejected[reason] = rejected.get(reason, 0) + 1
            continue
        seen.add(art.article_id)
        clean = ArticleDoc(
            article_id=art.article_id,
            domain=art.domain,
            published_date=art.published_date,
            language_tag=art.language_tag,
            body=normalize_text(art.body),
            title=normalize_text(art.title) if art.title else art.title,
        )
        admitted.append((clean, segment_article(clean, max_tokens, include_title)))
    admitted.sort(key=lambda pair: (pair[0].published_date, pair[0].article_id))
    return admitted, rejected
