"""Streaming web-corpus cleaning.

Stage order: language filter, per-line filters, page filters, domain
filter, then three-sentence-span deduplication. Every dropped line or
page is attributed to exactly one reason and tallied in a CleanReport
whose counters conserve totals. All stages are pure and per-page except
dedup, which keeps a global set of span hashes.
"""

from __future__ import annotations

import base64
import hashlib
import struct
import urllib.parse
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .langid import TrigramEnglishScorer

TERMINAL_PUNCT = (".", "!", "?")
CLOSING_QUOTES = ('"', "'", "”", "’")

LINE_REASONS = ("no_terminal_punct", "too_few_words", "javascript")
PAGE_REASONS = ("language", "too_few_sentences", "bad_word", "lorem_ipsum",
                "curly_bracket", "domain", "dedup_underflow")


@dataclass
class Page:
    url: str
    text: str


@dataclass
class CleanReport:
    pages_in: int = 0
    pages_kept: int = 0
    page_drops: dict[str, int] = field(default_factory=lambda: {r: 0 for r in PAGE_REASONS})
    line_drops: dict[str, int] = field(default_factory=lambda: {r: 0 for r in LINE_REASONS})
    lines_kept: int = 0
    spans_deduplicated: int = 0

    def conserved(self) -> bool:
        return self.pages_in == self.pages_kept + sum(self.page_drops.values())

    def render(self) -> str:
        lines = [
            f"pages_in {self.pages_in}",
            f"pages_kept {self.pages_kept}",
        ]
        lines += [f"page_drop.{r} {self.page_drops[r]}" for r in PAGE_REASONS]
        lines += [f"lines_kept {self.lines_kept}"]
        lines += [f"line_drop.{r} {self.line_drops[r]}" for r in LINE_REASONS]
        lines += [f"spans_deduplicated {self.spans_deduplicated}"]
        return "\n".join(lines) + "\n"


@dataclass
class CleanConfig:
    bad_words_path: str | None = None
    domain_mode: str = "none"  # none | domain_allowlist | url_allowlist
    allowlist_path: str | None = None
    language_threshold: float = 0.99
    classifier: object = None  # callable text -> P(English); default trigram scorer
    heuristics: bool = True  # False = language filter only (unfiltered mode)
    dedup: bool = True
    dedup_mode: str = "span"  # span | page
    min_sentences: int = 5
    min_words_per_line: int = 3

    def __post_init__(self):
        if self.domain_mode not in ("none", "domain_allowlist", "url_allowlist"):
            raise ConfigurationError(f"unknown domain mode {self.domain_mode!r}")
        if self.domain_mode != "none" and not self.allowlist_path:
            raise ConfigurationError(f"domain mode {self.domain_mode!r} needs an allowlist file")
        if self.dedup_mode not in ("span", "page"):
            raise ConfigurationError(f"unknown dedup mode {self.dedup_mode!r}")


# -- line and sentence primitives ---------------------------------------


def ends_terminally(line: str) -> bool:
    """Terminal punctuation, possibly wrapped in closing quotes."""
    stripped = line.rstrip()
    while stripped and stripped[-1] in CLOSING_QUOTES:
        stripped = stripped[:-1]
    return bool(stripped) and stripped[-1] in TERMINAL_PUNCT


def line_filter(line: str, min_words: int = 3) -> str | None:
    """None to keep, else the drop reason."""
    if not ends_terminally(line):
        return "no_terminal_punct"
    if len(line.split()) < min_words:
        return "too_few_words"
    if any(word.strip("".join(CLOSING_QUOTES) + ".,!?;:()").lower() == "javascript"
           for word in line.split()):
        return "javascript"
    return None


def split_sentences(text: str) -> list[tuple[str, int, int]]:
    """(sentence, start, end) spans over `text`.

    A sentence ends at terminal punctuation (plus any closing quotes)
    followed by whitespace or end of text. Each span runs to the start of
    the next sentence, so concatenating spans reproduces the text.
    """
    spans = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        if text[i] in TERMINAL_PUNCT:
            j = i + 1
            while j < n and text[j] in CLOSING_QUOTES:
                j += 1
            if j >= n or text[j].isspace():
                while j < n and text[j].isspace():
                    j += 1
                spans.append((text[start:j], start, j))
                start = j
                i = j
                continue
        i += 1
    if start < n:
        spans.append((text[start:], start, n))
    return spans


def _normalize_span(sentences: list[str]) -> str:
    return " ".join(" ".join(s.lower().split()) for s in sentences)


def span_hash(sentences: list[str]) -> bytes:
    """128-bit digest of the normalized three-sentence window."""
    return hashlib.blake2b(_normalize_span(sentences).encode("utf-8"), digest_size=16).digest()


# -- page-level filters ---------------------------------------------------


def load_word_list(path) -> frozenset[str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"word list file not found: {path}")
    return frozenset(
        w.strip().lower() for w in p.read_text(encoding="utf-8").splitlines() if w.strip()
    )


def page_filter(page: Page, bad_words: frozenset[str], min_sentences: int = 5) -> str | None:
    """None to keep, else the drop reason. Assumes line filtering ran."""
    text = page.text
    if len(split_sentences(text)) < min_sentences:
        return "too_few_sentences"
    if bad_words:
        tokens = {w.strip("\"'.,!?;:()[]").lower() for w in text.split()}
        if tokens & bad_words:
            return "bad_word"
    if "lorem ipsum" in text.lower():
        return "lorem_ipsum"
    if "{" in text:
        return "curly_bracket"
    return None


def registered_domain(url: str) -> str:
    """Last two host labels (three for common two-part public suffixes)."""
    host = urllib.parse.urlsplit(url).netloc.split("@")[-1].split(":")[0].lower()
    labels = [l for l in host.split(".") if l]
    two_part = {"co.uk", "ac.uk", "gov.uk", "com.au", "co.jp", "com.br", "co.in", "co.nz"}
    if len(labels) >= 3 and ".".join(labels[-2:]) in two_part:
        return ".".join(labels[-3:])
    return ".".join(labels[-2:]) if len(labels) >= 2 else host


def normalize_url(url: str) -> str:
    parts = urllib.parse.urlsplit(url.strip())
    return urllib.parse.urlunsplit(
        (parts.scheme.lower(), parts.netloc.lower(), parts.path.rstrip("/") or "/", parts.query, "")
    )


class DomainFilter:
    def __init__(self, mode: str, allowlist_path=None):
        self.mode = mode
        if mode == "none":
            self.allowed: frozenset[str] = frozenset()
            return
        p = Path(allowlist_path)
        if not p.is_file():
            raise ConfigurationError(f"allowlist file not found: {allowlist_path}")
        entries = [line.strip() for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]
        if mode == "domain_allowlist":
            self.allowed = frozenset(e.lower() for e in entries)
        else:
            self.allowed = frozenset(normalize_url(e) for e in entries)

    def keep(self, url: str) -> bool:
        if self.mode == "none":
            return True
        if self.mode == "domain_allowlist":
            return registered_domain(url) in self.allowed
        return normalize_url(url) in self.allowed


class SpanDeduplicator:
    """Global three-sentence-window dedup.

    Each window of three consecutive sentences is hashed (normalized
    text); a window seen before marks its sentences for removal from the
    current page (or drops the whole page in page mode). First
    occurrences are kept and registered.
    """

    def __init__(self, mode: str = "span", min_sentences: int = 5):
        self.mode = mode
        self.min_sentences = min_sentences
        self.seen: set[bytes] = set()

    def process(self, page: Page) -> tuple[Page | None, int]:
        """(page or None if dropped, number of duplicate windows)."""
        spans = split_sentences(page.text)
        texts = [s for s, _, _ in spans]
        duplicates = 0
        to_remove: set[int] = set()
        for i in range(len(texts) - 2):
            h = span_hash(texts[i:i + 3])
            if h in self.seen:
                duplicates += 1
                to_remove.update((i, i + 1, i + 2))
            else:
                self.seen.add(h)
        if duplicates == 0:
            return page, 0
        if self.mode == "page":
            return None, duplicates
        kept = [spans[i] for i in range(len(spans)) if i not in to_remove]
        if len(kept) < self.min_sentences:
            return None, duplicates
        text = "".join(s for s, _, _ in kept)
        return Page(url=page.url, text=text), duplicates


def clean(pages, config: CleanConfig):
    """Run the full pipeline over an iterable of Pages.

    Returns (list of cleaned pages, CleanReport). Order of surviving
    pages equals input order; dedup keeps first occurrences in stream
    order, so output is reproducible.
    """
    classifier = config.classifier or TrigramEnglishScorer()
    bad_words = load_word_list(config.bad_words_path) if config.bad_words_path else frozenset()
    domain = DomainFilter(config.domain_mode, config.allowlist_path)
    dedup = SpanDeduplicator(config.dedup_mode, config.min_sentences) if config.dedup else None

    report = CleanReport()
    out: list[Page] = []
    for page in pages:
        report.pages_in += 1
        if classifier(page.text) < config.language_threshold:
            report.page_drops["language"] += 1
            continue
        if config.heuristics:
            kept_lines = []
            for line in page.text.split("\n"):
                reason = line_filter(line, config.min_words_per_line)
                if reason is None:
                    kept_lines.append(line)
                    report.lines_kept += 1
                else:
                    report.line_drops[reason] += 1
            page = Page(url=page.url, text="\n".join(kept_lines))
            reason = page_filter(page, bad_words, config.min_sentences)
            if reason is not None:
                report.page_drops[reason] += 1
                continue
        else:
            report.lines_kept += page.text.count("\n") + 1
        if not domain.keep(page.url):
            report.page_drops["domain"] += 1
            continue
        if dedup is not None:
            deduped, duplicates = dedup.process(page)
            report.spans_deduplicated += duplicates
            if deduped is None:
                report.page_drops["dedup_underflow"] += 1
                continue
            page = deduped
        out.append(page)
        report.pages_kept += 1
    return out, report


# -- record formats --------------------------------------------------------


def write_pages_tsv(pages, path) -> None:
    """One record per line: url <TAB> base64(utf-8 text)."""
    with open(path, "w", encoding="utf-8") as f:
        for page in pages:
            encoded = base64.b64encode(page.text.encode("utf-8")).decode("ascii")
            f.write(f"{page.url}\t{encoded}\n")


def read_pages_tsv(path) -> list[Page]:
    pages = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            url, _, encoded = line.partition("\t")
            if not url or not encoded:
                raise ConfigurationError(f"{path}:{lineno}: malformed page record")
            pages.append(Page(url=url, text=base64.b64decode(encoded).decode("utf-8")))
    return pages


_BIN_MAGIC = b"T2TPAGES"


def write_pages_binary(pages, path) -> None:
    """Length-prefixed binary records: magic, then per page u32 url length,
    url bytes, u64 text length, text bytes (both utf-8)."""
    with open(path, "wb") as f:
        f.write(_BIN_MAGIC)
        for page in pages:
            url = page.url.encode("utf-8")
            text = page.text.encode("utf-8")
            f.write(struct.pack("<I", len(url)))
            f.write(url)
            f.write(struct.pack("<Q", len(text)))
            f.write(text)


def read_pages_binary(path) -> list[Page]:
    pages = []
    with open(path, "rb") as f:
        if f.read(len(_BIN_MAGIC)) != _BIN_MAGIC:
            raise ConfigurationError(f"not a page archive: {path}")
        while True:
            head = f.read(4)
            if not head:
                break
            (ulen,) = struct.unpack("<I", head)
            url = f.read(ulen).decode("utf-8")
            (tlen,) = struct.unpack("<Q", f.read(8))
            pages.append(Page(url=url, text=f.read(tlen).decode("utf-8")))
    return pages
