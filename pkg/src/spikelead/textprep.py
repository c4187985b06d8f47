"""Tokenization and the two-stage vocabulary filter."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import regex

from .errors import DataError

NUM = "<num>"

_URL = regex.compile(r"(?:https?://|www\.)\S*|\b[\w-]+(?:\.[\w-]+)*\.(?:com|co|org|net|ly|gl|io|me)/\S*", regex.I)
# One emoji = flag pair, keycap, or pictographic cluster with modifiers/ZWJ continuations.
_EMOJI = regex.compile(
    r"\p{RI}\p{RI}"
    r"|[0-9#*]\uFE0F?\u20E3"
    r"|\p{Extended_Pictographic}[\p{Emoji_Modifier}\uFE0F]*"
    r"(?:\u200D\p{Extended_Pictographic}[\p{Emoji_Modifier}\uFE0F]*)*"
)
_LEAD_JUNK = regex.compile(r"^(?:(?![#@])[\p{P}\p{S}])+")
_PUNCT = regex.compile(r"(?:(?!')[\p{P}\p{S}])+")


def _word(chunk: str) -> str | None:
    if chunk == NUM:
        return NUM
    chunk = _LEAD_JUNK.sub("", chunk)
    sigil = ""
    if chunk[:1] in ("#", "@"):
        sigil, chunk = chunk[0], chunk[1:]
    body = _PUNCT.sub("", chunk).strip("'")
    if not body:
        return None
    if not sigil and body.isdecimal():
        return NUM
    return sigil + body


def tokenize(text: str) -> list[str]:
    """Lowercased tokens with URLs removed, emoji split out, and digit runs -> ``<num>``.

    Hashtags and mentions keep a single leading ``#``/``@``; interior apostrophes
    survive ("mother's"); all other punctuation and symbols are dropped.
    """
    text = _URL.sub(" ", text).lower().replace("\u2019", "'")
    out: list[str] = []
    for chunk in text.split():
        pos = 0
        for m in _EMOJI.finditer(chunk):
            if m.start() > pos:
                w = _word(chunk[pos:m.start()])
                if w:
                    out.append(w)
            out.append(m.group())
            pos = m.end()
        if pos < len(chunk):
            w = _word(chunk[pos:] if pos else chunk)
            if w:
                out.append(w)
    return out


class TokenizedCorpus:
    """CSR layout of per-message token ids: tokens of message i are ``ids[ptr[i]:ptr[i+1]]``."""

    def __init__(self, terms: list[str], ptr: np.ndarray, ids: np.ndarray):
        self.terms = terms
        self.ptr = ptr
        self.ids = ids
        self._lookup: dict[str, int] | None = None

    @property
    def lookup(self) -> dict[str, int]:
        if self._lookup is None:
            self._lookup = {t: i for i, t in enumerate(self.terms)}
        return self._lookup

    def message_tokens(self, i: int) -> list[str]:
        return [self.terms[j] for j in self.ids[self.ptr[i]:self.ptr[i + 1]]]

    def message_index(self) -> np.ndarray:
        """Message position of every entry in ``ids``."""
        return np.repeat(np.arange(len(self.ptr) - 1, dtype=np.int64), np.diff(self.ptr))

    def unique_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """(message, term) pairs with each term counted once per message."""
        msg = self.message_index()
        if msg.size == 0:
            return msg, self.ids.astype(np.int64)
        key = np.unique(msg * len(self.terms) + self.ids)
        return key // len(self.terms), key % len(self.terms)

    def subset(self, index: np.ndarray) -> "TokenizedCorpus":
        lengths = np.diff(self.ptr)[index]
        ptr = np.zeros(len(index) + 1, dtype=np.int64)
        np.cumsum(lengths, out=ptr[1:])
        if len(index):
            starts = self.ptr[index]
            gather = np.repeat(starts - ptr[:-1], lengths) + np.arange(ptr[-1])
            ids = self.ids[gather]
        else:
            ids = self.ids[:0]
        sub = TokenizedCorpus(self.terms, ptr, ids)
        sub._lookup = self._lookup
        return sub


def tokenize_corpus(corpus) -> TokenizedCorpus:
    lookup: dict[str, int] = {}
    ids: list[int] = []
    ptr = np.zeros(len(corpus) + 1, dtype=np.int64)
    setdefault = lookup.setdefault
    for i, text in enumerate(corpus.texts):
        for tok in tokenize(text):
            ids.append(setdefault(tok, len(lookup)))
        ptr[i + 1] = len(ids)
    terms = list(lookup)
    tc = TokenizedCorpus(terms, ptr, np.array(ids, dtype=np.int32))
    tc._lookup = lookup
    return tc


@dataclass
class FilterParams:
    anchor_group: str = "ira"
    anchor_min_tweets: int = 50
    anchor_max_fraction: float = 0.40
    other_min_uses: int = 200
    any_group_max_fraction: float = 0.01

    def __post_init__(self):
        if not (0 < self.anchor_max_fraction <= 1 and 0 < self.any_group_max_fraction <= 1):
            raise ValueError("max fractions must lie in (0, 1]")
        if self.anchor_min_tweets < 1 or self.other_min_uses < 1:
            raise ValueError("min counts must be >= 1")


# reason codes for the vocabulary export
KEPT = "kept"
ANCHOR_TOO_RARE = "anchor_too_rare"
ANCHOR_TOO_COMMON = "anchor_too_common"
OTHERS_TOO_RARE = "others_too_rare"
GROUP_TOO_COMMON = "group_too_common"


@dataclass
class VocabEntry:
    term: str
    per_group_tweet_count: dict[str, int]
    per_group_tweet_fraction: dict[str, float]
    kept: bool = True
    reason: str = KEPT

    def __hash__(self):
        return hash(self.term)


def term_group_counts(corpus) -> tuple[np.ndarray, np.ndarray]:
    """(#terms x #groups) tweet counts per term, and total tweets per group."""
    tc = corpus.tokens
    msg, term = tc.unique_pairs()
    n_groups = len(corpus.group_labels)
    counts = np.zeros((len(tc.terms), n_groups), dtype=np.int64)
    np.add.at(counts, (term, corpus.groups[msg].astype(np.int64)), 1)
    totals = np.bincount(corpus.groups.astype(np.int64), minlength=n_groups)
    return counts, totals


def vocabulary_report(corpus, params: FilterParams) -> list[VocabEntry]:
    """Every term seen in anchor-group tweets with its filter verdict, sorted by term."""
    if len(corpus) == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    if params.anchor_group not in corpus.group_labels:
        raise DataError(f"anchor group {params.anchor_group!r} is not among the corpus groups")
    anchor = corpus.group_code(params.anchor_group)
    counts, totals = term_group_counts(corpus)
    with np.errstate(divide="ignore", invalid="ignore"):
        fractions = np.where(totals > 0, counts / np.maximum(totals, 1), 0.0)
    labels = corpus.group_labels
    others = [g for g in range(len(labels)) if g != anchor]
    terms = corpus.tokens.terms
    # exact decimal fractions so "no more than 1%" includes exactly 1% of any total
    anchor_cap = Fraction(repr(params.anchor_max_fraction)) * int(totals[anchor])
    group_caps = [Fraction(repr(params.any_group_max_fraction)) * int(n) for n in totals]
    entries = []
    for t in np.flatnonzero(counts[:, anchor] > 0):
        row = counts[t].tolist()
        if row[anchor] < params.anchor_min_tweets:
            reason = ANCHOR_TOO_RARE
        elif row[anchor] > anchor_cap:
            reason = ANCHOR_TOO_COMMON
        elif not any(row[g] >= params.other_min_uses for g in others):
            reason = OTHERS_TOO_RARE
        elif any(row[g] > group_caps[g] for g in range(len(labels))):
            reason = GROUP_TOO_COMMON
        else:
            reason = KEPT
        entries.append(VocabEntry(
            term=terms[t],
            per_group_tweet_count={labels[g]: row[g] for g in range(len(labels))},
            per_group_tweet_fraction={labels[g]: float(fractions[t, g]) for g in range(len(labels))},
            kept=reason == KEPT,
            reason=reason,
        ))
    entries.sort(key=lambda e: e.term)
    return entries


def build_vocabulary(corpus, params: FilterParams) -> list[VocabEntry]:
    return [e for e in vocabulary_report(corpus, params) if e.kept]


def filter_corpus(corpus, vocab):
    """Messages containing at least one vocabulary term, order preserved."""
    terms = {e.term if isinstance(e, VocabEntry) else e for e in vocab}
    if not terms:
        raise DataError("vocabulary is empty")
    tc = corpus.tokens
    in_vocab = np.zeros(len(tc.terms) + 1, dtype=bool)
    for t in terms:
        j = tc.lookup.get(t)
        if j is not None:
            in_vocab[j] = True
    hit = in_vocab[tc.ids]
    msg = tc.message_index()
    keep = np.zeros(len(corpus), dtype=bool)
    keep[msg[hit]] = True
    return corpus.subset(np.flatnonzero(keep))
