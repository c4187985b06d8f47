"""Hourly rolling-window adoption series n[t] per (term, group).

n[t] is the number of distinct users of a group who used the term in the
24 hours ending at hour boundary t, i.e. in (t - 24h, t]. A message at offset
``u`` seconds past the window start therefore counts at hour indices
``ceil(u / 3600) .. ceil(u / 3600) + 23``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .ingest import format_instant

WINDOW_HOURS = 24


@dataclass(frozen=True)
class TermSeries:
    term: str
    group: str
    values: np.ndarray


def first_hour(timestamps: np.ndarray, start: int) -> np.ndarray:
    """Earliest hour index whose trailing 24h window contains each timestamp."""
    return -((start - np.asarray(timestamps, dtype=np.int64)) // 3600)


def _vocab_terms(vocab) -> list[str]:
    return sorted({getattr(e, "term", e) for e in vocab})


class Usage:
    """Deduplicated (term, group, user, message) usage records, sorted by term, group, time.

    Shared by series construction, potential impact and context gathering.
    """

    def __init__(self, corpus, vocab):
        self.corpus = corpus
        self.terms = _vocab_terms(vocab)
        self.groups = corpus.group_labels
        self.term_pos = {t: i for i, t in enumerate(self.terms)}
        tc = corpus.tokens
        to_vocab = np.full(len(tc.terms), -1, dtype=np.int64)
        for i, t in enumerate(self.terms):
            j = tc.lookup.get(t)
            if j is not None:
                to_vocab[j] = i
        msg, tid = tc.unique_pairs()
        vid = to_vocab[tid]
        keep = vid >= 0
        msg, vid = msg[keep], vid[keep]
        grp = corpus.groups[msg].astype(np.int64)
        order = np.lexsort((msg, grp, vid))
        self.msg = msg[order]
        self.key = (vid * len(self.groups) + grp)[order]
        self.ts = corpus.timestamps[self.msg]
        self.user = corpus.user_codes[self.msg]
        n_keys = len(self.terms) * len(self.groups)
        self.offsets = np.searchsorted(self.key, np.arange(n_keys + 1))

    def _key(self, term: str, group: str) -> int:
        return self.term_pos[term] * len(self.groups) + self.groups.index(group)

    def span(self, term: str, group: str, lo: int, hi: int, closed: str = "right") -> slice:
        """Record positions for (term, group) with timestamp in (lo, hi] (or [lo, hi] for closed='both')."""
        if term not in self.term_pos:
            return slice(0, 0)
        k = self._key(term, group)
        a, b = self.offsets[k], self.offsets[k + 1]
        ts = self.ts[a:b]
        left = np.searchsorted(ts, lo, side="left" if closed == "both" else "right")
        right = np.searchsorted(ts, hi, side="right")
        return slice(a + left, a + right)

    def distinct_users(self, term: str, group: str, lo: int, hi: int) -> int:
        return int(np.unique(self.user[self.span(term, group, lo, hi)]).size)


class SeriesSet:
    """Dense series for every (term, group) with at least one usage."""

    def __init__(self, keys: list[tuple[str, str]], values: np.ndarray, start: int):
        self.keys = keys
        self.values = values
        self.start = start
        self._pos = {k: i for i, k in enumerate(keys)}

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def hours(self) -> int:
        return self.values.shape[1]

    def __contains__(self, key) -> bool:
        return tuple(key) in self._pos

    def __getitem__(self, key: tuple[str, str]) -> TermSeries:
        i = self._pos[tuple(key)]
        return TermSeries(key[0], key[1], self.values[i])

    def get(self, term: str, group: str) -> np.ndarray:
        """Series values, all zeros when the group never used the term."""
        i = self._pos.get((term, group))
        return np.zeros(self.hours, dtype=self.values.dtype) if i is None else self.values[i]

    def __iter__(self):
        for i, (term, group) in enumerate(self.keys):
            yield TermSeries(term, group, self.values[i])

    def hour_instant(self, hour: int) -> int:
        return self.start + 3600 * int(hour)


def build_series(corpus, vocab, usage: Usage | None = None) -> SeriesSet:
    usage = usage or Usage(corpus, vocab)
    hours = corpus.hours
    start = corpus.window[0]
    if usage.key.size == 0:
        return SeriesSet([], np.zeros((0, hours), dtype=np.int32), start)
    c = first_hour(usage.ts, start)
    order = np.lexsort((c, usage.user, usage.key))
    key, user, c = usage.key[order], usage.user[order], c[order]
    dup = np.zeros(key.size, dtype=bool)
    dup[1:] = (key[1:] == key[:-1]) & (user[1:] == user[:-1]) & (c[1:] == c[:-1])
    key, user, c = key[~dup], user[~dup], c[~dup]

    # Union of each user's [c, c+24) coverage intervals, as disjoint pieces.
    same = np.zeros(key.size, dtype=bool)
    same[1:] = (key[1:] == key[:-1]) & (user[1:] == user[:-1])
    prev_end = np.full(key.size, np.iinfo(np.int64).min)
    prev_end[1:] = c[:-1] + WINDOW_HOURS
    begin = np.where(same, np.maximum(c, prev_end), c)
    end = c + WINDOW_HOURS
    piece = begin < end

    present, row = np.unique(key, return_inverse=True)
    width = hours + WINDOW_HOURS + 1
    flat = np.concatenate([row[piece] * width + begin[piece], row[piece] * width + end[piece]])
    weight = np.concatenate([np.ones(piece.sum()), -np.ones(piece.sum())])
    diff = np.bincount(flat, weights=weight, minlength=present.size * width).reshape(present.size, width)
    values = np.cumsum(diff[:, :hours], axis=1).astype(np.int32)

    n_groups = len(usage.groups)
    keys = [(usage.terms[k // n_groups], usage.groups[k % n_groups]) for k in present.tolist()]
    return SeriesSet(keys, values, start)


def diff_series(values) -> np.ndarray:
    """Hour-over-hour change; element 0 is the rise from an empty history."""
    values = np.asarray(getattr(values, "values", values), dtype=np.int64)
    if values.size < 2:
        raise DataError("a series needs at least 2 points to difference")
    return np.diff(values, prepend=0)


def series_rows(values: np.ndarray, start: int, lo: int = 0, hi: int | None = None):
    """(ISO hour, count) rows for hours [lo, hi)."""
    hi = len(values) if hi is None else hi
    for t in range(max(lo, 0), min(hi, len(values))):
        yield format_instant(start + 3600 * t), int(values[t])
