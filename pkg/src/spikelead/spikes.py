"""Top-k word spikes per (term, group) and leader/follower spike pairs."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .timeseries import SeriesSet, diff_series


@dataclass(frozen=True, order=True)
class Spike:
    term: str
    group: str
    hour: int
    height: int
    delta: int


@dataclass(frozen=True)
class SpikePair:
    leader: Spike
    follower: Spike

    @property
    def term(self) -> str:
        return self.leader.term

    @property
    def lag_hours(self) -> int:
        return self.follower.hour - self.leader.hour


@dataclass
class SpikeParams:
    top_k: int = 3
    min_height: int = 5
    max_lag_hours: int = 96
    min_height_overrides: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.top_k < 1 or self.min_height < 1 or self.max_lag_hours < 1:
            raise ValueError("top_k, min_height and max_lag_hours must all be >= 1")
        if any(v < 1 for v in self.min_height_overrides.values()):
            raise ValueError("min_height overrides must be >= 1")

    def height_for(self, group: str) -> int:
        return self.min_height_overrides.get(group, self.min_height)


def ranked_spikes(series, top_k: int, term: str = "", group: str = "") -> list[Spike]:
    """The top_k positive rises by size, earlier hour first among equal rises. No height filter."""
    term = getattr(series, "term", term)
    group = getattr(series, "group", group)
    values = np.asarray(getattr(series, "values", series), dtype=np.int64)
    delta = diff_series(values)
    cand = np.flatnonzero(delta > 0)
    order = np.lexsort((cand, -delta[cand]))[:top_k]
    return [Spike(term, group, int(t), int(values[t]), int(delta[t])) for t in cand[order]]


def detect_spikes(series, params: SpikeParams, term: str = "", group: str = "") -> list[Spike]:
    """Top_k largest rises of the series, then minus those whose height is below min_height.

    Selection happens before the height filter, so a low spike is dropped rather than
    replaced by the next-largest rise. Sorted by descending rise, earlier hour first on ties.
    """
    top = ranked_spikes(series, params.top_k, term, group)
    return [s for s in top if s.height >= params.height_for(s.group)]


def detect_all(series_set: SeriesSet, params: SpikeParams) -> list[Spike]:
    """detect_spikes over every series; output ordered by (term, group, hour)."""
    out: list[Spike] = []
    for ts in series_set:
        out.extend(detect_spikes(ts, params))
    out.sort(key=lambda s: (s.term, s.group, s.hour))
    return out


def candidate_table(series_set: SeriesSet, top_k: int) -> dict[tuple[str, str], list[Spike]]:
    """Ranked (unfiltered) top_k rises per series, for re-slicing by smaller k or other heights."""
    return {(ts.term, ts.group): ranked_spikes(ts, top_k) for ts in series_set}


def select(candidates: dict[tuple[str, str], list[Spike]], params: SpikeParams) -> list[Spike]:
    """detect_spikes equivalent over a candidate table built with top_k >= params.top_k."""
    out = [s for ranked in candidates.values() for s in ranked[: params.top_k]
           if s.height >= params.height_for(s.group)]
    out.sort(key=lambda s: (s.term, s.group, s.hour))
    return out


def pair_spikes(spikes, params: SpikeParams) -> list[SpikePair]:
    """All (leader, follower) spike pairs on one term from different groups with lag in (0, max_lag]."""
    by_term: dict[str, list[Spike]] = defaultdict(list)
    for s in spikes:
        by_term[s.term].append(s)
    pairs = []
    for term in sorted(by_term):
        group = sorted(by_term[term], key=lambda s: (s.hour, s.group))
        for j, follower in enumerate(group):
            for leader in group[:j]:
                lag = follower.hour - leader.hour
                if 0 < lag <= params.max_lag_hours and leader.group != follower.group:
                    pairs.append(SpikePair(leader, follower))
    pairs.sort(key=lambda p: (p.term, p.follower.hour, p.leader.group, p.leader.hour, p.follower.group))
    return pairs
