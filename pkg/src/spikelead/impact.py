"""Potential impact of spike pairs and the per-topic aggregates built from them."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .clustering import TopicModel
from .errors import DataError
from .spikes import SpikePair
from .timeseries import Usage

IMPACT_WINDOW_HOURS = 96


@dataclass(frozen=True)
class ImpactRecord:
    pair: SpikePair
    impacted_users: int


@dataclass
class TopicAggregate:
    topic: str
    per_group_lead_fraction: dict[str, float] = field(default_factory=dict)
    per_group_impact_fraction: dict[str, float] = field(default_factory=dict)
    per_group_tweet_share: dict[str, float] = field(default_factory=dict)
    per_group_tweet_count: dict[str, int] = field(default_factory=dict)
    n_pairs: int = 0
    n_follower_spikes: int = 0
    total_impact: int = 0
    empty: bool = False


def potential_impact(pair: SpikePair, usage: Usage, window_hours: int = IMPACT_WINDOW_HOURS) -> ImpactRecord:
    """Distinct follower-group users of the term in (t', t' + window], t' = leader spike hour."""
    t = usage.corpus.window[0] + 3600 * pair.leader.hour
    n = usage.distinct_users(pair.term, pair.follower.group, t, t + 3600 * window_hours)
    return ImpactRecord(pair, n)


def impact_records(pairs, usage: Usage, window_hours: int = IMPACT_WINDOW_HOURS,
                   cache: dict | None = None) -> list[ImpactRecord]:
    # impact depends only on (term, follower group, leader hour); sweeps share one cache
    cache = {} if cache is None else cache
    out = []
    for p in pairs:
        key = (p.term, p.follower.group, p.leader.hour)
        if key not in cache:
            cache[key] = potential_impact(p, usage, window_hours).impacted_users
        out.append(ImpactRecord(p, cache[key]))
    return out


def _topic(term: str, topics: TopicModel, strict: bool) -> str | None:
    try:
        return topics.topic(term)
    except KeyError:
        if strict:
            raise DataError(f"term {term!r} has no topic assignment") from None
        return None


def _groups_of(pairs, groups):
    if groups is not None:
        return list(groups)
    return sorted({p.leader.group for p in pairs} | {p.follower.group for p in pairs})


def lead_fractions(pairs, topics: TopicModel, groups=None, strict: bool = True) -> list[TopicAggregate]:
    """Per topic, the share of spike pairs led by each group."""
    groups = _groups_of(pairs, groups)
    counts: dict[str, dict[str, int]] = defaultdict(lambda: dict.fromkeys(groups, 0))
    followers: dict[str, set] = defaultdict(set)
    for p in pairs:
        topic = _topic(p.term, topics, strict)
        if topic is None:
            continue
        counts[topic][p.leader.group] += 1
        followers[topic].add(p.follower)
    out = []
    for topic in topics.topics:
        row = counts.get(topic, dict.fromkeys(groups, 0))
        n = sum(row.values())
        out.append(TopicAggregate(
            topic,
            per_group_lead_fraction={g: (row[g] / n if n else 0.0) for g in groups},
            n_pairs=n,
            n_follower_spikes=len(followers.get(topic, ())),
            empty=n == 0,
        ))
    return out


def impact_fractions(records, topics: TopicModel, groups=None, strict: bool = True) -> list[TopicAggregate]:
    """Per topic, each leader group's share of the summed potential impact."""
    groups = _groups_of([r.pair for r in records], groups)
    sums: dict[str, dict[str, int]] = defaultdict(lambda: dict.fromkeys(groups, 0))
    npairs: dict[str, int] = defaultdict(int)
    for r in records:
        topic = _topic(r.pair.term, topics, strict)
        if topic is None:
            continue
        sums[topic][r.pair.leader.group] += r.impacted_users
        npairs[topic] += 1
    out = []
    for topic in topics.topics:
        row = sums.get(topic, dict.fromkeys(groups, 0))
        total = sum(row.values())
        out.append(TopicAggregate(
            topic,
            per_group_impact_fraction={g: (row[g] / total if total else 0.0) for g in groups},
            n_pairs=npairs.get(topic, 0),
            total_impact=total,
            empty=total == 0,
        ))
    return out


def topic_tweet_counts(corpus, topics: TopicModel) -> np.ndarray:
    """(#topics x #groups) tweets containing at least one term of each retained topic."""
    names = topics.topics
    pos = {t: i for i, t in enumerate(names)}
    tc = corpus.tokens
    term_topic = np.full(len(tc.terms), -1, dtype=np.int64)
    for term in topics.assignments:
        j = tc.lookup.get(term)
        label = topics.topic(term)
        if j is not None and label is not None:
            term_topic[j] = pos[label]
    msg, tid = tc.unique_pairs()
    top = term_topic[tid]
    hit = top >= 0
    n_groups = len(corpus.group_labels)
    key = np.unique(msg[hit] * len(names) + top[hit])
    m, t = key // max(len(names), 1), key % max(len(names), 1)
    counts = np.zeros((len(names), n_groups), dtype=np.int64)
    np.add.at(counts, (t, corpus.groups[m].astype(np.int64)), 1)
    return counts


def tweet_share(corpus, topics: TopicModel, group_totals: dict[str, int] | None = None) -> list[TopicAggregate]:
    """Per topic and group: tweets with >= 1 topic term over the group's total tweets.

    ``group_totals`` supplies the denominators when ``corpus`` is the vocabulary-filtered
    subset of a larger corpus.
    """
    labels = corpus.group_labels
    if group_totals is None:
        n = np.bincount(corpus.groups.astype(np.int64), minlength=len(labels))
        group_totals = {g: int(n[i]) for i, g in enumerate(labels)}
    counts = topic_tweet_counts(corpus, topics)
    out = []
    for i, topic in enumerate(topics.topics):
        share = {g: (counts[i, j] / group_totals[g] if group_totals.get(g) else 0.0) for j, g in enumerate(labels)}
        out.append(TopicAggregate(
            topic,
            per_group_tweet_share=share,
            per_group_tweet_count={g: int(counts[i, j]) for j, g in enumerate(labels)},
        ))
    return out


def roi_table(pairs, records, topics: TopicModel, corpus, focal: str = "ira",
              group_totals: dict[str, int] | None = None, strict: bool = True) -> list[dict]:
    """Focal group's tweet volume, lead fraction and impact fraction per topic."""
    groups = list(corpus.group_labels)
    if focal not in groups:
        raise DataError(f"focal group {focal!r} is not among the corpus groups")
    lead = {a.topic: a for a in lead_fractions(pairs, topics, groups, strict)}
    imp = {a.topic: a for a in impact_fractions(records, topics, groups, strict)}
    share = {a.topic: a for a in tweet_share(corpus, topics, group_totals)}
    rows = []
    for topic in topics.topics:
        rows.append({
            "topic": topic,
            "tweet_count": share[topic].per_group_tweet_count[focal],
            "lead_fraction": lead[topic].per_group_lead_fraction[focal],
            "impact_fraction": imp[topic].per_group_impact_fraction[focal],
        })
    return rows


def pairwise_lead(pairs, a: str, b: str, topics: TopicModel, strict: bool = True) -> list[dict]:
    """Per topic, among pairs between exactly groups {a, b}: the share led by each."""
    if a == b:
        raise DataError("pairwise_lead needs two different groups")
    tally: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    for p in pairs:
        if {p.leader.group, p.follower.group} != {a, b}:
            continue
        topic = _topic(p.term, topics, strict)
        if topic is None:
            continue
        tally[topic][0 if p.leader.group == a else 1] += 1
    rows = []
    for topic in topics.topics:
        if topic not in tally:
            continue
        na, nb = tally[topic]
        rows.append({
            "topic": topic,
            "n_pairs": na + nb,
            "a_leads": na,
            "b_leads": nb,
            "a_leads_fraction": na / (na + nb),
            "b_leads_fraction": nb / (na + nb),
        })
    return rows
