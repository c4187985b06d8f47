"""Bootstrap confidence intervals and sensitivity sweeps over the spike-pair pipeline."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .clustering import TopicModel
from .errors import DataError
from .impact import impact_fractions, impact_records, lead_fractions
from .rng import stream
from .spikes import SpikeParams, candidate_table, pair_spikes, select
from .timeseries import SeriesSet, Usage

logger = logging.getLogger(__name__)

STATISTICS = ("lead_fraction", "impact_fraction")


@dataclass
class BootstrapSpec:
    n_resamples: int = 1000
    seed: int = 0
    statistic: str = "lead_fraction"
    ci_level: float = 0.95
    threads: int = 1

    def __post_init__(self):
        if self.n_resamples < 1:
            raise ValueError("n_resamples must be >= 1")
        if not 0 < self.ci_level < 1:
            raise ValueError("ci_level must lie in (0, 1)")
        if self.statistic not in STATISTICS:
            raise ValueError(f"statistic must be one of {STATISTICS}")


@dataclass
class CiRow:
    topic: str
    group: str
    point: float
    lo: float
    hi: float
    half_width: float
    flagged: bool = False
    n_undefined: int = 0


def percentile_bounds(samples: np.ndarray, ci_level: float) -> tuple[np.ndarray, np.ndarray]:
    """Percentile interval along axis 0, ignoring undefined (NaN) replicates."""
    alpha = (1.0 - ci_level) / 2.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        lo, hi = np.nanpercentile(samples, [100 * alpha, 100 * (1 - alpha)], axis=0)
    return lo, hi


class _PairFrame:
    """Pairs as index arrays: topic, leader group and impact per pair (topic -1 = excluded)."""

    def __init__(self, records, topics: TopicModel, groups, strict: bool = True):
        self.topics = topics.topics
        self.groups = list(groups)
        tpos = {t: i for i, t in enumerate(self.topics)}
        gpos = {g: i for i, g in enumerate(self.groups)}
        n = len(records)
        self.topic = np.full(n, -1, dtype=np.int64)
        self.leader = np.zeros(n, dtype=np.int64)
        self.impact = np.zeros(n, dtype=np.float64)
        for i, r in enumerate(records):
            try:
                label = topics.topic(r.pair.term)
            except KeyError:
                if strict:
                    raise DataError(f"term {r.pair.term!r} has no topic assignment") from None
                label = None
            if label is not None:
                self.topic[i] = tpos[label]
            self.leader[i] = gpos[r.pair.leader.group]
            self.impact[i] = r.impacted_users

    @property
    def cells(self) -> int:
        return len(self.topics) * len(self.groups)

    def statistic(self, weights: np.ndarray, statistic: str) -> np.ndarray:
        """Per (topic, group) fraction for each row of pair ``weights``; NaN when undefined.

        weights: (reps, n_pairs). Returns (reps, n_topics, n_groups).
        """
        weights = np.atleast_2d(weights)
        keep = self.topic >= 0
        cell = self.topic[keep] * len(self.groups) + self.leader[keep]
        w = weights[:, keep].astype(np.float64)
        if statistic == "impact_fraction":
            w = w * self.impact[keep]
        indicator = sp.csr_matrix((np.ones(cell.size), (np.arange(cell.size), cell)), shape=(cell.size, self.cells))
        # integer-valued sums, exact in float64
        sums = np.asarray((indicator.T @ w.T).T).reshape(weights.shape[0], len(self.topics), len(self.groups))
        totals = sums.sum(axis=2, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(totals > 0, sums / totals, np.nan)


def resample_weights(n: int, seed: int, rep: int) -> np.ndarray:
    """Multiplicity of each of ``n`` pairs in bootstrap resample ``rep``."""
    idx = stream(seed, "bootstrap", rep).integers(0, n, size=n)
    return np.bincount(idx, minlength=n)


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _ci_rows(topics, groups, point: np.ndarray, reps: np.ndarray, ci_level: float) -> list[CiRow]:
    lo, hi = percentile_bounds(reps, ci_level)
    undefined = np.isnan(reps).sum(axis=0)
    rows = []
    for ti, topic in enumerate(topics):
        for gi, group in enumerate(groups):
            p, a, b = float(point[ti, gi]), float(lo[ti, gi]), float(hi[ti, gi])
            rows.append(CiRow(
                topic, group, p, a, b, (b - a) / 2,
                flagged=bool(np.isnan(p) or np.isnan(a) or not (a <= p <= b)),
                n_undefined=int(undefined[ti, gi]),
            ))
    return rows


def bootstrap_ci(pairs, records, topics: TopicModel, spec: BootstrapSpec, groups=None,
                 strict: bool = True) -> list[CiRow]:
    """Percentile CIs from resampling the spike-pair set with replacement.

    ``records`` are the ImpactRecords of ``pairs`` (same order).
    """
    records = list(records)
    if not records:
        raise DataError("cannot bootstrap an empty pair set")
    if pairs is not None and len(pairs) != len(records):
        raise DataError("pairs and impact records differ in length")
    if groups is None:
        groups = sorted({r.pair.leader.group for r in records} | {r.pair.follower.group for r in records})
    frame = _PairFrame(records, topics, groups, strict)
    n = len(records)
    point = frame.statistic(np.ones(n), spec.statistic)[0]
    weights = np.vstack(_map(lambda r: resample_weights(n, spec.seed, r), range(spec.n_resamples), spec.threads))
    reps = frame.statistic(weights, spec.statistic)
    return _ci_rows(frame.topics, frame.groups, point, reps, spec.ci_level)


@dataclass
class SweepTable:
    """Focal-group statistic per topic (rows) and parameter value (columns)."""

    parameter: str
    values: list
    topics: list[str]
    lead: dict[str, list[float]] = field(default_factory=dict)
    impact: dict[str, list[float]] = field(default_factory=dict)
    n_pairs: list[int] = field(default_factory=list)
    n_spikes: list[int] = field(default_factory=list)
    n_target_pairs: list[int] = field(default_factory=list)

    def std(self, which: str = "lead") -> dict[str, float]:
        """Sample standard deviation across the parameter values, per topic."""
        table = getattr(self, which)
        return {t: (float(np.std(v, ddof=1)) if len(v) > 1 else 0.0) for t, v in table.items()}


def _aggregate(pairs, usage, topics, groups, focal, cache):
    records = impact_records(pairs, usage, cache=cache)
    lead = {a.topic: a.per_group_lead_fraction[focal] for a in lead_fractions(pairs, topics, groups, strict=False)}
    imp = {a.topic: a.per_group_impact_fraction[focal] for a in impact_fractions(records, topics, groups, strict=False)}
    return lead, imp


def sweep_num_spikes(series: SeriesSet, usage: Usage, topics: TopicModel, k_values=(1, 2, 3, 4, 5),
                     params: SpikeParams | None = None, focal: str = "ira") -> SweepTable:
    """Rerun detection, pairing and aggregation with top_k = k for each k.

    Pairs on terms outside the clustered set are skipped.
    """
    params = params or SpikeParams()
    groups = list(usage.groups)
    cands = candidate_table(series, max(k_values))
    table = SweepTable("top_k", list(k_values), topics.topics,
                       lead={t: [] for t in topics.topics}, impact={t: [] for t in topics.topics})
    cache: dict = {}
    for k in k_values:
        spikes = select(cands, replace(params, top_k=k))
        pairs = pair_spikes(spikes, params)
        lead, imp = _aggregate(pairs, usage, topics, groups, focal, cache)
        for t in topics.topics:
            table.lead[t].append(lead[t])
            table.impact[t].append(imp[t])
        table.n_pairs.append(len(pairs))
        table.n_spikes.append(len(spikes))
    return table


def sweep_threshold(series: SeriesSet, usage: Usage, topics: TopicModel, thresholds=(5, 10, 20, 50, 100),
                    target_group: str = "user", params: SpikeParams | None = None,
                    focal: str = "ira") -> SweepTable:
    """Raise the minimum spike height for ``target_group`` only and recompute."""
    params = params or SpikeParams()
    if target_group not in usage.groups:
        raise DataError(f"target group {target_group!r} is not among the corpus groups")
    groups = list(usage.groups)
    cands = candidate_table(series, params.top_k)
    table = SweepTable("min_height", list(thresholds), topics.topics,
                       lead={t: [] for t in topics.topics}, impact={t: [] for t in topics.topics})
    cache: dict = {}
    for n in thresholds:
        overrides = dict(params.min_height_overrides, **{target_group: n})
        spikes = select(cands, replace(params, min_height_overrides=overrides))
        pairs = pair_spikes(spikes, params)
        lead, imp = _aggregate(pairs, usage, topics, groups, focal, cache)
        for t in topics.topics:
            table.lead[t].append(lead[t])
            table.impact[t].append(imp[t])
        table.n_pairs.append(len(pairs))
        table.n_spikes.append(sum(s.group == target_group for s in spikes))
        table.n_target_pairs.append(sum(target_group in (p.leader.group, p.follower.group) for p in pairs))
    return table


def per_group_quota(counts: dict[str, int], sample_size: int) -> int:
    """Spikes drawn per group: sample_size split evenly, capped by the smallest group."""
    empty = [g for g, c in counts.items() if c == 0]
    if empty:
        raise DataError(f"group(s) with no candidate spikes: {', '.join(empty)}")
    quota = sample_size // len(counts)
    smallest = min(counts.values())
    if smallest < quota:
        logger.warning("sample of %d needs %d spikes per group but the smallest group has %d; scaling down",
                       sample_size, quota, smallest)
        quota = smallest
    return quota


def group_size_sample(spikes_by_group: dict[str, list], quota: int, seed: int, rep: int) -> list:
    """One equal-split draw: ``quota`` spikes per group, uniformly without replacement."""
    rng = stream(seed, "group-size", rep)
    out = []
    for g in sorted(spikes_by_group):
        pool = spikes_by_group[g]
        out.extend(pool[i] for i in np.sort(rng.choice(len(pool), size=quota, replace=False)))
    return out


@dataclass
class GroupSizeResult:
    lead: list[CiRow]
    impact: list[CiRow]
    quota: int
    lead_reps: np.ndarray
    impact_reps: np.ndarray


def sweep_group_size(spikes, usage: Usage, topics: TopicModel, sample_size: int = 5000, reps: int = 1000,
                     seed: int = 0, params: SpikeParams | None = None, ci_level: float = 0.95,
                     threads: int = 1) -> GroupSizeResult:
    """Repeatedly draw equal numbers of candidate spikes per group, re-pair and re-aggregate.

    ``spikes`` are the top-3 candidates of the main run. The reported point value is the
    mean over replicates.
    """
    params = params or SpikeParams()
    groups = list(usage.groups)
    by_group = {g: sorted(s for s in spikes if s.group == g) for g in groups}
    quota = per_group_quota({g: len(v) for g, v in by_group.items()}, sample_size)
    cache: dict = {}

    def one(rep):
        pairs = pair_spikes(group_size_sample(by_group, quota, seed, rep), params)
        records = impact_records(pairs, usage, cache=cache)
        if not records:
            nan = np.full((len(topics.topics), len(groups)), np.nan)
            return nan, nan
        frame = _PairFrame(records, topics, groups, strict=False)
        ones = np.ones(len(records))
        return frame.statistic(ones, "lead_fraction")[0], frame.statistic(ones, "impact_fraction")[0]

    results = _map(one, range(reps), threads)
    lead_reps = np.stack([r[0] for r in results])
    impact_reps = np.stack([r[1] for r in results])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        lead_point = np.nanmean(lead_reps, axis=0)
        impact_point = np.nanmean(impact_reps, axis=0)
    return GroupSizeResult(
        _ci_rows(topics.topics, groups, lead_point, lead_reps, ci_level),
        _ci_rows(topics.topics, groups, impact_point, impact_reps, ci_level),
        quota, lead_reps, impact_reps,
    )
