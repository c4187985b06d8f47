"""``spikelead`` command line: one subcommand per pipeline stage, sharing a run directory.

Typical session::

    spikelead synth --run-dir run
    spikelead ingest --run-dir run
    spikelead vocab --run-dir run
    ...
    spikelead score --run-dir run

Exit codes: 0 success, 1 usage error, 2 data error, 3 missing or stale upstream stage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__, synth
from .clustering import (
    KMeansParams, TopicModel, apply_labels, build_context_vectors, cluster_report, kmeans, tfidf,
)
from .config import PipelineConfig, SweepParams, dump_config, load_config
from .errors import DataError, DependencyError, SpikeleadError, UsageError
from .impact import (
    IMPACT_WINDOW_HOURS, ImpactRecord, impact_fractions, impact_records, lead_fractions, pairwise_lead,
    roi_table, tweet_share,
)
from .ingest import Corpus, corpus_stats, format_instant, load_corpus, write_corpus
from .runstore import RunDir, file_digest
from .spikes import SpikeParams, detect_all, pair_spikes
from .stats import BootstrapSpec, bootstrap_ci, sweep_group_size, sweep_num_spikes, sweep_threshold
from .tables import (
    PAIR_COLS, SPIKE_COLS, pair_from, pair_row, read_table, spike_from, spike_row, write_table,
)
from .textprep import FilterParams, TokenizedCorpus, vocabulary_report
from .timeseries import SeriesSet, Usage, build_series

logger = logging.getLogger("spikelead")


# --- columnar corpus storage ------------------------------------------------------

def save_columns(out: Path, corpus: Corpus) -> None:
    """Text-free columns plus the token matrix; enough for every stage after ingest."""
    np.save(out / "timestamps.npy", np.asarray(corpus.timestamps, dtype=np.int64))
    np.save(out / "groups.npy", np.asarray(corpus.groups, dtype=np.int16))
    np.save(out / "users.npy", np.asarray(corpus.user_codes, dtype=np.int64))
    tc = corpus.tokens
    np.save(out / "tokens_ptr.npy", np.asarray(tc.ptr, dtype=np.int64))
    np.save(out / "tokens_ids.npy", np.asarray(tc.ids, dtype=np.int32))
    (out / "terms.json").write_text(json.dumps(tc.terms, ensure_ascii=False) + "\n", encoding="utf-8")


def load_columns(d: Path, labels, window) -> Corpus:
    ts = np.load(d / "timestamps.npy")
    n = len(ts)
    blank = [""] * n
    c = Corpus(blank, blank, np.load(d / "groups.npy"), ts, blank, labels, window, _sorted=True)
    c.__dict__["user_codes"] = np.load(d / "users.npy")
    terms = json.loads((d / "terms.json").read_text(encoding="utf-8"))
    c.__dict__["tokens"] = TokenizedCorpus(terms, np.load(d / "tokens_ptr.npy"), np.load(d / "tokens_ids.npy"))
    return c


# --- shared stage helpers -----------------------------------------------------------

def _spike_params(cfg: PipelineConfig) -> dict:
    d = asdict(cfg.spikes)
    d.pop("max_lag_hours")
    return d


class Context:
    """Resolved configuration and run directory for one invocation."""

    def __init__(self, args, rd: RunDir):
        self.args = args
        self.rd = rd
        self._cfg = None

    @property
    def cfg(self) -> PipelineConfig:
        if self._cfg is None:
            self._cfg = self._load_cfg()
        return self._cfg

    def _load_cfg(self) -> PipelineConfig:
        a = self.args
        path = a.config or (self.rd.root / "config.toml")
        if not Path(path).exists():
            raise UsageError("no configuration: pass --config FILE (or run `spikelead synth` in this run directory)")
        cfg = load_config(path)
        try:
            if a.top_k is not None or a.min_height is not None or a.max_lag_hours is not None:
                cfg.spikes = replace(
                    cfg.spikes,
                    top_k=cfg.spikes.top_k if a.top_k is None else a.top_k,
                    min_height=cfg.spikes.min_height if a.min_height is None else a.min_height,
                    max_lag_hours=cfg.spikes.max_lag_hours if a.max_lag_hours is None else a.max_lag_hours,
                )
            if a.k_clusters is not None:
                cfg.cluster = replace(cfg.cluster, k=a.k_clusters)
            if a.seed is not None:
                cfg.cluster = replace(cfg.cluster, seed=a.seed)
                cfg.bootstrap = replace(cfg.bootstrap, seed=a.seed)
                cfg.sweep = replace(cfg.sweep, seed=a.seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if a.focal_group is not None:
            cfg.focal_group = a.focal_group
        if a.threads is not None:
            if a.threads < 1:
                raise UsageError("--threads must be >= 1")
            cfg.threads = a.threads
        cfg.cluster = replace(cfg.cluster, threads=cfg.threads)
        cfg.bootstrap = replace(cfg.bootstrap, threads=cfg.threads)
        return cfg

    # loaders for upstream artifacts

    def stats(self) -> tuple[str, dict[str, int]]:
        key, d = self.rd.require("ingest")
        rows = read_table(d / "stats.tsv")
        return key, {r["group"]: int(r["messages"]) for r in rows if r["group"] != "total"}

    def filtered(self) -> tuple[str, Corpus, list[str]]:
        key, d = self.rd.require("vocab")
        cfg = self.cfg
        corpus = load_columns(d, tuple(cfg.groups), (cfg.start, cfg.end))
        terms = [r["term"] for r in read_table(d / "vocab.tsv") if r["kept"] == "1"]
        return key, corpus, terms

    def usage(self) -> tuple[str, Usage]:
        key, corpus, terms = self.filtered()
        return key, Usage(corpus, terms)

    def series(self) -> tuple[str, SeriesSet]:
        key, d = self.rd.require("series")
        keys = [(r["term"], r["group"]) for r in read_table(d / "series_keys.tsv")]
        return key, SeriesSet(keys, np.load(d / "series.npy"), self.cfg.start)

    def spikes(self):
        key, d = self.rd.require("spikes")
        return key, [spike_from(r) for r in read_table(d / "spikes.tsv")]

    def pairs(self):
        key, d = self.rd.require("pairs")
        return key, [pair_from(r) for r in read_table(d / "pairs.tsv")]

    def impact(self):
        key, d = self.rd.require("impact")
        return key, [ImpactRecord(pair_from(r), int(r["impacted_users"])) for r in read_table(d / "impact.tsv")]

    def topics(self, hint: str | None = None) -> tuple[str, TopicModel]:
        key, d = self.rd.require("label", hint)
        rows = read_table(d / "topics.tsv")
        labels = {int(r["cluster_id"]): r["label"] for r in read_table(d / "labels.tsv")}
        k = int(self.rd.entry("cluster")["params"]["k"])
        return key, TopicModel({r["term"]: int(r["cluster_id"]) for r in rows}, labels, k)

    def truth(self):
        if self.args.truth:
            return {"truth": file_digest(self.args.truth)}, {}, synth.read_truth(self.args.truth)
        key, d = self.rd.require("synth")
        return {}, {"synth": key}, synth.read_truth(d / "truth.tsv")


# --- stages -------------------------------------------------------------------------

def cmd_synth(ctx: Context) -> None:
    a = ctx.args
    if a.scenario:
        scenario = synth.load_config(a.scenario)
        if a.seed is not None:
            scenario.seed = a.seed
    else:
        scenario = synth.demo_config(
            n_events=a.events, seed=0 if a.seed is None else a.seed, background_rate=a.background_rate,
            users_per_group=a.users_per_group, window_hours=a.window_hours,
        )
    text = synth.dump_config(scenario)
    anchor = scenario.anchor_group or next(iter(scenario.groups))
    topics = sorted({e.topic for e in scenario.events if e.topic})
    groups = list(scenario.groups)
    cfg = PipelineConfig(
        groups={g: g for g in groups},
        start=scenario.start,
        end=scenario.end,
        # every planted term is wanted, however rare or common
        vocab=FilterParams(anchor_group=anchor, anchor_min_tweets=1, anchor_max_fraction=1.0,
                           other_min_uses=1, any_group_max_fraction=1.0),
        cluster=KMeansParams(k=max(1, min(len(topics), len(scenario.events))), seed=scenario.seed),
        bootstrap=BootstrapSpec(seed=scenario.seed),
        sweep=SweepParams(threshold_group="user" if "user" in groups else groups[-1], seed=scenario.seed),
        focal_group=anchor,
    )
    cfg_text = dump_config(cfg)

    def build(out: Path, key: str) -> None:
        corpus, events = synth.generate(scenario)
        write_corpus(corpus, out / "corpus.jsonl")
        synth.write_truth(events, out / "truth.tsv")
        (out / "scenario.toml").write_text(text, encoding="utf-8")
        (out / "config.toml").write_text(cfg_text, encoding="utf-8")

    out = ctx.rd.run("synth", {"scenario": text}, {}, {}, build)
    # default pipeline configuration for this run directory
    (ctx.rd.root / "config.toml").write_text(cfg_text, encoding="utf-8")
    print(f"synthetic corpus: {out / 'corpus.jsonl'}")


def cmd_ingest(ctx: Context) -> None:
    cfg = ctx.cfg
    if ctx.args.input:
        path = Path(ctx.args.input)
        if not path.exists():
            raise DataError(f"input file not found: {path}")
    else:
        if ctx.rd.entry("synth") is None:
            raise UsageError("ingest needs --input FILE (or a prior `spikelead synth` in this run directory)")
        path = ctx.rd.require("synth")[1] / "corpus.jsonl"
    params = {"groups": cfg.groups, "start": format_instant(cfg.start), "end": format_instant(cfg.end),
              "skip_malformed": cfg.skip_malformed}

    def build(out: Path, key: str) -> None:
        corpus = load_corpus(path, cfg.ingest)
        if len(corpus) == 0:
            raise DataError(f"{path}: no messages inside the analysis window")
        write_corpus(corpus, out / "corpus.jsonl")
        save_columns(out, corpus)
        stats = corpus_stats(corpus)
        write_table(out / "stats.tsv", ["group", "messages", "users"],
                    [[g, s["messages"], s["users"]] for g, s in stats.items()], key)
        r = corpus.report
        write_table(out / "load_report.tsv", ["lines", "loaded", "dropped_out_of_window", "rejected"],
                    [[r.lines, r.loaded, r.dropped_out_of_window, r.rejected]], key)

    out = ctx.rd.run("ingest", params, {}, {"input": file_digest(path)}, build)
    for row in read_table(out / "stats.tsv"):
        print(f"{row['group']}\t{row['messages']} messages\t{row['users']} users")


def cmd_vocab(ctx: Context) -> None:
    cfg = ctx.cfg
    up, d = ctx.rd.require("ingest")

    def build(out: Path, key: str) -> None:
        corpus = load_columns(d, tuple(cfg.groups), (cfg.start, cfg.end))
        report = vocabulary_report(corpus, cfg.vocab)
        kept = [e for e in report if e.kept]
        if not kept:
            raise DataError("the vocabulary filter kept no terms")
        labels = corpus.group_labels
        header = ["term", "kept", "reason"] + [f"tweets_{g}" for g in labels] + [f"fraction_{g}" for g in labels]
        write_table(out / "vocab.tsv", header,
                    ([e.term, e.kept, e.reason] + [e.per_group_tweet_count[g] for g in labels]
                     + [e.per_group_tweet_fraction[g] for g in labels] for e in report), key)
        # messages with at least one kept term
        tc = corpus.tokens
        in_vocab = np.zeros(len(tc.terms), dtype=bool)
        in_vocab[[tc.lookup[e.term] for e in kept]] = True
        keep = np.zeros(len(corpus), dtype=bool)
        keep[tc.message_index()[in_vocab[tc.ids]]] = True
        index = np.flatnonzero(keep)
        sub = corpus.subset(index)
        sub.__dict__["user_codes"] = corpus.user_codes[index]
        save_columns(out, sub)
        np.save(out / "index.npy", index)

    out = ctx.rd.run("vocab", asdict(cfg.vocab), {"ingest": up}, {}, build)
    rows = read_table(out / "vocab.tsv")
    print(f"{sum(r['kept'] == '1' for r in rows)} of {len(rows)} candidate terms kept")


def cmd_series(ctx: Context) -> None:
    up, corpus, terms = ctx.filtered()

    def build(out: Path, key: str) -> None:
        ss = build_series(corpus, terms)
        np.save(out / "series.npy", ss.values)
        write_table(out / "series_keys.tsv", ["term", "group"], ss.keys, key)

    out = ctx.rd.run("series", {"window_hours": 24}, {"vocab": up}, {}, build)
    print(f"{len(read_table(out / 'series_keys.tsv'))} series over {corpus.hours} hours")


def cmd_spikes(ctx: Context) -> None:
    cfg = ctx.cfg
    up, ss = ctx.series()

    def build(out: Path, key: str) -> None:
        spikes = detect_all(ss, cfg.spikes)
        write_table(out / "spikes.tsv", SPIKE_COLS, (spike_row(s, cfg.start) for s in spikes), key)

    out = ctx.rd.run("spikes", _spike_params(cfg), {"series": up}, {}, build)
    print(f"{len(read_table(out / 'spikes.tsv'))} spikes")


def cmd_pairs(ctx: Context) -> None:
    cfg = ctx.cfg
    up, spikes = ctx.spikes()

    def build(out: Path, key: str) -> None:
        pairs = pair_spikes(spikes, cfg.spikes)
        write_table(out / "pairs.tsv", PAIR_COLS, (pair_row(p, cfg.start) for p in pairs), key)

    out = ctx.rd.run("pairs", {"max_lag_hours": cfg.spikes.max_lag_hours}, {"spikes": up}, {}, build)
    rows = read_table(out / "pairs.tsv")
    print(f"{len(rows)} spike pairs over {len({r['term'] for r in rows})} terms")


def cmd_impact(ctx: Context) -> None:
    cfg = ctx.cfg
    up_pairs, pairs = ctx.pairs()
    up_vocab, usage = ctx.usage()

    def build(out: Path, key: str) -> None:
        records = impact_records(pairs, usage)
        write_table(out / "impact.tsv", PAIR_COLS + ["impacted_users"],
                    (pair_row(r.pair, cfg.start) + [r.impacted_users] for r in records), key)

    out = ctx.rd.run("impact", {"window_hours": IMPACT_WINDOW_HOURS}, {"pairs": up_pairs, "vocab": up_vocab}, {},
                     build)
    rows = read_table(out / "impact.tsv")
    print(f"{len(rows)} pairs, total potential impact {sum(int(r['impacted_users']) for r in rows)}")


def cmd_cluster(ctx: Context) -> None:
    cfg = ctx.cfg
    up_pairs, pairs = ctx.pairs()
    up_vocab, usage = ctx.usage()
    params = asdict(cfg.cluster)
    params.pop("threads")

    def build(out: Path, key: str) -> None:
        vectors = build_context_vectors(pairs, usage)
        matrix, columns = tfidf(vectors)
        result = kmeans(matrix, cfg.cluster)
        write_table(out / "assignments.tsv", ["term", "cluster_id", "context_tweets", "context_tokens"],
                    ([v.term, int(c), v.n_tweets, len(v.context_counts)] for v, c in zip(vectors, result.labels)),
                    key)
        report = cluster_report(vectors, matrix, columns, result)
        write_table(out / "clusters.tsv", ["cluster_id", "n_terms", "top_tokens", "terms"],
                    ([r["cluster_id"], r["n_terms"], r["top_tokens"], r["terms"]] for r in report), key)
        write_table(out / "objective.tsv", ["iteration", "objective"], enumerate(result.history), key)

    out = ctx.rd.run("cluster", params, {"pairs": up_pairs, "vocab": up_vocab}, {}, build)
    n = len(read_table(out / "clusters.tsv"))
    print(f"{n} non-empty clusters; label them with `spikelead label --labels FILE` (columns cluster_id, label)")


def _labels_from_truth(assignments: dict[str, int], events) -> dict[int, str]:
    """Majority planted topic per cluster; clusters with no planted term become 'other'."""
    topic_of = {e.term: e.topic for e in events if e.topic}
    votes: dict[int, Counter] = {}
    for term, c in assignments.items():
        votes.setdefault(c, Counter())
        if term in topic_of:
            votes[c][topic_of[term]] += 1
    return {c: (min(v.items(), key=lambda kv: (-kv[1], kv[0]))[0] if v else "other") for c, v in votes.items()}


def cmd_label(ctx: Context) -> None:
    a = ctx.args
    up, d = ctx.rd.require("cluster")
    assignments = {r["term"]: int(r["cluster_id"]) for r in read_table(d / "assignments.tsv")}
    k = int(ctx.rd.entry("cluster")["params"]["k"])
    upstream = {"cluster": up}
    if a.labels:
        labels_path = Path(a.labels)
        if not labels_path.exists():
            raise DataError(f"label file not found: {labels_path}")
        inputs = {"labels": file_digest(labels_path)}
        model = apply_labels(assignments, labels_path, k)
    elif a.from_truth:
        inputs, extra, events = ctx.truth()
        upstream.update(extra)
        model = apply_labels(assignments, _labels_from_truth(assignments, events), k)
    else:
        raise UsageError("label needs --labels FILE or --from-truth")

    def build(out: Path, key: str) -> None:
        write_table(out / "labels.tsv", ["cluster_id", "label"], sorted(model.labels.items()), key)
        write_table(out / "topics.tsv", ["term", "cluster_id", "label", "retained"],
                    ([t, c, model.labels[c], model.topic(t) is not None] for t, c in sorted(model.assignments.items())),
                    key)

    ctx.rd.run("label", {"mode": "file" if a.labels else "truth"}, upstream, inputs, build)
    print(f"topics: {', '.join(model.topics)}")


def cmd_figures(ctx: Context) -> None:
    cfg = ctx.cfg
    up_label, topics = ctx.topics(hint="topic labels required")
    up_impact, records = ctx.impact()
    up_vocab, usage = ctx.usage()
    up_series, ss = ctx.series()
    _, totals = ctx.stats()
    pairs = [r.pair for r in records]
    groups = list(cfg.groups)
    focal = cfg.focal_group
    if focal not in groups:
        raise DataError(f"focal group {focal!r} is not among the declared groups")
    params = {"focal_group": focal, "series_pairs": cfg.series_pairs}

    def build(out: Path, key: str) -> None:
        lead = lead_fractions(pairs, topics, groups)
        imp = impact_fractions(records, topics, groups)
        share = tweet_share(usage.corpus, topics, totals)
        write_table(out / "fig2_lead.tsv", ["topic", "group", "lead_fraction", "n_pairs"],
                    ([a.topic, g, a.per_group_lead_fraction[g], a.n_pairs] for a in lead for g in groups), key)
        write_table(out / "fig2_impact.tsv", ["topic", "group", "impact_fraction", "total_impact"],
                    ([a.topic, g, a.per_group_impact_fraction[g], a.total_impact] for a in imp for g in groups), key)
        write_table(out / "fig2_share.tsv", ["topic", "group", "tweet_share", "tweet_count"],
                    ([a.topic, g, a.per_group_tweet_share[g], a.per_group_tweet_count[g]]
                     for a in share for g in groups), key)
        roi = roi_table(pairs, records, topics, usage.corpus, focal, totals)
        write_table(out / "fig3_roi.tsv", ["topic", "group", "tweet_count", "lead_fraction", "impact_fraction"],
                    ([r["topic"], focal, r["tweet_count"], r["lead_fraction"], r["impact_fraction"]] for r in roi),
                    key)
        rows = []
        for other in groups:
            if other == focal:
                continue
            for r in pairwise_lead(pairs, focal, other, topics):
                rows.append([r["topic"], focal, other, r["n_pairs"], r["a_leads"], r["b_leads"],
                             r["a_leads_fraction"], r["b_leads_fraction"]])
        write_table(out / "fig4_pairwise.tsv",
                    ["topic", "group_a", "group_b", "n_pairs", "a_leads", "b_leads", "a_leads_fraction",
                     "b_leads_fraction"], rows, key)
        _pair_series(out, key, records, ss, cfg)

    out = ctx.rd.run("figures", params,
                     {"label": up_label, "impact": up_impact, "vocab": up_vocab, "series": up_series}, {}, build)
    print(f"plot data written to {out}")


def _pair_series(out: Path, key: str, records, ss: SeriesSet, cfg: PipelineConfig) -> None:
    """Full leader and follower series of the highest-impact pairs, spike hours marked."""
    order = sorted(range(len(records)), key=lambda i: (-records[i].impacted_users, i))[: cfg.series_pairs]
    hours = ss.hours
    index_rows, series_rows = [], []
    for rank, i in enumerate(order, start=1):
        r = records[i]
        p = r.pair
        lo = max(p.leader.hour - IMPACT_WINDOW_HOURS, 0)
        hi = min(p.follower.hour + 24, hours - 1)
        index_rows.append([rank] + pair_row(p, cfg.start) + [r.impacted_users, lo, hi,
                                                             format_instant(cfg.start + 3600 * lo),
                                                             format_instant(cfg.start + 3600 * hi)])
        for role, s in (("leader", p.leader), ("follower", p.follower)):
            values = ss.get(p.term, s.group)
            for t in range(hours):
                series_rows.append([rank, role, s.group, t, format_instant(cfg.start + 3600 * t), int(values[t]),
                                    t == s.hour])
    write_table(out / "pair_index.tsv",
                ["rank"] + PAIR_COLS + ["impacted_users", "zoom_lo_hour", "zoom_hi_hour", "zoom_lo_utc",
                                        "zoom_hi_utc"], index_rows, key)
    write_table(out / "pair_series.tsv", ["rank", "role", "group", "hour", "hour_utc", "distinct_users", "spike"],
                series_rows, key)


def cmd_bootstrap(ctx: Context) -> None:
    cfg = ctx.cfg
    up_label, topics = ctx.topics()
    up_impact, records = ctx.impact()
    params = asdict(cfg.bootstrap)
    params.pop("threads")
    params.pop("statistic")
    groups = list(cfg.groups)

    def build(out: Path, key: str) -> None:
        rows = []
        for statistic in ("lead_fraction", "impact_fraction"):
            spec = replace(cfg.bootstrap, statistic=statistic)
            for c in bootstrap_ci(None, records, topics, spec, groups, strict=False):
                rows.append([statistic, c.topic, c.group, c.point, c.lo, c.hi, c.half_width, c.flagged,
                             c.n_undefined])
        write_table(out / "bootstrap_ci.tsv",
                    ["statistic", "topic", "group", "point", "lo", "hi", "half_width", "flagged", "n_undefined"],
                    rows, key)

    out = ctx.rd.run("bootstrap", params, {"label": up_label, "impact": up_impact}, {}, build)
    print(f"confidence intervals written to {out / 'bootstrap_ci.tsv'}")


def cmd_sweep(ctx: Context) -> None:
    cfg = ctx.cfg
    up_label, topics = ctx.topics()
    up_series, ss = ctx.series()
    up_spikes, spikes = ctx.spikes()
    up_vocab, usage = ctx.usage()
    focal = cfg.focal_group
    params = {"sweep": asdict(cfg.sweep), "spikes": asdict(cfg.spikes), "focal_group": focal,
              "ci_level": cfg.bootstrap.ci_level}

    def table_rows(t):
        for topic in t.topics:
            for j, v in enumerate(t.values):
                yield [topic, v, t.lead[topic][j], t.impact[topic][j]]

    def build(out: Path, key: str) -> None:
        by_k = sweep_num_spikes(ss, usage, topics, cfg.sweep.k_values, cfg.spikes, focal)
        write_table(out / "sweep_top_k.tsv", ["topic", "top_k", "lead_fraction", "impact_fraction"],
                    table_rows(by_k), key)
        write_table(out / "sweep_top_k_counts.tsv", ["top_k", "n_spikes", "n_pairs"],
                    zip(by_k.values, by_k.n_spikes, by_k.n_pairs), key)
        by_n = sweep_threshold(ss, usage, topics, cfg.sweep.thresholds, cfg.sweep.threshold_group, cfg.spikes, focal)
        write_table(out / "sweep_threshold.tsv", ["topic", "min_height", "lead_fraction", "impact_fraction"],
                    table_rows(by_n), key)
        write_table(out / "sweep_threshold_counts.tsv",
                    ["min_height", "target_group", "n_target_spikes", "n_pairs", "n_target_pairs"],
                    ([v, cfg.sweep.threshold_group, a, b, c]
                     for v, a, b, c in zip(by_n.values, by_n.n_spikes, by_n.n_pairs, by_n.n_target_pairs)), key)
        sd_k, sd_n = by_k.std("lead"), by_n.std("lead")
        sdi_k, sdi_n = by_k.std("impact"), by_n.std("impact")
        write_table(out / "sweep_std.tsv", ["topic", "lead_std_top_k", "impact_std_top_k", "lead_std_threshold",
                                            "impact_std_threshold"],
                    ([t, sd_k[t], sdi_k[t], sd_n[t], sdi_n[t]] for t in topics.topics), key)
        gs = sweep_group_size(spikes, usage, topics, cfg.sweep.sample_size, cfg.sweep.reps, cfg.sweep.seed,
                              cfg.spikes, cfg.bootstrap.ci_level, cfg.threads)
        write_table(out / "sweep_group_size.tsv",
                    ["statistic", "topic", "group", "mean", "lo", "hi", "half_width", "flagged", "n_undefined",
                     "per_group_sample"],
                    ([name, c.topic, c.group, c.point, c.lo, c.hi, c.half_width, c.flagged, c.n_undefined, gs.quota]
                     for name, rows in (("lead_fraction", gs.lead), ("impact_fraction", gs.impact)) for c in rows),
                    key)

    out = ctx.rd.run("sweep", params, {"label": up_label, "series": up_series, "spikes": up_spikes,
                                       "vocab": up_vocab}, {}, build)
    print(f"sensitivity tables written to {out}")


def cmd_score(ctx: Context) -> None:
    up_pairs, pairs = ctx.pairs()
    inputs, extra, events = ctx.truth()
    tol = ctx.args.tolerance

    def build(out: Path, key: str) -> None:
        s = synth.score_recovery(pairs, events, tol)
        write_table(out / "score.tsv", ["precision", "recall", "matches", "n_detected", "n_truth", "no_detections",
                                        "tolerance_hours"],
                    [[s.precision, s.recall, s.matches, s.n_detected, s.n_truth, s.no_detections, tol]], key)

    out = ctx.rd.run("score", {"tolerance_hours": tol}, {"pairs": up_pairs, **extra}, inputs, build)
    r = read_table(out / "score.tsv")[0]
    print(f"precision={float(r['precision']):.4f} recall={float(r['recall']):.4f} "
          f"matches={r['matches']} detected={r['n_detected']} truth={r['n_truth']}")


COMMANDS = {
    "ingest": (cmd_ingest, "load and validate the message file"),
    "vocab": (cmd_vocab, "tokenize and filter the candidate vocabulary"),
    "series": (cmd_series, "hourly 24h-trailing distinct-user series per term and group"),
    "spikes": (cmd_spikes, "detect word spikes"),
    "pairs": (cmd_pairs, "pair spikes across groups into leader/follower events"),
    "impact": (cmd_impact, "potential impact of every spike pair"),
    "cluster": (cmd_cluster, "context vectors, TF-IDF and K-means over spiking terms"),
    "label": (cmd_label, "attach topic labels to clusters"),
    "figures": (cmd_figures, "plot-ready tables of per-topic lead, impact and share"),
    "bootstrap": (cmd_bootstrap, "percentile confidence intervals for the per-topic fractions"),
    "sweep": (cmd_sweep, "sensitivity sweeps over top_k, spike height and group size"),
    "synth": (cmd_synth, "generate a synthetic corpus with planted events"),
    "score": (cmd_score, "precision/recall of detected pairs against planted events"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--input", help="message file (JSON lines)", **d)
    p.add_argument("--run-dir", help="run directory (default: run)", **d)
    p.add_argument("--config", help="pipeline configuration (TOML)", **d)
    p.add_argument("--seed", type=int, help="seed for clustering, resampling and synthesis", **d)
    p.add_argument("--top-k", type=int, **d)
    p.add_argument("--min-height", type=int, **d)
    p.add_argument("--max-lag-hours", type=int, **d)
    p.add_argument("--k-clusters", type=int, **d)
    p.add_argument("--focal-group", **d)
    p.add_argument("--threads", type=int, **d)
    p.add_argument("--quiet", action="store_true", help="log warnings only", **d)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spikelead", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"spikelead {__version__}")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        _common(p, suppress=True)
        if name == "label":
            p.add_argument("--labels", help="cluster_id/label file")
            p.add_argument("--from-truth", action="store_true", help="label clusters by majority planted topic")
            p.add_argument("--truth", help="planted-event file (default: the synth stage's)")
        if name == "score":
            p.add_argument("--truth", help="planted-event file (default: the synth stage's)")
            p.add_argument("--tolerance", type=int, default=synth.MATCH_TOLERANCE_HOURS,
                           help="hour tolerance for matching spikes (default 2)")
        if name == "synth":
            p.add_argument("--scenario", help="scenario TOML (default: the built-in demo)")
            p.add_argument("--events", type=int, default=50)
            p.add_argument("--background-rate", type=float, default=0.0, help="messages per user per day")
            p.add_argument("--users-per-group", type=int, default=500)
            p.add_argument("--window-hours", type=int, default=720)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required (see --help)")
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(levelname)s: %(message)s", stream=sys.stderr)
        with RunDir(args.run_dir or "run") as rd:
            COMMANDS[args.command][0](Context(args, rd))
    except SpikeleadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
