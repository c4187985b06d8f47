"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are collected in ``conftest.ACCEPTANCE`` and printed at the end of the run.
"""

import filecmp
import itertools
import random
import time
from collections import Counter

import numpy as np
from hypothesis import given, settings, strategies as st

from conftest import ACCEPTANCE
from helpers import PERMISSIVE, corpus_of, run_detection
from spikelead.cli import main
from spikelead.clustering import KMeansParams, ObjectiveIncreased, TopicModel, build_context_vectors, kmeans, tfidf
from spikelead.config import PipelineConfig, dump_config
from spikelead.impact import ImpactRecord, impact_fractions, impact_records, lead_fractions, pairwise_lead
from spikelead.rng import stream
from spikelead.spikes import Spike, SpikePair, SpikeParams, detect_all, detect_spikes, pair_spikes
from spikelead.stats import BootstrapSpec, bootstrap_ci, sweep_num_spikes, sweep_threshold
from spikelead.synth import demo_config, generate, score_recovery
from spikelead.tables import read_table
from spikelead.textprep import FilterParams

GROUPS = ["ira", "moc", "journalist", "user"]
H = 3600


def _record(n, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


# --- spike detection ---------------------------------------------------------------

def _random_series(rng, i, n=17544):
    kind = i % 3
    if kind == 0:
        return rng.poisson(rng.uniform(0.5, 300), n)
    if kind == 1:
        v = np.zeros(n, dtype=np.int64)
        for start in rng.integers(0, n, int(rng.integers(0, 40))):
            v[start:start + int(rng.integers(1, 48))] += int(rng.integers(1, 400))
        return v
    return np.cumsum(rng.integers(-3, 4, n)).clip(0)


def _oracle_rises(values):
    """Every positive hour-over-hour rise as (-rise, hour); the first point rises from zero."""
    out, prev = [], 0
    for t, v in enumerate(values):
        if v > prev:
            out.append((prev - v, t))
        prev = v
    out.sort()
    return out


def test_spike_detector_matches_sort_and_filter_oracle():
    rng = np.random.default_rng(20160101)
    combos = [(k, h) for k in (1, 3, 5) for h in (5, 100)]
    elapsed, mismatches, n_spikes = 0.0, 0, 0
    for i in range(1000):
        values = _random_series(rng, i)
        as_list = values.tolist()
        rises = _oracle_rises(as_list)
        for k, h in combos:
            expected = [(t, as_list[t], -neg) for neg, t in rises[:k] if as_list[t] >= h]
            t0 = time.perf_counter()
            got = detect_spikes(values, SpikeParams(top_k=k, min_height=h))
            elapsed += time.perf_counter() - t0
            n_spikes += len(got)
            mismatches += [(s.hour, s.height, s.delta) for s in got] != expected
    _record(1, mismatches == 0 and elapsed < 30,
            f"1000 series x 6 settings, {mismatches} mismatches, {n_spikes} spikes, detect_spikes {elapsed:.1f}s")


# --- pairing -------------------------------------------------------------------------

def _oracle_pair_indices(spikes, max_lag=96):
    if not spikes:
        return set()
    terms = {t: i for i, t in enumerate(sorted({s.term for s in spikes}))}
    term = np.array([terms[s.term] for s in spikes])
    group = np.array([GROUPS.index(s.group) for s in spikes])
    hour = np.array([s.hour for s in spikes])
    lag = hour[None, :] - hour[:, None]
    ok = (term[:, None] == term[None, :]) & (group[:, None] != group[None, :]) & (lag > 0) & (lag <= max_lag)
    return set(zip(*map(np.ndarray.tolist, np.nonzero(ok))))


def _boundary_set():
    base = [Spike("w", "ira", 100, 9, 9)]
    base += [Spike("w", "moc", 100, 9, 9), Spike("w", "journalist", 196, 9, 9), Spike("w", "user", 197, 9, 9)]
    return base


def test_pairing_matches_all_pairs_filter():
    rng = np.random.default_rng(7)
    sets = [[], _boundary_set()]
    for n in (1, 2, 50, 500, 2000, 5000, 5000):
        n_terms = int(rng.integers(1, max(2, n // 20)))
        keys = set()
        while len(keys) < n:
            keys.add((f"t{rng.integers(n_terms)}", GROUPS[rng.integers(4)], int(rng.integers(0, 3000))))
        sets.append([Spike(t, g, h, 5, 5) for t, g, h in sorted(keys)])
    # dense boundary population: every lag from 0 to 100 present
    sets.append([Spike("b", g, h, 5, 5) for g in GROUPS for h in range(0, 400, 3 + GROUPS.index(g))])
    elapsed, bad, total = 0.0, 0, 0
    params = SpikeParams(max_lag_hours=96)
    for spikes in sets:
        shuffled = list(spikes)
        random.Random(len(spikes)).shuffle(shuffled)
        t0 = time.perf_counter()
        pairs = pair_spikes(shuffled, params)
        elapsed += time.perf_counter() - t0
        index = {s: i for i, s in enumerate(spikes)}
        got = [(index[p.leader], index[p.follower]) for p in pairs]
        bad += len(got) != len(set(got)) or set(got) != _oracle_pair_indices(spikes)
        total += len(got)
    boundary = {(p.leader.group, p.follower.group, p.lag_hours) for p in pair_spikes(_boundary_set(), params)}
    # lag 0 (ira/moc) and lag 97 (ira/user, moc/user) are excluded
    edges_ok = boundary == {("ira", "journalist", 96), ("moc", "journalist", 96), ("journalist", "user", 1)}
    _record(2, bad == 0 and edges_ok and elapsed < 10,
            f"{len(sets)} spike sets up to 5000, {total} pairs, {bad} mismatching sets, "
            f"lag 0/96/97 boundaries {'ok' if edges_ok else 'wrong'}, {elapsed:.2f}s")


# --- planted recovery ----------------------------------------------------------------

def _recovery(seed, background_rate):
    corpus, truth = generate(demo_config(n_events=50, seed=seed, background_rate=background_rate))
    *_, pairs = run_detection(corpus)
    return score_recovery(pairs, truth), len(corpus)


def test_planted_event_recovery():
    t0 = time.perf_counter()
    clean = [_recovery(seed, 0.0)[0] for seed in range(10)]
    clean_ok = all(s.precision == 1.0 and s.recall == 1.0 for s in clean)
    noisy = [_recovery(seed, 2.0) for seed in range(10)]
    p = float(np.mean([s.precision for s, _ in noisy]))
    r = float(np.mean([s.recall for s, _ in noisy]))
    elapsed = time.perf_counter() - t0
    _record(3, clean_ok and p >= 0.9 and r >= 0.9 and elapsed < 300,
            f"zero background P/R {'1.0/1.0' if clean_ok else 'below 1.0'} on 10 seeds; "
            f"rate 2 over 2000 users (~{np.mean([n for _, n in noisy]):.0f} msgs) mean P={p:.3f} R={r:.3f}; "
            f"{elapsed:.0f}s")


# --- normalization -------------------------------------------------------------------

def _sums_ok(pairs, records, topics):
    for agg in lead_fractions(pairs, topics, GROUPS, strict=False):
        if agg.n_pairs and abs(sum(agg.per_group_lead_fraction.values()) - 1) > 1e-9:
            return False
    for agg in impact_fractions(records, topics, GROUPS, strict=False):
        if agg.total_impact and abs(sum(agg.per_group_impact_fraction.values()) - 1) > 1e-9:
            return False
    for a, b in itertools.permutations(GROUPS, 2):
        ab = pairwise_lead(pairs, a, b, topics, strict=False)
        ba = pairwise_lead(pairs, b, a, topics, strict=False)
        if [(x["topic"], x["a_leads"], x["b_leads"], x["a_leads_fraction"]) for x in ab] != \
                [(y["topic"], y["b_leads"], y["a_leads"], y["b_leads_fraction"]) for y in ba]:
            return False
    return True


_FUZZ = {"runs": 0, "failures": 0}


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 300))
def _fuzz_normalization(seed, n):
    rng = random.Random(seed)
    terms = [f"w{i}" for i in range(rng.randrange(1, 12))]
    topics = TopicModel({t: i % 3 for i, t in enumerate(terms)}, {0: "a", 1: "b", 2: "stopwords"}, 3)
    records = []
    for _ in range(n):
        lg, fg = rng.sample(GROUPS, 2)
        h = rng.randrange(1000)
        term = rng.choice(terms)
        pair = SpikePair(Spike(term, lg, h, 5, 5), Spike(term, fg, h + rng.randrange(1, 97), 5, 5))
        records.append(ImpactRecord(pair, rng.choice([0, 0, rng.randrange(1, 10**6)])))
    _FUZZ["runs"] += 1
    _FUZZ["failures"] += not _sums_ok([r.pair for r in records], records, topics)


def _truth_topics(pairs, usage, truth, k, seed=0):
    vectors = build_context_vectors(pairs, usage)
    matrix, _ = tfidf(vectors)
    result = kmeans(matrix, KMeansParams(k=k, seed=seed))
    planted = {e.term: e.topic for e in truth}
    assign = {v.term: int(c) for v, c in zip(vectors, result.labels)}
    labels = {}
    for c in range(k):
        votes = Counter(planted[t] for t, cc in assign.items() if cc == c and t in planted)
        labels[c] = votes.most_common(1)[0][0] if votes else "other"
    return TopicModel(assign, labels, k)


def test_aggregate_normalization():
    demo_ok = True
    for seed, rate in ((0, 0.0), (1, 2.0)):
        corpus, truth = generate(demo_config(seed=seed, background_rate=rate))
        vocab, usage, series, spikes, pairs = run_detection(corpus)
        topics = _truth_topics(pairs, usage, truth, k=5)
        demo_ok &= _sums_ok(pairs, impact_records(pairs, usage), topics)
    _fuzz_normalization()
    ok = demo_ok and _FUZZ["failures"] == 0 and _FUZZ["runs"] >= 100
    _record(4, ok, f"2 synthetic runs {'ok' if demo_ok else 'violated'}, "
                   f"{_FUZZ['runs']} fuzzed pair sets with {_FUZZ['failures']} violations (sum 1 +/- 1e-9, mirror)")


# --- potential impact ----------------------------------------------------------------

def test_potential_impact_hand_count(tmp_path):
    T = 100
    rows = [(f"i{u}", "ira", T * H - 600 - u, "march now") for u in range(6)]  # leader spike at hour T
    rows += [("m0", "moc", T * H, "march")]  # at the leader instant itself: outside (T, T+96h]
    rows += [(f"m{u}", "moc", (T + 10) * H - 900 - u, "march") for u in range(1, 7)]  # follower spike, 6 users
    rows += [("m1", "moc", (T + 50) * H, "march again")]  # repeat user counts once
    rows += [("m7", "moc", (T + 96) * H, "march")]  # closed right edge
    rows += [("m8", "moc", (T + 96) * H + 1, "march")]  # past the window
    rows += [("m9", "moc", (T - 5) * H, "march")]  # before the leader spike
    rows += [("j1", "journalist", (T + 20) * H, "march")]  # another group
    rows += [("m10", "moc", (T + 20) * H, "now")]  # another term
    hand_count = 6 + 1  # m1..m6, m7

    corpus = corpus_of(rows, hours=300)
    (tmp_path / "corpus.jsonl").write_text(corpus.to_jsonl(), encoding="utf-8")
    start, end = corpus.window
    cfg = PipelineConfig({g: g for g in GROUPS}, start, end, vocab=FilterParams(anchor_group="ira", **PERMISSIVE))
    (tmp_path / "config.toml").write_text(dump_config(cfg), encoding="utf-8")
    run = tmp_path / "run"
    codes = [main(["ingest", "--input", str(tmp_path / "corpus.jsonl"), "--config", str(tmp_path / "config.toml"),
                   "--run-dir", str(run), "--quiet"])]
    for stage in ("vocab", "series", "spikes", "pairs", "impact"):
        codes.append(main([stage, "--config", str(tmp_path / "config.toml"), "--run-dir", str(run), "--quiet"]))
    rows = read_table(next(run.glob("impact/*/impact.tsv")))
    march = [r for r in rows if r["term"] == "march"]
    got = [(r["leader_group"], r["follower_group"], int(r["impacted_users"])) for r in march]
    ok = codes == [0] * 6 and got == [("ira", "moc", hand_count)]
    _record(5, ok, f"handcrafted leader spike at hour {T}: pipeline impact {got}, hand count {hand_count}; "
                   "the published 1,860 figure needs the original corpus and is not checked")


# --- bootstrap calibration -------------------------------------------------------------

def test_bootstrap_coverage():
    t0 = time.perf_counter()
    truth, trials, n = 0.35, 500, 200
    topics = TopicModel({"w": 0}, {0: "election"}, 1)
    covered = 0
    for trial in range(trials):
        rng = stream(2016, "calibration", trial)
        focal = rng.random(n) < truth
        others = rng.integers(1, 4, n)
        records = [ImpactRecord(SpikePair(Spike("w", "ira" if f else GROUPS[o], 10, 5, 5),
                                          Spike("w", "moc" if f else "ira", 20, 5, 5)), 1)
                   for f, o in zip(focal.tolist(), others.tolist())]
        rows = bootstrap_ci(None, records, topics, BootstrapSpec(n_resamples=1000, seed=trial), GROUPS)
        (ira,) = [r for r in rows if r.group == "ira"]
        covered += ira.lo <= truth <= ira.hi
    coverage = covered / trials
    elapsed = time.perf_counter() - t0
    _record(6, 0.92 <= coverage <= 0.98 and elapsed < 120,
            f"95% percentile CI covered 0.35 in {coverage:.3f} of {trials} trials x {n} pairs; {elapsed:.0f}s")


# --- k-means ---------------------------------------------------------------------------

def _oracle_lloyd(x, c):
    for _ in range(500):
        d = ((x[:, None, :] - c[None]) ** 2).sum(-1)
        lab = d.argmin(1)
        new = np.array([x[lab == j].mean(0) if (lab == j).any() else c[j] for j in range(len(c))])
        if np.array_equal(new, c):
            break
        c = new
    return ((x[:, None, :] - c[None]) ** 2).sum(-1).min(1).sum()


def test_kmeans_correctness():
    import scipy.sparse as sp

    rng = np.random.default_rng(11)
    fired, rose = 0, 0
    for i in range(100):
        n, d = int(rng.integers(10, 400)), int(rng.integers(2, 60))
        x = rng.random((n, d)) * (rng.random((n, d)) < rng.uniform(0.05, 1))
        x = sp.csr_matrix(x) if i % 2 else x
        try:
            r = kmeans(x, KMeansParams(k=int(rng.integers(2, min(12, n))), seed=i))
        except ObjectiveIncreased:
            fired += 1
            continue
        rose += any(b > a * (1 + 1e-9) + 1e-12 for a, b in zip(r.history, r.history[1:]))
    misses = 0
    for i in range(200):
        g = np.random.default_rng(5000 + i)
        x = g.normal(size=(12, int(g.integers(1, 6))))
        best = min(_oracle_lloyd(x, x[list(p)].copy()) for p in itertools.combinations(range(12), 2))
        misses += kmeans(x, KMeansParams(k=2, seed=i)).objective > best * (1 + 1e-9)
    same = True
    for i in range(3):
        g = np.random.default_rng(70 + i)
        x = sp.csr_matrix(g.random((2000, 30)) * (g.random((2000, 30)) < 0.2))
        runs = [kmeans(x, KMeansParams(k=9, seed=i, threads=t)) for t in (1, 2, 4)]
        same &= all(r.labels.tolist() == runs[0].labels.tolist() and r.objective == runs[0].objective for r in runs)
    _record(7, fired == 0 and rose == 0 and misses == 0 and same,
            f"100 fuzzed instances: {fired} check failures, {rose} rises; "
            f"200 twelve-point k=2 instances: {misses} above the exhaustive oracle; "
            f"thread counts 1/2/4 {'identical' if same else 'differ'}")


# --- sensitivity sweeps ------------------------------------------------------------------

def test_sweep_sanity():
    corpus, truth = generate(demo_config(seed=0, background_rate=2.0))
    vocab, usage, series, spikes, pairs = run_detection(corpus)
    names = sorted({e.topic for e in truth})
    topics = TopicModel({e.term: names.index(e.topic) for e in truth}, dict(enumerate(names)), len(names))
    by_k = sweep_num_spikes(series, usage, topics, (1, 2, 3, 4, 5))
    monotone = all(a <= b for a, b in zip(by_k.n_pairs, by_k.n_pairs[1:]))
    top = max(s.height for s in spikes if s.group == "user")
    by_n = sweep_threshold(series, usage, topics, (5, 10, 20, 50, 100, top + 1))
    rerun = pair_spikes(detect_all(series, SpikeParams(min_height_overrides={"user": top + 1})), SpikeParams())
    user_pairs = sum("user" in (p.leader.group, p.follower.group) for p in rerun)
    ok = monotone and by_n.n_target_pairs[-1] == 0 and user_pairs == 0
    _record(8, ok, f"#pairs by top_k {by_k.n_pairs}; user-involved pairs at N={top + 1} "
                   f"(above the tallest user spike): sweep {by_n.n_target_pairs[-1]}, rerun {user_pairs}")


# --- determinism -------------------------------------------------------------------------

PIPELINE = [["ingest"], ["vocab"], ["series"], ["spikes"], ["pairs"], ["impact"], ["cluster"],
            ["label", "--from-truth"], ["figures"], ["bootstrap"], ["sweep"], ["score"]]


def _identical(cmp):
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(cmp.left, cmp.right, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(_identical(c) for c in cmp.subdirs.values())


def test_byte_identical_reruns(tmp_path):
    codes = []
    for d in ("a", "b"):
        run = str(tmp_path / d)
        codes.append(main(["synth", "--background-rate", "0.5", "--seed", "5", "--run-dir", run, "--quiet"]))
        codes += [main([*argv, "--run-dir", run, "--quiet"]) for argv in PIPELINE]
    n_files = sum(1 for p in (tmp_path / "a").rglob("*") if p.is_file())
    ok = codes == [0] * len(codes) and _identical(filecmp.dircmp(tmp_path / "a", tmp_path / "b"))
    _record(9, ok, f"two full runs (synth through score, {n_files} files each) "
                   f"{'byte-identical' if ok else 'differ or failed'}")


# --- throughput --------------------------------------------------------------------------

SCALE = """[demo]
n_events = 50
seed = 3
background_rate = 3.34
users_per_group = 2500
window_hours = 720
background_vocab_size = 1950
"""


def test_million_message_throughput(tmp_path):
    run = str(tmp_path / "run")
    scenario = tmp_path / "scale.toml"
    scenario.write_text(SCALE, encoding="utf-8")
    assert main(["synth", "--scenario", str(scenario), "--run-dir", run, "--quiet"]) == 0
    t0 = time.perf_counter()
    codes = [main([*argv, "--run-dir", run, "--quiet"]) for argv in PIPELINE[:9]]
    elapsed = time.perf_counter() - t0
    stats = {r["group"]: int(r["messages"]) for r in read_table(next((tmp_path / "run").glob("ingest/*/stats.tsv")))}
    vocab = sum(r["kept"] == "1" for r in read_table(next((tmp_path / "run").glob("vocab/*/vocab.tsv"))))
    ok = codes == [0] * len(codes) and stats["total"] >= 1_000_000 and len(stats) == 5 and vocab == 2000 \
        and elapsed < 300
    _record(10, ok, f"{stats['total']} messages, {len(stats) - 1} groups, {vocab} terms: "
                    f"ingest through figures in {elapsed:.0f}s (1 core)")
