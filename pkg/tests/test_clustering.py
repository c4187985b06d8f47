import itertools
import math
import random

import numpy as np
import pytest
import scipy.sparse as sp

from helpers import corpus_of
from spikelead.clustering import (
    ContextVector, KMeansParams, ObjectiveIncreased, TopicModel, _lloyd, _sq_norms, apply_labels,
    build_context_vectors, kmeans, read_label_file, tfidf,
)
from spikelead.errors import DataError
from spikelead.spikes import Spike, SpikePair
from spikelead.textprep import tokenize
from spikelead.timeseries import Usage

H = 3600


def _pair(term, lg, lh, fg, fh):
    return SpikePair(Spike(term, lg, lh, 5, 5), Spike(term, fg, fh, 5, 5))


def test_single_tweet_context():
    corpus = corpus_of([("u", "ira", 10 * H, "a b c")])
    (v,) = build_context_vectors([_pair("a", "ira", 10, "moc", 20)], Usage(corpus, ["a"]))
    assert v.context_counts == {"b": 1, "c": 1}


def test_term_without_neighbours():
    corpus = corpus_of([("u", "ira", 10 * H, "a"), ("v", "moc", 20 * H, "a a")])
    (v,) = build_context_vectors([_pair("a", "ira", 10, "moc", 20)], Usage(corpus, ["a"]))
    assert v.empty and v.n_tweets == 2
    with pytest.raises(DataError):
        build_context_vectors([], Usage(corpus, ["a"]))


def test_context_matches_window_scan():
    rng = random.Random(12)
    words = list("abcdefgh")
    groups = ["ira", "moc", "user"]
    rows = [(f"u{rng.randrange(20)}", rng.choice(groups), rng.randrange(H * 230),
             " ".join(rng.choice(words) for _ in range(rng.randrange(1, 5)))) for _ in range(400)]
    corpus = corpus_of(rows)
    pairs = [_pair("a", "ira", 100, "moc", 130), _pair("a", "moc", 130, "user", 140), _pair("b", "user", 50, "ira", 60)]
    vectors = {v.term: v for v in build_context_vectors(pairs, Usage(corpus, ["a", "b"]))}
    start = corpus.window[0]
    for term, spikes in {"a": [("ira", 100), ("moc", 130), ("user", 140)], "b": [("user", 50), ("ira", 60)]}.items():
        chosen = set()
        for m in corpus:
            for g, h in spikes:
                t = start + h * H
                if m.group == g and term in tokenize(m.text) and t - 96 * H <= m.timestamp <= t + 24 * H:
                    chosen.add(m.id)
        expected = {}
        for m in corpus:
            if m.id in chosen:
                for w in tokenize(m.text):
                    if w != term:
                        expected[w] = expected.get(w, 0) + 1
        assert vectors[term].context_counts == expected
        assert vectors[term].n_tweets == len(chosen)


def test_tfidf_examples():
    m, cols = tfidf([ContextVector("x", {"b": 3})])
    assert cols == ["b"] and m.toarray().tolist() == [[1.0]]
    m, cols = tfidf([ContextVector("x", {"b": 2, "c": 1}), ContextVector("y", {"b": 5})])
    # "b" is in every document: idf = 1
    raw = np.array([[2 * 1.0, 1 * (math.log(3 / 2) + 1)], [5.0, 0.0]])
    expected = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    assert np.allclose(m.toarray(), expected, atol=1e-12)


def test_tfidf_matches_formula():
    rng = np.random.default_rng(3)
    vocab = [f"w{j}" for j in range(15)]
    vectors = [ContextVector(f"t{i}", {w: int(c) for w, c in zip(vocab, rng.integers(0, 4, 15)) if c})
               for i in range(25)]
    m, cols = tfidf(vectors)
    dense = np.array([[v.context_counts.get(w, 0) for w in cols] for v in vectors], dtype=float)
    df = (dense > 0).sum(axis=0)
    w = dense * (np.log((1 + len(vectors)) / (1 + df)) + 1)
    norms = np.linalg.norm(w, axis=1, keepdims=True)
    w = np.divide(w, norms, out=np.zeros_like(w), where=norms > 0)
    assert np.allclose(m.toarray(), w, atol=1e-12)
    nz = norms.ravel() > 0
    assert np.allclose(np.linalg.norm(m.toarray(), axis=1)[nz], 1.0, atol=1e-12)


def test_kmeans_trivial_cases():
    r = kmeans(np.ones((6, 3)), KMeansParams(k=1))
    assert r.labels.tolist() == [0] * 6 and r.objective == pytest.approx(0.0, abs=1e-12)
    x = np.zeros((8, 4))
    x[:4, :2] = np.random.default_rng(0).random((4, 2)) + 1
    x[4:, 2:] = np.random.default_rng(1).random((4, 2)) + 1
    r = kmeans(sp.csr_matrix(x), KMeansParams(k=2))
    assert len(set(r.labels[:4])) == 1 and len(set(r.labels[4:])) == 1 and r.labels[0] != r.labels[4]
    with pytest.raises(DataError):
        kmeans(np.ones((3, 2)), KMeansParams(k=4))


def _oracle_lloyd(x, c):
    for _ in range(500):
        d = ((x[:, None, :] - c[None]) ** 2).sum(-1)
        lab = d.argmin(1)
        new = np.array([x[lab == j].mean(0) if (lab == j).any() else c[j] for j in range(len(c))])
        if np.allclose(new, c, atol=0, rtol=0):
            break
        c = new
    return ((x[:, None, :] - c[None]) ** 2).sum(-1).min(1).sum()


def test_twelve_points_versus_exhaustive_starts():
    for seed in range(40):
        rng = np.random.default_rng(100 + seed)
        x = rng.normal(size=(12, int(rng.integers(1, 5))))
        best = min(_oracle_lloyd(x, x[list(p)].copy()) for p in itertools.combinations(range(12), 2))
        r = kmeans(x, KMeansParams(k=2, seed=seed))
        assert r.objective <= best * (1 + 1e-9)


def test_objective_never_rises_and_check_fires(monkeypatch):
    rng = np.random.default_rng(5)
    x = sp.csr_matrix(rng.random((60, 10)) * (rng.random((60, 10)) < 0.3))
    r = kmeans(x, KMeansParams(k=4, seed=1))
    assert all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(r.history, r.history[1:]))
    # a deliberately bad update (centroids moved away) must trip the check
    xd = np.array([[0.0], [1.0], [10.0], [11.0]])
    params = KMeansParams(k=2, max_iters=5)
    monkeypatch.setattr("spikelead.clustering._means",
                        lambda x, labels, k: (np.array([[100.0], [200.0]]), np.bincount(labels, minlength=k)))
    with pytest.raises(ObjectiveIncreased):
        _lloyd(xd, _sq_norms(xd), np.array([[0.5], [10.5]]), params)


def test_threads_and_seed_determinism():
    rng = np.random.default_rng(2)
    x = sp.csr_matrix(rng.random((3000, 20)) * (rng.random((3000, 20)) < 0.2))
    a = kmeans(x, KMeansParams(k=7, seed=4, threads=1))
    b = kmeans(x, KMeansParams(k=7, seed=4, threads=3))
    assert a.labels.tolist() == b.labels.tolist() and a.objective == b.objective


def test_labels(tmp_path):
    p = tmp_path / "labels.tsv"
    p.write_text("cluster_id\tlabel\n0\trace\n1\tstopwords\n2\telection\n", encoding="utf-8")
    assert read_label_file(p) == {0: "race", 1: "stopwords", 2: "election"}
    model = apply_labels({"a": 0, "b": 1, "c": 2}, p)
    assert model.topics == ["election", "race"]
    assert model.topic("b") is None and model.topic("a") == "race"
    with pytest.raises(KeyError):
        model.topic("zzz")
    p.write_text("0,race\n1,other\n", encoding="utf-8")
    with pytest.raises(DataError, match="2"):
        apply_labels({"a": 0, "b": 1, "c": 2}, p)
    assert TopicModel({"a": 0}, {0: "x"}, 1).terms_of("x") == ["a"]
