"""Context vectors for spiking terms, TF-IDF weighting, K-means, and topic labels."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DataError
from .rng import stream
from .timeseries import Usage

logger = logging.getLogger(__name__)

CONTEXT_BEFORE_HOURS = 96
CONTEXT_AFTER_HOURS = 24
DROPPED_LABELS = frozenset({"other", "stopwords"})
# Rows per distance block. Fixed so results do not depend on the thread count.
_BLOCK = 1024


@dataclass
class ContextVector:
    term: str
    context_counts: dict[str, int]
    n_tweets: int = 0

    @property
    def empty(self) -> bool:
        return not self.context_counts


def context_windows(pairs) -> dict[str, set[tuple[str, int]]]:
    """term -> {(group, spike hour)} over both sides of every pair."""
    out: dict[str, set[tuple[str, int]]] = {}
    for p in pairs:
        for s in (p.leader, p.follower):
            out.setdefault(s.term, set()).add((s.group, s.hour))
    return out


def build_context_vectors(pairs, usage: Usage) -> list[ContextVector]:
    """Co-occurrence counts of every other token in each spiking term's nearby tweets.

    For each group spike of the term, tweets from that group containing the term
    in [spike - 96h, spike + 24h] qualify; a tweet inside several windows counts once.
    """
    pairs = list(pairs)
    if not pairs:
        raise DataError("no spike pairs to build context vectors from")
    tc = usage.corpus.tokens
    start = usage.corpus.window[0]
    vectors = []
    for term, windows in sorted(context_windows(pairs).items()):
        msgs = []
        for group, hour in sorted(windows):
            t = start + 3600 * hour
            sl = usage.span(term, group, t - 3600 * CONTEXT_BEFORE_HOURS, t + 3600 * CONTEXT_AFTER_HOURS, closed="both")
            msgs.append(usage.msg[sl])
        msgs = np.unique(np.concatenate(msgs)) if msgs else np.zeros(0, dtype=np.int64)
        self_id = tc.lookup.get(term, -1)
        if msgs.size:
            lengths = tc.ptr[msgs + 1] - tc.ptr[msgs]
            gather = np.repeat(tc.ptr[msgs] - np.concatenate([[0], np.cumsum(lengths)[:-1]]), lengths)
            ids = tc.ids[gather + np.arange(lengths.sum())]
            ids = ids[ids != self_id]
            tok, cnt = np.unique(ids, return_counts=True)
            counts = {tc.terms[i]: int(c) for i, c in zip(tok.tolist(), cnt.tolist())}
        else:
            counts = {}
        if not counts:
            logger.warning("term %r has no co-occurring tokens in its spike windows", term)
        vectors.append(ContextVector(term, counts, int(msgs.size)))
    return vectors


def tfidf(vectors: list[ContextVector]) -> tuple[sp.csr_matrix, list[str]]:
    """Raw tf times smoothed idf ln((1+D)/(1+df)) + 1, rows scaled to unit length.

    One document per term. Returns the matrix and its column tokens (sorted).
    """
    vocab = sorted({tok for v in vectors for tok in v.context_counts})
    col = {t: j for j, t in enumerate(vocab)}
    rows, cols, vals = [], [], []
    for i, v in enumerate(vectors):
        for tok, c in sorted(v.context_counts.items()):
            rows.append(i)
            cols.append(col[tok])
            vals.append(float(c))
    m = sp.csr_matrix((vals, (rows, cols)), shape=(len(vectors), len(vocab)), dtype=np.float64)
    m.sort_indices()
    d = len(vectors)
    df = np.bincount(m.indices, minlength=len(vocab))
    idf = np.log((1.0 + d) / (1.0 + df)) + 1.0
    m = m.multiply(idf[np.newaxis, :]).tocsr()
    norms = np.sqrt(np.asarray(m.multiply(m).sum(axis=1)).ravel())
    scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    m = sp.diags(scale) @ m
    m = sp.csr_matrix(m)
    m.sort_indices()
    return m, vocab


@dataclass
class KMeansParams:
    k: int = 500
    seed: int = 0
    max_iters: int = 100
    tol: float = 1e-6
    n_init: int = 10
    swap_trials: int = 64
    threads: int = 1


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    objective: float
    history: list[float] = field(default_factory=list)
    n_iter: int = 0


class ObjectiveIncreased(AssertionError):
    pass


def _sq_norms(x) -> np.ndarray:
    if sp.issparse(x):
        return np.asarray(x.multiply(x).sum(axis=1)).ravel()
    return np.einsum("ij,ij->i", x, x)


def _distances(x, x_norms, c, threads: int) -> np.ndarray:
    c_norms = np.einsum("ij,ij->i", c, c)
    blocks = [(a, min(a + _BLOCK, x.shape[0])) for a in range(0, x.shape[0], _BLOCK)]

    def block(ab):
        a, b = ab
        prod = x[a:b] @ c.T
        return np.maximum(x_norms[a:b, None] - 2.0 * np.asarray(prod) + c_norms[None, :], 0.0)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(block, blocks))
    else:
        parts = [block(ab) for ab in blocks]
    return np.vstack(parts)


def _row(x, i) -> np.ndarray:
    r = x[i]
    return r.toarray().ravel() if sp.issparse(r) else np.asarray(r, dtype=np.float64).ravel()


def _init_centroids(x, x_norms, k: int, rng: np.random.Generator) -> np.ndarray:
    # First centroid: the row furthest along a seeded random direction, so the choice
    # follows the data rather than the row order. The rest: D^2-weighted draws.
    direction = rng.standard_normal(x.shape[1])
    first = int(np.argmax(np.asarray(x @ direction).ravel()))
    centroids = [_row(x, first)]
    closest = _distances(x, x_norms, centroids[0][None, :], 1).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            nxt = min(nxt, len(closest) - 1)
        else:
            nxt = int(np.argmax(closest))
        centroids.append(_row(x, nxt))
        closest = np.minimum(closest, _distances(x, x_norms, centroids[-1][None, :], 1).ravel())
    return np.vstack(centroids)


def _means(x, labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    n = x.shape[0]
    counts = np.bincount(labels, minlength=k)
    weight = 1.0 / np.maximum(counts[labels], 1)
    member = sp.csr_matrix((weight, (labels, np.arange(n))), shape=(k, n))
    c = member @ x
    c = c.toarray() if sp.issparse(c) else np.asarray(c)
    return c, counts


def _lloyd(x, x_norms, centroids: np.ndarray, params: KMeansParams) -> KMeansResult:
    k = centroids.shape[0]
    history: list[float] = []
    n_iter = 0
    for n_iter in range(1, params.max_iters + 1):
        dist = _distances(x, x_norms, centroids, params.threads)
        labels = np.argmin(dist, axis=1)
        closest = dist[np.arange(len(labels)), labels]
        obj = float(closest.sum())
        _check(history, obj, f"at iteration {n_iter}")
        history.append(obj)
        new, counts = _means(x, labels, k)
        if (counts == 0).any():
            # empty cluster: move it onto the point currently farthest from its centroid
            far = closest.copy()
            for j in np.flatnonzero(counts == 0):
                i = int(np.argmax(far))
                new[j] = _row(x, i)
                far[i] = -1.0
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        if shift < params.tol:
            break
    dist = _distances(x, x_norms, centroids, params.threads)
    labels = np.argmin(dist, axis=1)
    obj = float(dist[np.arange(len(labels)), labels].sum())
    _check(history, obj, "after the final update")
    history.append(obj)
    labels, centroids = _hartigan(x, x_norms, labels, _means(x, labels, k)[0], params, history)
    return KMeansResult(labels.astype(np.int64), centroids, history[-1], history, n_iter)


def _check(history: list[float], obj: float, where: str) -> None:
    if history and obj > history[-1] * (1 + 1e-9) + 1e-12:
        raise ObjectiveIncreased(f"k-means objective rose from {history[-1]!r} to {obj!r} {where}")


def _hartigan(x, x_norms, labels, centroids, params: KMeansParams, history: list[float]):
    """Single-point moves that lower the exact objective, until none is left.

    Moving point i from cluster a to b changes the objective by
    n_b/(n_b+1) d(i,b) - n_a/(n_a-1) d(i,a), centroid shifts included. This escapes
    Lloyd fixed points, and a point left in place is never closer to another centroid.
    """
    labels = labels.copy()
    k = centroids.shape[0]
    rows = np.arange(len(labels))
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    dist = _distances(x, x_norms, centroids, params.threads)
    for sweep in range(params.max_iters):
        # vectorized screen; moves earlier in the sweep can create new candidates,
        # which the next sweep picks up
        own = counts[labels]
        remove = np.where(own > 1, own / np.maximum(own - 1, 1), 0.0) * dist[rows, labels]
        add = counts / (counts + 1) * dist
        add[rows, labels] = np.inf
        candidates = np.flatnonzero(add.min(axis=1) < remove * (1 - 1e-12) - 1e-15)
        moved = False
        c_norms = np.einsum("ij,ij->i", centroids, centroids)
        for i in candidates.tolist():
            a = labels[i]
            if counts[a] <= 1:
                continue
            # exact distances to the centroids as they are now
            xi = _row(x, i)
            d = np.maximum(x_norms[i] - 2.0 * (centroids @ xi) + c_norms, 0.0)
            gain_out = counts[a] / (counts[a] - 1) * d[a]
            cost_in = counts / (counts + 1) * d
            cost_in[a] = np.inf
            b = int(np.argmin(cost_in))
            if cost_in[b] < gain_out * (1 - 1e-12) - 1e-15:
                centroids[a] = (counts[a] * centroids[a] - xi) / (counts[a] - 1)
                centroids[b] = (counts[b] * centroids[b] + xi) / (counts[b] + 1)
                c_norms[[a, b]] = np.einsum("ij,ij->i", centroids[[a, b]], centroids[[a, b]])
                counts[a] -= 1
                counts[b] += 1
                labels[i] = b
                moved = True
        if not moved:
            break
        # recompute from scratch so incremental centroid updates cannot drift
        centroids = _means(x, labels, k)[0]
        dist = _distances(x, x_norms, centroids, params.threads)
        obj = float(dist[rows, labels].sum())
        _check(history, obj, f"during refinement sweep {sweep + 1}")
        history.append(obj)
    return labels, centroids


def kmeans(matrix, params: KMeansParams) -> KMeansResult:
    """Lloyd's algorithm from seeded D^2-weighted starts, refined by single-point moves; best of ``n_init``."""
    x = matrix if sp.issparse(matrix) else np.asarray(matrix, dtype=np.float64)
    if sp.issparse(x):
        x = sp.csr_matrix(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= params.k <= n:
        raise DataError(f"k={params.k} must lie in [1, {n}] (number of rows)")
    x_norms = _sq_norms(x)
    best = None
    for r in range(max(1, params.n_init)):
        init = _init_centroids(x, x_norms, params.k, stream(params.seed, "kmeans-init", r))
        res = _lloyd(x, x_norms, init, params)
        if best is None or res.objective < best.objective:
            best = res
    return _swap_search(x, x_norms, best, params)


def _swap_search(x, x_norms, best: KMeansResult, params: KMeansParams) -> KMeansResult:
    """Move one centroid onto a data point, re-converge, keep the result if it is better.

    Small problems try every (centroid, point) swap; larger ones a seeded sample of
    ``swap_trials`` of them.
    """
    n, k = x.shape[0], params.k
    if params.swap_trials <= 0 or k == n:
        return best
    if k * n <= params.swap_trials:
        trials = [(j, i) for j in range(k) for i in range(n)]
    else:
        rng = stream(params.seed, "kmeans-swap")
        js = rng.integers(0, k, params.swap_trials).tolist()
        trials = list(zip(js, rng.integers(0, n, params.swap_trials).tolist()))
    for j, i in trials:
        init = best.centroids.copy()
        init[j] = _row(x, i)
        res = _lloyd(x, x_norms, init, params)
        if res.objective < best.objective * (1 - 1e-12):
            best = res
    return best


@dataclass
class TopicModel:
    assignments: dict[str, int]
    labels: dict[int, str]
    k: int
    dropped: frozenset = DROPPED_LABELS

    def __post_init__(self):
        missing = sorted(set(self.assignments.values()) - set(self.labels))
        if missing:
            raise DataError(f"no topic label for cluster id(s): {', '.join(map(str, missing))}")

    def topic(self, term: str) -> str | None:
        """Topic label of ``term``; None when its cluster is dropped. KeyError if unassigned."""
        label = self.labels[self.assignments[term]]
        return None if label in self.dropped else label

    @property
    def topics(self) -> list[str]:
        used = {self.labels[c] for c in self.assignments.values()}
        return sorted(t for t in used if t not in self.dropped)

    def terms_of(self, topic: str) -> list[str]:
        return sorted(t for t, c in self.assignments.items() if self.labels[c] == topic)


def read_label_file(path: str | Path) -> dict[int, str]:
    """Two-column tabular file: cluster_id, topic_label (tab or comma separated)."""
    labels: dict[int, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        sep = "\t" if "\t" in line else ","
        cid, _, label = line.partition(sep)
        cid = cid.strip()
        if cid == "cluster_id":
            continue
        try:
            labels[int(cid)] = label.strip()
        except ValueError:
            raise DataError(f"{path}:{lineno}: cluster id {cid!r} is not an integer") from None
    return labels


def apply_labels(assignments: dict[str, int], label_file, k: int | None = None) -> TopicModel:
    labels = label_file if isinstance(label_file, dict) else read_label_file(label_file)
    k = k if k is not None else (max(assignments.values()) + 1 if assignments else 0)
    return TopicModel(dict(assignments), dict(labels), k)


def cluster_report(vectors, matrix, columns, result: KMeansResult, top_n: int = 10):
    """Per cluster: member terms and the top context tokens by centroid weight."""
    rows = []
    terms = [v.term for v in vectors]
    for j in range(result.centroids.shape[0]):
        members = [terms[i] for i in np.flatnonzero(result.labels == j)]
        if not members:
            continue
        w = result.centroids[j]
        top = np.lexsort((np.arange(w.size), -w))[:top_n]
        rows.append({
            "cluster_id": j,
            "n_terms": len(members),
            "top_tokens": [columns[i] for i in top if w[i] > 0],
            "terms": members,
        })
    return rows
