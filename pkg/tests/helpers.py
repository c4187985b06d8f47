"""Small builders shared by the test modules."""

from __future__ import annotations

import numpy as np

from spikelead.ingest import Corpus, Message, parse_instant
from spikelead.spikes import SpikeParams, detect_all, pair_spikes
from spikelead.textprep import FilterParams, build_vocabulary
from spikelead.timeseries import Usage, build_series

START = parse_instant("2016-01-01T00:00:00Z")
GROUPS = ("ira", "moc", "journalist", "user")
PERMISSIVE = dict(anchor_min_tweets=1, anchor_max_fraction=1.0, other_min_uses=1, any_group_max_fraction=1.0)


def corpus_of(rows, groups=GROUPS, hours=240, start=START) -> Corpus:
    """rows: (user, group, seconds after start, text)."""
    msgs = [Message(f"m{i:06d}", u, g, start + int(t), text) for i, (u, g, t, text) in enumerate(rows)]
    return Corpus.from_messages(msgs, groups, (start, start + 3600 * hours))


def run_detection(corpus, anchor="ira", spike_params=None, filter_params=None):
    """Vocabulary, usage, series, spikes and pairs for a corpus (permissive filter by default)."""
    fp = filter_params or FilterParams(anchor_group=anchor, **PERMISSIVE)
    vocab = build_vocabulary(corpus, fp)
    usage = Usage(corpus, vocab)
    series = build_series(corpus, vocab, usage)
    params = spike_params or SpikeParams()
    spikes = detect_all(series, params)
    return vocab, usage, series, spikes, pair_spikes(spikes, params)


def brute_series(corpus, term, group, hours):
    """Distinct users of `term` in `group` over each trailing 24h window, by direct rescan."""
    from spikelead.textprep import tokenize

    start = corpus.window[0]
    out = np.zeros(hours, dtype=np.int64)
    msgs = [m for m in corpus if m.group == group and term in tokenize(m.text)]
    for t in range(hours):
        end = start + 3600 * t
        out[t] = len({m.user_id for m in msgs if end - 86400 < m.timestamp <= end})
    return out
