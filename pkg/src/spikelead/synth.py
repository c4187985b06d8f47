"""Synthetic corpora with planted leader/follower bursts, and scoring against them.

Background traffic is a homogeneous Poisson process per user over a dedicated
background vocabulary (``bg00000`` ...). Each planted event makes ``leader_users``
distinct users of the leader group post its term during the hour ending at
``leader_hour`` and ``follower_users`` users of the follower group do the same
``lag_hours`` later. Non-anchor-group event messages also carry topic context words
(``ctx<topic><j>``); these never reach the anchor group, so they stay out of the
vocabulary and only feed the context vectors used for clustering.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .ingest import Corpus, format_instant, parse_instant
from .rng import stream

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

MATCH_TOLERANCE_HOURS = 2


@dataclass
class PlantedEvent:
    term: str
    leader_group: str
    follower_group: str
    leader_hour: int
    lag_hours: int
    leader_users: int
    follower_users: int
    topic: str = ""

    @property
    def follower_hour(self) -> int:
        return self.leader_hour + self.lag_hours


@dataclass
class SynthConfig:
    groups: dict[str, int]
    window_hours: int
    start: int = parse_instant("2016-01-01T00:00:00Z")
    background_rate: float = 0.0
    background_vocab_size: int = 8000
    tokens_per_message: int = 4
    events: list[PlantedEvent] = field(default_factory=list)
    seed: int = 0
    anchor_group: str | None = "ira"
    context_words: int = 2
    context_lexicon: int = 8

    def validate(self) -> None:
        if len(self.groups) < 2:
            raise DataError("a synthetic scenario needs at least 2 groups")
        if self.start % 3600:
            raise DataError("scenario start must lie on an hour boundary")
        seen = set()
        for i, e in enumerate(self.events):
            name = f"event {i} ({e.term!r})"
            if e.term in seen:
                raise DataError(f"{name}: term planted twice")
            seen.add(e.term)
            for g in (e.leader_group, e.follower_group):
                if g not in self.groups:
                    raise DataError(f"{name}: unknown group {g!r}")
            if e.leader_group == e.follower_group:
                raise DataError(f"{name}: leader and follower groups must differ")
            if not 1 <= e.lag_hours <= 96:
                raise DataError(f"{name}: lag_hours must lie in [1, 96]")
            if e.leader_users < 1 or e.follower_users < 1:
                raise DataError(f"{name}: user counts must be >= 1")
            if e.leader_users > self.groups[e.leader_group]:
                raise DataError(f"{name}: needs {e.leader_users} {e.leader_group} users, population is "
                                f"{self.groups[e.leader_group]}")
            if e.follower_users > self.groups[e.follower_group]:
                raise DataError(f"{name}: needs {e.follower_users} {e.follower_group} users, population is "
                                f"{self.groups[e.follower_group]}")
            if not 0 <= e.leader_hour < e.follower_hour < self.window_hours:
                raise DataError(f"{name}: spike hours fall outside the {self.window_hours}h window")

    @property
    def end(self) -> int:
        return self.start + 3600 * self.window_hours


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]", "", text.lower()) or "topic"


def _user_id(group: str, j: int) -> str:
    return f"{group}_u{j:05d}"


def generate(config: SynthConfig) -> tuple[Corpus, list[PlantedEvent]]:
    """Build the corpus for ``config``; returns it with the planted events as ground truth."""
    config.validate()
    labels = tuple(config.groups)
    users, groups, stamps, texts = [], [], [], []
    seconds = 3600 * config.window_hours
    days = config.window_hours / 24.0
    vocab = np.array([f"bg{j:05d}" for j in range(config.background_vocab_size)], dtype=object)

    if config.background_rate > 0:
        uid = 0
        for gi, g in enumerate(labels):
            for j in range(config.groups[g]):
                rng = stream(config.seed, "synth-user", uid)
                uid += 1
                n = rng.poisson(config.background_rate * days)
                if n == 0:
                    continue
                ts = config.start + rng.integers(0, seconds, size=n)
                words = vocab[rng.integers(0, len(vocab), size=(n, config.tokens_per_message))]
                name = _user_id(g, j)
                users.extend([name] * n)
                groups.extend([gi] * n)
                stamps.extend(ts.tolist())
                texts.extend(" ".join(w) for w in words)

    for i, e in enumerate(config.events):
        rng = stream(config.seed, "synth-event", i)
        lexicon = [f"ctx{_slug(e.topic)}{j}" for j in range(config.context_lexicon)] if e.topic else []
        for g, hour, n in ((e.leader_group, e.leader_hour, e.leader_users),
                           (e.follower_group, e.follower_hour, e.follower_users)):
            chosen = np.sort(rng.choice(config.groups[g], size=n, replace=False))
            # inside the hour ending at `hour`, so the rise lands exactly on that index
            ts = np.maximum(config.start + 3600 * hour - rng.integers(0, 3600, size=n), config.start)
            for j, t in zip(chosen.tolist(), ts.tolist()):
                words = [e.term]
                if lexicon and g != config.anchor_group and config.context_words:
                    words += [lexicon[k] for k in rng.integers(0, len(lexicon), size=config.context_words)]
                users.append(_user_id(g, j))
                groups.append(labels.index(g))
                stamps.append(t)
                texts.append(" ".join(words))

    order = np.lexsort((np.arange(len(stamps)), np.array(stamps, dtype=np.int64)))
    ids = [f"m{k:08d}" for k in range(len(order))]
    corpus = Corpus(
        ids,
        [users[i] for i in order],
        np.array(groups, dtype=np.int16)[order] if groups else np.zeros(0, dtype=np.int16),
        np.array(stamps, dtype=np.int64)[order] if stamps else np.zeros(0, dtype=np.int64),
        [texts[i] for i in order],
        labels,
        (config.start, config.end),
        _sorted=True,
    )
    return corpus, list(config.events)


def demo_config(n_events: int = 50, seed: int = 0, background_rate: float = 0.0,
                users_per_group: int = 500, window_hours: int = 720,
                groups=("ira", "moc", "journalist", "user"),
                topics=("election", "race", "entertainment", "military", "economy"),
                lag_range=(12, 72), user_range=(10, 50), **kwargs) -> SynthConfig:
    """Random scenario: every event pairs the anchor (first) group with one other group."""
    rng = stream(seed, "synth-demo")
    anchor = groups[0]
    events = []
    for i in range(n_events):
        other = groups[1 + int(rng.integers(0, len(groups) - 1))]
        leader, follower = (anchor, other) if rng.random() < 0.5 else (other, anchor)
        lag = int(rng.integers(lag_range[0], lag_range[1] + 1))
        hour = int(rng.integers(24, window_hours - lag - 48))
        events.append(PlantedEvent(
            term=f"evt{i:03d}",
            leader_group=leader,
            follower_group=follower,
            leader_hour=hour,
            lag_hours=lag,
            leader_users=int(rng.integers(user_range[0], user_range[1] + 1)),
            follower_users=int(rng.integers(user_range[0], user_range[1] + 1)),
            topic=topics[i % len(topics)] if topics else "",
        ))
    return SynthConfig(
        groups={g: users_per_group for g in groups},
        window_hours=window_hours,
        background_rate=background_rate,
        events=events,
        seed=seed,
        anchor_group=anchor,
        **kwargs,
    )


@dataclass
class RecoveryScore:
    precision: float
    recall: float
    matches: int
    n_detected: int
    n_truth: int
    no_detections: bool = False


def _compatible(pair, event: PlantedEvent, tol: int) -> bool:
    return (
        pair.term == event.term
        and pair.leader.group == event.leader_group
        and pair.follower.group == event.follower_group
        and abs(pair.leader.hour - event.leader_hour) <= tol
        and abs(pair.follower.hour - event.follower_hour) <= tol
    )


def max_matching(adj: list[list[int]], n_right: int) -> int:
    """Maximum bipartite matching size (augmenting paths); adj[left] = compatible right ids."""
    match_right = [-1] * n_right

    def augment(u, seen):
        for v in adj[u]:
            if v in seen:
                continue
            seen.add(v)
            if match_right[v] < 0 or augment(match_right[v], seen):
                match_right[v] = u
                return True
        return False

    return sum(augment(u, set()) for u in range(len(adj)))


def score_recovery(detected, truth, tol: int = MATCH_TOLERANCE_HOURS) -> RecoveryScore:
    """Precision/recall of detected pairs against planted events under one-to-one matching.

    With no detections, precision is reported as 1.0 and ``no_detections`` is set.
    """
    detected, truth = list(detected), list(truth)
    by_term: dict[str, list[int]] = {}
    for j, e in enumerate(truth):
        by_term.setdefault(e.term, []).append(j)
    adj = [[j for j in by_term.get(p.term, []) if _compatible(p, truth[j], tol)] for p in detected]
    m = max_matching(adj, len(truth))
    if not detected:
        return RecoveryScore(1.0, 0.0 if truth else 1.0, 0, 0, len(truth), no_detections=True)
    return RecoveryScore(m / len(detected), m / len(truth) if truth else 1.0, m, len(detected), len(truth))


# --- plain-text (TOML) scenario files ---------------------------------------------

def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def dump_config(config: SynthConfig) -> str:
    lines = [
        f"seed = {config.seed}",
        f"start = {_toml_value(format_instant(config.start))}",
        f"window_hours = {config.window_hours}",
        f"background_rate = {float(config.background_rate)!r}",
        f"background_vocab_size = {config.background_vocab_size}",
        f"tokens_per_message = {config.tokens_per_message}",
        f"context_words = {config.context_words}",
        f"context_lexicon = {config.context_lexicon}",
    ]
    if config.anchor_group is not None:
        lines.append(f"anchor_group = {_toml_value(config.anchor_group)}")
    lines += ["", "[groups]"] + [f"{_toml_value(g)} = {n}" for g, n in config.groups.items()]
    for e in config.events:
        lines += ["", "[[events]]"] + [f"{k} = {_toml_value(v)}" for k, v in asdict(e).items()]
    return "\n".join(lines) + "\n"


def load_config(path: str | Path) -> SynthConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    demo = raw.pop("demo", None)
    if demo is not None:
        return demo_config(**demo)
    try:
        events = [PlantedEvent(**e) for e in raw.pop("events", [])]
        start = raw.pop("start", None)
        cfg = SynthConfig(events=events, **raw)
    except TypeError as exc:
        raise DataError(f"{path}: {exc}") from None
    if start is not None:
        cfg.start = parse_instant(start)
    return cfg


def write_truth(events, path: str | Path) -> None:
    cols = ["term", "leader_group", "follower_group", "leader_hour", "lag_hours",
            "leader_users", "follower_users", "topic"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(cols) + "\n")
        for e in events:
            fh.write("\t".join(str(getattr(e, c)) for c in cols) + "\n")


def read_truth(path: str | Path) -> list[PlantedEvent]:
    rows = [line.split("\t") for line in Path(path).read_text(encoding="utf-8").splitlines()
            if line and not line.startswith("#")]
    if not rows:
        return []
    header, out = rows[0], []
    for r in rows[1:]:
        rec = dict(zip(header, r))
        for k in ("leader_hour", "lag_hours", "leader_users", "follower_users"):
            rec[k] = int(rec[k])
        out.append(PlantedEvent(**rec))
    return out
