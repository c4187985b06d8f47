"""Reading message corpora and group rosters into a validated, time-sorted corpus."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import cached_property
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("id", "user_id", "group", "created_at", "text")


@dataclass(frozen=True)
class Message:
    id: str
    user_id: str
    group: str
    timestamp: int  # epoch seconds, UTC
    text: str

    @property
    def created_at(self) -> str:
        return format_instant(self.timestamp)


@dataclass
class IngestConfig:
    groups: dict[str, str]
    start: int
    end: int
    skip_malformed: bool = False

    def __post_init__(self):
        if len(self.groups) < 2:
            raise DataError("at least 2 groups must be declared")
        if self.end <= self.start:
            raise DataError("analysis window end must be after start")
        if self.start % 3600:
            raise DataError("analysis window start must lie on a UTC hour boundary")


@dataclass
class LoadReport:
    lines: int = 0
    loaded: int = 0
    dropped_out_of_window: int = 0
    rejected: int = 0
    errors: list[str] = field(default_factory=list)


def parse_instant(value: str) -> int:
    """ISO-8601 string to UTC epoch seconds. Naive values are taken as UTC."""
    if not isinstance(value, str):
        raise ValueError(f"timestamp must be a string, got {type(value).__name__}")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() // 1)


def format_instant(epoch: int) -> str:
    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class Corpus:
    """Immutable, column-oriented message collection sorted by (timestamp, id).

    ``groups`` holds integer codes into ``group_labels`` (declaration order).
    """

    def __init__(
        self,
        ids: Sequence[str],
        user_ids: Sequence[str],
        groups: np.ndarray,
        timestamps: np.ndarray,
        texts: Sequence[str],
        group_labels: Sequence[str],
        window: tuple[int, int],
        report: LoadReport | None = None,
        _sorted: bool = False,
    ):
        ts = np.asarray(timestamps, dtype=np.int64)
        grp = np.asarray(groups, dtype=np.int16)
        ids = list(ids)
        if not (len(ids) == len(user_ids) == len(grp) == len(ts) == len(texts)):
            raise ValueError("corpus columns must have equal length")
        if not _sorted and len(ids):
            order = np.lexsort((np.array(ids, dtype=str), ts))
            ids = [ids[i] for i in order]
            user_ids = [user_ids[i] for i in order]
            texts = [texts[i] for i in order]
            grp = grp[order]
            ts = ts[order]
        self.ids = ids
        self.user_ids = list(user_ids)
        self.groups = grp
        self.timestamps = ts
        self.texts = list(texts)
        self.group_labels = tuple(group_labels)
        self.window = (int(window[0]), int(window[1]))
        self.report = report
        for arr in (self.groups, self.timestamps):
            arr.flags.writeable = False

    @classmethod
    def from_messages(cls, messages, group_labels, window) -> "Corpus":
        messages = list(messages)
        codes = {g: i for i, g in enumerate(group_labels)}
        return cls(
            ids=[m.id for m in messages],
            user_ids=[m.user_id for m in messages],
            groups=np.array([codes[m.group] for m in messages], dtype=np.int16),
            timestamps=np.array([m.timestamp for m in messages], dtype=np.int64),
            texts=[m.text for m in messages],
            group_labels=group_labels,
            window=window,
        )

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[Message]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> Message:
        return Message(
            self.ids[i], self.user_ids[i], self.group_labels[self.groups[i]], int(self.timestamps[i]), self.texts[i]
        )

    @property
    def hours(self) -> int:
        return -(-(self.window[1] - self.window[0]) // 3600)

    def group_code(self, label: str) -> int:
        try:
            return self.group_labels.index(label)
        except ValueError:
            raise DataError(f"group {label!r} is not declared (known: {', '.join(self.group_labels)})") from None

    @cached_property
    def user_codes(self) -> np.ndarray:
        """Dense integer user codes (sorted-unique order of user_id strings)."""
        if not self.user_ids:
            return np.zeros(0, dtype=np.int64)
        _, inv = np.unique(np.array(self.user_ids, dtype=str), return_inverse=True)
        return inv.astype(np.int64)

    @cached_property
    def tokens(self):
        from .textprep import tokenize_corpus

        return tokenize_corpus(self)

    def subset(self, index: np.ndarray) -> "Corpus":
        """Messages at ``index`` (ascending positions keep the sort order)."""
        index = np.asarray(index, dtype=np.int64)
        sub = Corpus(
            ids=[self.ids[i] for i in index],
            user_ids=[self.user_ids[i] for i in index],
            groups=self.groups[index],
            timestamps=self.timestamps[index],
            texts=[self.texts[i] for i in index],
            group_labels=self.group_labels,
            window=self.window,
            _sorted=True,
        )
        if "tokens" in self.__dict__:
            sub.__dict__["tokens"] = self.tokens.subset(index)
        return sub

    def to_jsonl(self) -> str:
        lines = []
        for m in self:
            rec = {"id": m.id, "user_id": m.user_id, "group": m.group, "created_at": m.created_at, "text": m.text}
            lines.append(json.dumps(rec, ensure_ascii=False, sort_keys=True))
        return "".join(line + "\n" for line in lines)


def _parse_record(line: str, lineno: int, codes: Mapping[str, int]):
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValueError(f"line {lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise ValueError(f"line {lineno}: record is not an object")
    missing = [f for f in REQUIRED_FIELDS if f not in rec]
    if missing:
        raise ValueError(f"line {lineno}: missing field(s) {', '.join(missing)}")
    for f in ("id", "user_id", "group", "text"):
        if not isinstance(rec[f], str):
            raise ValueError(f"line {lineno}: field {f!r} must be a string")
    if not rec["id"]:
        raise ValueError(f"line {lineno}: empty id")
    if rec["group"] not in codes:
        # Not record-level: an undeclared group means the roster is wrong.
        raise DataError(f"line {lineno}: unknown group {rec['group']!r}")
    try:
        ts = parse_instant(rec["created_at"])
    except ValueError:
        raise ValueError(f"line {lineno}: unparseable timestamp {rec['created_at']!r}") from None
    return rec["id"], rec["user_id"], codes[rec["group"]], ts, rec["text"]


def load_corpus(path: str | Path, config: IngestConfig) -> Corpus:
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    labels = tuple(config.groups)
    codes = {g: i for i, g in enumerate(labels)}
    report = LoadReport()
    ids, users, groups, stamps, texts = [], [], [], [], []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            report.lines += 1
            try:
                mid, uid, g, ts, text = _parse_record(line, lineno, codes)
            except ValueError as exc:
                if not config.skip_malformed:
                    raise DataError(str(exc)) from None
                report.rejected += 1
                report.errors.append(str(exc))
                continue
            if not (config.start <= ts < config.end):
                report.dropped_out_of_window += 1
                continue
            ids.append(mid)
            users.append(uid)
            groups.append(g)
            stamps.append(ts)
            texts.append(text)
    report.loaded = len(ids)
    if report.rejected:
        logger.warning("skipped %d malformed record(s) in %s", report.rejected, path)
    if report.dropped_out_of_window:
        logger.info("dropped %d record(s) outside the analysis window", report.dropped_out_of_window)
    return Corpus(ids, users, np.array(groups, dtype=np.int16), np.array(stamps, dtype=np.int64), texts,
                  labels, (config.start, config.end), report=report)


def corpus_stats(corpus: Corpus) -> dict[str, dict[str, int]]:
    """Per-group message and unique-user counts, plus a ``total`` row."""
    out = {}
    users = corpus.user_codes
    for code, label in enumerate(corpus.group_labels):
        mask = corpus.groups == code
        out[label] = {"messages": int(mask.sum()), "users": int(np.unique(users[mask]).size)}
    out["total"] = {"messages": len(corpus), "users": int(np.unique(users).size)}
    return out


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(corpus.to_jsonl(), encoding="utf-8")


def read_groups_file(path: str | Path) -> dict[str, str]:
    """Roster file: one ``label<TAB or whitespace>description`` per line; ``#`` comments."""
    groups: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        label, _, desc = line.partition("\t") if "\t" in line else line.partition(" ")
        label = label.strip()
        if label in groups:
            raise DataError(f"{path}:{lineno}: group {label!r} declared twice")
        groups[label] = desc.strip()
    return groups
