"""Tab-separated output tables. Line 1 of every table names the manifest hash."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DependencyError
from .ingest import format_instant
from .spikes import Spike, SpikePair


def fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(map(str, v))
    return str(v)


def write_table(path: Path, header: Sequence[str], rows: Iterable[Sequence], manifest_hash: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# manifest {manifest_hash}\n")
        w = csv.writer(fh, delimiter="\t", lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def read_table(path: Path) -> list[dict[str, str]]:
    if not path.exists():
        raise DependencyError(f"missing table {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [line for line in fh if not line.startswith("# manifest ")]
    return list(csv.DictReader(lines, delimiter="\t"))


SPIKE_COLS = ["term", "group", "hour", "hour_utc", "height", "delta"]
PAIR_COLS = ["term", "leader_group", "follower_group", "leader_hour", "follower_hour",
             "leader_utc", "follower_utc", "leader_height", "follower_height",
             "leader_delta", "follower_delta", "lag_hours"]


def spike_row(s: Spike, start: int) -> list:
    return [s.term, s.group, s.hour, format_instant(start + 3600 * s.hour), s.height, s.delta]


def pair_row(p: SpikePair, start: int) -> list:
    return [p.term, p.leader.group, p.follower.group, p.leader.hour, p.follower.hour,
            format_instant(start + 3600 * p.leader.hour), format_instant(start + 3600 * p.follower.hour),
            p.leader.height, p.follower.height, p.leader.delta, p.follower.delta, p.lag_hours]


def spike_from(row: dict) -> Spike:
    return Spike(row["term"], row["group"], int(row["hour"]), int(row["height"]), int(row["delta"]))


def pair_from(row: dict) -> SpikePair:
    leader = Spike(row["term"], row["leader_group"], int(row["leader_hour"]),
                   int(row["leader_height"]), int(row["leader_delta"]))
    follower = Spike(row["term"], row["follower_group"], int(row["follower_hour"]),
                     int(row["follower_height"]), int(row["follower_delta"]))
    return SpikePair(leader, follower)
