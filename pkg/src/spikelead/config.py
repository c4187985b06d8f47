"""Pipeline configuration (TOML) and its mapping onto the per-module parameter objects."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .clustering import KMeansParams
from .errors import DataError
from .ingest import IngestConfig, format_instant, parse_instant, read_groups_file
from .spikes import SpikeParams
from .stats import BootstrapSpec
from .textprep import FilterParams

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass
class SweepParams:
    k_values: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    thresholds: list[int] = field(default_factory=lambda: [5, 10, 20, 50, 100])
    threshold_group: str = "user"
    sample_size: int = 5000
    reps: int = 1000
    seed: int = 0


@dataclass
class PipelineConfig:
    groups: dict[str, str]
    start: int
    end: int
    skip_malformed: bool = False
    vocab: FilterParams = field(default_factory=FilterParams)
    spikes: SpikeParams = field(default_factory=SpikeParams)
    cluster: KMeansParams = field(default_factory=KMeansParams)
    bootstrap: BootstrapSpec = field(default_factory=BootstrapSpec)
    sweep: SweepParams = field(default_factory=SweepParams)
    focal_group: str = "ira"
    series_pairs: int = 20
    threads: int = 1

    @property
    def ingest(self) -> IngestConfig:
        return IngestConfig(dict(self.groups), self.start, self.end, self.skip_malformed)


def _build(cls, raw: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise DataError(f"config [{section}]: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise DataError(f"config [{section}]: {exc}") from None


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    with path.open("rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise DataError(f"{path}: {exc}") from None
    groups = dict(raw.get("groups", {}))
    if "groups_file" in raw:
        groups.update(read_groups_file(path.parent / raw["groups_file"]))
    window = raw.get("window", {})
    if "start" not in window or "end" not in window:
        raise DataError(f"{path}: [window] needs start and end")
    try:
        start, end = parse_instant(window["start"]), parse_instant(window["end"])
    except ValueError as exc:
        raise DataError(f"{path}: bad window instant ({exc})") from None
    fig = raw.get("figures", {})
    return PipelineConfig(
        groups=groups,
        start=start,
        end=end,
        skip_malformed=bool(raw.get("ingest", {}).get("skip_malformed", False)),
        vocab=_build(FilterParams, raw.get("vocab", {}), "vocab"),
        spikes=_build(SpikeParams, raw.get("spikes", {}), "spikes"),
        cluster=_build(KMeansParams, raw.get("cluster", {}), "cluster"),
        bootstrap=_build(BootstrapSpec, raw.get("bootstrap", {}), "bootstrap"),
        sweep=_build(SweepParams, raw.get("sweep", {}), "sweep"),
        focal_group=fig.get("focal_group", "ira"),
        series_pairs=int(fig.get("series_pairs", 20)),
    )


def _toml(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml(x) for x in v) + "]"
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def dump_config(cfg: PipelineConfig) -> str:
    """TOML text that load_config reads back to an equal configuration."""
    out = ["[window]", f"start = {_toml(format_instant(cfg.start))}", f"end = {_toml(format_instant(cfg.end))}", ""]
    out += ["[groups]"] + [f"{_toml(g)} = {_toml(d)}" for g, d in cfg.groups.items()] + [""]
    out += ["[ingest]", f"skip_malformed = {_toml(cfg.skip_malformed)}", ""]
    for name in ("vocab", "spikes", "cluster", "bootstrap", "sweep"):
        section = asdict(getattr(cfg, name))
        nested = {k: v for k, v in section.items() if isinstance(v, dict)}
        out.append(f"[{name}]")
        out += [f"{k} = {_toml(v)}" for k, v in section.items() if k not in nested and k != "threads"]
        out.append("")
        for k, table in nested.items():
            out.append(f"[{name}.{k}]")
            out += [f"{_toml(g)} = {_toml(v)}" for g, v in table.items()]
            out.append("")
    out += ["[figures]", f"focal_group = {_toml(cfg.focal_group)}", f"series_pairs = {cfg.series_pairs}"]
    return "\n".join(out) + "\n"
