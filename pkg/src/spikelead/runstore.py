"""Run directory: manifest, content-addressed stage outputs and the advisory lock.

Layout::

    run/
      manifest.json              current key per stage, its params, upstream keys, input digests
      <stage>/<key[:16]>/        outputs of one stage run; COMPLETE marks a finished write

A stage's key hashes its parameters, its upstream stages' keys, its input file
digests and the tool version, so equal keys mean equal outputs and the stage is
skipped. Changing aggregation parameters leaves upstream keys (and outputs) alone.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
from pathlib import Path

from . import __version__
from .errors import DependencyError, UsageError

logger = logging.getLogger(__name__)

COMPLETE = "COMPLETE"


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=str)


class RunDir:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.manifest_path = self.root / "manifest.json"
        self._lock = self.root / ".lock"

    def __enter__(self):
        self.root.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self._lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise UsageError(f"run directory {self.root} is locked by another invocation "
                             f"(remove {self._lock} if that process is gone)") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self._lock.unlink(missing_ok=True)

    # --- manifest -----------------------------------------------------------------

    def manifest(self) -> dict:
        if self.manifest_path.exists():
            return json.loads(self.manifest_path.read_text(encoding="utf-8"))
        return {"tool_version": __version__, "stages": {}}

    def _save(self, manifest: dict) -> None:
        manifest["config_hash"] = hashlib.sha256(
            _canonical({k: v["params"] for k, v in sorted(manifest["stages"].items())}).encode()
        ).hexdigest()
        tmp = self.manifest_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        tmp.replace(self.manifest_path)

    def entry(self, stage: str) -> dict | None:
        return self.manifest()["stages"].get(stage)

    # --- stages -------------------------------------------------------------------

    def require(self, stage: str, hint: str | None = None) -> tuple[str, Path]:
        """Key and output directory of an upstream stage, checked for presence and freshness.

        Freshness is checked along the whole upstream chain.
        """
        stages = self.manifest()["stages"]
        e = stages.get(stage)
        if e is None or not (self.root / e["dir"] / COMPLETE).exists():
            msg = f"missing upstream artifact '{stage}': run `spikelead {stage}` first"
            raise DependencyError(f"{hint}; {msg}" if hint else msg)
        todo, seen = [stage], set()
        while todo:
            name = todo.pop()
            if name in seen:
                continue
            seen.add(name)
            for up, key in stages[name]["upstream"].items():
                cur = stages.get(up)
                if cur is None or cur["key"] != key:
                    raise DependencyError(
                        f"stage '{name}' is stale: upstream '{up}' changed since it ran; "
                        f"rerun `spikelead {name}` and the stages after it")
                todo.append(up)
        return e["key"], self.root / e["dir"]

    def key(self, stage: str, params: dict, upstream: dict[str, str], inputs: dict[str, str]) -> str:
        payload = {"stage": stage, "params": params, "upstream": upstream, "inputs": inputs,
                   "tool_version": __version__}
        return hashlib.sha256(_canonical(payload).encode()).hexdigest()

    def run(self, stage: str, params: dict, upstream: dict[str, str], inputs: dict[str, str], build) -> Path:
        """Run ``build(out_dir, key)`` unless an identical run's outputs already exist."""
        key = self.key(stage, params, upstream, inputs)
        rel = f"{stage}/{key[:16]}"
        out = self.root / rel
        manifest = self.manifest()
        if (out / COMPLETE).exists():
            logger.info("cache hit: %s (%s)", stage, key[:16])
        else:
            if out.exists():
                shutil.rmtree(out)
            out.mkdir(parents=True)
            build(out, key)
            (out / COMPLETE).write_text(key + "\n", encoding="utf-8")
            logger.info("wrote %s (%s)", stage, key[:16])
        manifest["stages"][stage] = {
            "key": key,
            "dir": rel,
            "params": json.loads(_canonical(params)),
            "upstream": dict(sorted(upstream.items())),
            "inputs": dict(sorted(inputs.items())),
            "outputs": sorted(p.name for p in out.iterdir() if p.name != COMPLETE),
        }
        manifest["tool_version"] = __version__
        self._save(manifest)
        return out
