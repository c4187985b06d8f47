"""Deterministic random streams derived from a single root seed.

Every consumer asks for a stream by ``(root_seed, purpose, index)``. Streams are
counter-based (Philox), so the draws of replicate ``i`` never depend on how many
other replicates ran before it or on which thread ran them.
"""

import zlib

import numpy as np

# Stable small integers per purpose; zlib.crc32 is process-independent unlike hash().
def _purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(root_seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    seq = np.random.SeedSequence([int(root_seed) & 0xFFFFFFFF, _purpose_code(purpose), int(index)])
    return np.random.Generator(np.random.Philox(seq))
