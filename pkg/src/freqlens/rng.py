"""Named random substreams derived from a single integer seed."""

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name`` (e.g. ``"train"``, ``"attack"``).

    The same ``(seed, name)`` pair always yields the same stream, and streams
    with different names do not overlap in practice.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))
