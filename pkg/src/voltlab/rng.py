"""Counter-based random streams.

Every stochastic draw in the simulator comes from a stream addressed by a
key path such as (campaign_seed, "phase3", core, run_index, "fault").  The
path is hashed into a Philox key, so any stream can be reconstructed in
isolation: trials can run in parallel, in any order, and still consume
exactly the same random numbers they would have consumed serially.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_key(seed: int, *path) -> np.ndarray:
    """Hash (seed, *path) into a 2x64-bit Philox key.

    Path elements must be ints or strings; floats are refused because their
    repr is a portability hazard in a key.
    """
    for part in path:
        if not isinstance(part, (int, str)):
            raise TypeError(f"stream path element {part!r} must be int or str")
    text = repr((int(seed),) + tuple(path))
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return np.frombuffer(digest[:16], dtype=np.uint64).copy()


def stream(seed: int, *path) -> np.random.Generator:
    """A fresh Generator for the given key path.

    Same (seed, path) always yields an identical sequence; distinct paths
    are statistically independent.
    """
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *path)))
