"""Name-keyed child seeds derived from one root seed.

``derive_seed(root, *path)`` hashes every path component with CRC-32 and
feeds the result as the spawn key of a :class:`numpy.random.SeedSequence`
rooted at ``root``. A child seed depends only on the root and its own path,
so adding or removing a sampler or model never changes another stage's
randomness.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(root: int, *path) -> int:
    key = tuple(zlib.crc32(str(p).encode("utf-8")) for p in path)
    return int(np.random.SeedSequence(int(root), spawn_key=key).generate_state(1)[0])
