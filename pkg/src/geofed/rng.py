"""Deterministic named random substreams derived from a single base seed.

Every source of randomness in the package draws from a substream named by
(base_seed, *path). Streams with distinct names are independent, and the
same name always replays the same sequence, which is what makes runs
bit-reproducible regardless of execution order or worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Unit separator keeps ("a:b",) and ("a", "b") from colliding.
_SEP = "\x1f"


def substream_seed(base_seed: int, *path: object) -> int:
    """Map (base_seed, path parts) to a stable 64-bit child seed."""
    text = _SEP.join([str(int(base_seed))] + [str(part) for part in path])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(base_seed: int, *path: object) -> np.random.Generator:
    """Independent generator for one named subsystem.

    Example: substream(seed, "augment", client_id, class_id, "step1").
    """
    return np.random.default_rng(substream_seed(base_seed, *path))
