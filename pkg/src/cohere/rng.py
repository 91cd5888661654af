"""Seed fan-out: every random draw in the pipeline comes from a named substream.

A single integer seed is combined with string labels (and optional integer
indices such as frame or step numbers) into a SeedSequence, so independent
parts of the pipeline never share or race on a global generator and results
do not depend on evaluation order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_key(label: str | int) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def substream(seed: int, *labels: str | int) -> np.random.Generator:
    """Derive a deterministic generator for (seed, labels...).

    Distinct label tuples give statistically independent streams; the same
    tuple always gives the same stream regardless of platform.
    """
    keys = [_label_key(lb) for lb in labels]
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(keys)))
