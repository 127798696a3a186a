"""Named random substreams derived from one root seed.

Every source of randomness in a run (data synthesis, masking, parameter
init, mixup, batch order) pulls from its own named stream so that ablations
changing one factor leave the others' draws untouched.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_seed(root_seed: int, name: str) -> np.random.SeedSequence:
    """Seed sequence for the substream ``name`` under ``root_seed``."""
    return np.random.SeedSequence(entropy=root_seed, spawn_key=(zlib.crc32(name.encode("utf-8")),))


def substream(root_seed: int, name: str) -> np.random.Generator:
    """Generator for a named substream. Same (seed, name) -> same draws."""
    return np.random.default_rng(stream_seed(root_seed, name))
