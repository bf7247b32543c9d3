"""Substream derivation for every Monte-Carlo draw in the package.

All randomness flows through Philox (counter-based) generators keyed by
(seed, purpose, *indices). Distinct purposes, replications, and sensors get
independent streams, which is what makes parallel and serial runs agree
bit-for-bit: a replication's draws depend only on its key, never on which
worker produced it.
"""
from __future__ import annotations

import numpy as np

# Purpose codes. Keys with different leading codes never collide.
PATHS = 1         # generate_paths per-sensor streams
EXIT_BULK = 2     # first-exit sampling, shared head chunk
EXIT_TAIL = 3     # first-exit sampling, per-row continuation
FALSE_ALARM = 4   # per-replication false-alarm runs
DELAY = 5         # per-replication delay runs (paired across detectors)
ORACLE = 6        # SPRT cycle oracle
CHECK = 7         # fresh-sample re-verification draws


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, key...).

    Spawn keys make the derivation hierarchical and collision-free; Philox
    keeps jump-ahead cheap and state tiny, so spawning one stream per
    (purpose, replication, sensor) is affordable even at 10^6 replications.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
