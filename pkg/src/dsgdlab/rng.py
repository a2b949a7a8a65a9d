"""Deterministic random-stream splitting.

Every stochastic draw in the package flows through a named substream of a
single master seed.  A substream is selected by a spawn key
``(purpose, run, index)`` fed to :class:`numpy.random.SeedSequence`, whose
hash-based splitting gives independent streams for distinct keys; the stream
itself is a counter-based Philox generator.  Because each (run, agent) pair
owns its stream and consumes draws in iteration order, results are identical
no matter how runs are scheduled or parallelized.

Purpose tags
------------
``AGENT_DSGD`` / ``AGENT_CSGD``
    Per-agent gradient-noise streams, one per (run, agent).  The two
    algorithms use distinct tags so ensembles are not accidentally coupled.
``AGENT_SHARED``
    Replaces both tags when a coupled pair of runs must see identical noise.
``INIT``
    Per-run initial-iterate draws, shared by both algorithms within a run.
``DATA``
    Dataset synthesis.
``PROBE``
    Constant-estimation probe points and moment draws.
``RESAMPLE``
    One-step conditional-expectation resampling.
"""

from __future__ import annotations

import numpy as np

AGENT_DSGD = 0
AGENT_CSGD = 1
AGENT_SHARED = 2
INIT = 3
DATA = 4
PROBE = 5
RESAMPLE = 6


def substream(master_seed: int, purpose: int, run: int = 0, index: int = 0) -> np.random.Generator:
    """Return the generator for the substream keyed by (purpose, run, index)."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(purpose, run, index))
    return np.random.Generator(np.random.Philox(seq))


def agent_streams(master_seed: int, purpose: int, run: int, n: int) -> list[np.random.Generator]:
    """One gradient-noise stream per agent for the given run."""
    return [substream(master_seed, purpose, run, i) for i in range(n)]


def init_stream(master_seed: int, run: int) -> np.random.Generator:
    """Stream for drawing the initial iterates of one run."""
    return substream(master_seed, INIT, run)
