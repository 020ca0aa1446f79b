"""Reproducible random streams.

Every stochastic step draws from ``stream(seed, *path)``: a Philox
(counter-based) generator keyed by ``SeedSequence(seed, spawn_key=path)``.
Distinct paths give independent streams, so batches can be split across
workers without changing any result.  Paths used in the package:

* ``(0, stream)``           unconditional field samples (``sample_field``)
* ``(1, stream)``           conditional Gaussian samples
* ``(2, outer, side)``      inner batches of the interacting Markov report
* ``(3,)``                  outer configuration selection
* ``(4, check)``            random objects drawn by scenario check ``check``
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *path: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
