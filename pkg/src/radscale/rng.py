"""Deterministic random-stream management.

All stochastic choices in the package (field init, ray selection, jitter,
scene textures, metric probes) draw from purpose-keyed generators derived
from one experiment seed.  Streams for different purposes are statistically
independent, and consuming numbers from one never shifts another, so e.g.
adding extra metric probes cannot change which rays a training run sees.

Implementation: ``SeedSequence(seed).spawn``-style keying via ``spawn_key``,
which numpy documents as a stable, versioned construction.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError

# Fixed purpose ids.  Append only; renumbering breaks reproducibility of
# previously published seeds.
PURPOSES = {
    "init": 0,       # trainee field initialisation
    "rays": 1,       # per-iteration ray/pixel selection
    "stratify": 2,   # per-sample jitter within ray segments
    "texture": 3,    # procedural scene content
    "probes": 4,     # metric probe rays (near-mass, profiles)
    "analysis": 5,   # Monte-Carlo density estimation
}


def rng_for(seed: int, purpose: str) -> np.random.Generator:
    """Return the generator for one purpose under one experiment seed."""
    if purpose not in PURPOSES:
        raise InputError(f"unknown rng purpose {purpose!r}; expected one of {sorted(PURPOSES)}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(PURPOSES[purpose],))
    return np.random.default_rng(ss)
