"""Deterministic, splittable random streams.

Every random draw in the package comes from a stream keyed by
``(master seed, purpose, system index, epoch index)``. Streams are backed by
numpy's counter-based Philox generator, seeded through ``SeedSequence`` with
the key as its spawn key, so two distinct keys never share state and a
stream's draws do not depend on how many other streams exist.
"""

from enum import IntEnum

import numpy as np


class Purpose(IntEnum):
    ENSEMBLE = 0
    FEEDBACK = 1
    DITHER = 2
    NOISE = 3
    FIT_INIT = 4
    SWEEP = 5


def stream(seed, purpose, system=0, epoch=0):
    """Return an independent generator for one ``(purpose, system, epoch)``.

    Parameters
    ----------
    seed : int
        Non-negative master seed.
    purpose : Purpose
        What the draws are used for.
    system, epoch : int
        Further key components; unused components should be left at 0.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    seq = np.random.SeedSequence(
        entropy=int(seed), spawn_key=(int(purpose), int(system), int(epoch))
    )
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed, purpose, system=0, epoch=0):
    """Derive a 63-bit integer child seed from a stream key."""
    seq = np.random.SeedSequence(
        entropy=int(seed), spawn_key=(int(purpose), int(system), int(epoch))
    )
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
