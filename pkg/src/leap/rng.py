"""Named, counter-based random streams.

Every random draw in the package comes from a generator keyed by
``(seed, stream name, entity index)`` so results never depend on the order
in which entities are processed.
"""

import zlib

import numpy as np


def _name_key(name):
    return zlib.crc32(name.encode("utf-8"))


def stream(seed, name, entity=0):
    """Return a Philox generator for one (seed, name, entity) triple."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(_name_key(name), int(entity)))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed, name):
    """Derive an integer sub-seed, e.g. for handing to another stage."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(_name_key(name),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
