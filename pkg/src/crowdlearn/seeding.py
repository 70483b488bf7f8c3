"""Named random sub-streams derived from one root seed."""

import zlib

import numpy as np


def seed_sequence(root, name, *extra):
    """Independent :class:`~numpy.random.SeedSequence` for component ``name``."""
    return np.random.SeedSequence([int(root) & 0xFFFFFFFF, zlib.crc32(name.encode()), *extra])


def substream(root, name, *extra):
    return np.random.default_rng(seed_sequence(root, name, *extra))


def subseed(root, name, *extra):
    """A plain integer seed for APIs that take ``int`` seeds."""
    return int(seed_sequence(root, name, *extra).generate_state(1)[0])
