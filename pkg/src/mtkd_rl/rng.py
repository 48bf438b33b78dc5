"""Named random streams.

Every consumer of randomness asks for ``stream(master_seed, tag)``. The tag is
hashed with CRC-32 (stable across processes, unlike ``hash``) and combined with
the master seed through ``SeedSequence``; the resulting key drives a Philox
counter-based generator. Two different tags never share a stream, so adding a
draw in one component cannot shift the numbers another component sees.
"""

import zlib

import numpy as np


def tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed: int, tag: str) -> np.random.Generator:
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, tag_id(tag)])
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, tag: str) -> int:
    """A 31-bit integer seed for ``tag``, e.g. to store in a NetSpec."""
    return int(stream(seed, tag).integers(0, 2**31 - 1))
