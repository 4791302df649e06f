"""Counter-based SplitMix64 streams.

The compiled kernel implements the same arithmetic, so a given
(seed, stream id) yields the same sequence of doubles on both backends.
"""

import math

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
TWO_M53 = 1.0 / 9007199254740992.0

# reserved stream ids; stations use their own index
CRASH_STREAM = 0xC0FFEE
LEADER_STREAM = 0x1EADE7


def mix64(z):
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK64
    return z ^ (z >> 31)


def stream_state(seed, stream_id):
    """Initial state of stream ``stream_id`` under ``seed``."""
    return mix64((seed & MASK64) ^ mix64((stream_id + 1) * GOLDEN & MASK64))


class RngStream:
    """One independent SplitMix64 stream."""

    __slots__ = ("seed", "stream_id", "state")

    def __init__(self, seed, stream_id=0):
        self.seed = seed
        self.stream_id = stream_id
        self.state = stream_state(seed, stream_id)

    def next_u64(self):
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def uniform(self):
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * TWO_M53

    def exponential(self, rate):
        return -math.log(1.0 - self.uniform()) / rate

    def randbelow(self, k):
        return self.next_u64() % k


def hash_index(seed, a, b, c, k):
    """Stateless uniform draw in [0, k) keyed by (seed, a, b, c)."""
    z = stream_state(seed, LEADER_STREAM)
    z = mix64((z + a * GOLDEN) & MASK64)
    z = mix64((z + b * GOLDEN) & MASK64)
    z = mix64((z + c * GOLDEN) & MASK64)
    return z % k
