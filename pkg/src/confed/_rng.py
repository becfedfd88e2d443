"""Counter-based random streams.

Every source of randomness in the simulator is a Philox generator whose
128-bit key encodes (global seed, purpose tag, round/attempt index, lane).
A stream's output is a pure function of its key, so results never depend
on the order in which servers or users are evaluated, and a run is
bit-reproducible for a fixed (config, seed) pair.  Within a round, every
user's draw is one lane of a single keyed block.
"""

import numpy as np

# Purpose tags: keep distinct so streams never collide across uses.
DATASET = 1
GRAPH = 2
ROUND = 3
SOLVER = 4
POWER = 5
TEST = 6

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def keyed_generator(seed, purpose, index=0, lane=0):
    """Generator for the stream keyed by (seed, purpose, index, lane).

    seed: global run seed (any Python int; folded to 64 bits).
    purpose: small tag constant from this module.
    index: round number, retry attempt, or similar counter (< 2**40).
    lane: sub-stream id, e.g. a server index (< 2**20).
    """
    if not (0 <= index < 1 << 40):
        raise ValueError(f"stream index out of range: {index}")
    if not (0 <= lane < 1 << 20):
        raise ValueError(f"stream lane out of range: {lane}")
    word0 = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    word1 = (
        (np.uint64(purpose) << np.uint64(60))
        | (np.uint64(lane) << np.uint64(40))
        | np.uint64(index)
    ) & _MASK64
    key = np.array([word0, word1], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
