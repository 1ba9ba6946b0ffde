"""Counter-based random streams (SplitMix64 construction, stream format v1).

Every uniform is a pure function of ``(master_seed, replication, stream,
counter)``, so replications can run in any order or on any thread and still
produce the same numbers.  The construction is pinned; changing it changes
every simulated CSV.

    seed_key    = mix64(master_seed mod 2**64)
    rep_key     = mix64(seed_key + (replication + 1) * GOLDEN)
    stream_key  = mix64(rep_key ^ ((stream + 1) * STREAM_MULT))
    bits        = mix64(stream_key + (counter + 1) * GOLDEN)
    uniform     = (bits >> 11) * 2**-53                  in [0, 1)

Stream 0 holds the prior draws (counter = flat component index).  Stream
``k + 1`` is the outcome sequence of component ``k``: unit ``c`` succeeds iff
its uniform is below the true reliability.  Stage two continues the stage-one
sequence, so the data of both stages come from one stream.
"""

from __future__ import annotations

import numpy as np

STREAM_FORMAT_VERSION = 1

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
STREAM_MULT = 0xD1B54A32D192ED03
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / (1 << 53)
_CHUNK = 1 << 20


def mix64(z: int) -> int:
    z &= MASK
    z = ((z ^ (z >> 30)) * _M1) & MASK
    z = ((z ^ (z >> 27)) * _M2) & MASK
    return z ^ (z >> 31)


def replication_key(master_seed: int, replication: int) -> int:
    return mix64(mix64(master_seed) + (replication + 1) * GOLDEN)


def stream_key(rep_key: int, stream: int) -> int:
    return mix64(rep_key ^ (((stream + 1) * STREAM_MULT) & MASK))


def uniform(skey: int, counter: int) -> float:
    return (mix64(skey + (counter + 1) * GOLDEN) >> 11) * _INV_2_53


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def uniforms(skey: int, start: int, stop: int) -> np.ndarray:
    """Uniforms for counters ``start <= c < stop`` of one stream."""
    c = np.arange(start + 1, stop + 1, dtype=np.uint64)
    z = np.uint64(skey) + c * np.uint64(GOLDEN)
    return (_mix64_array(z) >> np.uint64(11)).astype(np.float64) * _INV_2_53


def count_successes(skey: int, start: int, stop: int, p: float) -> int:
    """Successes among units ``start..stop-1`` of a component with reliability ``p``."""
    total = 0
    for lo in range(start, stop, _CHUNK):
        hi = min(stop, lo + _CHUNK)
        total += int(np.count_nonzero(uniforms(skey, lo, hi) < p))
    return total
