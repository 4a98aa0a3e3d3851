"""Counter-based uniform variates.

Every uniform is a pure function of an integer key tuple, so a sample set
does not depend on how the work is split across threads or in what order
chunks are evaluated.  The mixing function is the SplitMix64 finalizer;
chaining it over the key components gives one SplitMix64 stream per prefix.
"""

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_M53 = 2.0 ** -53

# Stream identifiers. Keeping them distinct makes estimates from different
# estimators independent under a shared user seed.
STREAM_SOV = 1
STREAM_CRUDE = 2
STREAM_VB = 3
STREAM_EXACT = 4
STREAM_SIMULATE = 5


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_key(*keys):
    """Hash a sequence of non-negative integer keys (scalars or arrays).

    Arrays broadcast against each other.  Returns uint64.
    """
    with np.errstate(over="ignore"):
        h = _mix(np.asarray(keys[0], dtype=np.uint64) + _GAMMA)
        for k in keys[1:]:
            h = _mix(h + (np.asarray(k, dtype=np.uint64) + np.uint64(1)) * _GAMMA)
    return h


def uniforms(*keys):
    """Uniform(0, 1) variates keyed by ``keys``; never exactly 0 or 1."""
    h = hash_key(*keys)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


def derive_seed(*keys):
    """Fold a key tuple into a single 63-bit seed (e.g. for numpy Generators)."""
    return int(hash_key(*keys)) >> 1
