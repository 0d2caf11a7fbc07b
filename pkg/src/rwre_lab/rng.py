"""Splittable counter-based random streams.

Every uniform draw is a pure function of (seed, stream, domain, index).
There is no generator state: site i of an environment, or step t of a
walk replica, always receives the same value no matter how the work is
chunked, batched or threaded.  That is what makes environments lazily
extendable and estimates bit-reproducible.

The construction is a keyed SplitMix64: per (seed, stream, domain) a
64-bit key is derived by repeated finalizer passes, and draw number i of
that stream is ``mix(key + i * GAMMA)``, i.e. a SplitMix64 sequence
seeded at the key.  uint64 arithmetic wraps modulo 2**64, so negative
site indices map injectively to the upper half of the counter range.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_SEED_TAG = np.uint64(0xD1B54A32D192ED03)
_STREAM_TAG = np.uint64(0x8BB84B93962EACC9)
_2_POW_NEG53 = 2.0 ** -53

# Domain tags keep draws from different subsystems decorrelated even if
# they share (seed, stream): environment sites, walk steps, and
# auxiliary sampling live in disjoint keyspaces.
DOMAIN_ENV = 0x656E76
DOMAIN_WALK = 0x77616C6B
DOMAIN_MISC = 0x6D697363

_U64_MASK = 0xFFFFFFFFFFFFFFFF


def _u64(x: int) -> np.uint64:
    return np.uint64(int(x) & _U64_MASK)


def _mix(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, vectorized over uint64 arrays."""
    with np.errstate(over="ignore"):
        z = np.asarray(z, dtype=np.uint64)
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def stream_key(seed: int, stream: int, domain: int) -> np.uint64:
    """Derive the 64-bit key of one (seed, stream, domain) stream."""
    with np.errstate(over="ignore"):
        k = _mix(_u64(seed) + _SEED_TAG)
        k = _mix(k ^ (_u64(stream) * _GAMMA + _STREAM_TAG))
        k = _mix(k ^ (_u64(domain) * _MIX1))
    return np.uint64(k)


def stream_keys(seed: int, streams: np.ndarray, domain: int) -> np.ndarray:
    """Vectorized `stream_key` over an array of stream ids."""
    s = np.asarray(streams, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        k = _mix(np.broadcast_to(_mix(_u64(seed) + _SEED_TAG), s.shape) ^ (s * _GAMMA + _STREAM_TAG))
        k = _mix(k ^ (_u64(domain) * _MIX1))
    return k


def _to_uniform(z: np.ndarray) -> np.ndarray:
    return (z >> np.uint64(11)).astype(np.float64) * _2_POW_NEG53


def uniforms(key: np.uint64, indices: np.ndarray) -> np.ndarray:
    """Uniforms in [0, 1) at the given (possibly negative) indices."""
    idx = np.asarray(indices, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        z = _mix(np.uint64(key) + idx * _GAMMA)
    return _to_uniform(z)


def uniform_block(key: np.uint64, start: int, count: int) -> np.ndarray:
    """Uniforms at indices start, start+1, ..., start+count-1."""
    return uniforms(key, np.arange(start, start + count, dtype=np.int64))


def uniforms_at(keys: np.ndarray, index: int) -> np.ndarray:
    """One uniform per key, all at the same index (one walk step)."""
    with np.errstate(over="ignore"):
        z = _mix(keys + _u64(index) * _GAMMA)
    return _to_uniform(z)


def uniform_grid(keys: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """(len(keys), len(indices)) uniforms; rows are streams, columns indices."""
    idx = np.asarray(indices, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        z = _mix(keys[:, None] + idx[None, :] * _GAMMA)
    return _to_uniform(z)
