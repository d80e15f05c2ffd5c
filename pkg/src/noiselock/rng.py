"""Counter-based random numbers.

Every deviate is a pure function of ``(seed, stream, index)``: a SplitMix64
finaliser is applied to ``key + (index + 1) * GOLDEN`` where ``key`` mixes the
seed with a stream id. Uniforms take the top 53 bits, mapped to ``(0, 1]``.
Normals use the Box-Muller transform on consecutive index pairs ``(2j, 2j+1)``:
the even index gets the cosine branch, the odd index the sine branch.

Because there is no hidden generator state, a block of samples starting at any
index is identical whether it is produced in one call or in many, which is what
lets the closed-loop driver stream noise in chunks.
"""

import numpy as np
from numba import njit

GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1
_STREAM_MULT = 0xD1B54A32D192ED03

# stream ids used across the package
STREAM_PHOTOCURRENT = 0
STREAM_AUX_DETECTOR = 1
STREAM_DISTURBANCE = 2
STREAM_CLASSICAL = 3  # pole i of the 1/f bank uses 3 + 8 i
STREAM_EXPERIMENT = 4


def _mix64_py(z):
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def stream_key(seed, stream=0):
    """Derive the 64-bit key for ``(seed, stream)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    k = _mix64_py(seed + GOLDEN)
    return _mix64_py(k ^ ((stream * _STREAM_MULT) & _MASK64))


@njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _uniform_at(key, idx):
    z = _mix64(key + (idx + np.uint64(1)) * np.uint64(GOLDEN))
    return (float(z >> np.uint64(11)) + 1.0) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _fill_uniform(key, start, out):
    for i in range(out.shape[0]):
        out[i] = _uniform_at(key, np.uint64(start + i))


@njit(cache=True)
def _fill_normal(key, start, out):
    n = out.shape[0]
    twopi = 2.0 * np.pi
    i = 0
    while i < n:
        idx = start + i
        pair = idx // 2
        u1 = _uniform_at(key, np.uint64(2 * pair))
        u2 = _uniform_at(key, np.uint64(2 * pair + 1))
        r = np.sqrt(-2.0 * np.log(u1))
        if idx % 2 == 0:
            out[i] = r * np.cos(twopi * u2)
            if i + 1 < n:
                out[i + 1] = r * np.sin(twopi * u2)
            i += 2
        else:
            out[i] = r * np.sin(twopi * u2)
            i += 1


def uniform(seed, n, *, stream=0, start=0):
    """Uniform deviates on (0, 1] for indices ``start .. start+n-1``."""
    out = np.empty(int(n))
    _fill_uniform(np.uint64(stream_key(seed, stream)), int(start), out)
    return out


def standard_normal(seed, n, *, stream=0, start=0):
    """Unit normal deviates for indices ``start .. start+n-1``."""
    out = np.empty(int(n))
    _fill_normal(np.uint64(stream_key(seed, stream)), int(start), out)
    return out
