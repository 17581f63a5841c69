"""Counter-based Gaussian streams.

Every normal draw is a pure function of ``(seed, path_index, step, stream)``
computed with Philox4x32-10, so results do not depend on batching, the order
paths are generated in, or the number of threads.
"""

import numba

numba.config.THREADING_LAYER = "workqueue"
import numpy as np

# stream tags keep independent families of draws apart
STREAM_BROWNIAN = 0
STREAM_FBM = 1
STREAM_OUTER = 2
STREAM_INNER = 3

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)


@numba.njit(cache=True, inline="always")
def _philox4x32(c0, c1, c2, c3, k0, k1):
    for r in range(10):
        if r > 0:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> np.uint64(32)
        lo0 = p0 & _MASK
        hi1 = p1 >> np.uint64(32)
        lo1 = p1 & _MASK
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@numba.njit(cache=True)
def philox4x32_10(counter, key):
    """Raw Philox4x32-10 block; ``counter`` has 4 words, ``key`` 2 words."""
    out = np.empty(4, dtype=np.uint64)
    c = _philox4x32(np.uint64(counter[0]) & _MASK, np.uint64(counter[1]) & _MASK,
                    np.uint64(counter[2]) & _MASK, np.uint64(counter[3]) & _MASK,
                    np.uint64(key[0]) & _MASK, np.uint64(key[1]) & _MASK)
    out[0], out[1], out[2], out[3] = c
    return out


@numba.njit(cache=True, parallel=True)
def _normals_kernel(seed, paths, step0, n_steps, stream):
    # one Philox block yields the Box-Muller pair for steps (2m, 2m + 1)
    n = paths.shape[0]
    out = np.empty((n, n_steps), dtype=np.float64)
    k0 = np.uint64(seed) & _MASK
    k1 = np.uint64(seed) >> np.uint64(32)
    scale = 1.0 / 9007199254740992.0  # 2**-53
    two_pi = 2.0 * np.pi
    first = step0 // 2
    last = (step0 + n_steps - 1) // 2
    for i in numba.prange(n):
        p = np.uint64(paths[i])
        p_lo = p & _MASK
        p_hi = p >> np.uint64(32)
        for m in range(first, last + 1):
            x0, x1, x2, x3 = _philox4x32(np.uint64(m), p_lo, p_hi,
                                         np.uint64(stream), k0, k1)
            a = ((x0 << np.uint64(32)) | x1) >> np.uint64(11)
            b = ((x2 << np.uint64(32)) | x3) >> np.uint64(11)
            r = np.sqrt(-2.0 * np.log((np.float64(a) + 0.5) * scale))
            theta = two_pi * (np.float64(b) * scale)
            j = 2 * m - step0
            if j >= 0:
                out[i, j] = r * np.cos(theta)
            if 0 <= j + 1 < n_steps:
                out[i, j + 1] = r * np.sin(theta)
    return out


def standard_normals(seed, paths, n_steps, step0=0, stream=STREAM_BROWNIAN):
    """Standard normals of shape ``(len(paths), n_steps)``.

    Row ``i`` column ``j`` depends only on ``(seed, paths[i], step0 + j, stream)``.
    """
    paths = np.atleast_1d(np.asarray(paths, dtype=np.uint64))
    if n_steps <= 0 or paths.size == 0:
        return np.zeros((paths.size, max(n_steps, 0)))
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return _normals_kernel(np.uint64(seed), paths, np.int64(step0),
                           np.int64(n_steps), np.int64(stream))


def set_threads(n):
    """Cap the worker threads used by the generator kernel."""
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n
