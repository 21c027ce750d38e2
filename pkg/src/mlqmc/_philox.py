"""Vectorised Philox4x64-10 keyed block function.

numpy ships Philox as a sequential bit generator; scrambling needs the raw
block function evaluated at millions of independent (key, counter) pairs at
once, so the rounds are written out over uint64 arrays here. Output matches
``numpy.random.Philox`` bit for bit (see tests/test_philox.py).
"""

import numpy as np

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


def _mulhilo(a, b):
    # 64x64 -> 128 bit product from 32-bit limbs; uint64 arithmetic wraps
    al, ah = a & _LO32, a >> _S32
    bl, bh = b & _LO32, b >> _S32
    t = al * bl
    lo = a * b
    t = ah * bl + (t >> _S32)
    w1 = t & _LO32
    w2 = t >> _S32
    t = al * bh + w1
    hi = ah * bh + w2 + (t >> _S32)
    return hi, lo


def philox4x64(counter, key, rounds=10):
    """Evaluate the Philox4x64 block function.

    Args:
        counter: sequence of four uint64 arrays (broadcastable).
        key: sequence of two uint64 arrays (broadcastable).

    Returns:
        tuple of four uint64 arrays.
    """
    with np.errstate(over="ignore"):
        x0, x1, x2, x3 = (np.asarray(c, dtype=np.uint64) for c in counter)
        k0, k1 = (np.asarray(k, dtype=np.uint64) for k in key)
        x0, x1, x2, x3 = np.broadcast_arrays(x0, x1, x2, x3)
        for r in range(rounds):
            if r:
                k0 = k0 + _W0
                k1 = k1 + _W1
            hi0, lo0 = _mulhilo(_M0, x0)
            hi1, lo1 = _mulhilo(_M1, x2)
            x0, x1, x2, x3 = hi1 ^ x1 ^ k0, lo1, hi0 ^ x3 ^ k1, lo0
    return x0, x1, x2, x3
