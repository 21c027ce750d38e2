"""Owen's nested uniform scrambling of base-b digits.

Permutations are never stored. The permutation at the node reached by the
digit prefix (xi_1, ..., xi_{k-1}) of coordinate j is a Fisher-Yates shuffle
driven by one Philox4x64 block, keyed by

    key     = (master_seed, stream)
    counter = (replication, coordinate | salt << 32, k + 2^32 chunk, prefix)

so the output is a pure function of (seed, stream, replication, coordinate,
prefix). Digits past the input resolution M are drawn from one block keyed
by the full M-digit prefix; scrambling the trailing zeros gives the same law.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Sequence

import numpy as np

from ._philox import philox4x64
from .exceptions import UsageError

DEFAULT_DEPTH = 32
_TAIL_LEVEL = 0xFFFF  # digit-level word reserved for the tail block
_U32 = np.uint64(0xFFFFFFFF)


@dataclass(frozen=True)
class ScrambleKey:
    """Identifies the permutation tree of one coordinate in one replication."""

    master_seed: int
    replication: int
    coordinate: int
    stream: int = 0
    salt: int = 0

    def words(self):
        if not 0 <= self.master_seed < 2**64:
            raise UsageError("master seed must be a 64-bit unsigned integer")
        if self.coordinate < 0 or self.coordinate >= 2**32 or self.salt < 0 or self.salt >= 2**32:
            raise UsageError("coordinate and salt must fit in 32 bits")
        key = (np.uint64(self.master_seed), np.uint64(self.stream % 2**64))
        c0 = np.uint64(self.replication % 2**64)
        c1 = np.uint64(self.coordinate | (self.salt << 32))
        return key, c0, c1


def _slices(block):
    """Eight 32-bit slices of a Philox block, high halves first."""
    out = []
    for w in block:
        out.append(w >> np.uint64(32))
        out.append(w & _U32)
    return out


def _apply_perm(block, b: int, digits: np.ndarray) -> np.ndarray:
    """Image of ``digits`` under the Fisher-Yates permutation of each block."""
    if b == 2:
        return digits ^ (block[0] >> np.uint64(63)).astype(np.int64)
    if b > 9:
        raise UsageError("bases above 9 are not supported by the scrambler")
    sl = _slices(block)
    N = digits.shape[0]
    perm = np.tile(np.arange(b, dtype=np.int64), (N, 1))
    rows = np.arange(N)
    for t, i in enumerate(range(b - 1, 0, -1)):
        j = ((sl[t] * np.uint64(i + 1)) >> np.uint64(32)).astype(np.int64)
        pi, pj = perm[rows, i].copy(), perm[rows, j].copy()
        perm[rows, i], perm[rows, j] = pj, pi
    return perm[rows, digits]


class Scrambler:
    """The permutation trees of one replication (all coordinates).

    Args:
        master_seed: 64-bit seed shared by an experiment.
        replication: replication index.
        stream: independent stream index (the multilevel level).
        b: base.
        depth: output digits; must be at least the input resolution.
        identity: test hook forcing every permutation to the identity
            and every tail digit to zero, so the output equals the input.
        salts: optional coordinate -> salt overrides (key-swap tests).
    """

    def __init__(self, master_seed: int, replication: int = 0, stream: int = 0, b: int = 2,
                 depth: int = DEFAULT_DEPTH, identity: bool = False,
                 salts: Optional[Mapping[int, int]] = None):
        if b < 2:
            raise UsageError("base must be at least 2")
        if depth < 1 or b**depth >= 2**63:
            raise UsageError(f"depth {depth} out of range for base {b}")
        self.master_seed = int(master_seed)
        self.replication = int(replication)
        self.stream = int(stream)
        self.b = b
        self.depth = depth
        self.identity = identity
        self.salts = dict(salts or {})

    def key(self, coordinate: int) -> ScrambleKey:
        return ScrambleKey(self.master_seed, self.replication, coordinate, self.stream,
                           self.salts.get(coordinate, 0))

    def _c1(self, coordinates) -> np.ndarray:
        words = [self.key(int(c)).words()[2] for c in coordinates]
        return np.array(words, dtype=np.uint64)

    def scramble_column(self, numerators, M: int, coordinate: int) -> np.ndarray:
        """Scramble one coordinate given as integer numerators over b^M.

        Returns:
            int64 numerators over b^depth.
        """
        x = np.asarray(numerators, dtype=np.int64).reshape(-1, 1)
        return self._scramble(x, M, [coordinate])[:, 0]

    def _scramble(self, x: np.ndarray, M: int, coordinates) -> np.ndarray:
        """Scramble every column of an (n, s) numerator array at once."""
        b, depth = self.b, self.depth
        if depth < M:
            raise UsageError(f"depth {depth} is below the input resolution {M}")
        if x.size and (x.min() < 0 or x.max() >= b**M):
            raise UsageError("numerators must lie in [0, b^M)")
        if self.identity:
            return x * b ** (depth - M)
        if b > 9:
            raise UsageError("bases above 9 are not supported by the scrambler")
        key, c0, _ = self.key(0).words()
        n, s = x.shape
        c1 = self._c1(coordinates)
        cols = np.arange(s)[None, :]
        out = np.zeros((n, s), dtype=np.int64)
        prefix = np.zeros((n, s), dtype=np.int64)
        for k in range(1, M + 1):
            digit = (x // b ** (M - k)) % b
            width = b ** (k - 1)
            if width <= n:
                # every node of this level at once, then gather
                nodes = np.arange(width, dtype=np.uint64)[None, :]
                block = philox4x64((c0, c1[:, None], np.uint64(k), nodes), key)
                if b == 2:
                    flip = (block[0] >> np.uint64(63)).astype(np.int64)
                    new = digit ^ flip[cols, prefix]
                else:
                    flat = [w.ravel() for w in block]
                    table = np.stack([_apply_perm(flat, b, np.full(s * width, t)) for t in range(b)],
                                     axis=1).reshape(s, width, b)
                    new = table[cols, prefix, digit]
            else:
                block = philox4x64((c0, c1[None, :], np.uint64(k), prefix.astype(np.uint64)), key)
                flat = [w.ravel() for w in block]
                new = _apply_perm(flat, b, digit.ravel()).reshape(n, s)
            out = out * b + new
            prefix = prefix * b + digit
        tail = depth - M
        if tail:
            out = out * b**tail + self._tail_digits(key, c0, c1[None, :], prefix, tail)
        return out

    def _tail_digits(self, key, c0, c1, prefix, count):
        b = self.b
        pre = prefix.astype(np.uint64)
        if b == 2:
            block = philox4x64((c0, c1, np.uint64(_TAIL_LEVEL), pre), key)
            return (block[0] >> np.uint64(64 - count)).astype(np.int64)
        val = np.zeros(prefix.shape, dtype=np.int64)
        done, chunk = 0, 0
        while done < count:
            lvl = np.uint64(_TAIL_LEVEL + (chunk << 32))
            sl = _slices(philox4x64((c0, c1, lvl, pre), key))
            for w in sl[: count - done]:
                val = val * b + ((w * np.uint64(b)) >> np.uint64(32)).astype(np.int64)
                done += 1
            chunk += 1
        return val

    def scramble_set(self, points, M: int, coordinates: Optional[Sequence[int]] = None,
                     exact: bool = False):
        """Scramble an (n, s) array of numerators over b^M.

        All points share one permutation tree per coordinate. Column r uses
        coordinate ``coordinates[r]`` (default r + 1).

        Returns:
            float array in [0, 1), or int numerators over b^depth when
            ``exact`` is set.
        """
        pts = np.asarray(points, dtype=np.int64)
        if pts.ndim == 1:
            pts = pts[:, None]
        coords = range(1, pts.shape[1] + 1) if coordinates is None else coordinates
        if len(coords) != pts.shape[1]:
            raise UsageError("one coordinate label per column is required")
        num = self._scramble(pts, M, coords)
        if exact:
            return num
        return num / float(self.b**self.depth)


def _resolution(x: Fraction, b: int) -> int:
    den, M = x.denominator, 0
    while den % b == 0:
        den //= b
        M += 1
    if den != 1:
        raise UsageError(f"{x} has no finite base-{b} expansion")
    return M


def scramble_point(x: Sequence, scrambler: Scrambler, depth: Optional[int] = None,
                   resolution: Optional[int] = None) -> list:
    """Scramble one point with exact base-b rational coordinates.

    Args:
        x: coordinates in [0, 1) with finite base-b expansions.
        scrambler: permutation trees to use.
        depth: output digits (defaults to the scrambler's).
        resolution: number of input digits M treated as data; defaults to
            the shortest expansion of each coordinate. Scrambling the same
            point at a different M gives an equally distributed but
            different output, so pass the M of the enclosing point set to
            reproduce :func:`scramble_set`.

    Returns:
        list of Fractions with denominator b^depth.
    """
    b = scrambler.b
    depth = scrambler.depth if depth is None else depth
    if depth != scrambler.depth:
        scrambler = Scrambler(scrambler.master_seed, scrambler.replication, scrambler.stream, b,
                              depth, scrambler.identity, scrambler.salts)
    out = []
    for j, xj in enumerate(x, start=1):
        xj = Fraction(xj)
        if not 0 <= xj < 1:
            raise UsageError("coordinates must lie in [0, 1)")
        M = max(1, _resolution(xj, b))
        if resolution is not None:
            if resolution < M:
                raise UsageError(f"{xj} needs more than {resolution} digits")
            M = resolution
        if M > depth:
            raise UsageError(f"depth {depth} is below the resolution {M} of {xj}")
        num = int(xj * b**M)
        sc = scrambler.scramble_column(np.array([num]), M, j)
        out.append(Fraction(int(sc[0]), b**depth))
    return out


def scramble_set(points, M: int, scrambler: Scrambler, exact: bool = False):
    """Functional form of :meth:`Scrambler.scramble_set`."""
    return scrambler.scramble_set(points, M, exact=exact)


__all__ = ["ScrambleKey", "Scrambler", "scramble_point", "scramble_set", "DEFAULT_DEPTH"]
