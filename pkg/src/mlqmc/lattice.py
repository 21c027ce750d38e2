"""Polynomial lattice rules over Z_b and their component-by-component search.

A generating vector (p; q_1, ..., q_s) with deg p = M gives the n = b^M
points x_h = (nu_M(h(x) q_1(x) / p(x)), ..., nu_M(h(x) q_s(x) / p(x))).
Point coordinates are handled as integer numerators in [0, b^M).

The search criterion is the worst-case quantity

    B = (1/n) sum_i sum_{z in w, max w = z} gamma_w prod_{j in w} phi(x_ij)/3

which for CBC reduces to (1/(3n)) sum_i phi(x_iz) S_i with a per-point
factor S_i built from the columns already chosen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import product as iproduct
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .exceptions import ResourceError, UsageError
from .ffpoly import (
    GFPoly,
    int_to_poly,
    is_irreducible,
    laurent_digits,
    nu_M,
    poly_add,
    poly_mulmod,
    poly_to_int,
)
from .space import ProductWeights, TableWeights, WeightModel

# one irreducible modulus per (b, M), digits constant term first
_MODULI = {
    2: {
        1: "11", 2: "111", 3: "1101", 4: "11001", 5: "101001", 6: "1100001",
        7: "11000001", 8: "101110001", 9: "1000100001", 10: "10010000001",
        11: "101000000001", 12: "1100101000001", 13: "11011000000001",
        14: "110000100010001", 15: "1100000000000001", 16: "11010000000010001",
        17: "100100000000000001", 18: "1000000100000000001",
        19: "11100100000000000001", 20: "100100000000000000001",
        21: "1010000000000000000001", 22: "11000000000000000000001",
        23: "100001000000000000000001", 24: "1110000100000000000000001",
    },
    3: {
        1: "11", 2: "211", 3: "1201", 4: "21001", 5: "120001", 6: "2100001",
        7: "20100001", 8: "201000001", 9: "2000100001", 10: "10200000001",
        11: "201000000001", 12: "2010000000001", 13: "12000000000001",
        14: "210000000000001", 15: "2010000000000001", 16: "20001000000000001",
        17: "120000000000000001", 18: "2000000100000000001",
        19: "20100000000000000001", 20: "200001000000000000001",
    },
}

EXACT_MAX_POINTS = 2**10
EXACT_BIT_BUDGET = 4096
MAX_POINTS = 2**20
_CHUNK_ELEMS = 2**22


@lru_cache(maxsize=None)
def _irreducible_cached(b: int, coeffs: tuple) -> bool:
    return is_irreducible(GFPoly(b, coeffs))


def irreducible_modulus(b: int, M: int) -> GFPoly:
    """The built-in irreducible polynomial of degree M over Z_b."""
    try:
        p = GFPoly.from_digits(_MODULI[b][M], b)
    except KeyError:
        raise UsageError(f"no built-in modulus for b={b}, M={M}") from None
    if not _irreducible_cached(b, p.coeffs):
        raise UsageError(f"built-in modulus {p} failed the irreducibility check")
    return p


@dataclass(frozen=True)
class GeneratingVector:
    """(b, M, p, q_1..q_s) of a polynomial lattice rule."""

    b: int
    M: int
    modulus: GFPoly
    gens: tuple
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.M < 1:
            raise UsageError("M must be positive")
        if self.modulus.base != self.b or self.modulus.degree != self.M:
            raise UsageError("modulus must have base b and degree M")
        if not _irreducible_cached(self.b, self.modulus.coeffs):
            raise UsageError(f"modulus {self.modulus} is reducible")
        gens = tuple(g if isinstance(g, GFPoly) else int_to_poly(int(g), self.b) for g in self.gens)
        for g in gens:
            if g.base != self.b or g.is_zero() or g.degree >= self.M:
                raise UsageError(f"generator {g} is not a nonzero polynomial of degree < M")
        object.__setattr__(self, "gens", gens)

    @property
    def n(self) -> int:
        return self.b**self.M

    @property
    def width(self) -> int:
        return len(self.gens)

    def prefix(self, s: int) -> "GeneratingVector":
        if not 1 <= s <= self.width:
            raise UsageError(f"prefix width {s} outside 1..{self.width}")
        return GeneratingVector(self.b, self.M, self.modulus, self.gens[:s], dict(self.meta))

    def encodings(self) -> list:
        return [poly_to_int(g) for g in self.gens]


# -------------------------------------------------------------- file format


def format_vector(gv: GeneratingVector) -> str:
    lines = [f"{gv.b} {gv.M} {gv.modulus.digits()}"]
    lines += [g.digits() for g in gv.gens]
    return "\n".join(lines) + "\n"


def parse_vector(text: str) -> GeneratingVector:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise UsageError("empty generating-vector file")
    try:
        b, M, pd = lines[0].split()
        b, M = int(b), int(M)
        gens = tuple(GFPoly.from_digits(ln, b) for ln in lines[1:])
        p = GFPoly.from_digits(pd, b)
    except ValueError as exc:
        raise UsageError(f"malformed generating-vector file: {exc}") from exc
    return GeneratingVector(b, M, p, gens)


def save_vector(gv: GeneratingVector, path) -> None:
    Path(path).write_text(format_vector(gv))


def load_vector(path) -> GeneratingVector:
    return parse_vector(Path(path).read_text())


# ---------------------------------------------------------- point generation


def _digits_of(values: np.ndarray, b: int, M: int) -> np.ndarray:
    """Base-b digits, least significant first, as an (..., M) array."""
    out = np.empty(values.shape + (M,), dtype=np.int64)
    v = values.astype(np.int64)
    for r in range(M):
        out[..., r] = v % b
        v = v // b
    return out


def _from_digits(digs: np.ndarray, b: int) -> np.ndarray:
    w = b ** np.arange(digs.shape[-1], dtype=np.int64)
    return digs @ w


@lru_cache(maxsize=64)
def _basis(b: int, M: int, pcoeffs: tuple) -> np.ndarray:
    """Numerators of nu_M(x^k / p) for k = 0..2M-2."""
    p = GFPoly(b, pcoeffs)
    digs = laurent_digits(GFPoly(b, (1,)), p, 3 * M)
    out = []
    for k in range(2 * M - 1):
        n = 0
        for t in digs[k:k + M]:
            n = n * b + t
        out.append(n)
    return np.array(out, dtype=np.int64)


def _generator_columns(b: int, M: int, p: GFPoly, enc: np.ndarray) -> np.ndarray:
    """For candidate encodings ``enc``, the numerators nu_M(x^r q / p), r < M.

    nu_M is Z_b-linear in the numerator polynomial and nu_M(x^{r+i}/p) has
    the digits of 1/p shifted by r+i, so every column is a digit-wise
    combination of the basis values.
    """
    base = _basis(b, M, p.coeffs)
    enc = np.asarray(enc, dtype=np.int64)
    qd = _digits_of(enc, b, M)  # (c, M)
    if b == 2:
        cols = np.zeros((enc.size, M), dtype=np.int64)
        for r in range(M):
            for i in range(M):
                cols[:, r] ^= qd[:, i] * base[r + i]
        return cols
    bd = _digits_of(base, b, M)  # (2M-1, M)
    out = np.zeros((enc.size, M, M), dtype=np.int64)
    for r in range(M):
        for i in range(M):
            out[:, r, :] += qd[:, i, None] * bd[None, r + i, :]
    return _from_digits(out % b, b)


def _expand(cols: np.ndarray, b: int) -> np.ndarray:
    """All digit-wise combinations sum_r h_r cols[:, r], ordered by h."""
    c, M = cols.shape
    if b == 2:
        arr = np.zeros((c, 1), dtype=np.int64 if M > 31 else np.int32)
        cols = cols.astype(arr.dtype)
        for r in range(M):
            arr = np.concatenate([arr, arr ^ cols[:, r:r + 1]], axis=1)
        return arr
    cd = _digits_of(cols, b, M)  # (c, M, M digits)
    arr = np.zeros((c, 1, M), dtype=np.int64)
    for r in range(M):
        parts = [arr] + [(arr + t * cd[:, r:r + 1, :]) % b for t in range(1, b)]
        arr = np.concatenate(parts, axis=1)
    return _from_digits(arr, b)


def generate_points(gv: GeneratingVector, method: str = "fast", as_fractions: bool = False):
    """Point set of the rule as integer numerators over b^M.

    Args:
        gv: generating vector.
        method: "fast" (digit-linear expansion) or "direct" (one Laurent
            division per point and coordinate).
        as_fractions: return a list of rows of exact Fractions instead.

    Returns:
        (b^M, s) int64 array whose row h holds b^M * x_h, unless
        ``as_fractions`` is set.
    """
    if gv.n > MAX_POINTS:
        raise ResourceError(f"{gv.n} points exceed the limit {MAX_POINTS}")
    if method == "direct":
        rows = []
        for h in range(gv.n):
            hp = int_to_poly(h, gv.b)
            rows.append([nu_M(poly_mulmod(hp, q, gv.modulus), gv.modulus, gv.M) for q in gv.gens])
        pts = np.array(rows, dtype=np.int64).reshape(gv.n, gv.width)
    elif method == "fast":
        cols = _generator_columns(gv.b, gv.M, gv.modulus, np.array(gv.encodings()))
        pts = _expand(cols, gv.b).T.copy()
    else:
        raise UsageError(f"unknown method {method!r}")
    if as_fractions:
        return [[Fraction(int(v), gv.n) for v in row] for row in pts]
    return pts


def dual_contains(gv: GeneratingVector, k) -> bool:
    """Whether k lies in the dual lattice: sum_j tr_M(k_j) q_j = 0 mod p.

    Args:
        k: mapping coordinate (1-based) -> nonnegative integer, or a
            sequence indexed from coordinate 1.
    """
    items = k.items() if isinstance(k, Mapping) else enumerate(k, start=1)
    acc = GFPoly(gv.b)
    for j, kj in items:
        if not 1 <= j <= gv.width:
            raise UsageError(f"coordinate {j} outside the generating vector")
        if kj < 0:
            raise UsageError("dual vectors have nonnegative entries")
        tr = int_to_poly(int(kj) % gv.n, gv.b)
        acc = poly_add(acc, poly_mulmod(tr, gv.gens[j - 1], gv.modulus))
    return acc.is_zero()


# ----------------------------------------------------------------- phi and r


def _b_adic(x, b: int) -> Fraction:
    x = Fraction(x)
    den = x.denominator
    while den % b == 0:
        den //= b
    if den != 1:
        raise UsageError(f"{x} has no finite base-{b} expansion")
    if not 0 <= x < 1:
        raise UsageError("phi is defined on [0, 1)")
    return x


def phi(x, b: int) -> Fraction:
    """phi(0) = b^2/(b+1); else b^2(1 - b^(-2(a0-1)))/(b+1) - b^(2-2 a0).

    a0 is the position of the first nonzero base-b digit of x.
    """
    x = _b_adic(x, b)
    if x == 0:
        return Fraction(b * b, b + 1)
    a0 = 1
    while x * b**a0 < 1:
        a0 += 1
    return Fraction(b * b, b + 1) * (1 - Fraction(1, b ** (2 * (a0 - 1)))) - Fraction(b * b, b ** (2 * a0))


@lru_cache(maxsize=32)
def _phi_classes(b: int, M: int):
    """Per numerator: class index (0 for x = 0, else a0), and class values.

    Returns:
        (cls, num, den, vals): cls is an int8 array over [0, b^M); class
        values are num[c]/den exactly and vals[c] in float64.
    """
    n = b**M
    cls = np.zeros(n, dtype=np.int8)
    lo = 1
    for a0 in range(M, 0, -1):
        hi = lo * b
        cls[lo:hi] = a0
        lo = hi
    exact = [phi(0, b)] + [phi(Fraction(1, b**a0), b) for a0 in range(1, M + 1)]
    den = (b + 1) * b ** (2 * M)
    num = np.array([int(v * den) for v in exact], dtype=object)
    vals = np.array([float(v) for v in exact])
    return cls, num, den, vals


def r_weight(l: int, b: int) -> Fraction:
    """r(0) = 1, r(l) = 1/(3 b^(3a)) with b^a <= l < b^(a+1)."""
    if l < 0:
        raise UsageError("l must be nonnegative")
    if l == 0:
        return Fraction(1)
    a = 0
    while l >= b ** (a + 1):
        a += 1
    return Fraction(1, 3 * b ** (3 * a))


# ------------------------------------------------------------ quality weights


@dataclass(frozen=True)
class QualityWeights:
    """gamma_w for the sets w with max w = z.

    Either ``product`` holds (gamma_1, ..., gamma_z) for product weights,
    or ``terms`` holds (w, gamma_w) pairs with w a sorted tuple ending in z.
    """

    z: int
    product: Optional[tuple] = None
    terms: Optional[tuple] = None

    def __post_init__(self):
        if self.z < 1:
            raise UsageError("z must be positive")
        if (self.product is None) == (self.terms is None):
            raise UsageError("give exactly one of product and terms")
        if self.product is not None:
            if len(self.product) != self.z or any(g < 0 for g in self.product):
                raise UsageError("product needs z nonnegative weights")
        else:
            for w, g in self.terms:
                if g < 0 or max(w) != self.z or min(w) < 1 or len(set(w)) != len(w):
                    raise UsageError(f"bad term {w}: need z = max w and weight >= 0")

    @classmethod
    def from_weights(cls, weights: WeightModel, z: int) -> "QualityWeights":
        if isinstance(weights, ProductWeights):
            return cls(z, product=tuple(weights.gamma_j(j) for j in range(1, z + 1)))
        terms = []
        for u in weights.sets_containing(z):
            if max(u) == z:
                terms.append((tuple(sorted(u)), weights.table[u]))
        return cls(z, terms=tuple(sorted(terms)))

    def scaled(self, factor) -> "QualityWeights":
        if self.product is not None:
            # only gamma_z enters linearly in the product form
            return QualityWeights(self.z, product=self.product[:-1] + (self.product[-1] * factor,))
        return QualityWeights(self.z, terms=tuple((w, g * factor) for w, g in self.terms))

    def is_exact(self) -> bool:
        vals = self.product if self.product is not None else [g for _, g in self.terms]
        return all(isinstance(g, (Fraction, int)) for g in vals)

    def sum_bound(self, lam, C):
        """sum_{z in w, max w = z} gamma_w^lam C^|w|."""
        if self.product is not None:
            g = self.product
            out = _pw(g[-1], lam) * C
            for gj in g[:-1]:
                out *= 1 + _pw(gj, lam) * C
            return out
        return sum(_pw(gw, lam) * C ** len(w) for w, gw in self.terms)


def _pw(g, lam):
    if isinstance(lam, (int, Fraction)) and Fraction(lam) == 1:
        return g
    return float(g) ** float(lam)


# -------------------------------------------------------- criterion evaluation


def _point_factors(cls_cols: np.ndarray, qw: QualityWeights, exact: bool, b: int, M: int):
    """S_i for each point given phi classes of the first z-1 columns."""
    _, num, den, vals = _phi_classes(b, M)
    n = cls_cols.shape[0]
    if exact:
        third = [Fraction(int(v), 3 * den) for v in num]
        if qw.product is not None:
            g = [Fraction(x) for x in qw.product]
            out = []
            for i in range(n):
                s = g[-1]
                for j in range(qw.z - 1):
                    s *= 1 + g[j] * third[cls_cols[i, j]]
                out.append(s)
            return out
        out = [Fraction(0)] * n
        for w, gw in qw.terms:
            idx = [j - 1 for j in w[:-1]]
            gw = Fraction(gw)
            for i in range(n):
                t = gw
                for j in idx:
                    t *= third[cls_cols[i, j]]
                out[i] += t
        return out
    phi3 = vals / 3.0
    if qw.product is not None:
        g = np.array([float(x) for x in qw.product])
        s = np.full(n, g[-1])
        for j in range(qw.z - 1):
            s *= 1.0 + g[j] * phi3[cls_cols[:, j]]
        return s
    s = np.zeros(n)
    for w, gw in qw.terms:
        t = np.full(n, float(gw))
        for j in w[:-1]:
            t *= phi3[cls_cols[:, j - 1]]
        s += t
    return s


def _choose_mode(mode: str, qw: QualityWeights, n: int, b: int, M: int, budget: int) -> str:
    if mode not in ("auto", "exact", "float"):
        raise UsageError(f"unknown arithmetic mode {mode!r}")
    if mode != "auto":
        if mode == "exact" and not qw.is_exact():
            raise UsageError("exact mode needs rational weights")
        return mode
    if not qw.is_exact() or n > EXACT_MAX_POINTS:
        return "float"
    # denominators: b^M from the mean, (3(b+1)b^2M)^|w| from phi, weights
    order = qw.z if qw.product is not None else max((len(w) for w, _ in qw.terms), default=1)
    gam = qw.product if qw.product is not None else [g for _, g in qw.terms]
    bits = M * math.log2(b) + order * math.log2(3 * (b + 1) * b ** (2 * M))
    bits += sum(math.log2(Fraction(g).denominator) for g in gam)
    return "exact" if bits <= budget else "float"


def quality_B(gv: GeneratingVector, qw: QualityWeights, mode: str = "auto",
              bit_budget: int = EXACT_BIT_BUDGET):
    """Criterion B((q_1..q_z), [z], gamma) of the unscrambled point set.

    Returns:
        Fraction in exact mode, float otherwise (``mode`` chooses; "auto"
        is exact for rational weights within the bit budget).
    """
    if qw.z > gv.width:
        raise UsageError(f"z={qw.z} exceeds the width {gv.width}")
    mode = _choose_mode(mode, qw, gv.n, gv.b, gv.M, bit_budget)
    cls, num, den, vals = _phi_classes(gv.b, gv.M)
    pts = generate_points(gv.prefix(qw.z))
    cc = cls[pts]
    S = _point_factors(cc[:, :-1], qw, mode == "exact", gv.b, gv.M)
    last = cc[:, -1]
    if mode == "exact":
        tot = sum((Fraction(int(num[c])) * s for c, s in zip(last, S)), Fraction(0))
        return tot / (3 * den * gv.n)
    return float(vals[last] @ S) / (3.0 * gv.n)


def dual_B_oracle(gv: GeneratingVector, qw: QualityWeights, digit_depth: int):
    """B from its dual-lattice series, truncated at components < b^depth.

    The series runs over l_w with strictly positive components and
    (l_w, 0) in the dual lattice, weighted by prod r(l_j). Components are
    grouped by their residue mod b^M: every l with the same low digits
    meets the same membership test.

    Returns:
        (value, tail): exact truncated sum and a bound on the omitted part.
    """
    b, M = gv.b, gv.M
    if digit_depth < M:
        raise UsageError("digit_depth must be at least M")
    if qw.z > gv.width:
        raise UsageError(f"z={qw.z} exceeds the width {gv.width}")
    if qw.product is not None:
        terms = []
        for mask in range(2 ** (qw.z - 1)):
            w = tuple(j + 1 for j in range(qw.z - 1) if mask >> j & 1) + (qw.z,)
            g = Fraction(1)
            for j in w:
                g *= Fraction(qw.product[j - 1])
            terms.append((w, g))
    else:
        terms = [(w, Fraction(g)) for w, g in qw.terms]
    n = gv.n
    work = sum(n ** len(w) for w, g in terms if g)
    if work > 2**30:
        raise ResourceError(f"dual enumeration needs {work} terms")
    high = sum((Fraction((b - 1) * b ** (a - M), 3 * b ** (3 * a)) for a in range(M, digit_depth)),
               Fraction(0))
    W = [high] + [r_weight(c, b) + high for c in range(1, n)]
    full = Fraction(b * b, 3 * (b + 1))
    t = Fraction((b - 1), 3) * Fraction(1, b ** (2 * digit_depth)) / (1 - Fraction(1, b * b))
    value, tail = Fraction(0), Fraction(0)
    # multiplication tables c -> c * q_j mod p as integers
    mult = [[poly_to_int(poly_mulmod(int_to_poly(c, b), q, gv.modulus)) for c in range(n)]
            for q in gv.gens[:qw.z]]
    for w, g in terms:
        if not g:
            continue
        sub = Fraction(0)
        for cs in iproduct(range(n), repeat=len(w)):
            acc = GFPoly(b)
            for j, c in zip(w, cs):
                acc = poly_add(acc, int_to_poly(mult[j - 1][c], b))
            if acc.is_zero():
                term = Fraction(1)
                for c in cs:
                    term *= W[c]
                sub += term
        value += g * sub
        tail += g * (full ** len(w) - (full - t) ** len(w))
    return value, tail


# --------------------------------------------------------------------- CBC


def cbc_constant(b: int, lam):
    """C_{b,lam} = max((b-1)/3^lam * b^(3lam-1)/(b^(3lam-1)-1), b^(2lam)/((b+1)^lam 3^lam)).

    Exact Fraction at lam = 1, float otherwise. lam must lie in (1/3, 1].
    """
    lam_f = Fraction(lam) if isinstance(lam, (int, Fraction)) else None
    if lam_f is not None and lam_f == 1:
        t = Fraction(b * b)
        return max(Fraction(b - 1, 3) * t / (t - 1), Fraction(b * b, 3 * (b + 1)))
    lam = float(lam)
    if not 1 / 3 < lam <= 1:
        raise UsageError("lambda must lie in (1/3, 1]")
    t = b ** (3 * lam - 1)
    return max((b - 1) / 3**lam * t / (t - 1), b ** (2 * lam) / ((b + 1) ** lam * 3**lam))


def cbc_bound(b: int, M: int, qw: QualityWeights, tau):
    """(b^M - 1)^(-tau) (sum gamma_w^(1/tau) C_{b,1/tau}^|w|)^tau."""
    if isinstance(tau, (int, Fraction)) and Fraction(tau) == 1:
        lam = Fraction(1)
        return Fraction(qw.sum_bound(lam, cbc_constant(b, lam)), b**M - 1)
    tau = float(tau)
    lam = 1.0 / tau
    return (b**M - 1) ** (-tau) * float(qw.sum_bound(lam, cbc_constant(b, lam))) ** tau


def _mode_for(weights: WeightModel, s_new: int, n: int, b: int, M: int, mode: str, budget: int) -> str:
    """One arithmetic mode for a whole CBC run, sized for the widest step."""
    if isinstance(weights, ProductWeights):
        if mode not in ("auto", "exact", "float"):
            raise UsageError(f"unknown arithmetic mode {mode!r}")
        exact_ok = weights._exact()
        if mode == "exact" and not exact_ok:
            raise UsageError("exact mode needs rational weights")
        if mode != "auto":
            return mode
        if not exact_ok or n > EXACT_MAX_POINTS:
            return "float"
        bits = M * math.log2(b) + s_new * math.log2(3 * (b + 1) * b ** (2 * M))
        bits += sum(math.log2(Fraction(weights.gamma_j(j)).denominator) for j in range(1, s_new + 1))
        return "exact" if bits <= budget else "float"
    worst = "exact"
    for e in range(1, s_new + 1):
        qw = QualityWeights.from_weights(weights, e)
        if qw.terms:
            if _choose_mode(mode, qw, n, b, M, budget) == "float":
                worst = "float"
    return worst if mode == "auto" else mode


def _scan(b, M, p, S, mode, chunk_elems=_CHUNK_ELEMS):
    """Best candidate q_e for per-point factors S.

    Scores are sum_i phi(x_ie) S_i; the minimum with the smallest encoding
    wins.

    Returns:
        (encoding, B value, phi-class column of the winner).
    """
    n = b**M
    cls, num, den, vals = _phi_classes(b, M)
    if mode == "exact":
        # common denominator so that scores compare as integers
        D = 1
        for x in S:
            D = D * x.denominator // math.gcd(D, x.denominator)
        Sint = np.array([int(x * D) for x in S], dtype=object)
        phin = np.array(list(num), dtype=object)[cls]
    else:
        Sf = np.asarray(S, dtype=float)
        phi_of = vals[cls]
    best = None
    cand = np.arange(1, n, dtype=np.int64)
    step = max(1, chunk_elems // n)
    for c0 in range(0, cand.size, step):
        enc = cand[c0:c0 + step]
        pts = _expand(_generator_columns(b, M, p, enc), b)  # (chunk, n)
        if mode == "exact":
            scores = [int(np.dot(phin[row], Sint)) for row in pts]
            k = min(range(len(scores)), key=scores.__getitem__)
            sc = scores[k]
        else:
            scores = phi_of[pts] @ Sf
            k = int(np.argmin(scores))
            sc = float(scores[k])
        if best is None or sc < best[0]:
            best = (sc, int(enc[k]), cls[pts[k]])
    sc, enc, col = best
    if mode == "exact":
        return enc, Fraction(sc, 3 * den * n * D), col
    return enc, sc / (3.0 * n), col


def cbc2(gv: GeneratingVector, s_new: int, weights: WeightModel, mode: str = "auto",
         bit_budget: int = EXACT_BIT_BUDGET) -> GeneratingVector:
    """Extend a generating vector to width s_new, keeping the old generators.

    Each new q_e minimizes B((q_1..q_e), [e], gamma) over all nonzero q of
    degree < M; ties go to the smallest integer encoding. Product weights
    keep the running product prod_{j<e}(1 + gamma_j phi(x_ij)/3) per point,
    so each step costs one candidate scan.
    """
    if s_new <= gv.width:
        raise UsageError(f"s_new={s_new} must exceed the current width {gv.width}")
    if gv.n > MAX_POINTS:
        raise ResourceError(f"{gv.n} points exceed the limit {MAX_POINTS}")
    b, M, p, n = gv.b, gv.M, gv.modulus, gv.n
    m = _mode_for(weights, s_new, n, b, M, mode, bit_budget)
    exact = m == "exact"
    cls, num, den, vals = _phi_classes(b, M)
    third = [Fraction(int(v), 3 * den) for v in num] if exact else vals / 3.0
    pts = generate_points(gv)
    cols = [cls[pts[:, j]] for j in range(gv.width)]
    product = isinstance(weights, ProductWeights)
    if product:
        running = [Fraction(1)] * n if exact else np.ones(n)
        for j, col in enumerate(cols, start=1):
            g = weights.gamma_j(j)
            if exact:
                running = [r * (1 + g * third[c]) for r, c in zip(running, col)]
            else:
                running = running * (1.0 + float(g) * third[col])
    gens = list(gv.gens)
    values = list(gv.meta.get("B", []))
    modes = list(gv.meta.get("modes", []))
    for e in range(gv.width + 1, s_new + 1):
        if product:
            g = weights.gamma_j(e)
            S = [g * r for r in running] if exact else float(g) * running
        else:
            qw = QualityWeights.from_weights(weights, e)
            prev = np.stack(cols, axis=1) if cols else np.zeros((n, 0), dtype=np.int8)
            S = _point_factors(prev, qw, exact, b, M)
        if n == 2:
            # a single candidate: q_e = 1
            col = cls[generate_points(GeneratingVector(b, M, p, (GFPoly(b, (1,)),)))[:, 0]]
            if exact:
                val = sum((Fraction(int(num[c])) * x for c, x in zip(col, S)), Fraction(0)) / (3 * den * n)
            else:
                val = float(vals[col] @ np.asarray(S, dtype=float)) / (3.0 * n)
            enc = 1
        else:
            enc, val, col = _scan(b, M, p, S, m)
        gens.append(int_to_poly(enc, b))
        cols.append(col)
        values.append(val)
        modes.append(m)
        if product:
            if exact:
                running = [r * (1 + g * third[c]) for r, c in zip(running, col)]
            else:
                running = running * (1.0 + float(g) * third[col])
    meta = {"B": values, "modes": modes, "weights": weights.key()}
    return GeneratingVector(b, M, p, tuple(gens), meta)


def cbc1(b: int, M: int, p: Optional[GFPoly], s: int, weights: WeightModel, mode: str = "auto",
         bit_budget: int = EXACT_BIT_BUDGET) -> GeneratingVector:
    """Component-by-component construction with q_1 = 1.

    Args:
        b, M: base and log_b of the number of points.
        p: irreducible modulus of degree M; None picks the built-in one.
        s: number of coordinates.
        weights: weight model supplying gamma_w.
        mode: "auto", "exact" or "float" arithmetic for B.
    """
    if s < 1:
        raise UsageError("s must be at least 1")
    p = irreducible_modulus(b, M) if p is None else p
    if p.base != b or p.degree != M:
        raise UsageError("modulus must have base b and degree M")
    if not _irreducible_cached(b, p.coeffs):
        raise UsageError(f"modulus {p} is reducible")
    gv = GeneratingVector(b, M, p, (GFPoly(b, (1,)),))
    m = _mode_for(weights, s, gv.n, b, M, mode, bit_budget)
    qw = QualityWeights.from_weights(weights, 1)
    first = quality_B(gv, qw, mode=m) if (qw.product or qw.terms) else 0
    gv = GeneratingVector(b, M, p, gv.gens, {"B": [first], "modes": [m], "weights": weights.key()})
    if s == 1:
        return gv
    return cbc2(gv, s, weights, mode, bit_budget)


__all__ = [
    "GeneratingVector", "QualityWeights", "irreducible_modulus", "generate_points",
    "dual_contains", "phi", "r_weight", "quality_B", "dual_B_oracle", "cbc1", "cbc2",
    "cbc_constant", "cbc_bound", "format_vector", "parse_vector", "save_vector",
    "load_vector",
]
