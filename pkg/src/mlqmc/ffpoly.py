"""Polynomials over the prime field Z_b and truncated Laurent expansions.

A polynomial a_0 + a_1 x + ... + a_n x^n is stored as the tuple
(a_0, a_1, ..., a_n), constant term first, with a_n != 0. The zero
polynomial is the empty tuple and has degree -1.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from .exceptions import UsageError

__all__ = [
    "GFPoly",
    "poly_add",
    "poly_sub",
    "poly_mul",
    "poly_divmod",
    "poly_mulmod",
    "int_to_poly",
    "poly_to_int",
    "laurent_digits",
    "nu_M",
    "nu_M_value",
    "poly_powmod",
    "poly_gcd",
    "is_irreducible",
    "is_irreducible_trial",
]


def _is_prime(b: int) -> bool:
    if b < 2:
        return False
    i = 2
    while i * i <= b:
        if b % i == 0:
            return False
        i += 1
    return True


def _trim(coeffs: Iterable[int], b: int) -> tuple:
    c = [int(a) % b for a in coeffs]
    while c and c[-1] == 0:
        c.pop()
    return tuple(c)


@dataclass(frozen=True)
class GFPoly:
    """Polynomial over Z_b in canonical form."""

    base: int
    coeffs: tuple = ()

    def __post_init__(self):
        if not _is_prime(self.base):
            raise UsageError(f"base must be prime, got {self.base}")
        canon = _trim(self.coeffs, self.base)
        object.__setattr__(self, "coeffs", canon)

    @classmethod
    def from_digits(cls, digits: str, base: int) -> "GFPoly":
        """Parse a constant-term-first digit string such as ``"1101"``."""
        return cls(base, tuple(int(ch) for ch in digits))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def is_zero(self) -> bool:
        return not self.coeffs

    def digits(self) -> str:
        return "".join(str(a) for a in self.coeffs) or "0"

    def __int__(self) -> int:
        return poly_to_int(self)

    def __add__(self, other):
        return poly_add(self, other)

    def __sub__(self, other):
        return poly_sub(self, other)

    def __mul__(self, other):
        return poly_mul(self, other)

    def __repr__(self):
        return f"GFPoly(b={self.base}, {self.digits()})"


def _check_base(*polys: GFPoly) -> int:
    b = polys[0].base
    for p in polys[1:]:
        if p.base != b:
            raise UsageError(f"base mismatch: {b} vs {p.base}")
    return b


def poly_add(a: GFPoly, c: GFPoly) -> GFPoly:
    b = _check_base(a, c)
    n = max(len(a.coeffs), len(c.coeffs))
    ac = a.coeffs + (0,) * (n - len(a.coeffs))
    cc = c.coeffs + (0,) * (n - len(c.coeffs))
    return GFPoly(b, tuple((x + y) % b for x, y in zip(ac, cc)))


def poly_sub(a: GFPoly, c: GFPoly) -> GFPoly:
    b = _check_base(a, c)
    return poly_add(a, GFPoly(b, tuple(-y % b for y in c.coeffs)))


def poly_mul(a: GFPoly, c: GFPoly) -> GFPoly:
    b = _check_base(a, c)
    if a.is_zero() or c.is_zero():
        return GFPoly(b)
    out = [0] * (len(a.coeffs) + len(c.coeffs) - 1)
    for i, x in enumerate(a.coeffs):
        if x:
            for j, y in enumerate(c.coeffs):
                out[i + j] += x * y
    return GFPoly(b, tuple(out))


def poly_divmod(a: GFPoly, p: GFPoly) -> tuple:
    """Quotient and remainder of a by p."""
    b = _check_base(a, p)
    if p.is_zero():
        raise UsageError("division by the zero polynomial")
    rem = list(a.coeffs)
    dp = p.degree
    inv_lead = pow(p.coeffs[-1], b - 2, b)
    quot = [0] * max(len(rem) - dp, 0)
    for i in range(len(rem) - 1, dp - 1, -1):
        c = rem[i] % b
        if c == 0:
            continue
        f = c * inv_lead % b
        quot[i - dp] = f
        for j, y in enumerate(p.coeffs):
            rem[i - dp + j] = (rem[i - dp + j] - f * y) % b
    return GFPoly(b, tuple(quot)), GFPoly(b, tuple(rem[:dp]))


def poly_mulmod(a: GFPoly, c: GFPoly, p: GFPoly) -> GFPoly:
    """Remainder of a*c upon division by p."""
    if p.is_zero():
        raise UsageError("zero modulus")
    return poly_divmod(poly_mul(a, c), p)[1]


def int_to_poly(h: int, b: int) -> GFPoly:
    """Base-b digits of h (least significant first) as coefficients."""
    if h < 0:
        raise UsageError("h must be nonnegative")
    digits = []
    while h:
        h, r = divmod(h, b)
        digits.append(r)
    return GFPoly(b, tuple(digits))


def poly_to_int(a: GFPoly) -> int:
    """Inverse of :func:`int_to_poly`."""
    h = 0
    for c in reversed(a.coeffs):
        h = h * a.base + c
    return h


def laurent_digits(numerator: GFPoly, p: GFPoly, count: int) -> list:
    """Coefficients t_1..t_count of x^-1..x^-count in numerator/p.

    Synthetic division: the polynomial part of numerator/p is discarded,
    then each step shifts the running remainder by x and emits one digit.
    """
    b = _check_base(numerator, p)
    if p.is_zero():
        raise UsageError("zero modulus")
    rem = list(poly_divmod(numerator, p)[1].coeffs)
    dp = p.degree
    rem += [0] * (dp - len(rem))
    inv_lead = pow(p.coeffs[-1], b - 2, b)
    out = []
    for _ in range(count):
        # rem <- x * rem, then peel the x^dp coefficient
        top = rem[-1] if dp > 0 else 0
        rem = [0] + rem[:-1] if dp > 0 else []
        t = top * inv_lead % b
        out.append(t)
        if t:
            for j in range(dp):
                rem[j] = (rem[j] - t * p.coeffs[j]) % b
    return out


def nu_M(numerator: GFPoly, p: GFPoly, M: int) -> int:
    """Integer n with nu_M(numerator/p) = n / b^M, 0 <= n < b^M."""
    if M < 1:
        raise UsageError("M must be positive")
    b = numerator.base
    n = 0
    for t in laurent_digits(numerator, p, M):
        n = n * b + t
    return n


def nu_M_value(numerator: GFPoly, p: GFPoly, M: int) -> Fraction:
    return Fraction(nu_M(numerator, p, M), numerator.base**M)


def poly_powmod(a: GFPoly, e: int, p: GFPoly) -> GFPoly:
    """a^e mod p by square-and-multiply."""
    result = GFPoly(a.base, (1,))
    base = poly_divmod(a, p)[1]
    while e:
        if e & 1:
            result = poly_mulmod(result, base, p)
        base = poly_mulmod(base, base, p)
        e >>= 1
    return poly_divmod(result, p)[1]


def poly_gcd(a: GFPoly, c: GFPoly) -> GFPoly:
    """Monic greatest common divisor."""
    b = _check_base(a, c)
    while not c.is_zero():
        a, c = c, poly_divmod(a, c)[1]
    if a.is_zero():
        return a
    inv = pow(a.coeffs[-1], b - 2, b)
    return GFPoly(b, tuple(x * inv for x in a.coeffs))


def is_irreducible(p: GFPoly) -> bool:
    """Ben-Or test: gcd(x^(b^i) - x, p) = 1 for every i <= deg(p)/2."""
    d = p.degree
    if d < 1:
        return False
    b = p.base
    x = GFPoly(b, (0, 1))
    g = x
    for _ in range(d // 2):
        g = poly_powmod(g, b, p)
        if poly_gcd(poly_sub(g, x), p).degree != 0:
            return False
    return True


def is_irreducible_trial(p: GFPoly) -> bool:
    """Trial division by every monic polynomial of degree <= deg(p)/2."""
    d = p.degree
    if d < 1:
        return False
    if d == 1:
        return True
    b = p.base
    for deg in range(1, d // 2 + 1):
        for tail in range(b**deg):
            low = int_to_poly(tail, b).coeffs
            q = GFPoly(b, low + (0,) * (deg - len(low)) + (1,))
            if poly_divmod(p, q)[1].is_zero():
                return False
    return True

