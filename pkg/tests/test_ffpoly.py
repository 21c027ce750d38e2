import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlqmc.exceptions import UsageError
from mlqmc.ffpoly import (
    GFPoly,
    int_to_poly,
    is_irreducible,
    is_irreducible_trial,
    laurent_digits,
    nu_M,
    nu_M_value,
    poly_add,
    poly_divmod,
    poly_gcd,
    poly_mul,
    poly_mulmod,
    poly_powmod,
    poly_sub,
    poly_to_int,
)


def P(b, *coeffs):
    return GFPoly(b, tuple(coeffs))


def polys(b, max_deg=6):
    return st.lists(st.integers(0, b - 1), max_size=max_deg + 1).map(lambda c: GFPoly(b, tuple(c)))


def nonzero_polys(b, max_deg=6):
    return polys(b, max_deg).filter(lambda p: not p.is_zero())


def quotient_digits(a, p, M):
    # t_1..t_M of a/p are the coefficients of ((a mod p) x^M) div p, high first
    r = poly_divmod(a, p)[1]
    shifted = GFPoly(a.base, (0,) * M + r.coeffs)
    q = poly_divmod(shifted, p)[0]
    coeffs = list(q.coeffs) + [0] * (M - len(q.coeffs))
    return coeffs[:M][::-1]


class TestCanonicalForm:
    def test_trailing_zeros_trimmed(self):
        assert P(2, 1, 0, 0).coeffs == (1,)
        assert P(3, 4, 5).coeffs == (1, 2)

    def test_zero_polynomial_degree(self):
        assert GFPoly(2).degree == -1
        assert GFPoly(2).is_zero()

    def test_equality_is_canonical(self):
        assert P(2, 1, 1, 0) == P(2, 1, 1)
        assert P(2, 1, 1) != P(3, 1, 1)

    def test_nonprime_base_rejected(self):
        with pytest.raises(UsageError):
            GFPoly(4, (1,))

    def test_digits_round_trip(self):
        p = GFPoly.from_digits("1101", 2)
        assert p.coeffs == (1, 1, 0, 1)
        assert p.digits() == "1101"


class TestAdd:
    def test_char_two_cancels(self):
        assert poly_add(P(2, 1, 1), P(2, 1, 1)) == GFPoly(2)

    def test_base_three(self):
        assert poly_add(P(3, 0, 2), P(3, 0, 2)) == P(3, 0, 1)

    def test_disjoint_support(self):
        assert poly_add(P(2, 1, 0, 1), P(2, 0, 1)) == P(2, 1, 1, 1)

    def test_base_mismatch(self):
        with pytest.raises(UsageError):
            poly_add(P(2, 1), P(3, 1))

    @given(polys(3))
    def test_zero_is_identity(self, a):
        assert poly_add(a, GFPoly(3)) == a

    @given(polys(3), polys(3))
    def test_sub_inverts_add(self, a, c):
        assert poly_sub(poly_add(a, c), c) == a


class TestMulmod:
    def test_x_squared_mod_x_squared(self):
        assert poly_mulmod(P(2, 0, 1), P(2, 0, 1), P(2, 0, 0, 1)).is_zero()

    def test_long_division_example(self):
        assert poly_mulmod(P(2, 0, 1), P(2, 0, 1), P(2, 1, 1, 1)) == P(2, 1, 1)

    @given(polys(2, 4), nonzero_polys(2, 5))
    def test_unit_multiplicand(self, q, p):
        r = poly_divmod(q, p)[1]
        assert poly_mulmod(P(2, 1), r, p) == r

    def test_zero_modulus(self):
        with pytest.raises(UsageError):
            poly_mulmod(P(2, 1), P(2, 1), GFPoly(2))

    @given(polys(3), nonzero_polys(3))
    def test_division_identity(self, a, p):
        q, r = poly_divmod(a, p)
        assert poly_add(poly_mul(q, p), r) == a
        assert r.degree < p.degree


class TestIntToPoly:
    def test_examples(self):
        assert int_to_poly(0, 2).is_zero()
        assert int_to_poly(5, 2) == P(2, 1, 0, 1)
        assert int_to_poly(7, 3) == P(3, 1, 2)

    @pytest.mark.parametrize("b,M", [(2, 8), (3, 6)])
    def test_bijection_on_low_degree(self, b, M):
        seen = set()
        for h in range(b**M):
            p = int_to_poly(h, b)
            assert p.degree < M
            assert poly_to_int(p) == h
            seen.add(p.coeffs)
        assert len(seen) == b**M

    def test_negative_rejected(self):
        with pytest.raises(UsageError):
            int_to_poly(-1, 2)


class TestNuM:
    def test_one_over_x(self):
        assert nu_M_value(P(2, 1), P(2, 0, 1), 1) == Fraction(1, 2)

    def test_zero_numerator(self):
        for M in (1, 4, 9):
            assert nu_M(GFPoly(2), P(2, 1, 1, 1), M) == 0

    def test_x_over_trinomial(self):
        # x/(x^2+x+1) = x^-1 + x^-2 + x^-4 + x^-5 + ... over GF(2)
        assert laurent_digits(P(2, 0, 1), P(2, 1, 1, 1), 6) == [1, 1, 0, 1, 1, 0]
        assert nu_M_value(P(2, 0, 1), P(2, 1, 1, 1), 3) == Fraction(3, 4)

    def test_zero_modulus(self):
        with pytest.raises(UsageError):
            nu_M(P(2, 1), GFPoly(2), 3)

    @settings(max_examples=200)
    @given(st.sampled_from([2, 3, 5]).flatmap(lambda b: st.tuples(polys(b, 7), nonzero_polys(b, 5))),
           st.integers(1, 12))
    def test_matches_quotient_oracle(self, ap, M):
        a, p = ap
        assert laurent_digits(a, p, M) == quotient_digits(a, p, M)

    @given(st.sampled_from([2, 3]).flatmap(lambda b: st.tuples(polys(b, 7), nonzero_polys(b, 5))),
           st.integers(1, 10))
    def test_numerator_range(self, ap, M):
        a, p = ap
        n = nu_M(a, p, M)
        assert 0 <= n < a.base**M

    def test_digit_linearity_exhaustive(self):
        b = 2
        for dp in range(1, 4):
            for low in range(b**dp):
                p = GFPoly(b, int_to_poly(low, b).coeffs + (0,) * (dp - int_to_poly(low, b).degree - 1) + (1,))
                for M in range(1, 5):
                    for ia, ic in itertools.product(range(16), repeat=2):
                        a, c = int_to_poly(ia, b), int_to_poly(ic, b)
                        da, dc = laurent_digits(a, p, M), laurent_digits(c, p, M)
                        assert laurent_digits(poly_add(a, c), p, M) == [(x + y) % b for x, y in zip(da, dc)]


class TestIrreducibility:
    @pytest.mark.parametrize("b,max_deg", [(2, 10), (3, 6)])
    def test_ben_or_matches_trial_division(self, b, max_deg):
        for d in range(1, max_deg + 1):
            for low in range(b**d):
                digits = int_to_poly(low, b).coeffs
                p = GFPoly(b, digits + (0,) * (d - len(digits)) + (1,))
                assert is_irreducible(p) == is_irreducible_trial(p), p

    def test_known_counts(self):
        # number of monic irreducibles of degree 4 over GF(2) is 3
        count = 0
        for low in range(16):
            digits = int_to_poly(low, 2).coeffs
            p = GFPoly(2, digits + (0,) * (4 - len(digits)) + (1,))
            count += is_irreducible(p)
        assert count == 3

    def test_constants_are_not_irreducible(self):
        assert not is_irreducible(P(2, 1))
        assert not is_irreducible(GFPoly(3))

    def test_powmod_and_gcd(self):
        p = P(2, 1, 1, 0, 1)  # x^3 + x + 1
        x = P(2, 0, 1)
        # the multiplicative group of GF(8) has order 7
        assert poly_powmod(x, 7, p) == P(2, 1)
        assert poly_gcd(poly_mul(p, x), poly_mul(p, P(2, 1, 1))) == p
