import itertools
import threading
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import zeta

from mlqmc.exceptions import UsageError
from mlqmc.space import (
    EvalCounter,
    ProductWeights,
    TableWeights,
    anchor_project,
    bias_squared,
    decay_counting_estimate,
    decay_estimate,
    fiw_phi_map,
    format_weights,
    kernel_k,
    kernel_ku,
    make_integrand,
    parse_weights,
    projection_norm,
    projection_norm_squared,
    r_squared,
    rtilde_squared,
)

KAA = 1.0 / 12.0  # k(1/2, 1/2)


def brute_product_tail(w, v, J=200_000):
    g = w.gammas(J)
    mask = np.ones(J, dtype=bool)
    for j in v:
        if j <= J:
            mask[j - 1] = False
    return float(np.exp(np.sum(np.log1p(g[mask] * KAA))))


def random_table(rng, d=6, order=3, count=8):
    table = {}
    while len(table) < count:
        k = int(rng.integers(1, order + 1))
        u = frozenset(int(j) for j in rng.choice(np.arange(1, d + 1), size=k, replace=False))
        table[u] = float(rng.uniform(0.05, 2.0))
    return TableWeights(table)


def subsets(s):
    s = sorted(s)
    for k in range(len(s) + 1):
        for c in itertools.combinations(s, k):
            yield frozenset(c)


class TestKernel:
    def test_examples(self):
        assert kernel_k(Fraction(0), Fraction(0)) == Fraction(1, 3)
        assert kernel_k(Fraction(1, 2), Fraction(1, 2)) == Fraction(1, 12)
        assert kernel_k(Fraction(0), Fraction(1)) == Fraction(-1, 6)
        assert kernel_k(Fraction(1, 4), Fraction(3, 4)) == Fraction(1, 3) + Fraction(5, 16) - Fraction(3, 4)

    def test_symmetry_and_array(self):
        x = np.linspace(0, 1, 7)
        K = kernel_k(x[:, None], x[None, :])
        assert np.allclose(K, K.T)
        assert kernel_k(0.3, 0.8) == pytest.approx(float(kernel_k(Fraction(3, 10), Fraction(4, 5))))

    @pytest.mark.parametrize("y", [0.0, 0.2, 0.5, 0.93, 1.0])
    def test_sections_integrate_to_zero(self, y):
        val, _ = integrate.quad(lambda x: kernel_k(x, y), 0, 1, points=[y])
        assert abs(val) < 1e-12

    def test_gram_positive_semidefinite(self):
        x = np.random.default_rng(0).random(40)
        eig = np.linalg.eigvalsh(kernel_k(x[:, None], x[None, :]))
        assert eig.min() > -1e-12

    def test_out_of_range(self):
        with pytest.raises(UsageError):
            kernel_k(1.2, 0.1)
        with pytest.raises(UsageError):
            kernel_k(Fraction(-1, 2), Fraction(0))

    def test_kernel_ku(self):
        x = {1: Fraction(0), 3: Fraction(1, 2)}
        y = {1: Fraction(1), 3: Fraction(1, 2)}
        assert kernel_ku(x, y) == Fraction(-1, 6) * Fraction(1, 12)
        assert kernel_ku(x, y, u=[3]) == Fraction(1, 12)
        assert kernel_ku({}, {}) == 1
        with pytest.raises(UsageError):
            kernel_ku(x, {1: Fraction(0)})


class TestWeights:
    def test_product_exact_gamma(self):
        w = ProductWeights(1, 3)
        assert w.gamma({2, 3}) == Fraction(1, 216)
        assert w.gamma(()) == 1

    @pytest.mark.parametrize("c,q", [(1, -1), (0, 3), (7, 3), (1, 1)])
    def test_product_rejects(self, c, q):
        with pytest.raises(UsageError):
            ProductWeights(c, q)

    def test_unit_weights_allowed_without_summability(self):
        assert ProductWeights(1, 0, require_summable=False).gamma({5, 9}) == 1

    def test_table_rejects(self):
        with pytest.raises(UsageError):
            TableWeights({(1,): -1})
        with pytest.raises(UsageError):
            TableWeights({(): 2, (1,): 1})
        with pytest.raises(UsageError):
            TableWeights({(1,): 0})
        with pytest.raises(UsageError):
            TableWeights({(1, 2): 1}, kind="fi")

    def test_fi_violation(self):
        table = {(1, 2): 1, (1, 3): 1, (1, 4): 1}
        with pytest.raises(UsageError):
            TableWeights(table, kind="fi", eta=2, rho=5)
        with pytest.raises(UsageError):
            TableWeights(table, kind="fi", eta=3, rho=1)
        TableWeights(table, kind="fi", eta=3, rho=2)

    def test_ordered_sets(self):
        w = TableWeights({(1,): 0.5, (2, 3): 4.0, (4,): 1.0})
        # gamma_hat = gamma * (1/12)^|u|: 1/24, 4/144, 1/12
        assert w.ordered_sets() == [frozenset({4}), frozenset({1}), frozenset({2, 3})]

    def test_parse_format_round_trip(self):
        text = "order=2 eta=2 rho=2 kind=fi\n1,2:1/4\n3:1/9\n"
        w = parse_weights(text)
        assert w.gamma({1, 2}) == Fraction(1, 4) and w.eta == 2
        back = parse_weights(format_weights(w))
        assert back.table == w.table and back.digest() == w.digest()
        p = parse_weights("product:1,3")
        assert parse_weights(format_weights(p)).key() == p.key()

    def test_chain(self):
        w = parse_weights("chain:1,2,5")
        assert w.gamma({3, 4}) == Fraction(1, 9)
        assert w.gamma({3, 5}) == 0
        assert len(w.table) == 5 and w.d == 3
        assert parse_weights(format_weights(w)).table == w.table

    def test_parse_errors(self):
        for bad in ["product 1", "chain:1,2", "1,2 3", "order=3\n1,2:1"]:
            with pytest.raises(UsageError):
                parse_weights(bad)

    def test_digest_depends_on_values(self):
        assert parse_weights("product:1,3").digest() != parse_weights("product:1,4").digest()


class TestBiasAndProjection:
    def test_table_bias_by_hand(self):
        w = TableWeights({(1,): 1, (2,): Fraction(1, 2), (1, 3): 2})
        assert bias_squared(w, {1}) == pytest.approx(0.5 * KAA)
        assert bias_squared(w, set()) == pytest.approx(KAA + 0.5 * KAA + 2 * KAA**2)
        assert bias_squared(w, {1, 2, 3}) == 0

    @pytest.mark.parametrize("v", [set(), {1}, {1, 2, 3}, {2, 7}])
    def test_product_bias_matches_direct_product(self, v):
        w = ProductWeights(1, 3)
        assert bias_squared(w, v) == pytest.approx(brute_product_tail(w, v) - 1, rel=1e-6)

    def test_bias_monotone(self):
        w = ProductWeights(2, 2)
        vals = [bias_squared(w, range(1, k + 1)) for k in range(0, 30, 3)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_product_r_squared(self):
        w = ProductWeights(1, 3)
        v, u = {1, 2, 4}, {2}
        assert r_squared(w, v, u) == pytest.approx(1 / 8 * brute_product_tail(w, v), rel=1e-6)

    def test_r_requires_subset(self):
        with pytest.raises(UsageError):
            r_squared(ProductWeights(1, 3), {1}, {2})
        with pytest.raises(UsageError):
            rtilde_squared(ProductWeights(1, 3), {1}, {1}, set())

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_table_r_and_rtilde_by_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        w = random_table(rng)
        v = frozenset(j for j in range(1, 7) if rng.random() < 0.5)
        u = frozenset(j for j in v if rng.random() < 0.5)
        extra = frozenset(j for j in range(1, 7) if j not in v and rng.random() < 0.5) or frozenset({7})
        wset = v | extra
        outside = frozenset(range(1, 8)) - v
        r2 = sum(float(w.gamma(u | t)) * KAA ** len(t) for t in subsets(outside))
        rt = sum(float(w.gamma(u | t)) * KAA ** len(t) for t in subsets(outside) if t & wset)
        assert r_squared(w, v, u) == pytest.approx(r2)
        assert rtilde_squared(w, wset, v, u) == pytest.approx(rt)
        assert rtilde_squared(w, wset, v, u) <= r_squared(w, v, u) - float(w.gamma(u)) + 1e-12

    def test_product_rtilde_bound(self):
        w = ProductWeights(1, 2)
        for v, wset, u in [({1}, {1, 2}, {1}), (set(), {3}, set()), ({1, 2}, {1, 2, 5, 9}, {2})]:
            rt = rtilde_squared(w, wset, v, u)
            assert 0 <= rt <= r_squared(w, v, u) - float(w.gamma(u)) + 1e-12

    def test_table_projection_norm_by_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            w = random_table(rng)
            v = frozenset(j for j in range(1, 7) if rng.random() < 0.5)
            best = max(r_squared(w, v, u) / float(w.gamma(u)) for u in subsets(v) if w.gamma(u) > 0)
            assert projection_norm_squared(w, v) == pytest.approx(best)
            assert projection_norm_squared(w, v) >= 1

    def test_projection_norm_grows_as_v_shrinks(self):
        w = ProductWeights(1, 2)
        norms = [projection_norm(w, range(1, k + 1)) for k in (20, 10, 5, 1, 0)]
        assert all(a < b for a, b in zip(norms, norms[1:]))
        assert projection_norm(w, set()) ** 2 == pytest.approx(brute_product_tail(w, set()), rel=1e-6)

    def test_table_norm_can_exceed_one_with_tiny_subset_weight(self):
        # a small weight on u and a large weight on u + {2} make the ratio large
        w = TableWeights({(1,): 0.01, (1, 2): 1.0})
        assert projection_norm_squared(w, {1}) == pytest.approx(1 + 1.0 * KAA / 0.01)


class TestPhiMap:
    def test_chain_is_path_coloring(self):
        w = parse_weights("chain:1,3,50")
        col = fiw_phi_map(w)
        assert set(col.values()) <= {1, 2, 3}
        for u in w.table:
            a, b = sorted(u)
            assert col[a] != col[b]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_injective_on_supported_sets(self, seed):
        rng = np.random.default_rng(seed)
        table, count = {}, {}
        for _ in range(40):
            u = frozenset(int(j) for j in rng.choice(np.arange(1, 30), size=int(rng.integers(1, 4)), replace=False))
            if all(count.get(j, 0) < 2 for j in u):
                table[u] = 1.0
                for j in u:
                    count[j] = count.get(j, 0) + 1
        w = TableWeights(table, kind="fi", eta=2, rho=6)
        col = fiw_phi_map(w)
        assert max(col.values()) <= w.d
        for u in w.table:
            assert len({col[j] for j in u}) == len(u)

    def test_rejects_other_weights(self):
        with pytest.raises(UsageError):
            fiw_phi_map(ProductWeights(1, 3))
        with pytest.raises(UsageError):
            fiw_phi_map(TableWeights({(1,): 1}))


class TestDecay:
    def test_chain_decay(self):
        w = parse_weights("chain:1,3,4000")
        assert 2.8 <= decay_estimate(w) <= 3.2
        assert 2.8 <= decay_counting_estimate(w) <= 3.2

    def test_product_decay(self):
        assert 2.5 <= decay_estimate(ProductWeights(1, 3), truncation=300) <= 3.2

    def test_scale_invariance(self):
        a = decay_estimate(parse_weights("chain:1,2,2000"))
        b = decay_estimate(parse_weights("chain:5,2,2000"))
        assert a == pytest.approx(b, abs=1e-9)

    def test_small_truncation_rejected(self):
        with pytest.raises(UsageError):
            decay_estimate(ProductWeights(1, 3), truncation=10)


class TestIntegrands:
    def test_constant(self):
        f = make_integrand("constant", c=Fraction(3, 2))
        assert f.exact == Fraction(3, 2)
        assert np.all(f([], np.zeros((4, 0))) == 1.5)
        assert f.evaluations == 4

    def test_kernel_section_integral_and_value(self):
        w = ProductWeights(1, 2)
        f = make_integrand("kernel_section", w, v=[1, 2], y=[0.3, 0.9])
        t = (np.arange(400) + 0.5) / 400
        X = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
        assert f([1, 2], X).mean() == pytest.approx(1.0, abs=1e-5)
        expect = (1 + kernel_k(0.1, 0.3)) * (1 + 0.25 * kernel_k(0.5, 0.9))
        assert f.at({1: 0.1}) == pytest.approx(expect)

    def test_kernel_section_table_matches_product(self):
        p = ProductWeights(1, 2)
        table = {u: p.gamma(u) for u in subsets({1, 2, 3}) if u}
        t = TableWeights(table)
        fp = make_integrand("kernel_section", p, v=[1, 2, 3], y=[0.1, 0.5, 0.7])
        ft = make_integrand("kernel_section", t, v=[1, 2, 3], y=[0.1, 0.5, 0.7])
        X = np.random.default_rng(1).random((50, 3))
        assert np.allclose(fp([1, 2, 3], X), ft([1, 2, 3], X))

    def test_anova_pure(self):
        f = make_integrand("anova_pure", u=[2], y=[0.25])
        val, _ = integrate.quad(lambda x: f.at({2: x}), 0, 1, points=[0.25])
        assert abs(val) < 1e-12
        assert f.at({1: 0.9}) == pytest.approx(kernel_k(0.5, 0.25))

    def test_infinite_product(self):
        w = ProductWeights(1, 3)
        f = make_integrand("infinite_product", w)
        # k(1/2, 1/sqrt(12)) = 0, so every unpopulated factor equals 1
        assert f.at({}) == pytest.approx(1.0, abs=1e-12)
        y0 = 1 / np.sqrt(12)
        assert f.at({2: 0.1}) == pytest.approx(1 + kernel_k(0.1, y0) / 8)
        X = np.random.default_rng(2).random((20_000, 6))
        vals = f(np.arange(1, 7), X)
        assert abs(vals.mean() - 1) < 5 * vals.std() / np.sqrt(vals.size)

    def test_infinite_product_needs_product_weights(self):
        with pytest.raises(UsageError):
            make_integrand("infinite_product", parse_weights("chain:1,3,5"))

    @pytest.mark.parametrize("text", ["product:1,3", "chain:1,3,20"])
    def test_tail_series_integral(self, text):
        w = parse_weights(text)
        f = make_integrand("tail_series", w, eps=0.1)
        X = np.random.default_rng(4).random((20_000, 21))
        vals = f(np.arange(1, 22), X)
        # coordinates beyond 21 stay at the anchor and add k(a, a) beta_j each
        expect = 1.0
        if text.startswith("product"):
            expect += KAA * float(zeta(3 / 2 + 0.5 + 0.1, 22))
        assert abs(vals.mean() - expect) < 5 * vals.std() / np.sqrt(vals.size)

    def test_tail_series_anchored_value_is_constant(self):
        w = parse_weights("chain:1,3,20")
        f = make_integrand("tail_series", w)
        # populating coordinates with the anchor changes nothing
        assert f.at({3: 0.5, 4: 0.5}) == pytest.approx(f.at({}))

    def test_tail_series_table_matches_direct_sum(self):
        w = parse_weights("chain:1,2,6")
        f = make_integrand("tail_series", w, eps=0.2)
        x = {j: v for j, v in zip(range(1, 8), np.random.default_rng(5).random(7))}
        sets = w.ordered_sets()
        direct = 1.0
        for r, u in enumerate(sets, start=1):
            beta = np.sqrt(float(w.table[u])) * r ** (-0.7)
            direct += beta * np.prod([kernel_k(x.get(j, 0.5), 0.5) for j in u])
        assert f.at(x) == pytest.approx(direct)
        assert f.at({1: x[1], 5: x[5]}) == pytest.approx(
            1.0 + sum(np.sqrt(float(w.table[u])) * r ** (-0.7) * np.prod(
                [kernel_k({1: x[1], 5: x[5]}.get(j, 0.5), 0.5) for j in u]) for r, u in enumerate(sets, 1)))

    def test_bad_requests(self):
        with pytest.raises(UsageError):
            make_integrand("nope")
        with pytest.raises(UsageError):
            make_integrand("tail_series", ProductWeights(1, 3), eps=0)
        with pytest.raises(UsageError):
            make_integrand("kernel_section", ProductWeights(1, 3), v=[1, 2], y=[0.1])
        f = make_integrand("anova_pure", u=[1], y=[0.2])
        with pytest.raises(UsageError):
            f([2, 1], np.zeros((1, 2)))


class TestAnchorProject:
    def test_projection_fixes_outside_coordinates(self):
        w = ProductWeights(1, 2)
        f = make_integrand("kernel_section", w, v=[1, 2, 3], y=[0.2, 0.4, 0.6])
        g = anchor_project(f, {1, 3})
        X = np.random.default_rng(6).random((30, 3))
        Y = X.copy()
        Y[:, 1] = 0.5
        assert np.allclose(g([1, 2, 3], X), f([1, 2, 3], Y))
        assert g.active == frozenset({1, 3})

    def test_idempotent_and_shared_counter(self):
        f = make_integrand("infinite_product", ProductWeights(1, 3))
        g = anchor_project(f, {1, 2})
        gg = anchor_project(g, {1, 2})
        X = np.random.default_rng(7).random((10, 4))
        assert np.allclose(g([1, 2, 3, 4], X), gg([1, 2, 3, 4], X))
        assert f.evaluations == 20

    def test_other_anchor(self):
        f = make_integrand("anova_pure", u=[1, 2], y=[0.3, 0.7])
        g = anchor_project(f, {1}, a=0.0)
        assert g.at({1: 0.2, 2: 0.9}) == pytest.approx(kernel_k(0.2, 0.3) * kernel_k(0.0, 0.7))
        h = make_integrand("infinite_product", ProductWeights(1, 3))
        with pytest.raises(UsageError):
            anchor_project(h, {1}, a=0.0)


class TestEvalCounter:
    def test_threads(self):
        c = EvalCounter()

        def work():
            for _ in range(1000):
                c.add(3)
        threads = [threading.Thread(target=work) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert c.value == 24_000
        c.reset()
        assert c.value == 0
