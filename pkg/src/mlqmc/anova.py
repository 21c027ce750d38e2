"""Brute-force ANOVA decomposition on a midpoint grid (d <= 4).

Terms are stored as broadcastable arrays: the axis of coordinate j has
length R when j is in u and length 1 otherwise. Sub-integrals of the
recursion are means over grid axes, so all identities are exact on the
grid up to floating point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional

import numpy as np

from .exceptions import ResourceError, UsageError

MAX_GRID = 2**26


def _subsets(d: int):
    for k in range(d + 1):
        for u in combinations(range(1, d + 1), k):
            yield frozenset(u)


@dataclass
class AnovaDecomposition:
    """Tabulated ANOVA terms of a d-variate function."""

    d: int
    R: int
    values: np.ndarray
    terms: dict = field(default_factory=dict)

    @property
    def nodes(self) -> np.ndarray:
        return (np.arange(self.R) + 0.5) / self.R

    def term(self, u) -> np.ndarray:
        return self.terms[frozenset(u)]

    def full(self, u) -> np.ndarray:
        """Term u broadcast to the full grid."""
        return np.broadcast_to(self.term(u), self.values.shape)

    def variance(self, u) -> float:
        u = frozenset(u)
        if not u:
            return 0.0
        return float(np.mean(self.term(u) ** 2))

    @property
    def variances(self) -> dict:
        return {u: self.variance(u) for u in self.terms}


def decompose(f: Callable, d: int, R: int = 128) -> AnovaDecomposition:
    """ANOVA terms of f by the recursion f_u = int f dx_{-u} - sum_{v < u} f_v.

    Args:
        f: vectorized function of an (N, d) array returning (N,) values.
        d: dimension, at most 4.
        R: midpoint nodes per axis, at most 256.
    """
    if not 1 <= d <= 4:
        raise UsageError("decompose supports 1 <= d <= 4")
    if not 1 <= R <= 256:
        raise UsageError("R must lie in 1..256")
    if R**d > MAX_GRID:
        raise ResourceError(f"grid of {R}^{d} nodes exceeds {MAX_GRID}")
    t = (np.arange(R) + 0.5) / R
    mesh = np.meshgrid(*([t] * d), indexing="ij")
    X = np.stack([m.ravel() for m in mesh], axis=1)
    F = np.asarray(f(X), dtype=float).reshape((R,) * d)
    dec = AnovaDecomposition(d, R, F)
    for u in _subsets(d):
        other = tuple(j - 1 for j in range(1, d + 1) if j not in u)
        g = F.mean(axis=other, keepdims=True) if other else F.copy()
        for v, fv in dec.terms.items():
            if v < u:
                g = g - fv
        dec.terms[u] = g
    return dec


def variance_identity_check(dec: AnovaDecomposition, f: Optional[Callable] = None) -> dict:
    """Compare Var(f) with the sum of term variances on the grid.

    Args:
        dec: the decomposition.
        f: optional function; when given, Var(f) is recomputed from it on
            the same grid rather than taken from the stored values.
    """
    F = dec.values
    if f is not None:
        t = dec.nodes
        mesh = np.meshgrid(*([t] * dec.d), indexing="ij")
        F = np.asarray(f(np.stack([m.ravel() for m in mesh], axis=1)), dtype=float)
    var_f = float(np.var(F))
    total = float(sum(dec.variances.values()))
    err = abs(var_f - total)
    return {
        "var_f": var_f,
        "sum_terms": total,
        "abs_error": err,
        "rel_error": err / var_f if var_f > 0 else err,
        "terms": {tuple(sorted(u)): v for u, v in dec.variances.items()},
    }


def f_plus_minus(dec: AnovaDecomposition, u, v, w):
    """f+_{u,v} = sum f_{u+u'} over u' outside v; f-_{u,v,w} keeps u' meeting w.

    The universe is [d]. Requires u <= v <= w <= [d]; v = w gives f- = 0.

    Returns:
        (f_plus, f_minus) on the full grid.
    """
    u, v, w = frozenset(u), frozenset(v), frozenset(w)
    full = frozenset(range(1, dec.d + 1))
    if not (u <= v <= w <= full):
        raise UsageError("f_plus_minus needs u <= v <= w <= [d]")
    fp = np.zeros(dec.values.shape)
    fm = np.zeros(dec.values.shape)
    rest = sorted(full - v)
    for k in range(len(rest) + 1):
        for extra in combinations(rest, k):
            e = frozenset(extra)
            term = dec.full(u | e)
            fp = fp + term
            if e & w:
                fm = fm + term
    return fp, fm


def grid_inner(a: np.ndarray, c: np.ndarray) -> float:
    """L2 inner product on the midpoint grid."""
    return float(np.mean(a * c))


def term_function(f: Callable, d: int, u, R: int = 1024) -> Callable:
    """Pointwise ANOVA term f_u by midpoint quadrature over the other axes.

    Intended for d <= 2, where each evaluation needs R^(d - |u|) calls.
    """
    u = frozenset(u)
    subs = [v for v in _subsets(d) if v <= u]
    t = (np.arange(R) + 0.5) / R

    def proj(v, X):
        # int f(x_v, w) dw over coordinates outside v
        others = [j for j in range(1, d + 1) if j not in v]
        if not others:
            return np.asarray(f(X), dtype=float)
        mesh = np.meshgrid(*([t] * len(others)), indexing="ij")
        W = np.stack([m.ravel() for m in mesh], axis=1)
        Y = np.empty((X.shape[0], W.shape[0], d))
        for j in range(1, d + 1):
            Y[:, :, j - 1] = X[:, None, j - 1] if j in v else W[None, :, others.index(j)]
        vals = np.asarray(f(Y.reshape(-1, d)), dtype=float)
        return vals.reshape(X.shape[0], W.shape[0]).mean(axis=1)

    # P_empty f is the constant integral; compute it once
    mean = float(proj(frozenset(), np.zeros((1, d)))[0])

    def fu(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        # Moebius inversion: f_u = sum_{v <= u} (-1)^{|u - v|} P_v f
        acc = np.zeros(X.shape[0])
        for v in subs:
            val = mean if not v else proj(v, X)
            acc += (-1) ** len(u - v) * val
        return acc

    return fu


def invariance_test(rule: Callable, f: Callable, d: int, replications: int,
                    terms: Optional[dict] = None, isolation_check: Optional[Callable] = None,
                    R: int = 1024) -> dict:
    """Variance-level check of ANOVA invariance for a randomized rule.

    Var(Q(f)) is estimated on replications 0..R-1 and sum_u Var(Q(f_u)) on
    replications R..2R-1, so the two sides are independent.

    Args:
        rule: ``rule(replication) -> (n, d)`` points; must satisfy the
            per-coordinate key isolation.
        f: vectorized d-variate function.
        d: dimension (at most 2 for the quadrature-based terms).
        replications: replications per side.
        terms: optional u -> vectorized f_u; computed by quadrature if absent.
        isolation_check: callable returning True when coordinate keys are
            isolated; a False result is a usage error.

    Returns:
        dict with both variance estimates, standard errors, and z-score.
    """
    if isolation_check is not None and not isolation_check():
        raise UsageError("rule fails the per-coordinate key isolation check")
    if terms is None:
        if d > 2:
            raise UsageError("quadrature terms are limited to d <= 2")
        terms = {u: term_function(f, d, u, R) for u in _subsets(d) if u}
    qf = np.empty(replications)
    qu = {u: np.empty(replications) for u in terms}
    for r in range(replications):
        qf[r] = float(np.mean(f(rule(r))))
        P = rule(replications + r)
        for u, fu in terms.items():
            qu[u][r] = float(np.mean(fu(P)))
    dev_f = (qf - qf.mean()) ** 2
    var_f = float(dev_f.sum() / (replications - 1))
    se_f = float(np.std(dev_f, ddof=1) / np.sqrt(replications))
    dev_u = sum((q - q.mean()) ** 2 for q in qu.values())
    var_sum = float(dev_u.sum() / (replications - 1))
    se_sum = float(np.std(dev_u, ddof=1) / np.sqrt(replications))
    comb = float(np.hypot(se_f, se_sum))
    z = (var_f - var_sum) / comb if comb > 0 else 0.0
    return {
        "var_f": var_f,
        "se_f": se_f,
        "var_sum": var_sum,
        "se_sum": se_sum,
        "z": float(z),
        "term_variances": {tuple(sorted(u)): float(np.var(q, ddof=1)) for u, q in qu.items()},
    }


__all__ = [
    "AnovaDecomposition", "decompose", "variance_identity_check", "f_plus_minus",
    "grid_inner", "term_function", "invariance_test",
]
