"""scikit-learn style wrappers around the functional core."""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import UsageError
from .lattice import cbc1, generate_points
from .multilevel import RuleCache, allocate_samples, build_schedule, levels_for_budget, ml_estimate
from .scramble import DEFAULT_DEPTH, Scrambler
from .space import Integrand, ProductWeights, WeightModel, decay_estimate, parse_weights


def _as_weights(w) -> WeightModel:
    return w if isinstance(w, WeightModel) else parse_weights(str(w))


class OwenScrambler(BaseEstimator, TransformerMixin):
    """Nested uniform scrambling of points with finite base-b expansions.

    Args:
        seed: master seed.
        replication: replication index.
        stream: stream index.
        b: base.
        resolution: input digits M; inferred from the data in ``fit`` when None.
        depth: output digits.
    """

    def __init__(self, seed=0, replication=0, stream=0, b=2, resolution=None, depth=DEFAULT_DEPTH):
        self.seed = seed
        self.replication = replication
        self.stream = stream
        self.b = b
        self.resolution = resolution
        self.depth = depth

    def _numerators(self, X, M):
        scaled = X * float(self.b**M)
        num = np.rint(scaled)
        if np.any(np.abs(scaled - num) > 1e-9 * max(1.0, float(self.b**M))):
            raise UsageError(f"inputs are not multiples of {self.b}^-{M}")
        return num.astype(np.int64)

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        if X.size and (X.min() < 0 or X.max() >= 1):
            raise UsageError("inputs must lie in [0, 1)")
        if self.resolution is not None:
            M = int(self.resolution)
        else:
            M = next((m for m in range(1, self.depth + 1)
                      if np.allclose(X * self.b**m, np.rint(X * self.b**m), rtol=0, atol=1e-9)), None)
            if M is None:
                raise UsageError(f"inputs need more than {self.depth} base-{self.b} digits")
        self._numerators(X, M)
        self.resolution_ = M
        self.n_features_in_ = X.shape[1]
        self.scrambler_ = Scrambler(self.seed, self.replication, self.stream, self.b, self.depth)
        return self

    def transform(self, X):
        check_is_fitted(self, "scrambler_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise UsageError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.scrambler_.scramble_set(self._numerators(X, self.resolution_), self.resolution_)


class PolynomialLatticeRule(BaseEstimator):
    """Polynomial lattice rule built by CBC for given weights.

    Args:
        b: base.
        M: log_b of the number of points.
        weights: weight model or weight string such as "product:1,3".
        mode: "auto", "exact" or "float" CBC arithmetic.
    """

    def __init__(self, b=2, M=8, weights="product:1,3", mode="auto"):
        self.b = b
        self.M = M
        self.weights = weights
        self.mode = mode

    def fit(self, X, y=None):
        """Build a rule with one coordinate per feature of X."""
        X = check_array(X, dtype=float, ensure_min_samples=1)
        s = X.shape[1]
        self.generating_vector_ = cbc1(self.b, self.M, None, s, _as_weights(self.weights), mode=self.mode)
        self.n_features_in_ = s
        self.quality_ = list(self.generating_vector_.meta["B"])
        self.points_ = generate_points(self.generating_vector_) / float(self.b**self.M)
        return self

    def integrate(self, f) -> float:
        """Equal-weight rule applied to a function of an (n, s) array."""
        check_is_fitted(self, "points_")
        return float(np.mean(np.asarray(f(self.points_), dtype=float)))


class MultilevelIntegrator(BaseEstimator):
    """Multilevel scrambled lattice estimator for one budget.

    Args:
        weights: weight model or weight string.
        budget: cost budget S.
        s: cost exponent.
        alpha, delta: rate parameters.
        decay: weight decay; estimated from the weights when None.
        kappa, L, A: level-size parameters.
        seed: master seed.
        replications: independent replications averaged in ``fit``.
    """

    def __init__(self, weights="product:1,3", budget=4096, s=1.0, alpha=3.0, delta=0.1, decay=None,
                 kappa=16.0, L=1, A=2.0, seed=0, replications=10):
        self.weights = weights
        self.budget = budget
        self.s = s
        self.alpha = alpha
        self.delta = delta
        self.decay = decay
        self.kappa = kappa
        self.L = L
        self.A = A
        self.seed = seed
        self.replications = replications

    def fit(self, integrand: Integrand, y=None):
        """Estimate the integral of a library integrand."""
        if not isinstance(integrand, Integrand):
            raise UsageError("MultilevelIntegrator.fit expects an Integrand")
        if self.replications < 1:
            raise UsageError("replications must be positive")
        w = _as_weights(self.weights)
        decay = self.decay if self.decay is not None else decay_estimate(w)
        m = levels_for_budget(self.budget, self.L, self.A, self.s, self.alpha, self.delta, decay, self.kappa)
        mode = "prefix" if isinstance(w, ProductWeights) else "union_sets"
        sch = build_schedule(w, mode, self.L, self.A, m, self.s, self.alpha, self.delta, decay)
        allocate_samples(sch, self.budget)
        cache = RuleCache()
        est = np.array([ml_estimate(integrand, sch, w, self.seed, r, cache).value
                        for r in range(self.replications)])
        self.schedule_ = sch
        self.estimates_ = est
        self.estimate_ = float(est.mean())
        self.stderr_ = float(est.std(ddof=1) / math.sqrt(est.size)) if est.size > 1 else float("nan")
        self.cost_ = sch.cost() * self.replications
        return self
