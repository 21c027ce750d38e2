"""Multilevel, single-level and plain Monte Carlo estimators.

Level k integrates f - Psi_{k-1} f with a scrambled polynomial lattice rule
on the coordinates v_k; Psi_0 = 0, so level 1 is a plain rule on v_1. Each
level draws its permutation trees from its own stream (the level index),
which makes the levels independent.
"""

from __future__ import annotations

import math
import os
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import UsageError
from .lattice import GeneratingVector, cbc1, cbc2, generate_points, load_vector, format_vector
from .scramble import DEFAULT_DEPTH, Scrambler
from .space import (
    ANCHOR,
    Integrand,
    ProductWeights,
    TableWeights,
    WeightModel,
    decay_estimate,
    fiw_phi_map,
    kernel_k,
)

MAX_M = 20
COST_CONVENTION = "level k>1 charges |v_k|^s + |v_{k-1}|^s per point"


def _pow_floor(x: float, b: int) -> int:
    """Largest power of b not above x (at least 1)."""
    if x < 1:
        return 1
    k = int(math.floor(math.log(x, b) + 1e-12))
    while b ** (k + 1) <= x:
        k += 1
    while k > 0 and b**k > x:
        k -= 1
    return b**k


@dataclass
class LevelSchedule:
    """Nested coordinate sets, sample sizes and variance proxies."""

    mode: str
    L: int
    A: float
    m: int
    s: float
    b: int
    alpha: float
    delta: float
    decay: float
    L_k: list
    sets: list
    sigma: list
    V: list = field(default_factory=list)
    n: list = field(default_factory=list)
    layout: str = "identity"
    meta: dict = field(default_factory=dict)

    @property
    def p(self) -> float:
        return self.decay - self.delta * self.s

    @property
    def tau(self) -> float:
        return min(self.alpha, self.decay) - self.delta

    def sizes(self) -> list:
        return [len(v) for v in self.sets]

    def cost(self, n: Optional[Sequence[int]] = None) -> float:
        """Variable-model cost: n_1|v_1|^s + sum_k n_k(|v_k|^s + |v_{k-1}|^s)."""
        n = self.n if n is None else n
        if len(n) != self.m:
            raise UsageError("sample sizes not allocated")
        sz = self.sizes()
        total = n[0] * sz[0] ** self.s
        for k in range(1, self.m):
            total += n[k] * (sz[k] ** self.s + sz[k - 1] ** self.s)
        return float(total)


@dataclass
class CostModel:
    """Cost of evaluating at a point populated on coordinates w."""

    model: str
    s: float
    v: Optional[frozenset] = None
    levels: Optional[list] = None

    def __post_init__(self):
        if self.model not in ("fixed", "variable"):
            raise UsageError("cost model is 'fixed' or 'variable'")
        if self.s <= 0:
            raise UsageError("cost exponent s must be positive")

    def cost(self, w) -> float:
        w = frozenset(w)
        if self.model == "fixed":
            return float(len(self.v)) ** self.s if w <= self.v else math.inf
        for vi in self.levels:
            if w <= frozenset(vi):
                return float(len(vi)) ** self.s
        return math.inf


def tail_gamma(weights: TableWeights, v, a=ANCHOR) -> float:
    """sum of gamma_hat over supported sets not contained in v."""
    v = frozenset(int(j) for j in v)
    kaa = float(kernel_k(float(a), float(a)))
    return math.fsum(float(g) * kaa ** len(u) for u, g in weights.table.items() if not u <= v)


def build_schedule(weights: WeightModel, mode: str, L: int, A: float, m: int, s: float,
                   alpha: float = 3.0, delta: float = 0.1, decay: Optional[float] = None,
                   b: int = 2, a=ANCHOR) -> LevelSchedule:
    """Level sets v_1 < ... < v_m with L_k = L * ceil(A^k) and proxies sigma_k.

    Args:
        weights: product weights (prefix mode) or a table (union_sets mode).
        mode: "prefix" (v_k = [L_k]) or "union_sets" (v_k = union of the
            first L_k supported sets in gamma_hat order).
        L, A: level-size parameters.
        m: number of levels.
        s: cost exponent.
        alpha, delta: rate parameters.
        decay: decay of the weights; estimated when None.
    """
    if mode not in ("prefix", "union_sets"):
        raise UsageError("mode is 'prefix' or 'union_sets'")
    if m < 1 or L < 1 or A <= 1 or s <= 0:
        raise UsageError("need m >= 1, L >= 1, A > 1, s > 0")
    if mode == "union_sets" and isinstance(weights, ProductWeights):
        raise UsageError("product weights use prefix mode")
    if decay is None:
        decay = decay_estimate(weights, 1000, a)
    Lk = [L * math.ceil(A**k) for k in range(1, m + 1)]
    meta = {"cost_convention": COST_CONVENTION}
    if mode == "prefix":
        sets = [np.arange(1, l + 1, dtype=np.int64) for l in Lk]
        p = decay - delta * s
        sigma = [1.0] + [float(Lk[k - 1]) ** (1.0 - p) for k in range(1, m)]
        V = []
        layout = "identity"
    else:
        order = weights.ordered_sets(a)
        if Lk[-1] > len(order):
            raise UsageError(f"L_m={Lk[-1]} exceeds the {len(order)} supported sets")
        sets, V = [], []
        cover = set()
        for k, l in enumerate(Lk):
            for u in order[: l]:
                cover |= u
            sets.append(np.array(sorted(cover), dtype=np.int64))
        kaa = float(kernel_k(float(a), float(a)))
        ghat = [float(weights.table[u]) * kaa ** len(u) for u in order]
        prev = frozenset()
        sigma = []
        for v in sets:
            vs = frozenset(v.tolist())
            sigma.append(math.fsum(g for u, g in zip(order, ghat) if not u <= prev))
            V.append([j + 1 for j, u in enumerate(order) if u <= vs and not u <= prev])
            prev = vs
        layout = "phi" if weights.table_kind == "fi" else "sorted"
        meta["tail"] = math.fsum(g for u, g in zip(order, ghat) if not u <= prev)
    for k in range(1, m):
        if not set(sets[k - 1].tolist()) < set(sets[k].tolist()):
            raise UsageError("level sets must increase strictly")
    return LevelSchedule(mode, L, A, m, s, b, alpha, delta, float(decay), Lk, sets, sigma, V,
                         layout=layout, meta=meta)


def allocate_samples(schedule: LevelSchedule, S: float, alpha: Optional[float] = None,
                     delta: Optional[float] = None, tau: Optional[float] = None) -> list:
    """Sample sizes n_1 >= ... >= n_m, powers of b, for budget S.

    Prefix mode uses x_k = C L_k^{(1-p-s)/(tau+1)} with n_k = ceil(x_k) + 1;
    union_sets mode uses x_k = C sigma_k^{1/(alpha+1-delta)} L_k^{-s/(alpha+1-delta)}
    with n_k = ceil(x_k). Both are then rounded down to powers of b and
    made nonincreasing by cumulative minima, with n_k >= b.
    """
    sch = schedule
    alpha = sch.alpha if alpha is None else alpha
    delta = sch.delta if delta is None else delta
    s = sch.s
    if s <= 0:
        raise UsageError("cost exponent must be positive")
    Lk = np.array(sch.L_k, dtype=float)
    floor = float(np.sum(Lk**s))
    if S <= floor:
        raise UsageError(f"budget {S} does not exceed sum L_k^s = {floor}")
    if sch.mode == "prefix":
        tau = sch.tau if tau is None else tau
        p = sch.decay - delta * s
        C = S / float(np.sum(Lk ** ((1 - p + s * tau) / (tau + 1))))
        x = C * Lk ** ((1 - p - s) / (tau + 1))
        raw = [math.ceil(v) + 1 for v in x]
    else:
        e = alpha + 1 - delta
        sig = np.array(sch.sigma, dtype=float)
        C = S / float(np.sum(sig ** (1 / e) * Lk ** ((alpha - delta) * s / e)))
        x = C * sig ** (1 / e) * Lk ** (-s / e)
        raw = [math.ceil(v) for v in x]
    n, cur = [], None
    for v in raw:
        v = max(_pow_floor(v, sch.b), sch.b)
        cur = v if cur is None else min(cur, v)
        n.append(cur)
    if max(n) > sch.b**MAX_M:
        raise UsageError(f"allocation needs more than b^{MAX_M} points on one level")
    sch.n = n
    sch.meta["raw_allocation"] = [float(v) for v in x]
    return n


def levels_for_budget(S: float, L: int, A: float, s: float, alpha: float, delta: float,
                      decay: float, kappa: float = 16.0) -> int:
    """Number of levels from the balancing rule of the two rate regimes.

    When decay >= 1 + alpha s the top level size solves S = kappa L_m^{(p-1)/(alpha-delta)},
    otherwise S = kappa L_m^s. m is the largest level whose L_k fits.
    """
    p = decay - delta * s
    if decay >= 1 + alpha * s:
        Lm = (S / kappa) ** ((alpha - delta) / (p - 1))
    else:
        Lm = (S / kappa) ** (1.0 / s)
    m = 1
    while L * math.ceil(A ** (m + 1)) <= Lm:
        m += 1
    return m


def single_level_size(S: float, s: float, alpha: float, delta: float, decay: float,
                      kappa: float = 16.0) -> int:
    """Dimension of the fixed subspace [L] for budget S."""
    p = decay - delta * s
    e = (alpha - delta) / ((alpha - delta) * s + p - 1)
    return max(1, int(round((S / kappa) ** e)))


# --------------------------------------------------------------- rule cache


class RuleCache:
    """Generating vectors per (b, M, weights, layout), extended on demand.

    Vectors for the same key share prefixes, so a wider request extends the
    stored vector with CBC 2. With a directory, vectors are also written to
    disk in the generating-vector text format (atomic replace).
    """

    def __init__(self, directory=None, mode: str = "float", build: bool = True):
        self.directory = Path(directory) if directory else None
        self.mode = mode
        self.build = build
        self._mem = {}
        self._rules = {}
        self._lock = threading.Lock()

    def rule(self, key, factory):
        """Memoized built rule. Concurrent misses may both build; the first stored wins."""
        rule = self._rules.get(key)
        if rule is None:
            rule = self._rules.setdefault(key, factory())
        return rule

    def _path(self, key):
        b, M, digest = key
        return self.directory / f"plr_b{b}_M{M}_{digest}.vec"

    def get(self, b: int, M: int, width: int, weights: WeightModel) -> GeneratingVector:
        key = (b, M, weights.digest())
        with self._lock:
            gv = self._mem.get(key)
            if gv is None and self.directory is not None and self._path(key).exists():
                gv = load_vector(self._path(key))
            if gv is None or gv.width < width:
                if not self.build:
                    raise UsageError(f"no cached generating vector for b={b}, M={M}, width={width}")
                if gv is None:
                    gv = cbc1(b, M, None, width, weights, mode=self.mode)
                else:
                    gv = cbc2(gv, width, weights, mode=self.mode)
                if self.directory is not None:
                    self.directory.mkdir(parents=True, exist_ok=True)
                    fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
                    with os.fdopen(fd, "w") as fh:
                        fh.write(format_vector(gv))
                    os.replace(tmp, self._path(key))
            self._mem[key] = gv
            return gv.prefix(width)


_UNIT = ProductWeights(1, 0, require_summable=False)


def _remap(weights: TableWeights, v: np.ndarray) -> TableWeights:
    pos = {int(j): r + 1 for r, j in enumerate(v)}
    table = {frozenset(pos[j] for j in u): g for u, g in weights.table.items() if u <= pos.keys()}
    return TableWeights(table)


class ScrambledRule:
    """A polynomial lattice rule on coordinates v with Owen scrambling.

    Args:
        gv: generating vector with one column per PLR coordinate.
        columns: for each coordinate of v (increasing), the PLR column
            (0-based) that feeds it.
        v: sorted coordinates.
    """

    def __init__(self, gv: GeneratingVector, v: np.ndarray, columns: Optional[np.ndarray] = None,
                 depth: int = DEFAULT_DEPTH):
        self.gv = gv
        self.v = np.asarray(v, dtype=np.int64)
        self.columns = np.arange(self.v.size) if columns is None else np.asarray(columns)
        self.depth = depth
        self._pts = generate_points(gv)

    @property
    def n(self) -> int:
        return self.gv.n

    def points(self, master_seed: int, replication: int, stream: int = 0,
               identity: bool = False) -> np.ndarray:
        """Scrambled points on v, shape (n, |v|)."""
        sc = Scrambler(master_seed, replication, stream, self.gv.b, self.depth, identity)
        used = np.unique(self.columns)
        P = sc.scramble_set(self._pts[:, used], self.gv.M, coordinates=[int(c) + 1 for c in used])
        where = np.searchsorted(used, self.columns)
        return P[:, where]


def level_rule(schedule: LevelSchedule, k: int, weights: WeightModel, cache: RuleCache,
               n: Optional[int] = None, depth: int = DEFAULT_DEPTH) -> ScrambledRule:
    """Scrambled rule of level k (1-based) with n_k points."""
    b = schedule.b
    n = schedule.n[k - 1] if n is None else n
    M = int(round(math.log(n, b)))
    if b**M != n:
        raise UsageError(f"n={n} is not a power of {b}")
    v = schedule.sets[k - 1]
    return rule_for(v, M, b, weights, cache, schedule.layout, depth)


def rule_for(v: np.ndarray, M: int, b: int, weights: WeightModel, cache: RuleCache,
             layout: str = "identity", depth: int = DEFAULT_DEPTH) -> ScrambledRule:
    if M < 1:
        raise UsageError("rules need at least b points")
    v = np.asarray(v, dtype=np.int64)
    key = (layout, b, M, tuple(int(j) for j in v), weights.digest(), depth)
    return cache.rule(key, lambda: _build_rule(v, M, b, weights, cache, layout, depth))


def _build_rule(v, M, b, weights, cache, layout, depth):
    if layout == "identity":
        if v.size and not np.array_equal(v, np.arange(1, v.size + 1)):
            raise UsageError("identity layout needs v = [L]")
        gv = cache.get(b, M, max(1, v.size), weights)
        return ScrambledRule(gv, v, depth=depth)
    if layout == "sorted":
        gv = cache.get(b, M, max(1, v.size), _remap(weights, v))
        return ScrambledRule(gv, v, depth=depth)
    if layout == "phi":
        phi = fiw_phi_map(weights)
        cols = np.array([phi.get(int(j), 1) - 1 for j in v], dtype=np.int64)
        gv = cache.get(b, M, weights.d, _UNIT)
        return ScrambledRule(gv, v, cols, depth=depth)
    raise UsageError(f"unknown layout {layout!r}")


# --------------------------------------------------------------- estimators


@dataclass
class Estimate:
    value: float
    cost: float
    levels: list = field(default_factory=list)


def ml_estimate(f: Integrand, schedule: LevelSchedule, weights: WeightModel, master_seed: int,
                replication: int, cache: Optional[RuleCache] = None,
                depth: int = DEFAULT_DEPTH) -> Estimate:
    """Multilevel estimate sum_k mean_i [f(x_i on v_k) - f(x_i on v_{k-1})].

    Level k uses scramble stream k. The cost follows the variable model with
    the convention in ``COST_CONVENTION``.
    """
    if len(schedule.n) != schedule.m:
        raise UsageError("allocate samples before estimating")
    cache = RuleCache() if cache is None else cache
    total, parts = 0.0, []
    for k in range(1, schedule.m + 1):
        rule = level_rule(schedule, k, weights, cache, depth=depth)
        X = rule.points(master_seed, replication, stream=k)
        v = schedule.sets[k - 1]
        vals = f(v, X)
        if k > 1:
            prev = schedule.sets[k - 2]
            keep = np.isin(v, prev)
            vals = vals - f(prev, X[:, keep])
        q = float(np.mean(vals))
        parts.append(q)
        total += q
    return Estimate(total, schedule.cost(), parts)


def single_level_estimate(f: Integrand, v, n: int, weights: WeightModel, master_seed: int,
                          replication: int, s: float = 1.0, b: int = 2,
                          cache: Optional[RuleCache] = None, layout: str = "identity",
                          depth: int = DEFAULT_DEPTH) -> Estimate:
    """One scrambled rule with n points on v; cost n |v|^s (fixed model)."""
    v = np.array(sorted(int(j) for j in v), dtype=np.int64)
    cache = RuleCache() if cache is None else cache
    if n < 1:
        raise UsageError("n must be positive")
    M = int(round(math.log(n, b))) if n > 1 else 0
    if b**M != n:
        raise UsageError(f"n={n} is not a power of {b}")
    if n == 1:
        # one uniformly scrambled origin
        sc = Scrambler(master_seed, replication, 0, b, depth)
        X = sc.scramble_set(np.zeros((1, v.size), dtype=np.int64), 1, coordinates=list(range(1, v.size + 1)))
    else:
        rule = rule_for(v, M, b, weights, cache, layout, depth)
        X = rule.points(master_seed, replication, stream=0)
    vals = f(v, X)
    return Estimate(float(np.mean(vals)), float(n) * float(v.size) ** s)


def mc_baseline(f: Integrand, v, n: int, master_seed: int, replication: int,
                s: float = 1.0) -> Estimate:
    """Mean of f at n i.i.d. uniform points on v (anchor elsewhere)."""
    v = np.array(sorted(int(j) for j in v), dtype=np.int64)
    rng = np.random.Generator(np.random.Philox(key=master_seed % 2**64 + ((replication % 2**64) << 64)))
    X = rng.random((n, v.size))
    return Estimate(float(np.mean(f(v, X))), float(n) * float(v.size) ** s)


__all__ = [
    "LevelSchedule", "CostModel", "build_schedule", "allocate_samples", "levels_for_budget",
    "single_level_size", "RuleCache", "ScrambledRule", "level_rule", "rule_for", "Estimate",
    "ml_estimate", "single_level_estimate", "mc_baseline", "tail_gamma", "COST_CONVENTION",
]
