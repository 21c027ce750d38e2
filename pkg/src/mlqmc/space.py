"""Weighted unanchored Sobolev space on [0,1)^N.

The reproducing kernel is K(x, y) = sum_u gamma_u prod_{j in u} k(x_j, y_j)
with k(x, y) = 1/3 + (x^2 + y^2)/2 - max(x, y). Coordinates are 1-based.
Points are handed to integrands as ``(coords, X)``: a sorted integer array
of populated coordinates and an ``(n, len(coords))`` array of values. Every
other coordinate reads the anchor (1/2 by default).
"""

from __future__ import annotations

import hashlib
import itertools
import math
import threading
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional

import numpy as np
from scipy.special import zeta

from .exceptions import InternalError, UsageError

TAIL_EPS = 1e-12
# beyond this many explicit factors, the remaining log-sum is taken from the
# Hurwitz zeta function (first order in gamma_j, error far below TAIL_EPS)
MAX_EXPLICIT = 2_000_000
ANCHOR = 0.5


def _as_number(g):
    if isinstance(g, (Fraction, int)):
        return Fraction(g)
    if isinstance(g, str):
        return Fraction(g.strip())
    return float(g)


def _coord_set(v) -> frozenset:
    out = frozenset(int(j) for j in v)
    if any(j < 1 for j in out):
        raise UsageError("coordinates are 1-based positive integers")
    return out


# ---------------------------------------------------------------- kernels


def kernel_k(x, y):
    """k(x, y) = 1/3 + (x^2 + y^2)/2 - max(x, y) on [0, 1]^2.

    Accepts scalars or broadcastable arrays. Rational scalar inputs give an
    exact Fraction.
    """
    if isinstance(x, (Fraction, int)) and isinstance(y, (Fraction, int)):
        x, y = Fraction(x), Fraction(y)
        if not (0 <= x <= 1 and 0 <= y <= 1):
            raise UsageError("kernel arguments must lie in [0, 1]")
        return Fraction(1, 3) + (x * x + y * y) / 2 - max(x, y)
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if np.any((xa < 0) | (xa > 1)) or np.any((ya < 0) | (ya > 1)):
        raise UsageError("kernel arguments must lie in [0, 1]")
    out = 1.0 / 3.0 + 0.5 * (xa * xa + ya * ya) - np.maximum(xa, ya)
    return out if out.ndim else float(out)


def kernel_ku(xu: Mapping, yu: Mapping, u: Optional[Iterable[int]] = None):
    """Product kernel k_u(x, y) over the coordinate set u.

    Args:
        xu, yu: coordinate -> value maps.
        u: coordinate set; defaults to the keys of ``xu``.
    """
    u = sorted(xu) if u is None else sorted(_coord_set(u))
    out = 1
    for j in u:
        if j not in xu or j not in yu:
            raise UsageError(f"coordinate {j} missing from kernel arguments")
        out = out * kernel_k(xu[j], yu[j])
    return out


# ---------------------------------------------------------------- weights


class WeightModel:
    """Common interface of the weight classes."""

    kind = "abstract"

    def gamma(self, u) -> float:
        raise NotImplementedError

    def gamma_hat(self, u, a=ANCHOR):
        u = _coord_set(u)
        return self.gamma(u) * kernel_k(a, a) ** len(u)

    def key(self) -> str:
        """Stable text identifying the weights (used for cache names)."""
        raise NotImplementedError

    def digest(self) -> str:
        # weights are immutable after construction, so the hash is cached
        cached = self.__dict__.get("_digest")
        if cached is None:
            cached = self._digest = hashlib.sha256(self.key().encode()).hexdigest()[:16]
        return cached


class ProductWeights(WeightModel):
    """gamma_u = prod_{j in u} c * j^(-q).

    Args:
        c: scale, 0 < c < 6 (keeps every factor 1 + gamma_j k positive).
        q: decay exponent; q > 1 certifies summability.
        require_summable: set False for finite-dimensional uses such as
            unit CBC weights (q = 0).
    """

    kind = "product"

    def __init__(self, c=1, q=3, require_summable=True):
        self.c = _as_number(c)
        self.q = _as_number(q)
        if not 0 < self.c < 6:
            raise UsageError("product weight scale c must lie in (0, 6)")
        if self.q < 0:
            raise UsageError("product weights must be nonincreasing in j (q >= 0)")
        if require_summable and self.q <= 1:
            raise UsageError("product weights need q > 1 for summability")
        self.summable = self.q > 1
        self._log_cache = {}

    def __repr__(self):
        return f"ProductWeights(c={self.c}, q={self.q})"

    def key(self):
        return f"product {self.c} {self.q}"

    def _exact(self):
        return isinstance(self.c, Fraction) and isinstance(self.q, Fraction) and self.q.denominator == 1

    def gamma_j(self, j: int):
        if j < 1:
            raise UsageError("coordinates are 1-based")
        if self._exact():
            return self.c / Fraction(j) ** int(self.q)
        return float(self.c) * float(j) ** (-float(self.q))

    def gammas(self, J: int) -> np.ndarray:
        j = np.arange(1, J + 1, dtype=float)
        return float(self.c) * j ** (-float(self.q))

    def gamma(self, u):
        out = Fraction(1) if self._exact() else 1.0
        for j in _coord_set(u):
            out *= self.gamma_j(j)
        return out

    def truncation(self, scale: float, eps: float = TAIL_EPS) -> int:
        """Smallest J with sum_{j>J} scale * gamma_j <= scale*c*J^(1-q)/(q-1) < eps."""
        if not self.summable:
            raise UsageError("truncation needs summable weights")
        q, c = float(self.q), float(self.c)
        if scale <= 0:
            return 1
        J = (scale * c / ((q - 1) * eps)) ** (1.0 / (q - 1))
        return max(1, int(math.ceil(J)) + 1)

    def log_factors(self, kval: float, eps: float = TAIL_EPS):
        """Cumulative sums of log(1 + gamma_j * kval).

        Returns:
            (J, cum, tail) where ``cum[j]`` is the sum over the first j
            factors (``cum[0] = 0``) for j <= min(J, MAX_EXPLICIT), and
            ``tail`` approximates the remaining factors up to infinity when J
            exceeds the explicit range (0 otherwise; those are the discarded
            factors of the truncated product).
        """
        key = (float(kval), eps)
        if key not in self._log_cache:
            J = self.truncation(abs(kval), eps)
            J0 = min(J, MAX_EXPLICIT)
            terms = np.log1p(self.gammas(J0) * kval)
            cum = np.concatenate([[0.0], np.cumsum(terms)])
            tail = 0.0
            if J > J0:
                q = float(self.q)
                tail = float(self.c) * kval * float(zeta(q, J0 + 1))
                tail -= 0.5 * (float(self.c) * kval) ** 2 * float(zeta(2 * q, J0 + 1))
            self._log_cache[key] = (J, cum, tail)
        return self._log_cache[key]

    def log_tail_product(self, v, a=ANCHOR) -> tuple:
        """log prod_{j not in v}(1 + gamma_j k(a,a)) over the truncation, and J."""
        J, cum, tail = self.log_factors(kernel_k(float(a), float(a)))
        kaa = kernel_k(float(a), float(a))
        total = cum[-1] + tail
        inside = [j for j in _coord_set(v) if j < len(cum)]
        if inside:
            total -= float(np.sum(np.log1p(self.gammas(max(inside))[np.array(inside) - 1] * kaa)))
        return total, J


class TableWeights(WeightModel):
    """Finite-order weights given by an explicit table.

    Args:
        table: mapping from coordinate sets to gamma_u. The empty set may
            appear only with weight 1.
        kind: "fo" (finite order) or "fi" (finite intersection).
        eta, rho: finite-intersection declaration, validated when given.
    """

    kind = "table"

    def __init__(self, table: Mapping, kind: str = "fo", eta: Optional[int] = None, rho: Optional[int] = None):
        if kind not in ("fo", "fi"):
            raise UsageError("table kind must be 'fo' or 'fi'")
        sets = {}
        for u, g in dict(table).items():
            u = _coord_set([u] if isinstance(u, int) else u)
            g = _as_number(g)
            if g < 0:
                raise UsageError("weights must be nonnegative")
            if not u:
                if g != 1:
                    raise UsageError("gamma of the empty set is fixed to 1")
                continue
            if g > 0:
                sets[u] = g
        if not sets:
            raise UsageError("weight table has no supported set")
        self.table = sets
        self.table_kind = kind
        self.order = max(len(u) for u in sets)
        self.eta, self.rho = eta, rho
        if kind == "fi" and (eta is None or rho is None):
            raise UsageError("finite-intersection tables need eta and rho")
        # coordinate -> supported sets containing it
        self._by_coord = {}
        for u in sets:
            for j in u:
                self._by_coord.setdefault(j, []).append(u)
        if eta is not None or rho is not None:
            self._validate_fi()
        self._ordered = None

    def __repr__(self):
        return f"TableWeights({len(self.table)} sets, order={self.order}, kind={self.table_kind})"

    def _validate_fi(self):
        if self.eta is not None:
            worst = max(len(s) for s in self._by_coord.values())
            if worst > self.eta:
                raise UsageError(f"a coordinate lies in {worst} supported sets, eta={self.eta}")
        if self.rho is not None:
            for u in self.table:
                meet = {v for j in u for v in self._by_coord[j]}
                if len(meet) > 1 + self.rho:
                    raise UsageError(
                        f"supported set {sorted(u)} meets {len(meet)} supported sets, rho={self.rho}")

    def key(self):
        items = sorted((tuple(sorted(u)), str(g)) for u, g in self.table.items())
        return f"table {self.table_kind} {self.eta} {self.rho} {items}"

    def gamma(self, u):
        u = _coord_set(u)
        if not u:
            return Fraction(1)
        return self.table.get(u, 0)

    def sets_containing(self, j: int) -> list:
        return self._by_coord.get(j, [])

    def ordered_sets(self, a=ANCHOR) -> list:
        """Supported sets sorted by gamma_hat descending (the sequence u_1, u_2, ...)."""
        if self._ordered is None or self._ordered[0] != a:
            kaa = float(kernel_k(float(a), float(a)))
            keyed = sorted(self.table.items(),
                           key=lambda it: (-float(it[1]) * kaa ** len(it[0]), tuple(sorted(it[0]))))
            self._ordered = (a, [u for u, _ in keyed])
        return self._ordered[1]

    @property
    def d(self) -> int:
        """Number of colors the finite-intersection map may use: eta*(order-1)+1."""
        if self.eta is None:
            raise UsageError("d needs an eta declaration")
        return self.eta * (self.order - 1) + 1


def parse_weights(text: str) -> WeightModel:
    """Parse "product c q", "product:c,q", "chain:c,q,J", or a weight-table text.

    ``chain:c,q,J`` is the finite-intersection table gamma_{{j, j+1}} = c j^(-q)
    for j = 1..J (eta = rho = 2).
    """
    text = text.strip()
    if text.startswith("chain"):
        rest = text[len("chain"):].lstrip(":").replace(",", " ").split()
        if len(rest) != 3:
            raise UsageError("chain weights are written 'chain:c,q,J'")
        c, q, J = _as_number(rest[0]), _as_number(rest[1]), int(rest[2])
        if J < 1 or c <= 0:
            raise UsageError("chain weights need c > 0 and J >= 1")
        if isinstance(q, Fraction) and q.denominator == 1:
            table = {(j, j + 1): c / Fraction(j) ** int(q) for j in range(1, J + 1)}
        else:
            table = {(j, j + 1): float(c) * j ** -float(q) for j in range(1, J + 1)}
        return TableWeights(table, kind="fi", eta=2, rho=2)
    if text.startswith("product"):
        rest = text[len("product"):].lstrip(":").replace(",", " ").split()
        if len(rest) != 2:
            raise UsageError("product weights are written 'product c q'")
        return ProductWeights(rest[0], rest[1])
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")]
    header = {}
    if lines and ":" not in lines[0]:
        for tok in lines.pop(0).split():
            if "=" not in tok:
                raise UsageError(f"bad header token {tok!r}")
            k, v = tok.split("=", 1)
            header[k] = v
    table = {}
    for ln in lines:
        try:
            lhs, rhs = ln.split(":")
            u = frozenset(int(t) for t in lhs.split(",") if t.strip())
        except ValueError as exc:
            raise UsageError(f"bad weight line {ln!r}") from exc
        table[u] = rhs
    eta = int(header["eta"]) if "eta" in header else None
    rho = int(header["rho"]) if "rho" in header else None
    w = TableWeights(table, kind=header.get("kind", "fo"), eta=eta, rho=rho)
    if "order" in header and int(header["order"]) != w.order:
        raise UsageError(f"declared order {header['order']} but table has order {w.order}")
    return w


def format_weights(w: WeightModel) -> str:
    if isinstance(w, ProductWeights):
        return f"product {w.c} {w.q}\n"
    head = f"order={w.order}"
    if w.eta is not None:
        head += f" eta={w.eta}"
    if w.rho is not None:
        head += f" rho={w.rho}"
    head += f" kind={w.table_kind}"
    lines = [head]
    for u in w.ordered_sets():
        lines.append(",".join(str(j) for j in sorted(u)) + f":{w.table[u]}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------- bias and projections


def bias_squared(weights: WeightModel, v, a=ANCHOR) -> float:
    """b^2_{v,a} = sum over nonempty u outside v of gamma_u k_u(a, a)."""
    v = _coord_set(v)
    if isinstance(weights, ProductWeights):
        if not weights.summable:
            raise UsageError("bias needs summable weights")
        logp, _ = weights.log_tail_product(v, a)
        return float(np.expm1(logp))
    kaa = float(kernel_k(float(a), float(a)))
    return math.fsum(float(g) * kaa ** len(u) for u, g in weights.table.items() if not (u & v))


def r_squared(weights: WeightModel, v, u, a=ANCHOR) -> float:
    """r^2_{v,u,a} = sum over u' outside v of gamma_{u + u'} k_{u'}(a, a)."""
    v, u = _coord_set(v), _coord_set(u)
    if not u <= v:
        raise UsageError("r_squared needs u subset of v")
    if isinstance(weights, ProductWeights):
        logp, _ = weights.log_tail_product(v, a)
        return float(weights.gamma(u)) * math.exp(logp)
    kaa = float(kernel_k(float(a), float(a)))
    total = 1.0 if not u else 0.0  # the t = u = empty term
    for t, g in weights.table.items():
        if t & v == u:
            total += float(g) * kaa ** len(t - v)
    return total


def rtilde_squared(weights: WeightModel, w, v, u, a=ANCHOR) -> float:
    """Part of r^2_{v,u,a} whose u' meets w (v a proper subset of w)."""
    w, v, u = _coord_set(w), _coord_set(v), _coord_set(u)
    if not (u <= v and v < w):
        raise UsageError("rtilde_squared needs u subset v proper subset w")
    if isinstance(weights, ProductWeights):
        lv, _ = weights.log_tail_product(v, a)
        lw, _ = weights.log_tail_product(w, a)
        return float(weights.gamma(u)) * math.exp(lw) * float(np.expm1(lv - lw))
    kaa = float(kernel_k(float(a), float(a)))
    total = 0.0
    for t, g in weights.table.items():
        rest = t - v
        if t & v == u and rest & w:
            total += float(g) * kaa ** len(rest)
    return total


def projection_norm_squared(weights: WeightModel, v, a=ANCHOR) -> float:
    """Squared operator norm of the anchored projection onto coordinates v."""
    v = _coord_set(v)
    if isinstance(weights, ProductWeights):
        logp, _ = weights.log_tail_product(v, a)
        return math.exp(logp)
    best = r_squared(weights, v, frozenset(), a)
    for u, g in weights.table.items():
        if u <= v:
            best = max(best, r_squared(weights, v, u, a) / float(g))
    return best


def projection_norm(weights: WeightModel, v, a=ANCHOR) -> float:
    return math.sqrt(projection_norm_squared(weights, v, a))


# ------------------------------------------------ finite-intersection map


def fiw_phi_map(weights: TableWeights) -> dict:
    """Color coordinates so every supported set sees distinct colors.

    Greedy coloring in increasing coordinate order of the graph joining
    coordinates that share a supported set. Each coordinate has at most
    eta*(order-1) neighbours, so at most d = eta*(order-1)+1 colors appear.

    Returns:
        dict coordinate -> color in 1..d. Coordinates outside every
        supported set are not listed (any color is valid for them).
    """
    if not isinstance(weights, TableWeights) or weights.eta is None:
        raise UsageError("fiw_phi_map needs a finite-intersection table")
    d = weights.d
    color = {}
    for j in sorted(weights._by_coord):
        taken = {color[i] for u in weights._by_coord[j] for i in u if i in color}
        c = 1
        while c in taken:
            c += 1
        if c > d:
            raise InternalError(f"coloring needs more than d={d} colors")
        color[j] = c
    return color


# ------------------------------------------------------------ decay


def _top_gamma_hat(weights: WeightModel, truncation: int, a=ANCHOR) -> np.ndarray:
    kaa = float(kernel_k(float(a), float(a)))
    if isinstance(weights, TableWeights):
        vals = np.array([float(g) * kaa ** len(u) for u, g in weights.table.items()])
        return np.sort(vals)[::-1]
    g = weights.gammas(truncation) * kaa

    def count_and_collect(eps, collect=False):
        # depth-first over increasing tuples of order <= 3; g is nonincreasing
        out, cnt = [], 0
        for i in range(truncation):
            if g[i] < eps:
                break
            cnt += 1
            if collect:
                out.append(g[i])
            for j in range(i + 1, truncation):
                gij = g[i] * g[j]
                if gij < eps:
                    break
                cnt += 1
                if collect:
                    out.append(gij)
                for k in range(j + 1, truncation):
                    gijk = gij * g[k]
                    if gijk < eps:
                        break
                    cnt += 1
                    if collect:
                        out.append(gijk)
        return cnt, out

    lo, hi = math.log(g[-1]) - 1.0, math.log(g[0]) + 1.0
    for _ in range(60):  # bisection on log eps for about `truncation` sets
        mid = 0.5 * (lo + hi)
        cnt, _ = count_and_collect(math.exp(mid))
        if cnt >= truncation:
            lo = mid
        else:
            hi = mid
    _, vals = count_and_collect(math.exp(lo), collect=True)
    return np.sort(np.array(vals))[::-1][:truncation]


def decay_estimate(weights: WeightModel, truncation: int = 1000, a=ANCHOR) -> float:
    """Least-squares estimate of the polynomial decay of the sorted gamma_hat.

    Product weights are enumerated over sets of order at most 3 on the first
    ``truncation`` coordinates; tables use all supported sets. The slope of
    -log gamma_hat_{u_j} against log j is fitted over the top half of the
    sorted list. This is a numerical estimate, not the exact supremum.
    """
    if truncation < 100:
        raise UsageError("truncation must be at least 100")
    vals = _top_gamma_hat(weights, truncation, a)
    vals = vals[vals > 0]
    if vals.size < 10:
        raise UsageError("need at least 10 positive weights")
    half = vals[: max(10, vals.size // 2)]
    j = np.arange(1, half.size + 1, dtype=float)
    slope = np.polyfit(np.log(j), -np.log(half), 1)[0]
    return float(slope)


def decay_counting_estimate(weights: WeightModel, truncation: int = 1000, a=ANCHOR) -> float:
    """Independent estimate from counts N(eps) = #{u : gamma_hat_u >= eps} ~ eps^(-1/p)."""
    vals = _top_gamma_hat(weights, truncation, a)
    vals = vals[vals > 0]
    if vals.size < 10:
        raise UsageError("need at least 10 positive weights")
    eps = np.geomspace(vals[min(9, vals.size - 1)], vals[vals.size // 2], 12)
    counts = np.array([np.count_nonzero(vals >= e) for e in eps], dtype=float)
    slope = np.polyfit(np.log(1.0 / eps), np.log(counts), 1)[0]
    return float(1.0 / slope)


# ------------------------------------------------------------ integrands


class EvalCounter:
    """Thread-safe evaluation counter shared by an integrand and its projections."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def add(self, n: int):
        with self._lock:
            self._count += int(n)

    @property
    def value(self) -> int:
        with self._lock:
            return self._count

    def reset(self):
        with self._lock:
            self._count = 0


class Integrand:
    """Cost-metered function on [0,1)^N with a known integral.

    Args:
        name: label used in reports.
        func: callable ``(coords, X) -> values`` on populated coordinates.
        exact: exact integral, or None when unknown.
        active: coordinates the function depends on, or None when it
            depends on infinitely many (then ``truncation`` gives the index
            beyond which coordinates are ignored).
        anchor: value read for unpopulated coordinates.
    """

    def __init__(self, name: str, func: Callable, exact=None, active=None,
                 truncation: Optional[int] = None, anchor=ANCHOR, counter: Optional[EvalCounter] = None):
        self.name = name
        self._func = func
        self.exact = exact
        self.active = None if active is None else _coord_set(active)
        self.truncation = truncation
        self.anchor = anchor
        self.counter = counter if counter is not None else EvalCounter()

    def __repr__(self):
        return f"Integrand({self.name})"

    @property
    def evaluations(self) -> int:
        return self.counter.value

    def __call__(self, coords, X) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.int64).ravel()
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None] if coords.size == 1 else X[None, :]
        if X.shape[1] != coords.size:
            raise UsageError("X must have one column per populated coordinate")
        if coords.size > 1 and np.any(np.diff(coords) <= 0):
            raise UsageError("coords must be strictly increasing")
        if coords.size and coords[0] < 1:
            raise UsageError("coordinates are 1-based")
        self.counter.add(X.shape[0])
        return np.asarray(self._func(coords, X), dtype=float).reshape(X.shape[0])

    def at(self, point: Mapping) -> float:
        """Evaluate at one point given as a coordinate -> value map."""
        coords = np.array(sorted(point), dtype=np.int64)
        X = np.array([[float(point[j]) for j in coords]])
        return float(self(coords, X)[0])


def _columns(coords: np.ndarray, X: np.ndarray, wanted, fill: float) -> np.ndarray:
    """Values of the wanted coordinates, anchored when unpopulated."""
    wanted = np.asarray(wanted, dtype=np.int64)
    out = np.full((X.shape[0], wanted.size), fill)
    if coords.size:
        pos = np.searchsorted(coords, wanted)
        pos_c = np.minimum(pos, coords.size - 1)
        hit = coords[pos_c] == wanted
        out[:, hit] = X[:, pos_c[hit]]
    return out


def anchor_project(f: Integrand, v, a=None, exact=None) -> Integrand:
    """Psi_{v,a} f: evaluate f with every coordinate outside v set to a.

    Evaluations are charged to the counter of ``f``. An anchor other than
    the integrand's own needs a finite active set, since those coordinates
    must then be populated explicitly.
    """
    v = np.array(sorted(_coord_set(v)), dtype=np.int64)
    a = f.anchor if a is None else a
    fill = np.zeros(0, dtype=np.int64)
    if a != f.anchor:
        if f.active is None:
            raise UsageError("a new anchor needs an integrand with finite active coordinates")
        fill = np.array(sorted(f.active - set(v.tolist())), dtype=np.int64)

    def func(coords, X):
        keep = np.isin(coords, v)
        kc, kx = coords[keep], X[:, keep]
        if fill.size:
            kc = np.concatenate([kc, fill])
            kx = np.hstack([kx, np.full((X.shape[0], fill.size), float(a))])
            order = np.argsort(kc)
            kc, kx = kc[order], kx[:, order]
        return f._func(kc, kx)

    active = set(v.tolist()) if f.active is None else f.active & set(v.tolist())
    return Integrand(f"proj({f.name})", func, exact=exact, active=active,
                     anchor=f.anchor, counter=f.counter)


def _check_weights_product(weights, what):
    if not isinstance(weights, ProductWeights):
        raise UsageError(f"{what} needs product weights")


def make_integrand(kind: str, weights: Optional[WeightModel] = None, a=ANCHOR, **params) -> Integrand:
    """Build a library integrand.

    Kinds and parameters:
        ``constant``: c. Integral c.
        ``kernel_section``: v, y (one value per coordinate of v). The kernel
            section K_v(., y); integral 1.
        ``anova_pure``: u, y. k_u(x_u, y_u); integral 0.
        ``infinite_product``: y0. prod_j (1 + gamma_j k(x_j, y0)) truncated
            where the tail falls below 1e-12; integral 1. Product weights.
        ``tail_series``: eps (default 0.1). 1 + sum_j beta_j k_{u_j}(x, a)
            with beta_j = gamma_{u_j}^(1/2) j^(-1/2-eps) over the sorted
            supported sets; norm finite but only barely, so its truncation
            error decays like the worst case. Integral 1.
    """
    if kind == "constant":
        c = params.get("c", 1)
        cf = float(c)
        return Integrand(f"constant({c})", lambda coords, X: np.full(X.shape[0], cf),
                         exact=_as_number(c), active=(), anchor=a)

    if kind == "kernel_section":
        if weights is None:
            raise UsageError("kernel_section needs weights")
        v = sorted(_coord_set(params["v"]))
        y = np.asarray(params["y"], dtype=float).ravel()
        if y.size != len(v):
            raise UsageError("kernel_section needs one y value per coordinate of v")
        kernel_k(y, y)  # range check
        va = np.array(v, dtype=np.int64)
        if isinstance(weights, ProductWeights):
            g = np.array([float(weights.gamma_j(j)) for j in v])

            def func(coords, X):
                xv = _columns(coords, X, va, a)
                return np.prod(1.0 + g * kernel_k(xv, y), axis=1)
        else:
            terms = [(np.array([v.index(j) for j in sorted(u)]), float(gm))
                     for u, gm in weights.table.items() if u <= set(v)]

            def func(coords, X):
                kv = kernel_k(_columns(coords, X, va, a), y)
                out = np.ones(X.shape[0])
                for idx, gm in terms:
                    out += gm * np.prod(kv[:, idx], axis=1)
                return out
        return Integrand(f"kernel_section({v})", func, exact=Fraction(1), active=v, anchor=a)

    if kind == "anova_pure":
        u = sorted(_coord_set(params["u"]))
        y = np.asarray(params["y"], dtype=float).ravel()
        if y.size != len(u):
            raise UsageError("anova_pure needs one y value per coordinate of u")
        kernel_k(y, y)
        ua = np.array(u, dtype=np.int64)

        def func(coords, X):
            return np.prod(kernel_k(_columns(coords, X, ua, a), y), axis=1)
        return Integrand(f"anova_pure({u})", func, exact=Fraction(0), active=u, anchor=a)

    if kind == "infinite_product":
        _check_weights_product(weights, "infinite_product")
        y0 = float(params.get("y0", 1.0 / math.sqrt(12.0)))
        kernel_k(y0, y0)
        # |k| <= 1/3 on the unit square bounds every factor's deviation
        J = weights.truncation(1.0 / 3.0)
        if J > MAX_EXPLICIT:
            raise UsageError("infinite_product truncation too long for these weights")
        g = weights.gammas(J)
        la = np.log1p(g * kernel_k(a, y0))
        total = float(np.sum(la))

        def func(coords, X):
            inside = coords <= J
            c, x = coords[inside], X[:, inside]
            gc = g[c - 1]
            logc = total - float(np.sum(la[c - 1]))
            return math.exp(logc) * np.prod(1.0 + gc * kernel_k(x, y0), axis=1)
        return Integrand(f"infinite_product(y0={y0:.6g})", func, exact=Fraction(1),
                         active=None, truncation=J, anchor=a)

    if kind == "tail_series":
        if weights is None:
            raise UsageError("tail_series needs weights")
        eps = float(params.get("eps", 0.1))
        if eps <= 0:
            raise UsageError("tail_series needs eps > 0")
        kaa = float(kernel_k(a, a))
        if isinstance(weights, ProductWeights):
            c, q = float(weights.c), float(weights.q)
            expo = q / 2 + 0.5 + eps
            beta0 = math.sqrt(c)
            total = beta0 * kaa * float(zeta(expo, 1))

            def func(coords, X):
                beta = beta0 * coords.astype(float) ** (-expo)
                s = X.shape[0]
                part = kernel_k(X, a) @ beta if coords.size else np.zeros(s)
                return 1.0 + total - kaa * float(np.sum(beta)) + part
            return Integrand(f"tail_series(eps={eps})", func, exact=Fraction(1),
                             active=None, anchor=a)
        sets = weights.ordered_sets(a)
        order = weights.order
        idx = np.zeros((len(sets), order), dtype=np.int64)
        for r, u in enumerate(sets):
            su = sorted(u)
            idx[r, :len(su)] = su
        sizes = np.array([len(u) for u in sets])
        beta = np.array([math.sqrt(float(weights.table[u])) for u in sets])
        beta *= np.arange(1, len(sets) + 1, dtype=float) ** (-0.5 - eps)
        const_all = float(np.sum(beta * kaa ** sizes))
        rows = {}
        for r, u in enumerate(sets):
            for j in u:
                rows.setdefault(j, []).append(r)
        rows = {j: np.array(r, dtype=np.int64) for j, r in rows.items()}

        def func(coords, X):
            n = X.shape[0]
            if not coords.size:
                return np.full(n, 1.0 + const_all)
            lists = [rows[j] for j in coords.tolist() if j in rows]
            if not lists:
                return np.full(n, 1.0 + const_all)
            touch = np.unique(np.concatenate(lists))
            sub = idx[touch]
            pos_c = np.minimum(np.searchsorted(coords, sub), coords.size - 1)
            hit = (coords[pos_c] == sub) & (sub > 0)
            # column layout: populated values, then k(a,a), then 1 for padding
            col = np.where(hit, pos_c, coords.size)
            col = np.where(sub > 0, col, coords.size + 1)
            bt = beta[touch]
            const = const_all - float(np.sum(bt * kaa ** sizes[touch]))
            K = np.hstack([kernel_k(X, a), np.full((n, 1), kaa), np.ones((n, 1))])
            out = np.empty(n)
            step = max(1, 2_000_000 // max(1, col.shape[0]))
            for s0 in range(0, n, step):
                Ks = K[s0:s0 + step]
                prod = np.ones((Ks.shape[0], col.shape[0]))
                for t in range(order):
                    prod *= Ks[:, col[:, t]]
                out[s0:s0 + step] = prod @ bt
            return 1.0 + const + out
        return Integrand(f"tail_series(eps={eps})", func, exact=Fraction(1),
                         active=set(weights._by_coord), anchor=a)

    raise UsageError(f"unknown integrand kind {kind!r}")


__all__ = [
    "ANCHOR", "TAIL_EPS", "kernel_k", "kernel_ku", "WeightModel", "ProductWeights",
    "TableWeights", "parse_weights", "format_weights", "bias_squared", "r_squared",
    "rtilde_squared", "projection_norm", "projection_norm_squared", "fiw_phi_map",
    "decay_estimate", "decay_counting_estimate", "EvalCounter", "Integrand",
    "anchor_project", "make_integrand",
]
