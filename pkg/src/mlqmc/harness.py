"""Convergence experiments, slope fitting and predicted rate exponents.

Errors are measured as the RMSE of the estimator against the exact integral
of a fixed library integrand. This lower-bounds the worst-case error over
the unit ball, so fitted slopes are compared with the predicted exponents
rather than the constants.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from .exceptions import UsageError
from .multilevel import (
    COST_CONVENTION,
    RuleCache,
    _pow_floor,
    allocate_samples,
    build_schedule,
    levels_for_budget,
    mc_baseline,
    ml_estimate,
    single_level_estimate,
    single_level_size,
)
from .space import ProductWeights, TableWeights, WeightModel, decay_estimate, make_integrand, parse_weights

CSV_COLUMNS = ["budget", "realized_cost", "rmse", "stderr", "replications", "m", "levels"]
KEY_DERIVATION = ("philox4x64-10 key=(seed, level) counter=(replication, coordinate|salt<<32, "
                  "digit level, digit prefix)")
SAMPLE_ROUNDING = "n_k rounded down to powers of b, then cumulative minimum, n_k >= b"


# ------------------------------------------------------------ exponents


def _exact(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(str(x))


@dataclass(frozen=True)
class Exponent:
    """Predicted exponents of e^2 as a power of the cost N.

    ``upper`` is the achievable rate with delta dropped, ``lower`` the
    matching lower bound, and ``sharp`` is True when they coincide.
    """

    upper: Fraction
    lower: Fraction
    regime: str

    @property
    def sharp(self) -> bool:
        return self.upper == self.lower


def predicted_exponent(weights: str, decay, alpha, s, model: str) -> Exponent:
    """Predicted e^2 exponents for a weight class and cost model.

    Args:
        weights: "product" or "fiw" (finite-intersection).
        decay: decay of the sorted weights, above 1.
        alpha: exponent of the one-dimensional error e_N^2 = N^(-alpha).
        s: cost exponent of the cost function nu^s.
        model: "variable" (multilevel) or "fixed" (single subspace).

    Returns:
        Exponent with exact rational values.
    """
    if weights not in ("product", "fiw"):
        raise UsageError("weights class is 'product' or 'fiw'")
    if model not in ("variable", "fixed"):
        raise UsageError("model is 'variable' or 'fixed'")
    p, a, s = _exact(decay), _exact(alpha), _exact(s)
    if p <= 1:
        raise UsageError("decay must exceed 1")
    if a <= 0 or s <= 0:
        raise UsageError("alpha and s must be positive")
    if model == "fixed":
        e = -a * (p - 1) / (a * s + p - 1)
        return Exponent(e, e, "fixed subspace")
    lower = -min(a, (p - 1) / s)
    if weights == "fiw" or s >= (a - 1) / a:
        if p >= 1 + a * s:
            return Exponent(-a, lower, "decay >= 1 + alpha s")
        return Exponent(-(p - 1) / s, lower, "1 + alpha s > decay > 1")
    # product weights with s < (alpha - 1) / alpha
    if p >= a:
        return Exponent(-a, lower, "small s, decay >= alpha")
    if p > 1 / (1 - s):
        return Exponent(-p, lower, "small s, alpha > decay > 1/(1-s)")
    return Exponent(-(p - 1) / s, lower, "small s, 1/(1-s) >= decay > 1")


# ---------------------------------------------------------- slope fitting


def fit_slope(points, level: float = 0.95):
    """Least-squares slope of log rmse against log N.

    Args:
        points: at least four (N, rmse) pairs, all positive.
        level: two-sided confidence level of the half-width.

    Returns:
        (slope, halfwidth) where the half-width is the Student t quantile
        times the slope's standard error from the residuals.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 4:
        raise UsageError("fit_slope needs at least four (N, rmse) pairs")
    if not np.all(np.isfinite(pts)) or np.any(pts <= 0):
        raise UsageError("fit_slope needs positive finite values")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    res = stats.linregress(x, y)
    dof = len(x) - 2
    half = float(stats.t.ppf(0.5 + level / 2, dof) * res.stderr)
    return float(res.slope), half


# ----------------------------------------------------------------- config


_INT_KEYS = {"replications", "seed", "L", "b", "subspace", "workers", "depth", "rep"}
_FLOAT_KEYS = {"s", "delta", "alpha", "decay", "kappa", "A"}
_BOOL_KEYS = {"build_rules", "allow_small"}
# keys that change how an experiment runs but not its numbers; kept out of the CSV
_EXECUTION_KEYS = {"workers", "out", "cache_dir", "build_rules"}
_KNOWN = _INT_KEYS | _FLOAT_KEYS | _BOOL_KEYS | {
    "weights", "weights_file", "integrand", "estimator", "budgets", "out", "cache_dir", "cbc_mode"}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"bad boolean {text!r}")


def _parse_budgets(text: str) -> list:
    t = text.strip()
    if t.startswith("geometric"):
        parts = t[len("geometric"):].lstrip(":").replace(",", " ").split()
        if len(parts) != 3:
            raise UsageError("budgets are written 'geometric:start,ratio,count'")
        start, ratio, count = float(parts[0]), float(parts[1]), int(parts[2])
        return [start * ratio**k for k in range(count)]
    return [float(v) for v in t.replace(",", " ").split()]


def _convert(key: str, val: str):
    if key in _INT_KEYS:
        return int(val)
    if key in _FLOAT_KEYS:
        return float(val)
    if key in _BOOL_KEYS:
        return _parse_bool(val)
    if key == "budgets":
        return _parse_budgets(val)
    return val


@dataclass
class ExperimentConfig:
    """One convergence experiment.

    Flat ``key = value`` text; integrand parameters use an ``integrand.``
    prefix, e.g. ``integrand.eps = 0.1``.
    """

    weights: str = "product:1,3"
    integrand: str = "tail_series"
    integrand_params: dict = field(default_factory=dict)
    s: float = 1.0
    estimator: str = "ml"
    budgets: list = field(default_factory=lambda: [4.0**k * 256 for k in range(6)])
    replications: int = 100
    seed: int = 0
    delta: float = 0.1
    alpha: float = 3.0
    decay: Optional[float] = None
    kappa: float = 16.0
    L: int = 1
    A: float = 2.0
    b: int = 2
    subspace: Optional[int] = None
    workers: int = 1
    depth: int = 32
    rep: int = 0
    cache_dir: Optional[str] = None
    build_rules: bool = True
    cbc_mode: str = "float"
    allow_small: bool = False
    out: Optional[str] = None
    weights_file: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.estimator not in ("ml", "single", "mc"):
            raise UsageError("estimator is 'ml', 'single' or 'mc'")
        b = list(self.budgets)
        if not b or any(x <= 0 for x in b):
            raise UsageError("budgets must be positive")
        if any(y <= x for x, y in zip(b, b[1:])):
            raise UsageError("budget grid must be strictly increasing")
        if not self.allow_small:
            if len(b) < 4:
                raise UsageError("budget grid needs at least four entries")
            if self.replications < 100:
                raise UsageError("slope experiments need at least 100 replications")
        if self.replications < 2:
            raise UsageError("need at least two replications")
        if self.s <= 0 or self.workers < 1:
            raise UsageError("need s > 0 and workers >= 1")
        if self.cbc_mode not in ("float", "exact"):
            raise UsageError("cbc_mode is 'float' or 'exact'")

    @classmethod
    def from_text(cls, text: str, base: Optional[Path] = None) -> "ExperimentConfig":
        kw, params = {}, {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"bad config line {raw!r}")
            key, val = (t.strip() for t in line.split("=", 1))
            if key.startswith("integrand."):
                params[key[len("integrand."):]] = val
            elif key not in _KNOWN:
                raise UsageError(f"unknown config key {key!r}")
            else:
                try:
                    kw[key] = _convert(key, val)
                except ValueError as exc:
                    if isinstance(exc, UsageError):
                        raise
                    raise UsageError(f"bad value for {key}: {val!r}") from exc
        if "weights_file" in kw and base is not None:
            kw["weights_file"] = str((base / kw["weights_file"]).resolve())
        try:
            return cls(integrand_params=params, **kw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, UsageError):
                raise
            raise UsageError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, base=path.parent)

    def to_text(self) -> str:
        lines = []
        for key in ("weights", "weights_file", "integrand", "s", "estimator", "replications", "seed",
                    "delta", "alpha", "decay", "kappa", "L", "A", "b", "subspace", "workers", "depth",
                    "rep", "cache_dir", "build_rules", "cbc_mode", "allow_small", "out"):
            val = getattr(self, key)
            if val is not None:
                lines.append(f"{key} = {val}")
        lines.append("budgets = " + ", ".join(repr(float(x)) for x in self.budgets))
        for k in sorted(self.integrand_params):
            lines.append(f"integrand.{k} = {self.integrand_params[k]}")
        return "\n".join(lines) + "\n"

    # -- derived objects

    def make_weights(self) -> WeightModel:
        if self.weights_file:
            try:
                return parse_weights(Path(self.weights_file).read_text())
            except OSError as exc:
                raise UsageError(f"cannot read weights {self.weights_file}: {exc}") from exc
        return parse_weights(self.weights)

    def make_integrand(self, weights: WeightModel):
        params = {}
        for k, v in self.integrand_params.items():
            if k in ("v", "u"):
                params[k] = [int(t) for t in v.replace(",", " ").split()]
            elif k == "y":
                params[k] = [float(t) for t in v.replace(",", " ").split()]
            else:
                params[k] = float(v)
        return make_integrand(self.integrand, weights, **params)


# ----------------------------------------------------------------- report


@dataclass
class BudgetRow:
    budget: float
    realized_cost: float
    rmse: float
    stderr: float
    replications: int
    m: int
    levels: str


@dataclass
class RateReport:
    """Per-budget statistics, fitted slope and predicted exponent."""

    rows: list
    slope: float
    halfwidth: float
    predicted_rmse: Optional[float]
    regime: str
    metadata: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k in sorted(self.metadata):
            buf.write(f"# {k}: {self.metadata[k]}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([repr(float(r.budget)), repr(float(r.realized_cost)), repr(float(r.rmse)),
                        repr(float(r.stderr)), r.replications, r.m, r.levels])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "RateReport":
        meta, body = {}, []
        for line in text.splitlines():
            if line.startswith("# "):
                k, _, v = line[2:].partition(": ")
                meta[k] = v
            elif line.strip():
                body.append(line)
        reader = csv.reader(body)
        header = next(reader, None)
        if header != CSV_COLUMNS:
            raise UsageError(f"unexpected CSV header {header}")
        rows = [BudgetRow(float(a), float(c), float(r), float(e), int(n), int(m), lv)
                for a, c, r, e, n, m, lv in reader]
        pred = meta.get("predicted_rmse_slope", "none")
        return cls(rows, float(meta["slope"]), float(meta["halfwidth"]),
                   None if pred == "none" else float(pred), meta.get("regime", ""), meta)


# ------------------------------------------------------------- experiment


def _weights_class(w: WeightModel) -> str:
    return "product" if isinstance(w, ProductWeights) else "fiw"


def _single_subspace(w: WeightModel, L1: int) -> tuple:
    """Coordinates and rule layout of the fixed subspace of size about L1."""
    if isinstance(w, ProductWeights):
        return list(range(1, L1 + 1)), "identity"
    order = w.ordered_sets()
    cover = set()
    for u in order[: min(L1, len(order))]:
        cover |= u
    return sorted(cover), ("phi" if w.table_kind == "fi" else "sorted")


def _plan(cfg: ExperimentConfig, S: float, weights: WeightModel, decay: float, f):
    """Deterministic per-budget plan: a callable per replication plus bookkeeping."""
    if cfg.estimator == "ml":
        m = levels_for_budget(S, cfg.L, cfg.A, cfg.s, cfg.alpha, cfg.delta, decay, cfg.kappa)
        mode = "prefix" if isinstance(weights, ProductWeights) else "union_sets"
        sch = build_schedule(weights, mode, cfg.L, cfg.A, m, cfg.s, cfg.alpha, cfg.delta, decay, cfg.b)
        allocate_samples(sch, S)
        levels = ";".join(f"{len(v)}x{n}" for v, n in zip(sch.sets, sch.n))
        return m, levels, sch.cost(), sch, lambda r, cache: ml_estimate(
            f, sch, weights, cfg.seed, r, cache, cfg.depth).value
    if cfg.subspace is not None:
        v, layout = list(range(1, cfg.subspace + 1)), "identity"
        if not isinstance(weights, ProductWeights):
            layout = "sorted"
    else:
        L1 = single_level_size(S, cfg.s, cfg.alpha, cfg.delta, decay, cfg.kappa)
        v, layout = _single_subspace(weights, L1)
    unit = float(len(v)) ** cfg.s
    if cfg.estimator == "single":
        n = max(cfg.b, _pow_floor(S / unit, cfg.b))
        run = lambda r, cache: single_level_estimate(  # noqa: E731
            f, v, n, weights, cfg.seed, r, cfg.s, cfg.b, cache, layout, cfg.depth).value
    else:
        n = max(1, int(S // unit))
        run = lambda r, cache: mc_baseline(f, v, n, cfg.seed, r, cfg.s).value  # noqa: E731
    return 1, f"{len(v)}x{n}", n * unit, None, run


def run_experiment(cfg: ExperimentConfig, cache: Optional[RuleCache] = None) -> RateReport:
    """Run every budget of the config and fit the RMSE slope.

    Replications run on ``cfg.workers`` threads; each replication's
    randomness is a pure function of (seed, replication), and results are
    reduced in replication order, so the report does not depend on the
    thread count.
    """
    cfg.validate()
    weights = cfg.make_weights()
    f = cfg.make_integrand(weights)
    if f.exact is None:
        raise UsageError("experiments need an integrand with a known integral")
    exact = float(f.exact)
    decay = cfg.decay if cfg.decay is not None else decay_estimate(weights)
    if cache is None:
        cache = RuleCache(cfg.cache_dir, mode=cfg.cbc_mode, build=cfg.build_rules)
    rows, truncations = [], []
    for S in cfg.budgets:
        m, levels, cost, sch, run = _plan(cfg, S, weights, decay, f)
        reps = range(cfg.replications)
        if cfg.workers > 1:
            with ThreadPoolExecutor(cfg.workers) as ex:
                est = list(ex.map(lambda r: run(r, cache), reps))
        else:
            est = [run(r, cache) for r in reps]
        sq = (np.asarray(est, dtype=float) - exact) ** 2
        mse = float(np.mean(sq))
        rmse = math.sqrt(mse)
        # delta method: se(rmse) = se(mse) / (2 rmse)
        se = float(np.std(sq, ddof=1) / math.sqrt(len(sq)) / (2 * rmse)) if rmse > 0 else 0.0
        rows.append(BudgetRow(float(S), float(cost), rmse, se, cfg.replications, m, levels))
        if sch is not None:
            truncations.append(str(sch.L_k[-1]))
    slope, half = fit_slope([(r.realized_cost, r.rmse) for r in rows]) if len(rows) >= 4 else (
        float("nan"), float("nan"))
    if cfg.estimator == "mc":
        pred, regime = Fraction(-1), "monte carlo"
    else:
        model = "variable" if cfg.estimator == "ml" else "fixed"
        e = predicted_exponent(_weights_class(weights), _exact(round(decay, 12)), cfg.alpha, cfg.s, model)
        pred, regime = e.upper, e.regime + (" (sharp)" if e.sharp else "")
    meta = {
        "config": "; ".join(ln for ln in cfg.to_text().splitlines() if ln.split(" =")[0] not in _EXECUTION_KEYS),
        "integrand": f.name,
        "exact": repr(exact),
        "decay": repr(float(decay)),
        "slope": repr(slope),
        "halfwidth": repr(half),
        "predicted_e2_exponent": str(pred),
        "predicted_rmse_slope": repr(float(pred) / 2),
        "regime": regime,
        "truncations": f"integrand={f.truncation}"
                       + ("; top level L_m=" + ",".join(truncations) if truncations else ""),
        "rounding": f"cbc={cfg.cbc_mode}; {SAMPLE_ROUNDING}",
        "key_derivation": KEY_DERIVATION,
        "cost_convention": COST_CONVENTION,
    }
    report = RateReport(rows, slope, half, float(pred) / 2, regime, meta)
    if cfg.out:
        report.write_csv(cfg.out)
    return report


def integrate_once(cfg: ExperimentConfig, cache: Optional[RuleCache] = None) -> tuple:
    """One estimate at the first budget and replication ``cfg.rep``: (value, cost, levels)."""
    weights = cfg.make_weights()
    f = cfg.make_integrand(weights)
    decay = cfg.decay if cfg.decay is not None else decay_estimate(weights)
    if cache is None:
        cache = RuleCache(cfg.cache_dir, mode=cfg.cbc_mode, build=cfg.build_rules)
    _, levels, cost, _, run = _plan(cfg, cfg.budgets[0], weights, decay, f)
    return run(cfg.rep, cache), cost, levels


__all__ = [
    "Exponent", "predicted_exponent", "fit_slope", "ExperimentConfig", "BudgetRow", "RateReport",
    "run_experiment", "integrate_once", "CSV_COLUMNS",
]
