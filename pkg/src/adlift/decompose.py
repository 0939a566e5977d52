"""Decomposition of minute visits into ad-driven and baseline components.

Visits are modelled as ``z_t ~ Poisson(mu_t + lambda_t)``.  The ad component
is ``mu_t = sum_j theta_j V_{s_j}(t)`` and the baseline is the kernel smooth of
the residual ``z - mu``.  Lifts ``theta`` and the spread parameters are found
by maximum likelihood, alternating between the two blocks.

Because the spread has a cut-off ``d`` and the smoother a half-width ``h``,
ads separated by more than ``2h + d`` minutes never touch the same minute's
rate, so the lift block splits into independent groups.  Within a group the
baseline is linear in ``theta``::

    lambda = smooth(z) - smooth(mu) = lambda0 - B @ theta,   mu = A @ theta

so each likelihood evaluation is two small matrix-vector products.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln, xlogy

from adlift.data import AdSchedule, VisitSeries
from adlift.errors import DomainError, NumericalError
from adlift.optimize import nelder_mead
from adlift.smoothing import SmootherConfig, smooth, window_weight_sums
from adlift.special import chi2_sf
from adlift.spread import (
    DEFAULT_CUTOFF,
    SpreadFamily,
    SpreadSpec,
    spread_integral,
    spread_mean,
    spread_mode,
)

log = logging.getLogger(__name__)

RATE_FLOOR = 1e-8
SNAP = 1e-6


def poisson_logpmf(z, rate):
    """``z ln(rate) - rate - ln(z!)``."""
    rate = np.asarray(rate, dtype=float)
    if np.any(~(rate > 0)):
        raise DomainError("Poisson rate must be positive")
    z = np.asarray(z, dtype=float)
    out = xlogy(z, rate) - rate - gammaln(z + 1.0)
    return float(out) if out.ndim == 0 else out


def aic(avg_loglik: float, n: int, k: int) -> float:
    return 2.0 * k - 2.0 * avg_loglik * n


# --------------------------------------------------------------------------
# spread profiles and groups


def spread_profiles(spec: SpreadSpec, end_times) -> tuple[np.ndarray, np.ndarray]:
    """Cut-off spread profiles for many ads at once.

    Returns ``(first, V)``: ``first[j] = floor(s_j) + 1`` and ``V[j, k]`` is the
    share of ad ``j``'s visits in minute ``first[j] + k``.
    """
    if spec.cutoff is None:
        raise DomainError("decomposition requires a spread cut-off")
    s = np.asarray(end_times, dtype=float)
    d = spec.cutoff
    floor_s = np.floor(s)
    frac = (s - floor_s)[:, None]
    upper = np.arange(1, d + 1, dtype=float)[None, :] - frac
    lower = np.maximum(upper - 1.0, 0.0)
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        vals = spread_integral(spec, lower.ravel(), upper.ravel()).reshape(upper.shape)
        norm = spread_integral(spec, np.zeros(s.size), d - frac[:, 0])
        vals = vals / norm[:, None]
    return floor_s.astype(np.int64) + 1, vals


@dataclass(frozen=True)
class AdGroup:
    """Consecutive ads whose rates can interact, and the minutes they touch.

    ``start:stop`` indexes the schedule; ``lo..hi`` (1-based, inclusive) are
    the minutes whose rate depends on any of the group's lifts.
    """

    start: int
    stop: int
    lo: int
    hi: int

    @property
    def indices(self) -> range:
        return range(self.start, self.stop)

    @property
    def size(self) -> int:
        return self.stop - self.start


def partition_groups(end_times, h: int, d: int, n: int | None = None) -> list[AdGroup]:
    """Split sorted ad end times wherever consecutive ads are more than
    ``2h + d`` minutes apart."""
    s = np.asarray(end_times.end_times if isinstance(end_times, AdSchedule) else end_times, dtype=float)
    if s.size == 0:
        return []
    if np.any(np.diff(s) < 0):
        raise ValueError("ad end times must be sorted")
    breaks = np.flatnonzero(np.diff(s) > 2 * h + d) + 1
    bounds = np.concatenate(([0], breaks, [s.size]))
    groups = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        lo = max(int(math.floor(s[a])) + 1 - h, 1)
        hi = int(math.floor(s[b - 1])) + d + h
        if n is not None:
            hi = min(hi, n)
        groups.append(AdGroup(int(a), int(b), lo, max(hi, lo)))
    return groups


# --------------------------------------------------------------------------
# reference (direct) evaluation of the model


def compute_mu(thetas, end_times, spec: SpreadSpec, window: tuple[int, int]) -> np.ndarray:
    """Ad-driven rate ``mu_t`` for minutes ``window[0]..window[1]``."""
    lo, hi = window
    mu = np.zeros(hi - lo + 1)
    thetas = np.asarray(thetas, dtype=float)
    if thetas.size == 0:
        return mu
    first, V = spread_profiles(spec, end_times)
    for j, theta in enumerate(thetas):
        rows = first[j] + np.arange(V.shape[1]) - lo
        ok = (rows >= 0) & (rows < mu.size)
        mu[rows[ok]] += theta * V[j, ok]
    return mu


def compute_lambda(z, mu, cfg: SmootherConfig, floor: float = RATE_FLOOR) -> np.ndarray:
    """Baseline rate: kernel smooth of ``z - mu``, floored at ``floor``."""
    resid = np.asarray(z, dtype=float) - np.asarray(mu, dtype=float)
    lam = smooth(resid, np.ones(resid.size, dtype=bool), cfg)
    return np.maximum(lam, floor)


def total_loglik_direct(z, end_times, thetas, spec: SpreadSpec, cfg: SmootherConfig) -> float:
    """Full-series log-likelihood computed without group factorization."""
    z = np.asarray(z, dtype=float)
    mu = compute_mu(thetas, end_times, spec, (1, z.size))
    lam = compute_lambda(z, mu, cfg)
    return float(np.sum(poisson_logpmf(z, mu + lam)))


def group_loglik(z, end_times, thetas, spec: SpreadSpec, cfg: SmootherConfig, window: tuple[int, int]) -> float:
    """Log-likelihood of minutes ``window`` with ``mu`` from the given ads and
    ``lambda`` recomputed from ``z - mu`` over the whole series."""
    z = np.asarray(z, dtype=float)
    mu = compute_mu(thetas, end_times, spec, (1, z.size))
    lam = compute_lambda(z, mu, cfg)
    lo, hi = window
    sl = slice(lo - 1, hi)
    return float(np.sum(poisson_logpmf(z[sl], mu[sl] + lam[sl])))


# --------------------------------------------------------------------------
# factorized likelihood


class Problem:
    """Precomputed quantities for one series, schedule and smoother."""

    def __init__(self, counts, end_times, cfg: SmootherConfig, cutoff: int = DEFAULT_CUTOFF, floor: float = RATE_FLOOR):
        self.z = np.asarray(counts, dtype=float)
        self.n = self.z.size
        self.s = np.asarray(end_times, dtype=float)
        if np.any(np.diff(self.s) < 0):
            raise ValueError("ad end times must be sorted")
        self.cfg = cfg
        self.cutoff = int(cutoff)
        self.floor = floor
        self.w = cfg.weights()
        self.den = window_weight_sums(self.n, cfg)
        self.base = smooth(self.z, np.ones(self.n, dtype=bool), cfg)
        self.lgz = gammaln(self.z + 1.0)
        self.groups = partition_groups(self.s, cfg.h, self.cutoff, self.n)
        covered = np.zeros(self.n, dtype=bool)
        for g in self.groups:
            covered[g.lo - 1 : g.hi] = True
        rest = ~covered
        lam = np.maximum(self.base[rest], floor)
        self.remainder_loglik = float(np.sum(xlogy(self.z[rest], lam) - lam - self.lgz[rest]))

    @property
    def m(self) -> int:
        return self.s.size

    def designs(self, spec: SpreadSpec) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per-group ``(A, B)`` with ``mu = A @ theta`` and
        ``smooth(mu) = B @ theta`` on the group window."""
        if spec.cutoff != self.cutoff:
            spec = SpreadSpec(spec.family, spec.alpha, spec.phi, spec.psi, self.cutoff)
        first, V = spread_profiles(spec, self.s)
        h = self.cfg.h
        out = []
        for g in self.groups:
            W = g.hi - g.lo + 1
            A = np.zeros((W, g.size))
            for c, j in enumerate(g.indices):
                rows = first[j] - g.lo + np.arange(self.cutoff)
                ok = rows < W  # rows >= 0 always holds inside the window
                A[rows[ok], c] = V[j, ok]
            B = np.empty_like(A)
            den = self.den[g.lo - 1 : g.hi]
            for c in range(g.size):
                B[:, c] = np.convolve(A[:, c], self.w)[h : h + W] / den
            out.append((A, B))
        return out

    def group_loglik(self, g: AdGroup, design, theta) -> float:
        A, B = design
        sl = slice(g.lo - 1, g.hi)
        lam = np.maximum(self.base[sl] - B @ theta, self.floor)
        rate = A @ theta + lam
        return float(np.sum(xlogy(self.z[sl], rate) - rate - self.lgz[sl]))

    def total_loglik(self, designs, thetas) -> float:
        total = self.remainder_loglik
        for g, des in zip(self.groups, designs):
            total += self.group_loglik(g, des, thetas[g.start : g.stop])
        return total

    def rates(self, spec: SpreadSpec, thetas) -> tuple[np.ndarray, np.ndarray]:
        mu = compute_mu(thetas, self.s, SpreadSpec(spec.family, spec.alpha, spec.phi, spec.psi, self.cutoff), (1, self.n))
        lam = compute_lambda(self.z, mu, self.cfg, self.floor)
        return mu, lam

    def initial_thetas(self) -> np.ndarray:
        """Excess of visits over the plain smooth in each ad's window, shared
        equally between ads whose windows overlap."""
        thetas = np.zeros(self.m)
        if self.m == 0:
            return thetas
        excess = np.maximum(self.z - self.base, 0.0)
        first = np.floor(self.s).astype(np.int64) + 1
        cover = np.zeros(self.n + self.cutoff + 2)
        for f in first:
            cover[f : f + self.cutoff] += 1
        for j, f in enumerate(first):
            lo, hi = f, min(f + self.cutoff - 1, self.n)
            if hi >= lo:
                thetas[j] = float(np.sum(excess[lo - 1 : hi] / cover[lo : hi + 1]))
        return thetas


def snap(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return np.where(theta >= SNAP, theta, 0.0)


def fit_group_thetas(problem: Problem, g: AdGroup, design, init, ftol: float = 1e-9) -> tuple[np.ndarray, bool]:
    """Maximize one group's likelihood over its lifts (``theta >= 0``).

    Values below the snap threshold, including any negative trial point, are
    evaluated as exactly zero, so a lift resting on the boundary comes back
    as 0.
    """
    init = snap(init)
    step = np.maximum(0.5 * init, 10.0)

    def objective(x):
        return -problem.group_loglik(g, design, snap(x))

    res = nelder_mead(objective, init, step, ftol=ftol, max_evals=500 * init.size)
    return snap(res.x), res.converged


def _log_params(spec: SpreadSpec) -> np.ndarray:
    return np.log(spec.free_vector())


def fit_spread_params(problem: Problem, thetas, spec: SpreadSpec, ftol: float = 1e-9) -> tuple[SpreadSpec, bool]:
    """Maximize the total likelihood over the family's free spread
    parameters (on log scale) with lifts held fixed."""
    thetas = np.asarray(thetas, dtype=float)

    def objective(x):
        with np.errstate(all="ignore"):
            vals = np.exp(x)
            if not np.all(np.isfinite(vals)) or np.any(vals <= 0) or np.any(vals > 1e6):
                return math.inf
            try:
                cand = spec.with_free(vals)
                designs = problem.designs(cand)
            except (DomainError, ValueError, FloatingPointError):
                return math.inf
            if any(not np.all(np.isfinite(A)) for A, _ in designs):
                return math.inf
            return -problem.total_loglik(designs, thetas)

    x0 = _log_params(spec)
    res = nelder_mead(objective, x0, 0.2, ftol=ftol, max_evals=500 * x0.size)
    return spec.with_free(np.exp(res.x)), res.converged


# --------------------------------------------------------------------------
# full fit


@dataclass(frozen=True)
class FitOptions:
    cutoff: int = DEFAULT_CUTOFF
    max_outer: int = 50
    rel_tol: float = 1e-8
    floor: float = RATE_FLOOR
    theta_ftol: float = 1e-9
    spread_ftol: float = 1e-9


@dataclass
class DecompositionFit:
    spec: SpreadSpec
    thetas: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    loglik: float
    n: int
    k: int
    iterations: int
    converged: bool
    history: list[float] = field(default_factory=list)
    n_groups: int = 0
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    warnings: list[str] = field(default_factory=list)

    @property
    def avg_loglik(self) -> float:
        return self.loglik / self.n

    @property
    def aic(self) -> float:
        return 2.0 * self.k - 2.0 * self.loglik

    @property
    def m(self) -> int:
        return int(self.thetas.size)

    def summary(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "mean": spread_mean(self.spec),
            "mode": spread_mode(self.spec),
            "loglik": self.loglik,
            "avg_loglik": self.avg_loglik,
            "n": self.n,
            "m": self.m,
            "k": self.k,
            "aic": self.aic,
            "iterations": self.iterations,
            "converged": self.converged,
            "groups": self.n_groups,
            "zero_thetas": int(np.sum(self.thetas == 0)),
            "smoother": {"kernel": self.smoother.kernel.value, "h": self.smoother.h},
            "loglik_history": list(self.history),
            "warnings": list(self.warnings),
        }


def fit(
    series,
    ads,
    cfg: SmootherConfig = SmootherConfig(),
    family=SpreadFamily.WEIBULL,
    options: FitOptions = FitOptions(),
    init_spec: SpreadSpec | None = None,
    init_thetas=None,
) -> DecompositionFit:
    """Joint maximum-likelihood fit of lifts and spread parameters.

    Alternates a lift step (each group separately, spread fixed) with a
    spread step (lifts fixed) until the relative gain in total
    log-likelihood over one round drops below ``options.rel_tol`` or
    ``options.max_outer`` rounds have run.
    """
    counts = series.counts if isinstance(series, VisitSeries) else series
    end_times = ads.end_times if isinstance(ads, AdSchedule) else np.asarray(ads, dtype=float)
    family = SpreadFamily(family)
    problem = Problem(counts, end_times, cfg, options.cutoff, options.floor)
    if init_spec is None:
        spec = SpreadSpec.initial(family, options.cutoff)
    else:
        spec = SpreadSpec(init_spec.family, init_spec.alpha, init_spec.phi, init_spec.psi, options.cutoff).recast(family)
    k = family.n_free + problem.m
    warnings: list[str] = []

    if problem.m == 0:
        lam = np.maximum(problem.base, options.floor)
        ll = float(np.sum(xlogy(problem.z, lam) - lam - problem.lgz))
        return DecompositionFit(spec, np.zeros(0), np.zeros(problem.n), lam, ll, problem.n, k, 0, True, [ll], 0, cfg, warnings)

    thetas = snap(problem.initial_thetas() if init_thetas is None else np.asarray(init_thetas, dtype=float))
    designs = problem.designs(spec)
    ll = problem.total_loglik(designs, thetas)
    history = [ll]
    converged = False
    it = 0
    unconverged_groups = 0
    for it in range(1, options.max_outer + 1):
        prev = ll
        unconverged_groups = 0
        new = thetas.copy()
        for g, des in zip(problem.groups, designs):
            t, ok = fit_group_thetas(problem, g, des, thetas[g.start : g.stop], options.theta_ftol)
            new[g.start : g.stop] = t
            unconverged_groups += not ok
        thetas = new
        history.append(problem.total_loglik(designs, thetas))

        spec, ok = fit_spread_params(problem, thetas, spec, options.spread_ftol)
        if not ok:
            warnings.append(f"round {it}: spread step hit its evaluation limit")
        designs = problem.designs(spec)
        ll = problem.total_loglik(designs, thetas)
        history.append(ll)
        if not math.isfinite(ll):
            raise NumericalError("log-likelihood became non-finite")
        log.debug("round %d: loglik %.6f spec %s", it, ll, spec)
        if (ll - prev) <= options.rel_tol * abs(prev):
            converged = True
            break
    if unconverged_groups:
        warnings.append(f"{unconverged_groups} lift group(s) hit the evaluation limit in the last round")

    mu, lam = problem.rates(spec, thetas)
    return DecompositionFit(spec, thetas, mu, lam, ll, problem.n, k, it, converged, history, len(problem.groups), cfg, warnings)


# --------------------------------------------------------------------------
# model comparison


@dataclass(frozen=True)
class WilksResult:
    statistic: float
    df: int
    p_value: float
    suspicious: bool


def wilks_from_loglik(l_restricted: float, l_full: float, df: int) -> WilksResult:
    """Likelihood-ratio test of a nested restriction.

    A full-model likelihood below the restricted one (beyond ``1e-6`` of its
    magnitude) means the larger fit failed to reach the nested optimum; the
    statistic is floored at zero and the result flagged.
    """
    if df < 1:
        raise ValueError("df must be positive")
    diff = l_full - l_restricted
    suspicious = diff < -1e-6 * abs(l_full)
    stat = max(2.0 * diff, 0.0)
    return WilksResult(stat, df, chi2_sf(stat, df), suspicious)


def wilks_test(fit_restricted: DecompositionFit, fit_full: DecompositionFit, df: int | None = None) -> WilksResult:
    if df is None:
        df = fit_full.spec.family.n_free - fit_restricted.spec.family.n_free
    return wilks_from_loglik(fit_restricted.loglik, fit_full.loglik, df)


@dataclass(frozen=True)
class ComparisonRow:
    family: SpreadFamily
    alpha: float
    phi: float
    psi: float
    mean: float
    mode: float
    avg_loglik: float
    aic: float
    wilks_p: float | None

    COLUMNS = ("family", "alpha", "phi", "psi", "mean", "mode", "avg_loglik", "aic", "wilks_p")

    def as_row(self) -> tuple:
        return (
            self.family.value, repr(self.alpha), repr(self.phi), repr(self.psi),
            repr(self.mean), repr(self.mode), repr(self.avg_loglik), repr(self.aic),
            "" if self.wilks_p is None else repr(self.wilks_p),
        )


def compare_models(fits: dict) -> list[ComparisonRow]:
    """One row per fitted family; Wilks p-values are against the
    generalized gamma fit when present."""
    fits = {SpreadFamily(k): v for k, v in fits.items()}
    full = fits.get(SpreadFamily.GENGAMMA)
    rows = []
    for fam in SpreadFamily:
        if fam not in fits:
            continue
        f = fits[fam]
        p = None
        if full is not None and fam is not SpreadFamily.GENGAMMA:
            p = wilks_test(f, full).p_value
        rows.append(ComparisonRow(fam, f.spec.alpha, f.spec.phi, f.spec.psi, spread_mean(f.spec),
                                  spread_mode(f.spec), f.avg_loglik, f.aic, p))
    return rows


def fit_families(
    series,
    ads,
    cfg: SmootherConfig = SmootherConfig(),
    families: Sequence = tuple(SpreadFamily),
    options: FitOptions = FitOptions(),
) -> dict:
    """Fit several spread families, warm-starting richer families from the
    best fitted family they nest."""
    wanted = [SpreadFamily(f) for f in families]
    fits: dict = {}
    for fam in SpreadFamily:  # nesting order
        if fam not in wanted and not (fam is SpreadFamily.EXPONENTIAL and len(wanted) > 1):
            continue
        nested = [fits[f] for f in fits if set(f.free_params) < set(fam.free_params)]
        if nested:
            start = max(nested, key=lambda f: f.loglik)
            fits[fam] = fit(series, ads, cfg, fam, options, start.spec, start.thetas)
        else:
            fits[fam] = fit(series, ads, cfg, fam, options)
    return {f: fits[f] for f in SpreadFamily if f in wanted}
