"""Kernel smoothing of minute counts and kernel/bandwidth selection.

The smoother is a local weighted average with weights ``K(k / (h + 1))`` for
lags ``k = -h..h``.  Lags that fall outside the series or on unavailable
minutes are dropped and the remaining weights renormalized.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln, xlogy

from adlift.errors import DomainError


class KernelId(str, Enum):
    TRIANGULAR = "triangular"
    EPANECHNIKOV = "epanechnikov"
    QUARTIC = "quartic"
    TRIWEIGHT = "triweight"
    TRICUBE = "tricube"


KERNELS: tuple[KernelId, ...] = tuple(KernelId)

_KERNEL_FUNCS = {
    KernelId.TRIANGULAR: lambda u: 1.0 - np.abs(u),
    KernelId.EPANECHNIKOV: lambda u: 0.75 * (1.0 - u**2),
    KernelId.QUARTIC: lambda u: 15.0 / 16.0 * (1.0 - u**2) ** 2,
    KernelId.TRIWEIGHT: lambda u: 35.0 / 32.0 * (1.0 - u**2) ** 3,
    KernelId.TRICUBE: lambda u: 70.0 / 81.0 * (1.0 - np.abs(u) ** 3) ** 3,
}


def kernel_value(kernel, u):
    u = np.asarray(u, dtype=float)
    if np.any(np.abs(u) > 1.0):
        raise DomainError("kernel argument must lie in [-1, 1]")
    out = _KERNEL_FUNCS[KernelId(kernel)](u)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SmootherConfig:
    kernel: KernelId = KernelId.TRIANGULAR
    h: int = 8

    def __post_init__(self):
        object.__setattr__(self, "kernel", KernelId(self.kernel))
        if int(self.h) != self.h or self.h < 1:
            raise DomainError("bandwidth must be a positive integer")
        object.__setattr__(self, "h", int(self.h))

    def weights(self) -> np.ndarray:
        """Kernel weights for lags ``-h..h``."""
        k = np.arange(-self.h, self.h + 1)
        return kernel_value(self.kernel, k / (self.h + 1.0))


def _window_sum(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    h = (w.size - 1) // 2
    return np.convolve(x, w)[h : h + x.size]


def smooth(values, available, cfg: SmootherConfig) -> np.ndarray:
    """Kernel-weighted local average; NaN where no available point is in
    the window."""
    v = np.asarray(values, dtype=float)
    avail = np.asarray(available, dtype=bool)
    if v.shape != avail.shape:
        raise ValueError("values and availability must have equal length")
    w = cfg.weights()
    a = avail.astype(float)
    num = _window_sum(np.where(avail, v, 0.0), w)
    den = _window_sum(a, w)
    out = np.full(v.size, np.nan)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def window_weight_sums(n: int, cfg: SmootherConfig) -> np.ndarray:
    """Denominators of the smoother for a fully available series of length n."""
    return _window_sum(np.ones(n), cfg.weights())


def poisson_loglik_terms(observed, rates) -> np.ndarray:
    y = np.asarray(observed, dtype=float)
    lam = np.asarray(rates, dtype=float)
    return xlogy(y, lam) - lam - gammaln(y + 1.0)


def poisson_avg_loglik(observed, rates, subset=None) -> float:
    """Average Poisson log-likelihood of ``observed`` over ``subset``
    (indices or boolean mask; all points when omitted)."""
    y = np.asarray(observed, dtype=float)
    lam = np.asarray(rates, dtype=float)
    if subset is not None:
        y, lam = y[subset], lam[subset]
    if y.size == 0:
        raise ValueError("empty subset")
    if np.any(~(lam > 0)):
        raise DomainError("Poisson rates must be positive")
    return float(np.mean(poisson_loglik_terms(y, lam)))


@dataclass(frozen=True)
class CvCell:
    kernel: KernelId
    h: int
    mean_loglik: float
    mean_mse: float
    se_loglik: float
    n_valid: int

    @property
    def valid(self) -> bool:
        return self.n_valid > 0


@dataclass(frozen=True)
class CvReport:
    cells: tuple[CvCell, ...]
    repeats: int
    best: SmootherConfig
    notes: tuple[str, ...] = field(default_factory=tuple)

    def scores(self, kernel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(h, mean_loglik, se_loglik)`` arrays for one kernel, sorted by h."""
        rows = sorted((c for c in self.cells if c.kernel == KernelId(kernel)), key=lambda c: c.h)
        return (
            np.array([c.h for c in rows]),
            np.array([c.mean_loglik for c in rows]),
            np.array([c.se_loglik for c in rows]),
        )

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("kernel", "h", "mean_loglik", "mean_mse"))
            for c in self.cells:
                w.writerow((c.kernel.value, c.h, repr(c.mean_loglik), repr(c.mean_mse)))


def default_grid(kernels: Iterable = KERNELS, h_range: Iterable[int] = range(1, 61)) -> list[SmootherConfig]:
    return [SmootherConfig(k, h) for k in kernels for h in h_range]


def select_bandwidth(
    counts,
    mask=None,
    grid: Sequence[SmootherConfig] | None = None,
    repeats: int = 1000,
    seed: int = 0,
) -> CvReport:
    """Pick the kernel and bandwidth by repeated 2-fold cross-validation.

    Each repeat splits the minutes not excluded by ``mask`` into random
    halves; the training half is smoothed to predict the validation half,
    scored by average Poisson log-likelihood (higher is better) and MSE.
    Validation minutes with no training point in their window are skipped.
    """
    y = np.asarray(counts, dtype=float)
    if hasattr(counts, "counts"):
        y = np.asarray(counts.counts, dtype=float)
    n = y.size
    grid = list(grid) if grid is not None else default_grid()
    if not grid:
        raise ValueError("grid must be non-empty")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    excluded = np.zeros(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    candidates = np.flatnonzero(~excluded)
    lgam = gammaln(y + 1.0)

    scores = np.full((repeats, len(grid)), np.nan)
    mses = np.full((repeats, len(grid)), np.nan)
    seeds = np.random.SeedSequence(seed).spawn(repeats)
    for r in range(repeats):
        rng = np.random.default_rng(seeds[r])
        perm = rng.permutation(candidates)
        half = perm.size // 2
        train = np.zeros(n, dtype=bool)
        train[perm[:half]] = True
        val = np.sort(perm[half:])
        for g, cfg in enumerate(grid):
            lam = smooth(y, train, cfg)[val]
            ok = lam > 0  # NaN compares False
            if not ok.any():
                continue
            yv, lv = y[val][ok], lam[ok]
            scores[r, g] = np.mean(xlogy(yv, lv) - lv - lgam[val][ok])
            mses[r, g] = np.mean((yv - lv) ** 2)

    cells = []
    for g, cfg in enumerate(grid):
        col = scores[:, g]
        good = ~np.isnan(col)
        k = int(good.sum())
        if k:
            mean = float(np.mean(col[good]))
            se = float(np.std(col[good], ddof=1) / np.sqrt(k)) if k > 1 else 0.0
            mse = float(np.mean(mses[good, g]))
        else:
            mean, se, mse = float("-inf"), float("nan"), float("nan")
        cells.append(CvCell(cfg.kernel, cfg.h, mean, mse, se, k))

    valid = [i for i, c in enumerate(cells) if c.valid]
    if not valid:
        raise DomainError("no grid cell produced a usable validation score")
    order = {k: i for i, k in reversed(list(enumerate(c.kernel for c in cells)))}
    best_i = min(valid, key=lambda i: (-cells[i].mean_loglik, cells[i].h, order[cells[i].kernel]))
    best = SmootherConfig(cells[best_i].kernel, cells[best_i].h)
    notes = ("cross-validation splits are uniform random halves, not stratified by time of day",)
    return CvReport(tuple(cells), repeats, best, notes)
