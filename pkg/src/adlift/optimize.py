"""Nelder-Mead downhill simplex minimization.

Reflection 1, expansion 2, contraction 0.5, shrink 0.5.  After the simplex
collapses, each coordinate of the best vertex is perturbed in both
directions; if either perturbation improves the objective the search is
restarted there (O'Neill's local-minimum check).  That check is what lets the
search leave a flat plateau, such as the clamped region of a bounded
parameter, that the simplex has settled on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    converged: bool
    n_evals: int
    n_restarts: int


def nelder_mead(
    f: Callable[[np.ndarray], float],
    x0,
    step,
    ftol: float = 1e-9,
    max_evals: int | None = None,
    check_delta: float = 1e-3,
    max_restarts: int = 10,
) -> MinimizeResult:
    x0 = np.asarray(x0, dtype=float).copy()
    dim = x0.size
    step = np.broadcast_to(np.asarray(step, dtype=float), (dim,)).copy()
    if max_evals is None:
        max_evals = 500 * dim
    evals = 0

    def fun(x):
        nonlocal evals
        evals += 1
        v = float(f(x))
        return v if not math.isnan(v) else math.inf

    best_x, best_f = x0, fun(x0)
    restarts = 0
    converged = False
    start_step = step
    while True:
        xs, fs, converged = _simplex_search(fun, best_x, best_f, start_step, ftol, lambda: evals < max_evals)
        best_x, best_f = xs, fs
        if not converged or restarts >= max_restarts:
            break
        # local check around the collapsed simplex
        improved = None
        delta = np.abs(step) * check_delta
        for i in range(dim):
            for sign in (1.0, -1.0):
                if evals >= max_evals:
                    break
                trial = best_x.copy()
                trial[i] += sign * delta[i]
                ft = fun(trial)
                if ft < best_f - ftol:
                    improved = (trial, ft, i, sign)
                    break
            if improved is not None:
                break
        if improved is None:
            break
        best_x, best_f, i, sign = improved
        start_step = delta * 10.0
        start_step[i] *= sign
        restarts += 1
    return MinimizeResult(best_x, best_f, converged, evals, restarts)


def _simplex_search(fun, x0, f0, step, ftol, budget_left):
    dim = x0.size
    pts = np.empty((dim + 1, dim))
    vals = np.empty(dim + 1)
    pts[0], vals[0] = x0, f0
    for i in range(dim):
        p = x0.copy()
        p[i] += step[i] if step[i] != 0 else 1e-4
        pts[i + 1], vals[i + 1] = p, fun(p)

    while True:
        order = np.argsort(vals, kind="stable")
        pts, vals = pts[order], vals[order]
        if vals[-1] - vals[0] <= ftol:
            return pts[0].copy(), float(vals[0]), True
        if not budget_left():
            return pts[0].copy(), float(vals[0]), False
        centroid = pts[:-1].mean(axis=0)
        worst = pts[-1]
        xr = centroid + (centroid - worst)
        fr = fun(xr)
        if fr < vals[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = fun(xe)
            if fe < fr:
                pts[-1], vals[-1] = xe, fe
            else:
                pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-2]:
            pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-1]:
            xc = centroid + 0.5 * (xr - centroid)
            fc = fun(xc)
            if fc <= fr:
                pts[-1], vals[-1] = xc, fc
                continue
        else:
            xc = centroid + 0.5 * (worst - centroid)
            fc = fun(xc)
            if fc < vals[-1]:
                pts[-1], vals[-1] = xc, fc
                continue
        for i in range(1, dim + 1):
            pts[i] = pts[0] + 0.5 * (pts[i] - pts[0])
            vals[i] = fun(pts[i])
