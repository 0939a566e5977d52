"""Plot-ready CSV/JSON reports."""

from __future__ import annotations

import csv
import json
import math
from datetime import timedelta
from pathlib import Path

import numpy as np

from adlift.data import AdSchedule, VisitSeries, format_timestamp

QUANTILE_NOTE = "# quantiles: linear interpolation between order statistics (type 7)"


def ad_window_quantiles(series: VisitSeries, ads: AdSchedule, before: int = 15, after: int = 45,
                        quantiles=(5, 25, 50, 75, 95)) -> tuple[np.ndarray, np.ndarray]:
    """Quantiles of raw visits at each minute relative to an ad's end.

    Relative minute ``r`` of an ad ending at offset ``s`` is minute
    ``floor(s) + r``, so ``r = 1`` is the first minute after the ad.  Minutes
    outside the series are skipped.  Returns ``(relative_minutes, Q)`` with
    ``Q[i, k]`` the ``quantiles[k]``-th percentile at ``relative_minutes[i]``
    (NaN when no ad has that minute in range).
    """
    if before < 0 or after < 0:
        raise ValueError("window bounds must be non-negative")
    rel = np.arange(-before, after + 1)
    z = series.counts.astype(float)
    if len(ads) == 0:
        return rel, np.full((rel.size, len(quantiles)), np.nan)
    base = np.floor(ads.end_times).astype(np.int64)
    t = base[:, None] + rel[None, :]  # 1-based minutes
    ok = (t >= 1) & (t <= series.n)
    vals = np.where(ok, z[np.clip(t - 1, 0, series.n - 1)], np.nan)
    out = np.full((rel.size, len(quantiles)), np.nan)
    for i in range(rel.size):
        col = vals[:, i][~np.isnan(vals[:, i])]
        if col.size:
            out[i] = np.percentile(col, quantiles, method="linear")
    return rel, out


def write_quantiles(rel, q, quantiles, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(QUANTILE_NOTE + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["relative_minute"] + [f"q{int(p):02d}" for p in quantiles])
        for r, row in zip(rel, q):
            w.writerow([int(r)] + [repr(float(v)) for v in row])


def theta_density(thetas, bandwidth: float = 20.0, bin_width: float = 10.0, step: float = 1.0):
    """Epanechnikov density and histogram of the non-zero lifts.

    Returns ``(grid, density, bin_edges, counts)``; all empty when no lift
    is non-zero.
    """
    x = np.asarray(thetas, dtype=float)
    x = x[x != 0]
    if x.size == 0:
        empty = np.zeros(0)
        return empty, empty, empty, np.zeros(0, dtype=np.int64)
    lo = math.floor((x.min() - bandwidth) / step) * step
    hi = math.ceil((x.max() + bandwidth) / step) * step
    grid = np.arange(round((hi - lo) / step) + 1) * step + lo
    u = (grid[:, None] - x[None, :]) / bandwidth
    k = np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u**2), 0.0)
    dens = k.sum(axis=1) / (x.size * bandwidth)
    e0 = math.floor(x.min() / bin_width) * bin_width
    e1 = (math.floor(x.max() / bin_width) + 1) * bin_width
    edges = np.arange(round((e1 - e0) / bin_width) + 1) * bin_width + e0
    counts, _ = np.histogram(x, bins=edges)
    return grid, dens, edges, counts


def write_theta_density(thetas, path, bandwidth: float = 20.0, bin_width: float = 10.0) -> bool:
    """Write ``kind,x,value`` rows: ``density`` rows on the grid and
    ``histogram`` rows (left bin edge, count).  False if nothing to report."""
    grid, dens, edges, counts = theta_density(thetas, bandwidth, bin_width)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("kind", "x", "value"))
        for g, d in zip(grid, dens):
            w.writerow(("density", repr(float(g)), repr(float(d))))
        for e, c in zip(edges[:-1], counts):
            w.writerow(("histogram", repr(float(e)), int(c)))
    return grid.size > 0


def write_thetas(fit, ads: AdSchedule, series: VisitSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("ad_id", "end_time", "theta", "motive", "position", "channel"))
        for j, (ad, theta) in enumerate(zip(ads, fit.thetas), start=1):
            ts = series.start_epoch + timedelta(seconds=round(ad.end_time * 60.0))
            w.writerow((j, format_timestamp(ts), repr(float(theta)), ad.motive, ad.position, ad.channel))


def write_rates(fit, series: VisitSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("timestamp", "z", "mu", "lambda"))
        for i in range(series.n):
            ts = series.start_epoch + timedelta(minutes=i)
            w.writerow((format_timestamp(ts), int(series.counts[i]), repr(float(fit.mu[i])), repr(float(fit.lam[i]))))


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_model_comparison(rows, path) -> None:
    from adlift.decompose import ComparisonRow

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ComparisonRow.COLUMNS)
        for r in rows:
            w.writerow(r.as_row())
