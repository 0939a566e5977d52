"""Regression random forest explaining ad lifts from ad characteristics.

Trees are grown on subsamples drawn without replacement.  At each node a
random subset of ``mtry`` features is searched for the split that minimizes
the summed squared error of the two children.  Categorical features are
split by ordering their levels by mean target within the node and searching
that order as if it were numeric, which finds the optimal binary partition
for squared error without enumerating level subsets.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from adlift.data import CHANNELS, MOTIVES, POSITIONS, AdSchedule

DAYS = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday")
MONTHS = ("January", "February", "March", "April", "May", "June", "July", "August",
          "September", "October", "November", "December")

FEATURES = ("time_of_day", "day_of_week", "month", "channel", "position", "motive")
LEVELS: dict[str, tuple[str, ...] | None] = {
    "time_of_day": None,
    "day_of_week": DAYS,
    "month": MONTHS,
    "channel": CHANNELS,
    "position": POSITIONS,
    "motive": MOTIVES,
}
IS_CATEGORICAL = np.array([LEVELS[f] is not None for f in FEATURES])

MTRY_GRID = (1, 2, 3, 4, 5, 6)
MIN_NODE_GRID = (5, 10, 15, 20, 25, 30)
SAMPLE_FRAC_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


@dataclass(frozen=True)
class AdFeatureRow:
    time_of_day: float
    day_of_week: str
    month: str
    channel: str
    position: str
    motive: str
    target: float
    row_id: int = 0

    def __post_init__(self):
        if not 0 <= self.time_of_day < 1440:
            raise ValueError("time_of_day must lie in [0, 1440)")
        for name in FEATURES[1:]:
            if getattr(self, name) not in LEVELS[name]:
                raise ValueError(f"unknown {name} level {getattr(self, name)!r}")


def build_features(thetas, ads: AdSchedule, start_epoch, include_zero: bool = True) -> list[AdFeatureRow]:
    """One row per ad, with calendar features taken from the ad's end time."""
    thetas = np.asarray(getattr(thetas, "thetas", thetas), dtype=float)
    if thetas.size != len(ads):
        raise ValueError("lifts and schedule differ in length")
    rows = []
    for j, (ad, theta) in enumerate(zip(ads, thetas)):
        if not include_zero and theta == 0:
            continue
        ts = start_epoch + timedelta(minutes=ad.end_time)
        rows.append(AdFeatureRow(
            time_of_day=float(ts.hour * 60 + ts.minute),
            day_of_week=DAYS[ts.weekday()],
            month=MONTHS[ts.month - 1],
            channel=ad.channel,
            position=ad.position,
            motive=ad.motive,
            target=float(theta),
            row_id=j,
        ))
    return rows


def encode(rows: Sequence[AdFeatureRow]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feature matrix (categoricals as level codes), targets and row ids."""
    X = np.empty((len(rows), len(FEATURES)))
    for i, r in enumerate(rows):
        X[i, 0] = r.time_of_day
        for f, name in enumerate(FEATURES[1:], start=1):
            X[i, f] = LEVELS[name].index(getattr(r, name))
    y = np.array([r.target for r in rows], dtype=float)
    ids = np.array([r.row_id for r in rows], dtype=np.int64)
    return X, y, ids


@dataclass(frozen=True)
class ForestSetting:
    mtry: int
    min_node: int
    sample_frac: float
    n_trees: int = 500

    def __post_init__(self):
        if self.mtry not in MTRY_GRID:
            raise ValueError(f"mtry must be one of {MTRY_GRID}")
        if self.min_node not in MIN_NODE_GRID:
            raise ValueError(f"min_node must be one of {MIN_NODE_GRID}")
        if not any(math.isclose(self.sample_frac, f) for f in SAMPLE_FRAC_GRID):
            raise ValueError(f"sample_frac must be one of {SAMPLE_FRAC_GRID}")
        if self.n_trees < 1:
            raise ValueError("n_trees must be positive")

    @property
    def label(self) -> str:
        return f"mtry={self.mtry};min_node={self.min_node};sample_frac={self.sample_frac:g}"


def default_grid(n_trees: int = 500) -> list[ForestSetting]:
    return [ForestSetting(m, k, f, n_trees)
            for m, k, f in itertools.product(MTRY_GRID, MIN_NODE_GRID, SAMPLE_FRAC_GRID)]


# --------------------------------------------------------------------------
# trees


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left_levels: np.ndarray  # bitmask of categorical levels sent left
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    size: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                return self.value[node]
            r, nd, ff = rows[active], node[active], f[active]
            x = X[r, ff]
            cat = IS_CATEGORICAL[ff]
            go_left = np.where(
                cat,
                (self.left_levels[nd] >> np.where(cat, x, 0).astype(np.int64)) & 1 == 1,
                x <= self.threshold[nd],
            )
            node[active] = np.where(go_left, self.left[nd], self.right[nd])

    @property
    def used_features(self) -> set[int]:
        return set(int(f) for f in self.feature if f >= 0)


def _best_split(x, y, min_node, categorical, parent_sse):
    """Best split of one feature: ``(gain, threshold, level_mask)`` or None."""
    n = y.size
    if categorical:
        codes = x.astype(np.int64)
        L = int(codes.max()) + 1
        counts = np.bincount(codes, minlength=L)
        present = np.flatnonzero(counts)
        if present.size < 2:
            return None
        means = np.bincount(codes, y, L)[present] / counts[present]
        order = present[np.argsort(means, kind="stable")]
        rank = np.zeros(L, dtype=np.int64)
        rank[order] = np.arange(order.size)
        key = rank[codes]
    else:
        key = x
    idx = np.argsort(key, kind="stable")
    ks, ys = key[idx], y[idx]
    cut = np.arange(min_node, n - min_node + 1)  # size of the left child
    if cut.size == 0:
        return None
    cut = cut[ks[cut - 1] < ks[cut]]
    if cut.size == 0:
        return None
    cs = np.cumsum(ys)
    cs2 = np.cumsum(ys * ys)
    ls, ls2 = cs[cut - 1], cs2[cut - 1]
    rs, rs2 = cs[-1] - ls, cs2[-1] - ls2
    sse = (ls2 - ls * ls / cut) + (rs2 - rs * rs / (n - cut))
    b = int(np.argmin(sse))  # first minimum is the lowest threshold
    gain = parent_sse - sse[b]
    i = cut[b]
    if categorical:
        mask = 0
        for lev in order[: int(ks[i - 1]) + 1]:
            mask |= 1 << int(lev)
        return gain, math.nan, mask
    return gain, 0.5 * (ks[i - 1] + ks[i]), 0


def grow_tree(X, y, mtry: int, min_node: int, rng: np.random.Generator, importance: np.ndarray) -> Tree:
    """Grow one regression tree; adds each split's SSE reduction to
    ``importance[feature]``."""
    feature, threshold, masks, left, right, value, size = [], [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(math.nan)
        masks.append(0)
        left.append(-1)
        right.append(-1)
        value.append(float(np.mean(y[idx])))
        size.append(idx.size)
        return len(feature) - 1

    n_feat = X.shape[1]
    root = np.arange(y.size)
    stack = [(new_node(root), root)]
    while stack:
        node, idx = stack.pop()
        yn = y[idx]
        if idx.size < 2 * min_node or np.ptp(yn) == 0:
            continue
        parent_sse = float(np.sum((yn - yn.mean()) ** 2))
        best = None
        for f in np.sort(rng.choice(n_feat, size=mtry, replace=False)):
            res = _best_split(X[idx, f], yn, min_node, IS_CATEGORICAL[f], parent_sse)
            if res is not None and (best is None or res[0] > best[0]):
                best = (res[0], int(f), res[1], res[2])
        if best is None or best[0] <= 1e-12 * parent_sse:
            continue
        gain, f, thr, mask = best
        x = X[idx, f]
        go_left = ((mask >> x.astype(np.int64)) & 1 == 1) if IS_CATEGORICAL[f] else x <= thr
        importance[f] += gain
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node], masks[node] = f, thr, mask
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri))
        stack.append((left[node], li))
    return Tree(np.array(feature), np.array(threshold), np.array(masks, dtype=np.int64),
                np.array(left), np.array(right), np.array(value), np.array(size))


@dataclass
class ForestModel:
    trees: list[Tree]
    setting: ForestSetting
    seed: int
    inbag: np.ndarray  # (n_trees, N) bool, rows in training order
    X: np.ndarray
    y: np.ndarray
    row_ids: np.ndarray
    impurity: np.ndarray  # raw SSE reduction per feature
    oob_prediction: np.ndarray = field(default=None)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def tree_predictions(self, X) -> np.ndarray:
        return np.array([t.predict(np.asarray(X, dtype=float)) for t in self.trees])

    @property
    def has_oob(self) -> bool:
        return self.setting.sample_frac < 1.0

    def oob_predict(self, X=None) -> np.ndarray:
        """Out-of-bag predictions for the training rows; ``X`` may replace
        their feature values (row-aligned).  NaN for rows in every tree."""
        X = self.X if X is None else X
        P = self.tree_predictions(X)
        out = ~self.inbag
        cnt = out.sum(axis=0)
        with np.errstate(invalid="ignore"):
            return np.where(cnt > 0, (P * out).sum(axis=0) / np.maximum(cnt, 1), np.nan)

    def used_features(self) -> set[int]:
        return set().union(*(t.used_features for t in self.trees))


def train_forest(rows, setting: ForestSetting, seed: int = 0) -> ForestModel:
    """Train a forest; rows are ordered by ``row_id`` first, so the model does
    not depend on the order rows are passed in."""
    X, y, ids = rows if isinstance(rows, tuple) else encode(rows)
    if y.size == 0:
        raise ValueError("no training rows")
    order = np.argsort(ids, kind="stable")
    X, y, ids = X[order], y[order], ids[order]
    N = y.size
    k = max(1, int(round(setting.sample_frac * N)))
    seqs = np.random.SeedSequence(seed).spawn(setting.n_trees)
    imp = np.zeros(X.shape[1])
    inbag = np.zeros((setting.n_trees, N), dtype=bool)
    trees = []
    mtry = min(setting.mtry, X.shape[1])
    for t in range(setting.n_trees):
        rng = np.random.default_rng(seqs[t])
        sub = np.sort(rng.choice(N, size=k, replace=False))
        inbag[t, sub] = True
        trees.append(grow_tree(X[sub], y[sub], mtry, setting.min_node, rng, imp))
    model = ForestModel(trees, setting, seed, inbag, X, y, ids, imp)
    if model.has_oob:
        model.oob_prediction = model.oob_predict()
    return model


# --------------------------------------------------------------------------
# metrics and interpretation


def regression_metrics(y, pred) -> dict:
    y = np.asarray(y, dtype=float)
    pred = np.asarray(pred, dtype=float)
    ok = ~np.isnan(pred)
    y, pred = y[ok], pred[ok]
    err = y - pred
    sst = float(np.sum((y - y.mean()) ** 2))
    sse = float(np.sum(err**2))
    return {
        "mse": sse / y.size,
        "mae": float(np.mean(np.abs(err))),
        "rmse": math.sqrt(sse / y.size),
        "r2": 1.0 - sse / sst if sst > 0 else math.nan,
    }


def variable_importance(model: ForestModel, rows=None, seed: int = 0, n_permutations: int = 3) -> dict:
    """Permutation and impurity importance per feature.

    Permutation importance is the increase in out-of-bag MSE after shuffling
    the feature column (in-sample MSE when every tree saw every row).
    Impurity importance is each feature's share of the total SSE reduction.
    """
    if rows is None:
        X, y = model.X, model.y
    else:
        X, y, ids = rows if isinstance(rows, tuple) else encode(rows)
        order = np.argsort(ids, kind="stable")
        X, y = X[order], y[order]
    use_oob = model.has_oob and X.shape[0] == model.X.shape[0]
    predict = model.oob_predict if use_oob else model.predict

    def mse(Xp):
        p = predict(Xp)
        ok = ~np.isnan(p)
        return float(np.mean((y[ok] - p[ok]) ** 2))

    base = mse(X)
    rng = np.random.default_rng(seed)
    total = model.impurity.sum()
    out = {}
    for f, name in enumerate(FEATURES):
        incs = []
        for _ in range(n_permutations):
            Xp = X.copy()
            Xp[:, f] = X[rng.permutation(X.shape[0]), f]
            incs.append(mse(Xp) - base)
        imp = float(model.impurity[f] / total) if total > 0 else 0.0
        out[name] = (float(np.mean(incs)), imp)
    return out


def pdp_grid(rows_or_X, feature: str, n_points: int = 25) -> list:
    if LEVELS[feature] is not None:
        return list(LEVELS[feature])
    X = rows_or_X[0] if isinstance(rows_or_X, tuple) else encode(rows_or_X)[0]
    col = X[:, FEATURES.index(feature)]
    return list(np.linspace(col.min(), col.max(), n_points))


def partial_dependence(model: ForestModel, rows, feature: str, grid=None) -> list[tuple]:
    """Average prediction with ``feature`` set to each grid value in every row."""
    X = (rows[0] if isinstance(rows, tuple) else encode(rows)[0]) if rows is not None else model.X
    f = FEATURES.index(feature)
    if grid is None:
        grid = pdp_grid((X,), feature)
    curve = []
    for v in grid:
        code = LEVELS[feature].index(v) if LEVELS[feature] is not None else float(v)
        Xv = X.copy()
        Xv[:, f] = code
        curve.append((v, float(np.mean(model.predict(Xv)))))
    return curve


# --------------------------------------------------------------------------
# tuning and final model


SAMPLES = ("training", "validation", "test")


@dataclass
class TuningReport:
    settings: list[ForestSetting]
    metrics: np.ndarray  # (repeats, settings, samples, [mse, mae, rmse, r2])
    best: ForestSetting

    def mean(self, setting_index: int, sample: str) -> dict:
        m = np.nanmean(self.metrics[:, setting_index, SAMPLES.index(sample)], axis=0)
        return dict(zip(("mse", "mae", "rmse", "r2"), map(float, m)))

    def rows(self) -> list[tuple]:
        out = []
        for i, s in enumerate(self.settings):
            for sample in SAMPLES:
                m = self.mean(i, sample)
                out.append((f"cv[{s.label}]", sample, m["mae"], m["rmse"], m["r2"]))
        return out


def split_indices(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random 50/25/25 split into training, validation and test indices."""
    perm = rng.permutation(n)
    a = int(round(0.5 * n))
    b = a + int(round(0.25 * n))
    return np.sort(perm[:a]), np.sort(perm[a:b]), np.sort(perm[b:])


def tune(rows, grid: Sequence[ForestSetting], repeats: int = 25, seed: int = 0) -> tuple[ForestSetting, TuningReport]:
    """Pick the setting with the lowest mean validation MSE over repeated
    50/25/25 splits."""
    grid = list(grid)
    if not grid:
        raise ValueError("grid must be non-empty")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    X, y, ids = rows if isinstance(rows, tuple) else encode(rows)
    order = np.argsort(ids, kind="stable")
    X, y, ids = X[order], y[order], ids[order]
    metrics = np.full((repeats, len(grid), 3, 4), np.nan)
    seqs = np.random.SeedSequence(seed).spawn(repeats)
    for r in range(repeats):
        rng = np.random.default_rng(seqs[r])
        parts = split_indices(y.size, rng)
        tr = parts[0]
        tree_seeds = rng.integers(0, 2**63 - 1, size=len(grid))
        for g, setting in enumerate(grid):
            model = train_forest((X[tr], y[tr], ids[tr]), setting, int(tree_seeds[g]))
            for s, part in enumerate(parts):
                if part.size == 0:
                    continue
                m = regression_metrics(y[part], model.predict(X[part]))
                metrics[r, g, s] = (m["mse"], m["mae"], m["rmse"], m["r2"])
    val_mse = np.nanmean(metrics[:, :, 1, 0], axis=0)
    best = grid[int(np.nanargmin(val_mse))]
    return best, TuningReport(grid, metrics, best)


@dataclass
class FinalResult:
    setting: ForestSetting
    repeats: int
    importance: dict  # feature -> (permutation, impurity)
    pdp: dict  # feature -> list of (value, mean prediction)
    full: dict
    oob: dict | None

    def metric_rows(self) -> list[tuple]:
        out = [("final", "full", self.full["mae"], self.full["rmse"], self.full["r2"])]
        if self.oob is not None:
            out.append(("final", "out-of-bag", self.oob["mae"], self.oob["rmse"], self.oob["r2"]))
        return out


def fit_final(rows, setting: ForestSetting, repeats: int = 20, seed: int = 0, pdp_points: int = 25) -> FinalResult:
    """Refit the chosen setting on all rows ``repeats`` times and average
    fit metrics, importances and partial dependence."""
    data = rows if isinstance(rows, tuple) else encode(rows)
    grids = {f: pdp_grid(data, f, pdp_points) for f in FEATURES}
    seqs = np.random.SeedSequence(seed).spawn(repeats)
    imps, pdps, fulls, oobs = [], [], [], []
    for r in range(repeats):
        s = int(seqs[r].generate_state(1, np.uint64)[0] >> 1)
        model = train_forest(data, setting, s)
        imps.append(variable_importance(model, seed=s))
        pdps.append({f: partial_dependence(model, (model.X,), f, grids[f]) for f in FEATURES})
        fulls.append(regression_metrics(model.y, model.predict(model.X)))
        if model.has_oob:
            oobs.append(regression_metrics(model.y, model.oob_prediction))
    avg = lambda ds: {k: float(np.mean([d[k] for d in ds])) for k in ds[0]}
    importance = {f: (float(np.mean([i[f][0] for i in imps])), float(np.mean([i[f][1] for i in imps])))
                  for f in FEATURES}
    pdp = {f: [(v, float(np.mean([p[f][i][1] for p in pdps]))) for i, v in enumerate(grids[f])] for f in FEATURES}
    return FinalResult(setting, repeats, importance, pdp, avg(fulls), avg(oobs) if oobs else None)


def write_importance(importance: dict, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("feature", "permutation", "impurity"))
        for f in FEATURES:
            perm, imp = importance[f]
            w.writerow((f, repr(perm), repr(imp)))


def write_pdp(pdp: dict, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("feature", "value", "mean_prediction"))
        for f in FEATURES:
            for v, p in pdp[f]:
                w.writerow((f, v if isinstance(v, str) else repr(float(v)), repr(p)))


def write_tuning_report(rows: list[tuple], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model", "sample", "mae", "rmse", "r2"))
        for model, sample, mae, rmse, r2 in rows:
            w.writerow((model, sample, repr(float(mae)), repr(float(rmse)), repr(float(r2))))
