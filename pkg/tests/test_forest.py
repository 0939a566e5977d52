import math
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adlift.data import AdRecord, AdSchedule
from adlift.forest import (
    FEATURES,
    LEVELS,
    AdFeatureRow,
    ForestSetting,
    build_features,
    default_grid,
    encode,
    fit_final,
    grow_tree,
    partial_dependence,
    regression_metrics,
    train_forest,
    tune,
    variable_importance,
    write_importance,
    write_pdp,
    write_tuning_report,
)

T0 = datetime(2019, 6, 3, tzinfo=timezone.utc)
N_LEVELS = [0] + [len(LEVELS[f]) for f in FEATURES[1:]]


def random_X(n, rng):
    X = np.empty((n, 6))
    X[:, 0] = rng.integers(0, 1440, n)
    for f in range(1, 6):
        X[:, f] = rng.integers(0, N_LEVELS[f], n)
    return X


def data(n=300, seed=0, effect=None, noise=10.0):
    rng = np.random.default_rng(seed)
    X = random_X(n, rng)
    y = (effect(X) if effect is not None else np.zeros(n)) + rng.normal(0, noise, n)
    return X, y, np.arange(n)


def time_effect(X):
    return 100 * (X[:, 0] >= 720)


# features

def test_build_features_calendar():
    ads = AdSchedule((AdRecord(1290.0, "spot3", "first", "channel2"), AdRecord(1300.5, "spot1", "last", "channel7")))
    rows = build_features([0.0, 42.0], ads, T0)
    assert len(rows) == 2
    r = rows[0]
    assert (r.time_of_day, r.day_of_week, r.month) == (1290.0, "Monday", "June")
    assert r.target == 0.0 and (r.channel, r.position, r.motive) == ("channel2", "first", "spot3")
    assert [r.row_id for r in build_features([0.0, 42.0], ads, T0, include_zero=False)] == [1]
    with pytest.raises(ValueError):
        build_features([1.0], ads, T0)


def test_feature_row_validation():
    with pytest.raises(ValueError):
        AdFeatureRow(1440.0, "Monday", "June", "channel1", "first", "spot1", 0.0)
    with pytest.raises(ValueError):
        AdFeatureRow(10.0, "Funday", "June", "channel1", "first", "spot1", 0.0)


def test_encode_codes():
    rows = [AdFeatureRow(5.0, "Sunday", "December", "channel7", "last", "spot11", 3.0, 9)]
    X, y, ids = encode(rows)
    np.testing.assert_array_equal(X, [[5.0, 6, 11, 6, 4, 11]])
    assert y.tolist() == [3.0] and ids.tolist() == [9]


def test_setting_grid():
    assert len(default_grid()) == 216
    for bad in [(7, 5, 0.5), (1, 6, 0.5), (1, 5, 0.55)]:
        with pytest.raises(ValueError):
            ForestSetting(*bad)
    assert ForestSetting(3, 10, 0.7).label == "mtry=3;min_node=10;sample_frac=0.7"


# trees and forests

def test_constant_target():
    X, _, ids = data(100)
    m = train_forest((X, np.full(100, 7.5), ids), ForestSetting(3, 5, 0.5, 20), 0)
    assert all(t.feature.size == 1 for t in m.trees)
    np.testing.assert_array_equal(m.predict(random_X(30, np.random.default_rng(1))), 7.5)


def _exhaustive_root_split(x, y, min_node):
    best = (math.inf, None)
    xs = np.unique(x)
    for a, b in zip(xs[:-1], xs[1:]):
        thr = 0.5 * (a + b)
        L, R = y[x <= thr], y[x > thr]
        if L.size < min_node or R.size < min_node:
            continue
        sse = np.sum((L - L.mean()) ** 2) + np.sum((R - R.mean()) ** 2)
        if sse < best[0]:
            best = (sse, thr)
    return best[1]


def test_root_split_matches_exhaustive_search():
    rng = np.random.default_rng(3)
    x = rng.random(200)
    y = np.where(x < 0.5, 0.0, 100.0) + rng.normal(0, 5, 200)
    tree = grow_tree(x[:, None], y, 1, 5, np.random.default_rng(0), np.zeros(1))
    assert tree.threshold[0] == pytest.approx(_exhaustive_root_split(x, y, 5))


def test_step_function_recovery():
    rng = np.random.default_rng(4)
    x = rng.random(200)
    y = np.where(x < 0.5, 0.0, 100.0)
    m = train_forest((x[:, None], y, np.arange(200)), ForestSetting(1, 5, 0.5, 100), 0)
    grid = np.r_[np.linspace(0, 0.4, 20), np.linspace(0.6, 1, 20)][:, None]
    np.testing.assert_allclose(m.predict(grid), np.where(grid[:, 0] < 0.5, 0, 100), atol=10)


def test_determinism_and_row_order_invariance():
    X, y, ids = data(150, effect=time_effect)
    s = ForestSetting(2, 5, 0.7, 30)
    a = train_forest((X, y, ids), s, 11)
    b = train_forest((X, y, ids), s, 11)
    perm = np.random.default_rng(0).permutation(150)
    c = train_forest((X[perm], y[perm], ids[perm]), s, 11)
    Xt = random_X(50, np.random.default_rng(9))
    np.testing.assert_array_equal(a.predict(Xt), b.predict(Xt))
    np.testing.assert_array_equal(a.predict(Xt), c.predict(Xt))


def test_rows_and_tuple_inputs_agree():
    ads = AdSchedule(tuple(AdRecord(60.0 * i + 5, "spot1", "first", f"channel{1 + i % 7}") for i in range(40)))
    rows = build_features(np.arange(40.0), ads, T0)
    s = ForestSetting(2, 5, 0.5, 10)
    np.testing.assert_array_equal(train_forest(rows, s, 1).predict(encode(rows)[0]),
                                  train_forest(encode(rows), s, 1).predict(encode(rows)[0]))


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([5, 10, 20]), st.sampled_from([0.5, 0.8, 1.0]), st.integers(0, 1000))
def test_leaf_sizes_respect_min_node(min_node, frac, seed):
    X, y, ids = data(120, seed, effect=time_effect)
    m = train_forest((X, y, ids), ForestSetting(6, min_node, frac, 5), seed)
    for t in m.trees:
        leaves = t.feature < 0
        if leaves.sum() > 1:
            assert t.size[leaves].min() >= min_node


def test_prediction_is_mean_of_trees():
    X, y, ids = data(80, effect=time_effect)
    m = train_forest((X, y, ids), ForestSetting(2, 5, 0.5, 3), 0)
    Xt = random_X(20, np.random.default_rng(2))
    manual = (m.trees[0].predict(Xt) + m.trees[1].predict(Xt) + m.trees[2].predict(Xt)) / 3
    np.testing.assert_allclose(m.predict(Xt), manual, rtol=1e-15)


def test_oob_uses_only_trees_without_the_row():
    X, y, ids = data(60, effect=time_effect)
    m = train_forest((X, y, ids), ForestSetting(2, 5, 0.5, 8), 0)
    P = m.tree_predictions(m.X)
    i = 0
    out = ~m.inbag[:, i]
    assert m.oob_prediction[i] == pytest.approx(P[out, i].mean())
    full = train_forest((X, y, ids), ForestSetting(2, 5, 1.0, 4), 0)
    assert not full.has_oob and full.oob_prediction is None


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000))
def test_oob_r2_not_above_in_sample(seed):
    X, y, ids = data(150, seed, effect=time_effect, noise=30)
    m = train_forest((X, y, ids), ForestSetting(3, 5, 0.6, 40), seed)
    assert regression_metrics(m.y, m.oob_prediction)["r2"] <= regression_metrics(m.y, m.predict(m.X))["r2"]


def test_regression_metrics_hand_fixture():
    m = regression_metrics([1, 2, 3, 4], [1, 2, 3, 5])
    assert m["r2"] == pytest.approx(1 - 1 / 5)
    assert m["mse"] == pytest.approx(0.25) and m["mae"] == pytest.approx(0.25) and m["rmse"] == pytest.approx(0.5)


# importance and partial dependence

@pytest.fixture(scope="module")
def time_model():
    X, y, ids = data(400, 1, effect=time_effect, noise=10)
    return train_forest((X, y, ids), ForestSetting(3, 5, 0.5, 150), 0)


def test_importance(time_model):
    imp = variable_importance(time_model, seed=0)
    perm = {f: v[0] for f, v in imp.items()}
    impurity = {f: v[1] for f, v in imp.items()}
    assert sum(impurity.values()) == pytest.approx(1.0, abs=1e-9)
    assert max(perm, key=perm.get) == "time_of_day"
    assert max(impurity, key=impurity.get) == "time_of_day"
    top = perm["time_of_day"]
    for f in FEATURES[1:]:
        assert abs(perm[f]) < 0.05 * top


def test_pdp_flat_for_unused_feature():
    X, y, ids = data(200, effect=time_effect)
    X[:, 4] = 2  # position constant, so never split on
    m = train_forest((X, y, ids), ForestSetting(6, 5, 0.5, 30), 0)
    assert 4 not in m.used_features()
    curve = partial_dependence(m, (X,), "position")
    assert [v for v, _ in curve] == list(LEVELS["position"])
    assert len({p for _, p in curve}) == 1


def test_pdp_constant_model():
    X, _, ids = data(60)
    m = train_forest((X, np.full(60, 3.0), ids), ForestSetting(1, 5, 0.5, 5), 0)
    assert all(p == 3.0 for _, p in partial_dependence(m, (X,), "time_of_day"))


def test_pdp_recovers_additive_shape():
    g = lambda t: 60 + 50 * np.sin(2 * np.pi * (t - 540) / 1440)
    X, y, ids = data(400, 5, effect=lambda X: g(X[:, 0]), noise=20)
    m = train_forest((X, y, ids), ForestSetting(3, 5, 0.5, 200), 0)
    curve = partial_dependence(m, (X,), "time_of_day")
    grid = np.array([v for v, _ in curve])
    assert len(curve) == 25
    assert np.corrcoef(g(grid), [p for _, p in curve])[0, 1] >= 0.9


# tuning

def test_tune_singleton():
    X, y, ids = data(80, effect=time_effect)
    s = ForestSetting(2, 5, 0.5, 10)
    best, rep = tune((X, y, ids), [s], repeats=2, seed=0)
    assert best == s
    rows = rep.rows()
    assert [r[1] for r in rows] == ["training", "validation", "test"]
    assert rows[0][0] == f"cv[{s.label}]"


def test_tune_prefers_large_mtry_with_one_informative_feature():
    X, y, ids = data(200, 2, effect=time_effect, noise=10)
    grid = [ForestSetting(1, 5, 0.5, 50), ForestSetting(6, 5, 0.5, 50)]
    best, rep = tune((X, y, ids), grid, repeats=20, seed=0)
    assert rep.mean(1, "validation")["mse"] <= rep.mean(0, "validation")["mse"]
    assert best.mtry == 6


def test_tune_reproducible_and_validates():
    X, y, ids = data(60, effect=time_effect)
    grid = [ForestSetting(1, 5, 0.5, 5), ForestSetting(2, 10, 0.8, 5)]
    a = tune((X, y, ids), grid, 2, 3)[1].metrics
    b = tune((X, y, ids), grid, 2, 3)[1].metrics
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        tune((X, y, ids), [], 1)
    with pytest.raises(ValueError):
        tune((X, y, ids), grid, 0)


def test_fit_final_and_writers(tmp_path):
    X, y, ids = data(120, effect=time_effect)
    res = fit_final((X, y, ids), ForestSetting(2, 5, 0.5, 10), repeats=2, seed=0, pdp_points=5)
    assert [r[1] for r in res.metric_rows()] == ["full", "out-of-bag"]
    write_importance(res.importance, tmp_path / "imp.csv")
    write_pdp(res.pdp, tmp_path / "pdp.csv")
    write_tuning_report(res.metric_rows(), tmp_path / "tune.csv")
    assert (tmp_path / "imp.csv").read_text().splitlines()[0] == "feature,permutation,impurity"
    pdp = (tmp_path / "pdp.csv").read_text().splitlines()
    assert pdp[0] == "feature,value,mean_prediction"
    assert sum(line.startswith("motive,") for line in pdp) == 12
    assert sum(line.startswith("time_of_day,") for line in pdp) == 5
    assert (tmp_path / "tune.csv").read_text().splitlines()[0] == "model,sample,mae,rmse,r2"
