import itertools
import json

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from appformer.clustering import (
    ClusterModel,
    column_mode,
    fit,
    fit_poi,
    kharmonic_fit,
    kharmonic_objective,
    kmeans_fit,
    kmeanspp_fit,
    kmodes_fit,
    mismatch_distance,
    pca_project,
    replace_with_centers,
    write_clusters_json,
)
from appformer.data import PoiVector, SynthConfig, synth_corpus
from appformer.errors import ConfigError, ShapeError


def test_mismatch_distance_counts_positions():
    assert mismatch_distance([1, 2, 3], [1, 0, 4]) == 2
    assert mismatch_distance([5, 5], [5, 5]) == 0


def test_mode_ties_pick_smallest_value():
    assert column_mode(np.array([3, 1, 3, 1, 2])) == 1
    assert column_mode(np.array([7])) == 7


def test_kmodes_hand_example():
    X = np.array([[0, 0, 1], [0, 0, 2], [0, 0, 1], [5, 5, 9], [5, 6, 9], [5, 5, 9]])
    m = kmodes_fit(X, 2, seed=0)
    assert adjusted_rand_score([0, 0, 0, 1, 1, 1], m.labels) == 1.0
    centers = sorted(map(tuple, m.centers.tolist()))
    assert centers == [(0, 0, 1), (5, 5, 9)]
    assert m.cost == 2.0


def test_kmodes_k_equals_n_has_zero_cost():
    X = np.random.default_rng(0).integers(0, 4, size=(6, 5))
    X[:, 0] = np.arange(6)  # all rows distinct
    m = kmodes_fit(X, 6, seed=1)
    assert m.cost == 0.0
    assert sorted(m.labels.tolist()) == list(range(6))


def test_kmodes_cost_never_increases():
    rng = np.random.default_rng(123)
    for _ in range(100):
        n, d = rng.integers(8, 40), rng.integers(2, 8)
        X = rng.integers(0, rng.integers(2, 5), size=(n, d))
        k = int(rng.integers(1, 6))
        m = kmodes_fit(X, k, seed=int(rng.integers(1 << 30)), n_init=1)
        assert np.all(np.diff(m.cost_history) <= 0), m.cost_history
        assert m.cost == m.cost_history[-1]


def test_kmodes_cost_matches_exhaustive_assignment():
    rng = np.random.default_rng(7)
    for trial in range(20):
        n = int(rng.integers(3, 9))
        X = rng.integers(0, 3, size=(n, 4))
        m = kmodes_fit(X, 2, seed=trial)
        best = min(
            sum(int(mismatch_distance(X[i], m.centers[a[i]])) for i in range(n))
            for a in itertools.product(range(2), repeat=n)
        )
        assert m.cost == best


def test_kmodes_recovers_planted_prototypes():
    _, poi, manifest = synth_corpus(SynthConfig())
    truth = [manifest["station_cluster"][str(s)] for s in sorted(poi)]
    scores = [adjusted_rand_score(truth, fit_poi(poi, "kmodes", 5, seed=s).labels) for s in range(10)]
    assert np.median(scores) >= 0.9


def test_kmodes_is_deterministic_and_restarts_help():
    X = np.random.default_rng(3).integers(0, 3, size=(30, 6))
    a, b = kmodes_fit(X, 3, seed=5), kmodes_fit(X, 3, seed=5)
    assert np.array_equal(a.labels, b.labels) and a.cost == b.cost
    single = kmodes_fit(X, 3, seed=5, n_init=1)
    assert a.cost <= single.cost
    with pytest.raises(ConfigError):
        kmodes_fit(X, 3, n_init=0)


def test_kmeans_single_cluster_is_mean():
    X = np.random.default_rng(0).normal(size=(20, 3))
    m = kmeans_fit(X, 1)
    np.testing.assert_allclose(m.centers[0], X.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(m.cost, ((X - X.mean(0)) ** 2).sum(), rtol=1e-12)


@pytest.mark.parametrize("algorithm", ["kmeans", "kmeanspp", "minibatch_kmeans", "kharmonic"])
def test_real_valued_methods_recover_blobs(algorithm):
    rng = np.random.default_rng(1)
    centers = np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]])
    truth = np.repeat(np.arange(3), 30)
    X = centers[truth] + rng.normal(scale=0.5, size=(90, 2))
    # single random starts can strand two centers in one blob; the cheapest of a few cannot
    best = min((fit(algorithm, X, 3, seed=s) for s in range(5)), key=lambda m: m.cost)
    assert adjusted_rand_score(truth, best.labels) == 1.0


def test_lloyd_cost_never_increases():
    rng = np.random.default_rng(9)
    for _ in range(50):
        X = rng.normal(size=(int(rng.integers(10, 60)), 3))
        m = kmeans_fit(X, int(rng.integers(1, 6)), seed=int(rng.integers(1000)))
        assert np.all(np.diff(m.cost_history) <= 1e-9 * m.cost_history[0])


def test_kmeanspp_on_duplicates_stays_finite():
    X = np.ones((10, 4))
    m = kmeanspp_fit(X, 3, seed=0)
    assert np.isfinite(m.centers).all() and m.cost == 0.0


def test_kharmonic_objective_by_hand():
    X = np.array([[0.0], [3.0]])
    Z = np.array([[1.0], [2.0]])
    # point 0: distances 1, 2 -> 2 / (1 + 1/4); point 1: distances 2, 1 -> same
    assert kharmonic_objective(X, Z) == pytest.approx(2 * 2 / 1.25)
    m = kharmonic_fit(np.random.default_rng(0).normal(size=(40, 2)), 3, seed=0)
    assert np.all(np.diff(m.cost_history) <= 1e-9 * m.cost_history[0])


def test_fit_rejects_bad_arguments():
    X = np.zeros((4, 2))
    with pytest.raises(ConfigError):
        fit("dbscan", X, 2)
    with pytest.raises(ConfigError):
        fit("kmeans", X, 5)
    with pytest.raises(ConfigError):
        fit("kmodes", X, 0)
    with pytest.raises(ShapeError):
        fit("kmodes", np.zeros(4), 1)


def test_pca_properties():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 5)) @ rng.normal(size=(5, 5))
    p = pca_project(X)
    np.testing.assert_allclose(p.coords.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(p.components @ p.components.T, np.eye(2), atol=1e-10)
    np.testing.assert_allclose(p.coords.var(axis=0, ddof=1), p.explained_variance, rtol=1e-10)
    for comp in p.components:
        assert comp[np.argmax(np.abs(comp))] > 0


def test_pca_rank_one_preserves_distances():
    direction = np.array([3.0, 4.0]) / 5.0
    t = np.array([-2.0, 0.0, 1.0, 5.0])
    X = t[:, None] * direction + 7.0
    p = pca_project(X)
    np.testing.assert_allclose(np.abs(np.diff(p.coords[:, 0])), np.abs(np.diff(t)), atol=1e-10)
    np.testing.assert_allclose(p.coords[:, 1], 0.0, atol=1e-10)
    assert p.explained_variance[1] == 0.0


def test_pca_zero_variance():
    p = pca_project(np.ones((4, 3)))
    assert p.explained_variance == (0.0, 0.0)
    assert np.all(p.coords == 0.0)


def _poi(rows):
    return {i: PoiVector(i, tuple(r) + (0,) * (17 - len(r))) for i, r in enumerate(rows)}


def test_replace_with_centers_and_passthrough():
    poi = _poi([[1, 1], [1, 1], [1, 2], [9, 9], [9, 9]])
    m = fit_poi(poi, "kmodes", 2, seed=0)
    rep = replace_with_centers(m, poi)
    assert rep[0].tolist()[:2] == [1, 1] and rep[2].tolist()[:2] == [1, 1]
    assert rep[3].tolist()[:2] == [9, 9]
    raw = replace_with_centers(None, poi)
    assert raw[2].tolist()[:2] == [1, 2]
    with pytest.raises(KeyError):
        replace_with_centers(m, poi, stations=[42])


def test_cluster_json_round_trip(tmp_path):
    poi = _poi([[1, 1], [1, 2], [9, 9], [8, 9]])
    m = fit_poi(poi, "kmodes", 2, seed=0)
    write_clusters_json(tmp_path / "c.json", m)
    back = ClusterModel.from_json(json.loads((tmp_path / "c.json").read_text()))
    assert back.assignments == m.assignments
    np.testing.assert_array_equal(back.centers, m.centers)
    assert back.cost == m.cost and back.cost_history == m.cost_history
