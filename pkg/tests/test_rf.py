import numpy as np
import pytest
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform
from scipy.stats import ks_2samp

from coarsened.rf import (ForestConfig, cut_dendrogram, fit_forest, proximity, rf_cluster,
                          synthesize_second_class, ward_cut, ward_linkage)
from coarsened.errors import ConfigError

from oracles import co_membership, rand_index


def test_synthetic_cells_from_real_column():
    x = np.random.default_rng(0).normal(size=(50, 3))
    aug, lab = synthesize_second_class(x, seed=1)
    assert aug.shape == (100, 3)
    assert (aug[:50] == x).all()
    assert lab.tolist() == [1] * 50 + [0] * 50
    for j in range(3):
        assert set(aug[50:, j]) <= set(x[:, j])


def test_synthetic_marginals_match():
    rng = np.random.default_rng(2)
    x = np.column_stack([rng.normal(size=5000), rng.exponential(size=5000)])
    aug, _ = synthesize_second_class(x, seed=3)
    for j in range(2):
        assert ks_2samp(x[:, j], aug[5000:, j]).statistic < 0.05


def test_synthetic_constant_and_deterministic():
    x = np.column_stack([np.full(20, 4.0), np.arange(20.0)])
    a, _ = synthesize_second_class(x, seed=5)
    b, _ = synthesize_second_class(x, seed=5)
    assert (a[20:, 0] == 4.0).all()
    assert (a == b).all()


def test_separable_oob_error():
    rng = np.random.default_rng(4)
    x = np.concatenate([rng.normal(-10, 1, 200), rng.normal(10, 1, 200)])[:, None]
    y = np.repeat([0, 1], 200)
    f = fit_forest(x, y, ForestConfig(n_trees=50, seed=1))
    assert f.oob_error(x) < 0.05


def test_coin_flip_oob_error():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2000, 2))
    y = rng.integers(0, 2, 2000)
    f = fit_forest(x, y, ForestConfig(n_trees=100, seed=2))
    assert abs(f.oob_error(x) - 0.5) < 0.05


def test_identical_rows_share_leaf():
    x = np.array([[1.0, 2.0], [1.0, 2.0], [3.0, 0.0]])
    f = fit_forest(x, [1, 1, 0], ForestConfig(n_trees=1, seed=0))
    leaves = f.apply(x)
    assert leaves[0, 0] == leaves[0, 1]
    p = proximity(f, x[:2], "all_pairs")
    assert p.values.tolist() == [[1.0, 1.0], [1.0, 1.0]]


def test_forest_config_validation():
    with pytest.raises(ConfigError):
        ForestConfig(n_trees=0)
    with pytest.raises(ConfigError):
        fit_forest(np.zeros((4, 1)), [1, 1, 1, 1], ForestConfig(n_trees=2))


def test_categorical_split_separates_levels():
    rng = np.random.default_rng(6)
    codes = rng.integers(0, 6, 600).astype(float)
    y = np.isin(codes, [1, 4, 5]).astype(int)
    f = fit_forest(codes[:, None], y, ForestConfig(n_trees=20, seed=3), categorical=[True])
    assert f.oob_error(codes[:, None]) == 0.0
    # one subset split suffices, unlike ordered thresholds which need several
    assert max(t.n_leaves for t in f.trees) == 2


@pytest.mark.parametrize("mode", ["all_pairs", "oob"])
def test_proximity_invariants(mode):
    for i in range(10):
        rng = np.random.default_rng(10 + i)
        x = rng.normal(size=(40, 3))
        aug, lab = synthesize_second_class(x, seed=i)
        f = fit_forest(aug, lab, ForestConfig(n_trees=30, seed=i, proximity_mode=mode))
        p = proximity(f, x).values
        assert (p == p.T).all()
        assert p.min() >= 0 and p.max() <= 1
        if mode == "all_pairs":
            assert (np.diag(p) == 1).all()
        else:
            assert set(np.diag(p)) <= {0.0, 1.0}


def test_oob_proximity_counts_joint_oob_trees():
    x = np.random.default_rng(3).normal(size=(15, 2))
    aug, lab = synthesize_second_class(x, seed=0)
    f = fit_forest(aug, lab, ForestConfig(n_trees=25, seed=4))
    leaves = f.apply(x)
    oob = f.oob_matrix()[:, :15]
    p = proximity(f, x, "oob").values
    for i in range(15):
        for j in range(15):
            both = oob[:, i] & oob[:, j]
            expect = (both & (leaves[:, i] == leaves[:, j])).sum() / both.sum() if both.any() else 0
            assert p[i, j] == expect


def test_ward_matches_scipy():
    for seed in range(8):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(25, 2))
        d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        tree = ward_linkage(d)
        ref = linkage(squareform(d, checks=False), method="ward")
        assert np.allclose(tree.heights, ref[:, 2], rtol=1e-10)
        for K in (2, 3, 5, 9):
            ours = cut_dendrogram(tree, K)
            theirs = fcluster(ref, K, criterion="maxclust")
            assert co_membership(ours) == co_membership(theirs)


def test_ward_trivial_cuts():
    d = squareform(np.random.default_rng(1).uniform(size=10))
    assert ward_cut(d, 5).J == 5 and ward_cut(d, 5).sizes.tolist() == [1] * 5
    assert ward_cut(d, 1).J == 1
    with pytest.raises(ConfigError):
        ward_cut(d, 6)
    with pytest.raises(ConfigError):
        ward_cut(d, 0)


def test_ward_blocks():
    d = np.array([[0, 0, 1, 1], [0, 0, 1, 1], [1, 1, 0, 0], [1, 1, 0, 0]], dtype=float)
    assert co_membership(ward_cut(d, 2).labels) == {frozenset({0, 1}), frozenset({2, 3})}


def test_ward_heights_monotone_and_cuts_nest():
    pts = np.random.default_rng(9).normal(size=(40, 3))
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    tree = ward_linkage(d)
    assert (np.diff(tree.heights) >= 0).all()
    for K in range(2, 40):
        fine = co_membership(cut_dendrogram(tree, K))
        coarse = co_membership(cut_dendrogram(tree, K - 1))
        assert len(fine - coarse) == 2 and len(coarse - fine) == 1
        (merged,) = coarse - fine
        assert merged == frozenset().union(*(fine - coarse))


def test_ward_rejects_bad_matrix():
    with pytest.raises(ConfigError):
        ward_linkage(np.array([[0.0, 1.0], [2.0, 0.0]]))


@pytest.mark.parametrize("seed", range(3))
def test_two_blobs_recovered(seed):
    # fully grown trees leave 1 - P nearly equidistant and Ward-D2 then splits a blob;
    # leaves of at least 10 rows give a proximity with usable within-blob mass
    rng = np.random.default_rng(100 + seed)
    x = np.vstack([rng.normal(-4, 1, (60, 2)), rng.normal(4, 1, (60, 2))])
    truth = np.repeat([0, 1], 60)
    clus = rf_cluster(x, ForestConfig(n_trees=300, seed=seed, min_leaf=10))
    assert rand_index(clus.strata(2).labels, truth) > 0.95


def test_pipeline_thread_independent():
    x = np.random.default_rng(12).normal(size=(80, 3))
    cfg = ForestConfig(n_trees=64, seed=21)
    a = rf_cluster(x, cfg, workers=1)
    b = rf_cluster(x, cfg, workers=8)
    assert a.proximity.values.tobytes() == b.proximity.values.tobytes()
    assert a.strata(6).labels.tolist() == b.strata(6).labels.tolist()
