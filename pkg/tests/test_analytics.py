import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform
from sklearn.svm import SVC

from stratirl.analytics import (ConfusionMatrix, LabeledItem, LabeledSet, SvmParams, TsneParams,
                                check_distance_matrix, cluster_report, distance_matrix,
                                distances_from_gram, hac_complete, kkt_residual, loo_evaluate,
                                loo_predictions, matrix_csv, median_bandwidth, smo, svm_train_ovo,
                                tsne)
from stratirl.analytics.svm import check_gram
from stratirl.analytics.tsne import _kl_and_grad, conditional_affinities, joint_affinities
from stratirl.rkhs import KernelNumericError, KernelSpec, RkhsVector, norm

SPEC = KernelSpec()


def random_vectors(rng, n, k=3):
    return [RkhsVector(rng.uniform(0, 1, (k, 6)), rng.normal(size=k), SPEC) for _ in range(n)]


def random_distances(rng, n):
    pts = rng.normal(size=(n, 3))
    D = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    D = np.triu(D, 1)
    return D + D.T


def clustered_set(rng, per=4, spread=0.01, labels=("assault", "flank", "fallback")):
    centres = [np.zeros(6), np.full(6, 0.5), np.ones(6)]
    items = []
    for c, lab in enumerate(labels):
        for i in range(per):
            f = np.clip(centres[c] + rng.normal(0, spread, 6), 0, 1)
            items.append(LabeledItem(f"{lab}{i}", lab, RkhsVector.unit(f, SPEC)))
    return LabeledSet(items, "reward")


# -- labeled sets and distances ------------------------------------------------------

def test_labeled_set_validation():
    v = RkhsVector.unit(np.zeros(6), SPEC)
    with pytest.raises(ValueError):
        LabeledSet([LabeledItem("a", "assault", v), LabeledItem("a", "flank", v)], "reward")
    with pytest.raises(ValueError):
        LabeledSet([LabeledItem("a", "retreat", v)], "reward")
    with pytest.raises(ValueError):
        LabeledSet([LabeledItem("a", "assault", v)], "policy")
    other = RkhsVector.unit(np.zeros(6), KernelSpec(bandwidth=0.5))
    with pytest.raises(ValueError):
        LabeledSet([LabeledItem("a", "assault", v), LabeledItem("b", "flank", other)], "behavior")


def test_distance_matrix_properties():
    rng = np.random.default_rng(0)
    vs = random_vectors(rng, 8)
    vs.append(vs[2])
    D = distance_matrix(vs)
    assert D[2, 8] == 0.0
    np.testing.assert_array_equal(D, D.T)
    np.testing.assert_array_equal(np.diag(D), 0.0)
    assert (D >= 0).all()
    for i, j, k in itertools.permutations(range(len(vs)), 3):
        assert D[i, k] <= D[i, j] + D[j, k] + 1e-9
    for i, j in [(0, 1), (3, 7)]:
        assert D[i, j] == pytest.approx(norm(vs[i] - vs[j]), abs=1e-9)
    check_distance_matrix(D)


def test_distance_matrix_errors():
    with pytest.raises(ValueError):
        distance_matrix([])
    with pytest.raises(KernelNumericError):
        distances_from_gram(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        check_distance_matrix(np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(ValueError):
        check_distance_matrix(np.array([[1.0, 1.0], [1.0, 0.0]]))


def test_matrix_csv():
    text = matrix_csv(np.array([[0.0, 1.5], [1.5, 0.0]]), ["a", "b"]).decode()
    assert text.splitlines() == ["match_id,a,b", "a,0.0,1.5", "b,1.5,0.0"]


# -- hierarchical clustering ------------------------------------------------------------

def test_hac_hand_trace():
    D = np.array([[0, 1, 5], [1, 0, 4], [5, 4, 0]], dtype=float)
    dg = hac_complete(D)
    assert (dg.merges[0].a, dg.merges[0].b, dg.merges[0].height) == (0, 1, 1.0)
    assert (dg.merges[1].a, dg.merges[1].b, dg.merges[1].height) == (2, 3, 5.0)
    assert dg.cut(3).tolist() == [0, 1, 2]
    assert dg.cut(1).tolist() == [0, 0, 0]
    assert dg.cut(2).tolist() == [0, 0, 1]
    with pytest.raises(ValueError):
        dg.cut(0)


def test_hac_tie_break_smallest_pair():
    D = np.ones((4, 4)) - np.eye(4)
    dg = hac_complete(D)
    assert (dg.merges[0].a, dg.merges[0].b) == (0, 1)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 14))
def test_hac_matches_scipy(seed, n):
    rng = np.random.default_rng(seed)
    D = random_distances(rng, n)
    dg = hac_complete(D)
    ref = linkage(squareform(D, checks=False), method="complete")
    L = dg.linkage()
    assert len(dg.merges) == n - 1
    np.testing.assert_allclose(L[:, 2], ref[:, 2], rtol=1e-12)
    np.testing.assert_array_equal(L[:, 3], ref[:, 3])
    assert np.all(np.diff(L[:, 2]) >= 0)
    for k in range(1, n + 1):
        ours = dg.cut(k)
        theirs = fcluster(ref, k, criterion="maxclust")
        assert len(set(ours)) == k
        # same partition up to relabeling
        assert len(set(zip(ours, theirs))) == k


def test_dendrogram_csv():
    D = np.array([[0, 1, 5], [1, 0, 4], [5, 4, 0]], dtype=float)
    lines = hac_complete(D).to_csv().decode().splitlines()
    assert lines[0] == "step,cluster_a,cluster_b,height,size"
    assert lines[2] == "1,2,3,5.0,3"


# -- t-SNE ------------------------------------------------------------------------------

def test_affinities_hit_target_perplexity():
    rng = np.random.default_rng(1)
    D = random_distances(rng, 12)
    P = conditional_affinities(D, 5.0)
    np.testing.assert_allclose(P.sum(axis=1), 1.0)
    np.testing.assert_array_equal(np.diag(P), 0.0)
    off = P[~np.eye(12, dtype=bool)].reshape(12, 11)
    H = -(off * np.log(off)).sum(axis=1)
    np.testing.assert_allclose(np.exp(H), 5.0, rtol=1e-6)
    J = joint_affinities(D, 5.0)
    np.testing.assert_allclose(J, J.T)
    assert J.sum() == pytest.approx(1.0, abs=1e-9)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    P = joint_affinities(random_distances(rng, 7), 3.0)
    Y = rng.normal(size=(7, 2))
    _, grad = _kl_and_grad(P, Y)
    h = 1e-6
    num = np.zeros_like(Y)
    for idx in np.ndindex(*Y.shape):
        Yp, Ym = Y.copy(), Y.copy()
        Yp[idx] += h
        Ym[idx] -= h
        num[idx] = (_kl_and_grad(P, Yp)[0] - _kl_and_grad(P, Ym)[0]) / (2 * h)
    np.testing.assert_allclose(grad, num, atol=1e-6)


def test_tsne_two_tight_pairs():
    D = np.full((4, 4), 10.0)
    D[0, 1] = D[1, 0] = D[2, 3] = D[3, 2] = 0.01
    np.fill_diagonal(D, 0.0)
    for seed in range(10):
        Y = tsne(D, TsneParams(perplexity=2.0, seed=seed)).embedding
        E = np.sqrt(((Y[:, None] - Y[None]) ** 2).sum(-1))
        np.fill_diagonal(E, np.inf)
        assert E.argmin(axis=1).tolist() == [1, 0, 3, 2]


def test_tsne_deterministic_and_kl_settles():
    rng = np.random.default_rng(3)
    pts = np.vstack([rng.normal(c, 0.3, (8, 3)) for c in (0, 3, 6)])
    D = np.triu(np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1)), 1)
    D = D + D.T
    a = tsne(D, TsneParams(seed=4))
    b = tsne(D, TsneParams(seed=4))
    assert a.embedding.tobytes() == b.embedding.tobytes()
    assert a.embedding.shape == (24, 2)
    late = a.kl[len(a.kl) // 2:]
    assert np.all(np.diff(late) <= 1e-3)
    assert a.kl[-1] < a.kl[0]


def test_tsne_errors():
    with pytest.raises(ValueError):
        tsne(np.array([[0.0, 1, 2, 3], [2, 0, 1, 1], [2, 1, 0, 1], [3, 1, 1, 0]]))
    with pytest.raises(ValueError):
        tsne(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        tsne(random_distances(np.random.default_rng(0), 5), TsneParams(perplexity=5))


# -- SVM ----------------------------------------------------------------------------------

def dual_objective(alpha, y, K):
    return alpha.sum() - 0.5 * (alpha * y) @ K @ (alpha * y)


def test_smo_1d_toy_against_grid():
    x = np.array([-2.0, -1.0, 1.0, 2.0])
    y = np.array([-1.0, -1.0, 1.0, 1.0])
    K = np.outer(x, x)
    model = smo(K, y, SvmParams(C=1.0, tolerance=1e-8))
    assert np.all(np.sign(model.decision(K)) == y)
    best = -np.inf
    grid = np.linspace(0, 1, 21)
    for a in itertools.product(grid, repeat=4):
        a = np.array(a)
        if abs(a @ y) < 1e-12:
            best = max(best, dual_objective(a, y, K))
    assert dual_objective(model.alpha, y, K) >= best - 1e-9
    # analytic optimum: only the two inner points are support vectors, alpha = 0.5
    np.testing.assert_allclose(model.alpha, [0, 0.5, 0.5, 0], atol=1e-6)
    assert model.b == pytest.approx(0.0, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), C=st.sampled_from([0.1, 1.0, 10.0]))
def test_smo_matches_sklearn(seed, C):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, 20))
    X = rng.normal(size=(n, 3))
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    y[0], y[1] = 1.0, -1.0
    K = X @ X.T
    params = SvmParams(C=C, tolerance=1e-6, max_passes=2000)
    model = smo(K, y, params)
    assert model.converged
    assert np.all((model.alpha >= 0) & (model.alpha <= C))
    assert abs(model.alpha @ y) < 1e-9
    assert kkt_residual(model, K, C) < 1e-3
    ref = SVC(C=C, kernel="precomputed", tol=1e-8).fit(K, y)
    ref_alpha = np.zeros(n)
    ref_alpha[ref.support_] = np.abs(ref.dual_coef_[0])
    assert dual_objective(model.alpha, y, K) == pytest.approx(dual_objective(ref_alpha, y, K), rel=1e-4, abs=1e-6)
    ours = model.decision(K)
    theirs = ref.decision_function(K)
    # decision values agree wherever the margin is not degenerate
    np.testing.assert_allclose(ours, theirs, atol=5e-3 * max(1.0, np.abs(theirs).max()))


def test_ovo_two_points_per_pair():
    X = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
    K = X @ X.T + 1.0
    model = svm_train_ovo(K, ["assault", "flank", "fallback"])
    assert model.predict(K) == ["assault", "flank", "fallback"]
    assert len(model.models) == 3


def test_ovo_duplicate_invariance():
    rng = np.random.default_rng(5)
    X = np.vstack([rng.normal(c, 0.6, (5, 2)) for c in ([0, 0], [3, 0], [0, 3])])
    labels = ["assault"] * 5 + ["flank"] * 5 + ["fallback"] * 5
    K = X @ X.T
    once = svm_train_ovo(K, labels)
    X2 = np.vstack([X, X])
    twice = svm_train_ovo(X2 @ X2.T, labels * 2)
    probes = rng.normal(1, 2, (200, 2))
    assert once.predict(X @ probes.T) == twice.predict(X2 @ probes.T)


def test_ovo_tie_break_by_strength():
    # one item per class, arranged so each class wins exactly one vote for the probe
    model = svm_train_ovo(np.eye(3), ["assault", "fallback", "flank"])
    F = model.decision_matrix(np.eye(3))
    assert F.shape == (3, 3)
    pred = model.predict(np.full((3, 1), 1 / 3))
    assert pred[0] in ("assault", "fallback", "flank")


def test_svm_errors():
    with pytest.raises(KernelNumericError):
        check_gram(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        svm_train_ovo(np.eye(2), ["assault", "assault"])
    with pytest.raises(ValueError):
        SvmParams(C=0)


# -- leave-one-out -----------------------------------------------------------------------

def test_loo_separated_toy():
    labeled = clustered_set(np.random.default_rng(6))
    acc, cm = loo_evaluate(labeled)
    assert acc == 1.0
    assert cm.total == 12
    assert np.array_equal(cm.counts, np.diag(np.diag(cm.counts)))
    acc_g, _ = loo_evaluate(labeled, kernel="gaussian")
    assert acc_g == 1.0


def permuted_accuracies(seed, n_perm=10):
    rng = np.random.default_rng(seed)
    base = clustered_set(rng)
    accs = []
    for _ in range(n_perm):
        perm = rng.permutation(base.labels)
        items = [LabeledItem(it.match_id, lab, it.vector) for it, lab in zip(base.items, perm)]
        acc, cm = loo_evaluate(LabeledSet(items, "reward"))
        assert cm.total == 12
        accs.append(acc)
    return np.array(accs)


@pytest.mark.xfail(strict=True, reason="balanced LOO under permuted labels sits below chance: the "
                   "held-out class is always the training minority (mean ~0.13 at n=12)")
def test_loo_permuted_labels_near_chance():
    assert np.mean(permuted_accuracies(7)) == pytest.approx(1 / 3, abs=0.2)


def test_loo_permuted_labels_learn_nothing():
    for seed in (7, 8, 9):
        accs = permuted_accuracies(seed)
        assert np.mean(accs) <= 1 / 3 + 0.2
        assert accs.max() < 1.0


def test_loo_errors():
    v = RkhsVector.unit(np.zeros(6), SPEC)
    tiny = LabeledSet([LabeledItem("a", "assault", v), LabeledItem("b", "flank", v)], "reward")
    with pytest.raises(ValueError):
        loo_evaluate(tiny)
    with pytest.raises(ValueError):
        loo_predictions(np.eye(4), ["assault", "flank"] * 2, kernel="poly")


def test_median_bandwidth():
    D = np.array([[0, 1, 3], [1, 0, 2], [3, 2, 0]], dtype=float)
    assert median_bandwidth(D) == 2.0
    assert median_bandwidth(np.zeros((2, 2))) == 1.0


def test_confusion_matrix():
    cm = ConfusionMatrix.from_predictions(["assault", "flank", "flank"], ["assault", "assault", "flank"])
    assert cm.total == 3
    assert cm.accuracy == pytest.approx(2 / 3)
    lines = cm.to_csv().decode().splitlines()
    assert lines[0] == "true\\predicted,assault,flank,fallback"
    assert lines[2] == "flank,1,1,0"


# -- cluster reports ------------------------------------------------------------------------

def test_cluster_report_pure():
    rep = cluster_report([0, 0, 1, 1, 2, 2], ["assault", "assault", "flank", "flank", "fallback", "fallback"])
    pur = rep.purity()
    assert sorted(pur.max(axis=1).tolist()) == [1.0, 1.0, 1.0]
    assert rep.top_concentration("flank") == (1, 1.0)


def test_cluster_report_mixed():
    rep = cluster_report([0, 0, 0, 1], ["fallback", "fallback", "assault", "flank"])
    fallback = rep.labels.index("fallback")
    assert rep.purity()[0, fallback] == pytest.approx(2 / 3)
    assert "0.6667" in rep.to_csv().decode().splitlines()[1]


def test_cluster_report_over_label_totals():
    labels = ["fallback"] * 11 + ["assault"] * 12 + ["flank"] * 13
    assign = [0] * 9 + [1] * 2 + [1] * 12 + [2] * 13
    rep = cluster_report(assign, labels)
    c, share = rep.top_concentration("fallback")
    assert c == 0 and share == pytest.approx(9 / 11)
    np.testing.assert_allclose(rep.concentration().sum(axis=0), 1.0)
