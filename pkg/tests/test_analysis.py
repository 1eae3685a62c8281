import itertools
import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from tiertransform.analysis import (
    auc_roc,
    kabsch_align,
    ligand_rmsd,
    nef,
    pca_fit,
    pca_transform,
    rmsd,
    select_best_conformations,
)
from tiertransform.errors import CountMismatch, DegenerateGeometry, NoActives, RankDeficient, ShapeMismatch, SingleClass


def nef_oracle(scores, labels, chi=None):
    m = len(scores)
    a = sum(labels)
    chi = Fraction(a, m) if chi is None else Fraction(chi).limit_denominator(10**6)
    top = max(1, math.ceil(chi * m))
    ranked = sorted(range(m), key=lambda i: -scores[i])  # sorted() is stable
    a_s = sum(labels[i] for i in ranked[:top])
    return a_s / min(top, a)


def auc_oracle(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(Fraction(1) if p > n else Fraction(1, 2) if p == n else Fraction(0) for p in pos for n in neg)
    return float(wins / (len(pos) * len(neg)))


# Kabsch / RMSD


def test_kabsch_identity(rng):
    x = rng.normal(size=(10, 3))
    res = kabsch_align(x, x)
    np.testing.assert_allclose(res.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(res.translation, 0.0, atol=1e-12)
    assert res.rmsd < 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_kabsch_recovers_rigid_motion(seed):
    rng = np.random.default_rng(seed)
    ref = rng.normal(0, 5, size=(20, 3))
    rot = Rotation.random(random_state=seed).as_matrix()
    mobile = (ref - 3.0) @ rot.T + rng.normal(0, 10, 3)
    res = kabsch_align(ref, mobile)
    assert res.rmsd <= 1e-9
    assert np.linalg.det(res.rotation) == pytest.approx(1.0)
    np.testing.assert_allclose(res.apply(mobile), ref, atol=1e-9)


def test_kabsch_noisy_copy(rng):
    ref = rng.normal(0, 5, size=(200, 3))
    mobile = ref + rng.normal(0, 0.1, ref.shape)
    res = kabsch_align(ref, mobile)
    assert 0.05 <= res.rmsd <= 0.2
    assert res.rmsd <= rmsd(ref, mobile)


def test_kabsch_never_returns_a_reflection(rng):
    ref = rng.normal(size=(8, 3))
    mirrored = ref * [1.0, 1.0, -1.0]
    res = kabsch_align(ref, mirrored)
    assert np.linalg.det(res.rotation) == pytest.approx(1.0)
    assert res.rmsd > 0


def test_kabsch_subset_fit(rng):
    ref = rng.normal(size=(12, 3))
    rot = Rotation.from_rotvec([0.3, -0.2, 0.9]).as_matrix()
    mobile = ref @ rot.T + 1.0
    mobile[8:] += 5.0  # unrelated atoms outside the subset
    res = kabsch_align(ref, mobile, subset=np.arange(8))
    assert res.rmsd <= 1e-9
    np.testing.assert_allclose(res.apply(mobile)[:8], ref[:8], atol=1e-9)


def test_kabsch_errors(rng):
    with pytest.raises(DegenerateGeometry):
        kabsch_align(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateGeometry):
        kabsch_align(line, line)
    with pytest.raises(CountMismatch):
        kabsch_align(rng.normal(size=(4, 3)), rng.normal(size=(5, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 3.0))
def test_alignment_never_increases_rmsd(seed, noise):
    rng = np.random.default_rng(seed)
    ref = rng.normal(0, 3, size=(6, 3))
    mobile = ref + rng.normal(0, noise + 1e-3, ref.shape) + rng.normal(0, 2, 3)
    assert kabsch_align(ref, mobile).rmsd <= rmsd(ref, mobile) + 1e-12


def test_ligand_rmsd():
    ref = np.zeros((4, 3))
    cand = ref.copy()
    cand[2] = [2.0, 0.0, 0.0]
    assert ligand_rmsd(ref, cand) == pytest.approx(1.0)
    ref2 = np.arange(12.0).reshape(4, 3)
    assert ligand_rmsd(ref2, ref2[[3, 1, 0, 2]], mapping=[2, 1, 3, 0]) == 0.0
    with pytest.raises(CountMismatch):
        ligand_rmsd(ref, ref[:3])
    with pytest.raises(CountMismatch):
        ligand_rmsd(ref, ref, mapping=[0, 0, 1, 2])


def test_select_best_conformations(rng):
    recs = [f"seed{i}" for i in range(8)]
    assert select_best_conformations(recs, np.zeros(8), k=0) == []
    assert select_best_conformations(recs, np.zeros(8), k=3) == ["seed0", "seed1", "seed2"]
    scores = rng.normal(size=8)
    oracle = [recs[i] for i in sorted(range(8), key=lambda i: scores[i])[:3]]
    assert select_best_conformations(recs, scores) == oracle
    with pytest.raises(ValueError):
        select_best_conformations(recs, scores, k=9)
    with pytest.raises(CountMismatch):
        select_best_conformations(recs, scores[:5])


# PCA


def test_pca_matches_dense_eigendecomposition(rng):
    data = rng.normal(size=(15, 9)) @ rng.normal(size=(9, 9))
    model = pca_fit(data)
    cov = np.cov(data, rowvar=False)
    w, v = np.linalg.eig(cov)
    order = np.argsort(w.real)[::-1][:2]
    np.testing.assert_allclose(model.explained_variance, w.real[order], rtol=1e-8)
    for comp, ref in zip(model.components, v.real[:, order].T):
        sign = np.sign(comp @ ref)
        np.testing.assert_allclose(comp, sign * ref, atol=1e-8)
        assert comp[np.argmax(np.abs(comp))] > 0


def test_pca_projection_is_centred(rng):
    data = rng.normal(size=(10, 6))
    model = pca_fit(data)
    proj = pca_transform(model, data)
    assert proj.shape == (10, 2)
    np.testing.assert_allclose(proj.mean(axis=0), 0.0, atol=1e-10)
    assert pca_transform(model, data[0]).shape == (1, 2)


def test_pca_reconstruction_never_moves_away_from_mean(rng):
    data = rng.normal(size=(12, 5))
    model = pca_fit(data)
    for row in data:
        recon = model.mean + pca_transform(model, row)[0] @ model.components
        assert np.linalg.norm(recon - model.mean) <= np.linalg.norm(row - model.mean) + 1e-12


def test_pca_collinear_points_warn():
    data = np.outer(np.arange(5.0), [1.0, 2.0, 2.0])
    with pytest.warns(RankDeficient):
        model = pca_fit(data)
    assert model.explained_variance[0] > 0 and model.explained_variance[1] == 0.0
    assert abs(model.components[0] @ model.components[1]) < 1e-12
    # deterministic choice of the null-space axis
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficient)
        again = pca_fit(data)
    np.testing.assert_array_equal(model.components, again.components)


def test_pca_errors(rng):
    with pytest.raises(ShapeMismatch):
        pca_fit(rng.normal(size=(2, 4)))
    with pytest.raises(ShapeMismatch):
        pca_fit(rng.normal(size=(5, 1)))
    model = pca_fit(rng.normal(size=(5, 4)))
    with pytest.raises(ShapeMismatch):
        pca_transform(model, rng.normal(size=(2, 3)))


# NEF / AUC


def test_nef_examples():
    labels = [1, 1, 0, 0, 0, 0, 0, 0, 0, 0]
    assert nef(np.arange(10, 0, -1), labels) == 1.0
    # top-2 contains one active
    scores = [10, 3, 9, 1, 1, 1, 1, 1, 1, 1]
    assert nef(scores, labels, chi=0.2) == 0.5
    with pytest.raises(NoActives):
        nef([1, 2, 3], [0, 0, 0])
    with pytest.raises(ValueError):
        nef([1, 2], [1, 0], chi=0.0)


def test_nef_ties_follow_input_order():
    assert nef([1.0, 1.0, 1.0, 1.0], [1, 0, 0, 0], chi=0.25) == 1.0
    assert nef([1.0, 1.0, 1.0, 1.0], [0, 1, 0, 0], chi=0.25) == 0.0


def test_auc_examples():
    assert auc_roc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert auc_roc([0.5, 0.5], [1, 0]) == 0.5
    s = [0.3, 0.9, 0.1, 0.7, 0.4, 0.4]
    y = [1, 0, 1, 1, 0, 0]
    assert auc_roc(s, y) == auc_oracle(s, y)
    assert auc_roc(-np.array(s), y) == pytest.approx(1 - auc_roc(s, y))
    with pytest.raises(SingleClass):
        auc_roc([1, 2], [1, 1])
    with pytest.raises(CountMismatch):
        auc_roc([1, 2, 3], [1, 0])


def test_metrics_match_oracles_on_small_tables():
    for labels in itertools.product([0, 1], repeat=4):
        if not any(labels):
            continue
        for scores in itertools.product([0, 1, 2], repeat=4):
            assert nef(scores, labels) == nef_oracle(scores, labels)
            assert nef(scores, labels, chi=0.5) == nef_oracle(scores, labels, 0.5)
            if all(labels):
                continue
            assert auc_roc(scores, labels) == auc_oracle(scores, labels)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=12), st.data())
def test_metrics_invariant_under_monotone_transform(scores, data):
    labels = data.draw(st.lists(st.booleans(), min_size=len(scores), max_size=len(scores)))
    s = np.array(scores)
    t = np.exp(s / 50.0) * 3.0 + 1.0
    if any(labels):
        v = nef(s, labels)
        assert 0.0 <= v <= 1.0
        if len(np.unique(s)) == len(np.unique(t)):
            assert nef(t, labels) == v
    if any(labels) and not all(labels) and len(np.unique(s)) == len(np.unique(t)):
        assert auc_roc(t, labels) == pytest.approx(auc_roc(s, labels), abs=1e-15)


def test_auc_of_random_scores_centres_on_half():
    rng = np.random.default_rng(7)
    trials = 10**4
    vals = np.empty(trials)
    labels = np.array([1] * 10 + [0] * 10, dtype=bool)
    for k in range(trials):
        vals[k] = auc_roc(rng.random(20), labels)
    # Mann-Whitney null variance: (n1 + n2 + 1) / (12 n1 n2)
    sd = math.sqrt(21 / (12 * 100))
    assert abs(vals.mean() - 0.5) <= 3 * sd / math.sqrt(trials)
