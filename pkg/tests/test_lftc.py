import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdlearn.dataset import AnnotationSet
from crowdlearn.lftc import (
    ETA_CLIP,
    AnnotatorModel,
    SGADivergedError,
    annotation_gradients,
    annotation_log_likelihood,
    annotation_objective,
    correct_label_mass,
    dlik_deta,
    expected_log_likelihood,
    expertise,
    objective,
    reliability,
    sga_fit,
    sga_pass,
)
from crowdlearn.metrics import pearson
from crowdlearn.synthetic import generate_synthetic, make_separable

from conftest import dense_set


def random_model(n=4, d=3, k=5, seed=0, scale=0.5, lam=0.01, sign="eq6_negative"):
    rng = np.random.default_rng(seed)
    return AnnotatorModel(rng.normal(scale=scale, size=(n, d)),
                          rng.normal(scale=scale, size=(d, k)), lam, sign)


class TestReliability:
    def test_zero_embedding_is_half(self):
        m = random_model()
        m.embeddings[2] = 0.0
        assert reliability(m, np.ones(5), 2) == 0.5

    def test_large_score_saturates_at_clip(self):
        m = AnnotatorModel(np.full((1, 1), 100.0), np.full((1, 2), 100.0))
        eta = reliability(m, np.ones(2), 0)
        assert eta == 1.0 - ETA_CLIP

    @pytest.mark.parametrize("sign, expect", [("eq6_negative", 1), ("sec52_positive", -1)])
    def test_scalar_oracle(self, sign, expect):
        m = random_model(sign=sign, seed=3)
        x = np.random.default_rng(1).normal(size=5)
        for j in range(4):
            s = sum(m.embeddings[j, r] * m.projection[r, c] * x[c]
                    for r in range(3) for c in range(5))
            assert reliability(m, x, j) == pytest.approx(1.0 / (1.0 + math.exp(-expect * s)), abs=1e-14)

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            reliability(random_model(), np.ones(5), 4)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            reliability(random_model(), np.ones(4), 0)

    def test_invariant_to_annotator_storage_order(self):
        m = random_model(seed=2)
        perm = np.array([2, 0, 3, 1])
        p = AnnotatorModel(m.embeddings[perm], m.projection, m.lam)
        x = np.arange(5.0)
        for new, old in enumerate(perm):
            assert reliability(p, x, new) == reliability(m, x, old)

    @settings(max_examples=50)
    @given(st.floats(-30, 30), st.floats(0.01, 5))
    def test_monotone_in_score(self, s, ds):
        lo = AnnotatorModel(np.array([[s]]), np.array([[1.0]]))
        hi = AnnotatorModel(np.array([[s + ds]]), np.array([[1.0]]))
        assert reliability(hi, np.ones(1), 0) >= reliability(lo, np.ones(1), 0)
        if abs(s) < 10:
            assert reliability(hi, np.ones(1), 0) > reliability(lo, np.ones(1), 0)

    def test_batch_matches_scalar(self):
        m = random_model(seed=5)
        X = np.random.default_rng(0).normal(size=(6, 5))
        ii, jj = np.array([0, 1, 5, 3]), np.array([3, 0, 2, 2])
        batch = m.reliabilities(X, ii, jj)
        assert np.allclose(batch, [reliability(m, X[i], j) for i, j in zip(ii, jj)], atol=1e-15)


class TestLikelihood:
    def test_correct_at_half(self):
        m = random_model()
        m.embeddings[0] = 0.0
        assert annotation_log_likelihood(m, np.ones(5), 0, 1, 1) == pytest.approx(math.log(0.5))

    def test_wrong_at_saturation_is_finite(self):
        m = AnnotatorModel(np.full((1, 1), 100.0), np.full((1, 2), 100.0))
        v = annotation_log_likelihood(m, np.ones(2), 0, 0, 1)
        assert np.isfinite(v) and v == pytest.approx(math.log(ETA_CLIP))

    @pytest.mark.parametrize("seed", range(5))
    def test_binary_closed_form(self, seed):
        m = random_model(seed=seed)
        x = np.random.default_rng(seed).normal(size=5)
        for L in (0, 1):
            for y in (0, 1):
                eta = reliability(m, x, 1)
                literal = (1 - eta) ** abs(L - y) * eta ** (1 - abs(L - y))
                assert annotation_log_likelihood(m, x, 1, L, y) == pytest.approx(math.log(literal), abs=1e-12)

    @pytest.mark.parametrize("point", range(20))
    def test_dlik_deta_finite_difference(self, point):
        rng = np.random.default_rng(point)
        eta, p = rng.uniform(0.05, 0.95), rng.uniform(0, 1)
        h = 1e-6
        num = (expected_log_likelihood(eta + h, p) - expected_log_likelihood(eta - h, p)) / (2 * h)
        assert abs(num - dlik_deta(eta, p)) / abs(dlik_deta(eta, p)) < 1e-6 or abs(num - dlik_deta(eta, p)) < 1e-8


class TestGradients:
    @pytest.mark.parametrize("point", range(20))
    @pytest.mark.parametrize("sign", ["eq6_negative", "sec52_positive"])
    def test_central_differences(self, point, sign):
        m = random_model(seed=point, lam=0.05, sign=sign)
        rng = np.random.default_rng(100 + point)
        x = rng.normal(size=5)
        j = int(rng.integers(4))
        p = rng.uniform()
        gu, gF = annotation_gradients(m, x, j, p)
        h = 1e-5
        for arr, g in ((m.embeddings, gu), (m.projection, gF)):
            num = np.zeros_like(g)
            idxs = [(j, r) for r in range(3)] if arr is m.embeddings else list(np.ndindex(arr.shape))
            for flat, idx in enumerate(idxs):
                old = arr[idx]
                arr[idx] = old + h
                up = annotation_objective(m, x, j, p)
                arr[idx] = old - h
                down = annotation_objective(m, x, j, p)
                arr[idx] = old
                num[idx[1:] if arr is m.embeddings else idx] = (up - down) / (2 * h)
            err = np.linalg.norm(g - num) / max(np.linalg.norm(g) + np.linalg.norm(num), 1e-12)
            assert err < 1e-5


def _python_pass(model, aset, pc, order, gamma):
    """Reference pass built on the scalar gradient functions."""
    for a in order:
        i, j = aset.ann_sample[a], aset.ann_annotator[a]
        x = aset.features[i]
        gu, _ = annotation_gradients(model, x, j, pc[a])
        model.embeddings[j] += gamma * gu
        _, gF = annotation_gradients(model, x, j, pc[a])
        model.projection += gamma * gF


class TestSga:
    def test_kernel_matches_python_reference(self):
        aset = dense_set(12, 4, seed=3, k=5)
        post = np.eye(2)[aset.golden]
        pc = correct_label_mass(aset, post)
        order = np.random.default_rng(0).permutation(aset.num_annotations)
        a, b = random_model(seed=1, d=3), random_model(seed=1, d=3)
        sga_pass(a, aset.features, aset.ann_sample, aset.ann_annotator, pc, order, 0.05)
        _python_pass(b, aset, pc, order, 0.05)
        assert np.allclose(a.embeddings, b.embeddings, atol=1e-12)
        assert np.allclose(a.projection, b.projection, atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_small_step_pass_does_not_decrease(self, seed):
        aset = dense_set(20, 5, seed=seed, k=3)
        post = np.random.default_rng(seed).dirichlet([1, 1], size=20)
        pc = correct_label_mass(aset, post)
        m = AnnotatorModel.initialize(5, 2, 3, lam=0.01, seed=seed)
        before = objective(m, aset, pc)
        order = np.random.default_rng(seed).permutation(aset.num_annotations)
        sga_pass(m, aset.features, aset.ann_sample, aset.ann_annotator, pc, order, 1e-3)
        assert objective(m, aset, pc) >= before

    def test_heavy_regularisation_pulls_to_half(self):
        aset = dense_set(20, 5, seed=0, k=3)
        m = random_model(n=5, d=2, k=3, seed=0, lam=1e6)
        # the step has to resolve the regulariser: 2 * gamma * lam < 1
        sga_fit(m, aset, np.eye(2)[aset.golden], gamma=2e-7, iters=50, tol=0.0)
        assert np.all(np.linalg.norm(m.embeddings, axis=1) < 1e-6)
        assert np.allclose(m.annotation_reliability(aset), 0.5, atol=1e-6)

    def test_divergence_reported(self):
        aset = dense_set(20, 5, seed=0, k=3)
        m = random_model(n=5, d=2, k=3, seed=0, lam=1e6)
        with pytest.raises(SGADivergedError):
            with np.errstate(all="ignore"):
                sga_fit(m, aset, np.eye(2)[aset.golden], gamma=0.05, iters=50, backtrack=False)

    def test_backtracking_survives_oversized_step(self):
        aset = dense_set(20, 5, seed=0, k=3)
        m = random_model(n=5, d=2, k=3, seed=0, lam=1e6)
        post = np.eye(2)[aset.golden]
        start = objective(m, aset, correct_label_mass(aset, post))
        with np.errstate(all="ignore"):
            log = sga_fit(m, aset, post, gamma=0.05, iters=50)
        assert np.all(np.isfinite(m.embeddings))
        assert log[-1] >= start
        assert log[-1] == pytest.approx(objective(m, aset, correct_label_mass(aset, post)))

    @pytest.mark.parametrize("seed", range(5))
    def test_backtracking_log_never_decreases(self, seed):
        aset = dense_set(60, 8, seed=seed, k=3, p_correct=0.7)
        m = AnnotatorModel.initialize(8, 3, 3, seed=seed)
        post = np.eye(2)[aset.golden]
        start = objective(m, aset, correct_label_mass(aset, post))
        log = sga_fit(m, aset, post, gamma=0.5, iters=40, seed=seed)
        assert np.all(np.diff([start] + log) >= 0)

    def test_returns_per_pass_objective_and_stops_on_tolerance(self):
        aset = dense_set(30, 4, seed=1, k=3)
        m = AnnotatorModel.initialize(4, 2, 3, seed=0)
        log = sga_fit(m, aset, np.eye(2)[aset.golden], gamma=0.01, iters=500, tol=1e-4)
        assert 1 <= len(log) < 500
        assert log[-1] == pytest.approx(objective(m, aset, correct_label_mass(aset, np.eye(2)[aset.golden])))

    def test_rejects_invalid_posteriors(self):
        aset = dense_set(5, 2)
        m = AnnotatorModel.initialize(2, 2, 3)
        with pytest.raises(ValueError):
            sga_fit(m, aset, np.full((5, 2), 0.7))
        with pytest.raises(ValueError):
            sga_fit(m, aset, np.eye(2)[aset.golden], gamma=0.0)

    def test_golden_posteriors_recover_expertise(self):
        X, y = make_separable(5000, 10, scale=0.6, seed=0)
        aset, truth = generate_synthetic(X, y, 5000, 10, 0.001, seed=0)
        m = AnnotatorModel.initialize(5000, 10, 10, seed=1)
        sga_fit(m, aset, np.eye(2)[aset.golden], gamma=0.05, iters=200, seed=0)
        active = aset.annotator_counts() > 0
        assert pearson(expertise(m, aset)[active], truth.expertise[active]) >= 0.9


class TestExpertise:
    def test_constant_reliability(self):
        # zero projection rows except one make every score equal for annotator 0
        m = AnnotatorModel(np.array([[math.log(9.0)], [0.0]]), np.array([[1.0]]))
        aset = AnnotationSet(np.ones((3, 1)), [0, 1, 2], [0, 0, 0], [1, 0, 1], 2, 2)
        assert expertise(m, aset, 0) == pytest.approx(0.9)

    def test_no_annotations_is_neutral(self):
        m = random_model(n=3, k=1)
        aset = AnnotationSet(np.ones((2, 1)), [0, 1], [0, 0], [1, 0], 3, 2)
        assert expertise(m, aset, 2) == 0.5
        assert expertise(m, aset)[1] == 0.5

    def test_index_check(self):
        with pytest.raises(IndexError):
            expertise(random_model(), dense_set(3, 4, k=5), 9)


class TestModel:
    def test_checkpoint_round_trip(self, tmp_path):
        m = random_model(sign="sec52_positive", lam=0.3)
        m.save(tmp_path / "a.json")
        back = AnnotatorModel.load(tmp_path / "a.json")
        assert np.array_equal(back.embeddings, m.embeddings)
        assert np.array_equal(back.projection, m.projection)
        assert (back.lam, back.sign_convention) == (0.3, "sec52_positive")
        rec = m.to_dict()
        assert (rec["n"], rec["d"], rec["k"], rec["version"]) == (4, 3, 5, 1)

    def test_large_latent_dim_warns(self):
        with pytest.warns(UserWarning):
            AnnotatorModel.initialize(3, 5, 2, num_samples=10)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            AnnotatorModel.initialize(30, 5, 2, num_samples=10)

    def test_initialisation_range(self):
        m = AnnotatorModel.initialize(50, 4, 6, seed=0)
        assert np.all(np.abs(m.embeddings) < 0.1) and np.all(np.abs(m.projection) < 0.1)

    @pytest.mark.parametrize("bad", [{"lam": -1.0}, {"sign_convention": "other"}])
    def test_validation(self, bad):
        kw = {"lam": 0.01, "sign_convention": "eq6_negative", **bad}
        with pytest.raises(ValueError):
            AnnotatorModel(np.zeros((2, 2)), np.zeros((2, 3)), **kw)
