import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from crowdlearn import em
from crowdlearn.baselines import SparseReliabilityModel
from crowdlearn.bayesian_net import BayesianClassifier, NetworkConfig
from crowdlearn.dataset import AnnotationSet
from crowdlearn.lftc import AnnotatorModel
from crowdlearn.synthetic import make_separable

from conftest import dense_set


def uniform_classifier(k, C):
    clf = BayesianClassifier(NetworkConfig(k, (), C, dropout_rate=0.0), seed=0)
    for p in clf.params:
        p[...] = 0.0
    return clf


def constant_eta(n, eta):
    return SparseReliabilityModel(np.full(n, np.log(eta / (1.0 - eta))))


def state_for(aset, model):
    return em.EmState(uniform_classifier(aset.num_features, aset.num_classes), model,
                      np.full((aset.num_samples, aset.num_classes), 1.0 / aset.num_classes))


class _ZeroClassifier:
    def predict_proba(self, X, T=20, seed=0):
        return np.zeros((len(X), 2))


class TestEStep:
    @settings(max_examples=40, deadline=None)
    @given(hst.integers(1, 15), hst.integers(1, 6), hst.integers(2, 4), hst.integers(0, 10_000),
           hst.floats(0.01, 0.99))
    def test_posteriors_are_distributions(self, m, n, C, seed, eta):
        aset = dense_set(m, n, C=C, seed=seed)
        post = em.e_step(state_for(aset, constant_eta(n, eta)), aset)
        assert post.shape == (m, C)
        assert np.all(post >= 0) and np.allclose(post.sum(axis=1), 1.0, atol=1e-12)

    def test_single_annotator_bayes(self):
        aset = AnnotationSet(np.ones((1, 2)), [0], [0], [1], 1, 2)
        post = em.e_step(state_for(aset, constant_eta(1, 0.9)), aset)
        assert post[0, 1] == pytest.approx(0.9, abs=1e-12)

    def test_uninformative_annotations(self):
        aset = dense_set(10, 4, C=3, seed=2)
        post = em.e_step(state_for(aset, constant_eta(4, 0.5)), aset)
        # eta = 0.5 with C = 3 still splits the wrong mass, so use C = 2 for exact uniformity
        aset2 = dense_set(10, 4, C=2, seed=2)
        post2 = em.e_step(state_for(aset2, constant_eta(4, 0.5)), aset2)
        assert np.allclose(post2, 0.5, atol=1e-12)
        assert np.allclose(post.sum(axis=1), 1.0)

    def test_unannotated_sample_gets_network_predictive(self):
        aset = AnnotationSet(np.ones((2, 3)), [0], [0], [1], 1, 2)
        clf = BayesianClassifier(NetworkConfig(3, (4,), 2, dropout_rate=0.2), seed=3)
        st = em.EmState(clf, constant_eta(1, 0.8), np.full((2, 2), 0.5))
        post = em.e_step(st, aset, T=7, seed=1)
        assert np.allclose(post[1], clf.predict_proba(aset.features, T=7, seed=1)[1])

    def test_rows_sum_to_one(self, small_dense):
        model = AnnotatorModel.initialize(5, 3, 3, seed=0)
        model.embeddings *= 30
        clf = BayesianClassifier(NetworkConfig(3, (8,), 2), seed=0)
        post = em.e_step(em.EmState(clf, model, None), small_dense, T=5, seed=0)
        assert np.all(np.abs(post.sum(axis=1) - 1.0) <= 1e-9)

    def test_pure_function_of_inputs(self, small_dense):
        clf = BayesianClassifier(NetworkConfig(3, (8,), 2, dropout_rate=0.5), seed=0)
        st = em.EmState(clf, AnnotatorModel.initialize(5, 3, 3, seed=1), None)
        a = em.e_step(st, small_dense, T=9, seed=4)
        b = em.e_step(st, small_dense, T=9, seed=4)
        assert np.array_equal(a, b)

    def test_neutral_annotator_can_be_removed(self, small_dense):
        model = AnnotatorModel.initialize(5, 3, 3, seed=1)
        model.embeddings *= 20
        model.embeddings[3] = 0.0  # eta == 0.5 everywhere
        clf = BayesianClassifier(NetworkConfig(3, (8,), 2), seed=0)
        st = em.EmState(clf, model, None)
        full = em.e_step(st, small_dense, T=5, seed=0)
        without = small_dense.select_annotations(small_dense.ann_annotator != 3)
        assert np.allclose(full, em.e_step(st, without, T=5, seed=0), atol=1e-9)

    def test_unnormalisable_posterior_is_an_error(self):
        aset = AnnotationSet(np.ones((1, 2)), [0], [0], [1], 1, 2)
        st = em.EmState(_ZeroClassifier(), constant_eta(1, 0.9), None)
        with pytest.raises(em.PosteriorError):
            em.e_step(st, aset)


def _brute_force_posterior(labels, eta, C):
    """Enumerate p(y = c) for one sample with a uniform prior."""
    lik = np.array([np.prod([eta if L == c else (1 - eta) / (C - 1) for L in labels])
                    for c in range(C)])
    return lik / lik.sum()


class TestMajorityVoteOracle:
    def test_hundred_random_dense_instances(self):
        rng = np.random.default_rng(2024)
        for trial in range(100):
            m, n, C = int(rng.integers(1, 21)), int(rng.integers(1, 8)), int(rng.integers(2, 5))
            aset = dense_set(m, n, C=C, seed=trial, p_correct=rng.uniform(0.3, 1.0))
            post = em.e_step(state_for(aset, constant_eta(n, 0.8)), aset)
            counts = aset.label_counts()
            for i in range(m):
                labels = aset.ann_label[aset.ann_sample == i]
                oracle = _brute_force_posterior(labels, 0.8, C)
                assert np.allclose(post[i], oracle, atol=1e-12)
                majority = np.flatnonzero(counts[i] == counts[i].max())
                if majority.size == 1:
                    assert np.argmax(post[i]) == np.argmax(oracle) == majority[0]
                assert np.argmax(post[i]) in majority
                # tied counts give tied posteriors
                assert np.allclose(post[i][majority], post[i][majority[0]])


class TestObjective:
    def test_trace_nondecreasing_on_dense_instance(self):
        aset = dense_set(50, 5, seed=11, p_correct=0.75)
        net = NetworkConfig(3, (16,), 2, dropout_rate=0.1, learning_rate=1e-3)
        lftc = em.LftcConfig(latent_dim=2, iters=20)
        cfg = em.EmConfig(max_iters=10, em_tolerance=1e-12, seed=3)
        st = em.fit(aset, net, lftc, cfg)
        tr = st.objective_trace
        assert len(tr) == 10
        for a, b in zip(tr, tr[1:]):
            assert b >= a - 1e-4 * abs(a)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_objective_after_e_step_is_marginal_loglik(self, seed):
        aset = dense_set(20, 3, seed=seed, p_correct=0.7)
        st = em.init_state(aset, NetworkConfig(3, (4,), 2), em.LftcConfig(latent_dim=2), em.EmConfig())
        st.posteriors = em.e_step(st, aset, T=5, seed=9)
        assert em.objective(st, aset, st.posteriors, T=5, seed=9) == pytest.approx(
            em.log_likelihood(st, aset, T=5, seed=9), rel=1e-10)

    def test_e_step_maximises_objective(self):
        aset = dense_set(20, 3, seed=4, p_correct=0.7)
        st = em.init_state(aset, NetworkConfig(3, (4,), 2), em.LftcConfig(latent_dim=2), em.EmConfig())
        best = em.objective(st, aset, em.e_step(st, aset, T=5, seed=9), T=5, seed=9)
        rng = np.random.default_rng(0)
        for _ in range(20):
            other = rng.dirichlet(np.ones(2), size=20)
            assert em.objective(st, aset, other, T=5, seed=9) <= best

    def test_consecutive_m_steps_with_frozen_posteriors(self):
        aset = dense_set(30, 4, seed=5)
        net = NetworkConfig(3, (8,), 2, dropout_rate=0.0, learning_rate=1e-3, batch_size=30)
        lftc = em.LftcConfig(latent_dim=2, gamma=1e-3, iters=5)
        cfg = em.EmConfig(net_epochs_per_m_step=3, seed=0)
        st = em.init_state(aset, NetworkConfig(3, (8,), 2, dropout_rate=0.0), lftc, cfg)
        st.classifier = BayesianClassifier(net, seed=1)
        em.m_step(st, aset, cfg, lftc, 0)
        em.m_step(st, aset, cfg, lftc, 1)
        assert st.objective_trace[1] >= st.objective_trace[0] - 1e-6

    def test_uniform_weighting_counts_samples_once(self, small_dense):
        assert np.all(em.sample_weights(small_dense, "count") == 5)
        assert np.all(em.sample_weights(small_dense, "uniform") == 1)
        with pytest.raises(ValueError):
            em.sample_weights(small_dense, "other")


class TestMStep:
    def test_correct_posteriors_train_the_classifier(self):
        X, y = make_separable(400, 4, scale=1.0, seed=2)
        aset = AnnotationSet(X, np.arange(400), np.zeros(400, int), y, 1, 2, y)
        cfg = em.EmConfig(net_epochs_per_m_step=60, seed=0)
        lftc = em.LftcConfig(latent_dim=1, iters=1)
        st = em.init_state(aset, NetworkConfig(4, (16,), 2, dropout_rate=0.0, learning_rate=0.01), lftc, cfg)
        st.posteriors = np.eye(2)[y]
        em.m_step(st, aset, cfg, lftc)
        assert (st.classifier.forward(X).argmax(axis=1) == y).mean() >= 0.99

    def test_no_op_configuration(self, small_dense):
        cfg = em.EmConfig(net_epochs_per_m_step=0, seed=0)
        lftc = em.LftcConfig(latent_dim=2, iters=0)
        st = em.init_state(small_dense, NetworkConfig(3, (4,), 2), lftc, cfg)
        before = st.classifier.copy(), st.annotator_model.copy()
        em.m_step(st, small_dense, cfg, lftc)
        assert all(np.array_equal(a, b) for a, b in zip(before[0].params, st.classifier.params))
        assert np.array_equal(before[1].embeddings, st.annotator_model.embeddings)
        assert len(st.objective_trace) == 1


class TestFit:
    def test_single_reliable_annotator(self):
        X, y = make_separable(50, 3, scale=1.0, seed=0)
        aset = AnnotationSet(X, np.arange(50), np.zeros(50, int), y, 1, 2)
        st = em.fit(aset, NetworkConfig(3, (8,), 2), em.LftcConfig(latent_dim=1, iters=10),
                    em.EmConfig(max_iters=5, seed=0))
        assert np.array_equal(st.labels, y)

    def test_one_iteration(self, small_dense):
        st = em.fit(small_dense, NetworkConfig(3, (4,), 2), em.LftcConfig(latent_dim=2, iters=2),
                    em.EmConfig(max_iters=1))
        assert (st.e_steps, st.m_steps, len(st.objective_trace)) == (1, 1, 1)

    def test_majority_vote_initialisation(self, small_dense):
        post = em.initial_posteriors(small_dense, seed=0)
        counts = small_dense.label_counts()
        assert np.all(post.sum(axis=1) == 1.0)
        assert np.all(counts[np.arange(50), post.argmax(axis=1)] == counts.max(axis=1))

    def test_deterministic(self, small_dense):
        args = (small_dense, NetworkConfig(3, (8,), 2), em.LftcConfig(latent_dim=2, iters=3),
                em.EmConfig(max_iters=3, seed=9))
        a, b = em.fit(*args), em.fit(*args)
        assert a.objective_trace == b.objective_trace
        assert np.array_equal(a.posteriors, b.posteriors)

    def test_warm_start_continues_from_models(self, small_dense):
        net, lftc = NetworkConfig(3, (8,), 2), em.LftcConfig(latent_dim=2, iters=3)
        st = em.fit(small_dense, net, lftc, em.EmConfig(max_iters=2, seed=0))
        model_before = st.annotator_model.embeddings.copy()
        st2 = em.fit(small_dense, net, lftc, em.EmConfig(max_iters=1, seed=0), state=st)
        assert st2.annotator_model is st.annotator_model
        assert not np.array_equal(model_before, st2.annotator_model.embeddings)
        assert len(st2.objective_trace) == 1

    def test_callback_sees_every_iteration(self, small_dense):
        seen = []
        em.fit(small_dense, NetworkConfig(3, (4,), 2), em.LftcConfig(latent_dim=2, iters=1),
               em.EmConfig(max_iters=3, em_tolerance=1e-15), callback=lambda it, s: seen.append(it))
        assert seen == [0, 1, 2]

    def test_empty_set_rejected(self):
        aset = AnnotationSet(np.zeros((0, 2)), [], [], [], 1, 2)
        with pytest.raises(ValueError):
            em.fit(aset, NetworkConfig(2), em.LftcConfig(), em.EmConfig())

    @pytest.mark.parametrize("kw", [{"max_iters": -1}, {"em_tolerance": 0.0}, {"mc_passes_T": 0},
                                    {"weighting": "x"}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            em.EmConfig(**kw)
