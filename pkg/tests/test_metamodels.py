import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from cascadeboost.core import Space
from cascadeboost.errors import BadParams, DegenerateComponent, NonFinite
from cascadeboost.metamodels import (GMM, RBM, ClassMixture, GmmParams, RbmParams, Tabular, TrainConfig,
                                     class_mixture_fit_em, gmm_fit_em, gmm_init_cover_standard_normal,
                                     rbm_log_partition_exact, rbm_train_cd, vae_init, vae_iwae_log_likelihood,
                                     vae_train)
from cascadeboost.metamodels.classmix import clamped_objective
from cascadeboost.metamodels.gmm import em_gaussian, kmeans_pp_init
from cascadeboost.metamodels.vae import VaeParams, negative_elbo
from cascadeboost.serialize import model_from_bytes, model_to_bytes

from helpers import prior_encoder_vae, random_rbm, small_vae, zero_rbm


def two_clusters(rng, n=400, sep=6.0):
    a = rng.standard_normal((n // 2, 2)) * 0.5 + [sep / 2, 0]
    b = rng.standard_normal((n // 2, 2)) * 0.5 - [sep / 2, 0]
    return np.vstack([a, b])


def em_history(x, w, K, rng, mask=None):
    cfg = TrainConfig(em_max_iters=100, em_tol=1e-12)
    start = kmeans_pp_init(x, w, K, rng)
    return em_gaussian(x, w, start, cfg, mask=mask)[1]


class TestGmmFitEm:
    def test_single_component_closed_form(self, rng):
        x = rng.standard_normal((500, 3)) * [1.0, 2.0, 0.5] + [1.0, -1.0, 3.0]
        gmm = gmm_fit_em(x, 1, TrainConfig(), rng)
        np.testing.assert_allclose(gmm.params.means[0], x.mean(axis=0), atol=1e-10)
        np.testing.assert_allclose(gmm.params.variances[0], x.var(axis=0), atol=1e-10)

    def test_equal_weights_match_unweighted(self, rng):
        x = two_clusters(rng)
        a = gmm_fit_em(x, 3, TrainConfig(), np.random.default_rng(5))
        b = gmm_fit_em(x, 3, TrainConfig(), np.random.default_rng(5), weights=np.full(len(x), 2.5))
        np.testing.assert_allclose(a.params.means, b.params.means, atol=1e-10)
        np.testing.assert_allclose(a.params.variances, b.params.variances, atol=1e-10)
        np.testing.assert_allclose(a.params.weights, b.params.weights, atol=1e-10)

    def test_two_separated_clusters(self, rng):
        x = two_clusters(rng)
        gmm = gmm_fit_em(x, 2, TrainConfig(), rng)
        means = gmm.params.means[np.argsort(gmm.params.means[:, 0])]
        np.testing.assert_allclose(means, [[-3, 0], [3, 0]], atol=0.1)

    def test_weights_on_simplex_and_floor(self, rng):
        x = np.vstack([np.zeros((20, 2)), rng.standard_normal((50, 2))])
        gmm = gmm_fit_em(x, 3, TrainConfig(), rng)
        assert abs(gmm.params.weights.sum() - 1) <= 1e-12
        assert gmm.params.variances.min() >= 1e-6

    def test_responsibility_rows_sum_to_one(self, rng):
        x = two_clusters(rng)
        gmm = gmm_fit_em(x, 4, TrainConfig(), rng)
        np.testing.assert_allclose(gmm.responsibilities(x).sum(axis=1), 1.0, atol=1e-12)

    def test_rejects_bad_weights(self, rng):
        with pytest.raises(BadParams):
            gmm_fit_em(np.zeros((3, 1)), 1, TrainConfig(), rng, weights=np.zeros(3))
        with pytest.raises(BadParams):
            gmm_fit_em(np.zeros((3, 1)), 1, TrainConfig(), rng, weights=np.array([1.0, -1.0, 1.0]))

    def test_dead_component_reseeded_then_error(self):
        # a component parked far away with no mass: one re-seed is allowed
        x = np.array([[0.0], [0.1], [0.2], [5.0]])
        start = GmmParams(np.array([0.5, 0.5]), np.array([[0.1], [1e6]]), np.ones((2, 1)))
        params, hist = em_gaussian(x, np.ones(4), start, TrainConfig(em_max_iters=50))
        assert np.all(np.isfinite(params.means))
        # a component no row may use dies again after its re-seed
        mask = np.ones((4, 2), dtype=bool)
        mask[:, 1] = False
        with pytest.raises(DegenerateComponent):
            em_gaussian(x, np.ones(4), start, TrainConfig(em_max_iters=50), mask=mask)


class TestEmMonotonicity:
    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10**6), K=st.integers(1, 5), weighted=st.booleans())
    def test_non_decreasing(self, seed, K, weighted):
        r = np.random.default_rng(seed)
        x = r.standard_normal((120, 2)) + r.integers(0, 3, size=(120, 1)) * 2.0
        w = r.random(120) * 3 if weighted else np.ones(120)
        hist = em_history(x, w, K, r)
        assert np.all(np.diff(hist) >= -1e-9)

    def test_masked_non_decreasing(self, rng):
        x = two_clusters(rng)
        mask = np.ones((len(x), 4), dtype=bool)
        mask[:10] = [True, True, False, False]
        hist = em_history(x, np.ones(len(x)), 4, rng, mask=mask)
        assert np.all(np.diff(hist) >= -1e-9)


class TestCoverInit:
    def test_single_component(self):
        gmm = GMM(gmm_init_cover_standard_normal(1, 2))
        assert gmm.log_marginal_visible(np.zeros((1, 2))).value[0] == pytest.approx(-math.log(2 * math.pi),
                                                                                   abs=1e-12)

    def test_many_components_match_standard_normal(self, rng):
        gmm = GMM(gmm_init_cover_standard_normal(10, 20))
        assert abs(gmm.log_marginal_visible(np.zeros((1, 20))).value[0] + 10 * math.log(2 * math.pi)) <= 1e-6
        h = rng.standard_normal((1000, 20)) * 2
        exact = -0.5 * (20 * math.log(2 * math.pi) + np.sum(h * h, axis=1))
        assert np.max(np.abs(gmm.log_marginal_visible(h).value - exact)) <= 1e-6

    def test_component_zero_exact(self):
        p = gmm_init_cover_standard_normal(5, 3)
        np.testing.assert_array_equal(p.means[0], 0.0)
        np.testing.assert_array_equal(p.variances, 1.0)

    def test_em_from_cover_never_below_start(self, rng):
        h = rng.standard_normal((2000, 2))
        base = float(np.mean(-0.5 * (2 * math.log(2 * math.pi) + np.sum(h * h, axis=1))))
        gmm = gmm_fit_em(h, 10, TrainConfig(em_max_iters=50), rng, init="cover")
        assert min(gmm.fit_history) >= base - 1e-6
        assert gmm.fit_history[-1] >= base


class TestRbmPartition:
    def test_zero_params(self):
        assert rbm_log_partition_exact(zero_rbm(3, 2)) == pytest.approx(5 * math.log(2), abs=1e-12)

    def test_both_sides_agree(self, rng):
        for V, H in [(3, 5), (6, 4), (8, 8)]:
            rbm = random_rbm(V, H, rng)
            assert abs(rbm.log_partition("visible") - rbm.log_partition("hidden")) <= 1e-9

    def test_visible_bias_shift_single_unit(self):
        for c in (-2.0, 0.3, 4.0):
            rbm = RBM(RbmParams(np.array([[0.7]]), np.array([0.2 + c]), np.array([-0.4])))
            direct = logsumexp([0.0, -0.4, 0.2 + c, 0.2 + c - 0.4 + 0.7])
            assert rbm.log_partition() == pytest.approx(direct, abs=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10**6), V=st.integers(1, 12), H=st.integers(1, 6))
    def test_visible_distribution_normalized(self, seed, V, H):
        rbm = random_rbm(V, H, np.random.default_rng(seed))
        total = np.exp(rbm.log_marginal_visible(Space.binary(V).enumerate()).value).sum()
        assert abs(total - 1) <= 1e-9


class TestRbmTrainCd:
    def toy_data(self, rng):
        protos = np.array([[1, 1, 1, 0, 0, 0], [0, 0, 0, 1, 1, 1], [1, 0, 1, 0, 1, 0]], dtype=float)
        x = protos[rng.integers(0, 3, 300)]
        flip = rng.random(x.shape) < 0.05
        return np.where(flip, 1 - x, x)

    def test_all_zeros_data(self, rng):
        rbm = rbm_train_cd(np.zeros((100, 4)), 3, TrainConfig(epochs=10), rng)
        assert rbm.log_marginal_visible(np.zeros((1, 4))).value[0] > -4 * math.log(2)

    def test_zero_learning_rate_keeps_init(self, rng):
        init = random_rbm(4, 3, rng).params
        rbm = rbm_train_cd(self.toy_data(rng)[:, :4], 3, TrainConfig(epochs=3, learning_rate=0.0), rng, init=init)
        np.testing.assert_array_equal(rbm.params.W, init.W)
        np.testing.assert_array_equal(rbm.params.b_visible, init.b_visible)
        np.testing.assert_array_equal(rbm.params.c_hidden, init.c_hidden)

    def test_exact_likelihood_rises(self, rng):
        x = self.toy_data(rng)
        lls = []
        rbm_train_cd(x, 4, TrainConfig(epochs=10, batch_size=20, learning_rate=0.05), rng,
                     callback=lambda e, m: lls.append(float(m.log_marginal_visible(x).value.mean())))
        ups = np.diff(lls) > 0
        assert ups.mean() >= 0.8

    def test_rejects_non_binary(self, rng):
        with pytest.raises(BadParams):
            rbm_train_cd(np.full((4, 2), 0.5), 2, TrainConfig(), rng)

    def test_divergence_raises(self, rng):
        with pytest.raises(NonFinite):
            rbm_train_cd(self.toy_data(rng), 4, TrainConfig(epochs=2, learning_rate=1e308), rng)

    def test_conditional_factorization(self, rng):
        rbm = random_rbm(5, 3, rng)
        x = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
        h = rbm.sample_posterior(np.tile(x, (100_000, 1)), rng)
        p = 1 / (1 + np.exp(-(rbm.params.c_hidden + x @ rbm.params.W)))
        assert np.all(np.abs(h.mean(axis=0) - p) <= 3 * np.sqrt(p * (1 - p) / 100_000))


def finite_difference_check(params, x, eps, w, h=1e-6):
    _, g_enc, g_dec = negative_elbo(params, x, eps, w)
    worst = 0.0
    for layers, grads in ((params.encoder, g_enc), (params.decoder, g_dec)):
        for (W, b), (dW, db) in zip(layers, grads):
            for A, G in ((W, dW), (b, db)):
                for idx in np.ndindex(A.shape):
                    old = A[idx]
                    A[idx] = old + h
                    up = negative_elbo(params, x, eps, w)[0]
                    A[idx] = old - h
                    down = negative_elbo(params, x, eps, w)[0]
                    A[idx] = old
                    fd = (up - down) / (2 * h)
                    worst = max(worst, abs(fd - G[idx]) / max(abs(fd), abs(G[idx]), 1e-7))
    return worst


class TestVae:
    def test_kl_identity(self):
        vae = prior_encoder_vae(3, 2)
        loss, _, _ = negative_elbo(vae.params, np.zeros((4, 3)), np.zeros((4, 2)))
        # with mu = 0, log var = 0 the loss is the reconstruction term only
        assert loss == pytest.approx(1.5 * math.log(2 * math.pi), abs=1e-12)

    @pytest.mark.parametrize("likelihood", ["bernoulli", "gaussian"])
    def test_gradient_matches_finite_differences(self, rng, likelihood):
        params = vae_init(4, 2, (5, 3), likelihood, rng)
        x = (rng.random((6, 4)) < 0.5).astype(float) if likelihood == "bernoulli" else rng.standard_normal((6, 4))
        assert finite_difference_check(params, x, rng.standard_normal((6, 2)), rng.random(6) + 0.1) <= 1e-4

    def test_point_mass_reconstruction(self, rng):
        x0 = np.array([2.0, -1.0, 0.5, 1.5])
        data = np.tile(x0, (200, 1))
        vae0 = small_vae(np.random.default_rng(3))
        before = np.linalg.norm(vae0.decode(vae0.encode(x0[None])[0])[0] - x0)
        vae = vae_train(data, 2, TrainConfig(epochs=30, batch_size=20, learning_rate=0.05), np.random.default_rng(3),
                        hidden=(6,))
        after = np.linalg.norm(vae.decode(vae.encode(x0[None])[0])[0] - x0)
        assert after <= 0.5 * before

    def test_iwae_single_sample_is_elbo(self, rng):
        vae = small_vae(rng)
        x = rng.standard_normal((5, 4))
        a = vae_iwae_log_likelihood(vae, x, 1, np.random.default_rng(9))
        b = vae.elbo_estimate(x, np.random.default_rng(9))
        np.testing.assert_array_equal(a.value, b)
        assert not a.is_exact

    def test_iwae_monotone_in_samples(self, rng):
        vae = small_vae(rng)
        x = rng.standard_normal((20, 4))
        diffs = []
        for seed in range(40):
            r = np.random.default_rng(seed)
            diffs.append(np.mean(vae.iwae(x, 64, r).value - vae.iwae(x, 1, r).value))
        diffs = np.array(diffs)
        assert diffs.mean() >= -2 * diffs.std(ddof=1) / math.sqrt(diffs.size)
        assert diffs.mean() > 0

    def test_iwae_exact_when_weights_identical(self, rng):
        vae = prior_encoder_vae(3, 2, decoder_bias=[0.5, 0.0, -1.0])
        x = rng.standard_normal((4, 3))
        exact = -0.5 * np.sum((x - [0.5, 0.0, -1.0]) ** 2, axis=1) - 1.5 * math.log(2 * math.pi)
        for S in (1, 8, 64):
            est = vae.iwae(x, S, rng)
            np.testing.assert_allclose(est.value, exact, atol=1e-10)

    def test_rejects_bad_shapes(self):
        with pytest.raises(BadParams):
            VaeParams([(np.zeros((3, 3)), np.zeros(3))], [(np.zeros((2, 3)), np.zeros(3))], 2, "gaussian")

    def test_adam_variant_trains(self, rng):
        x = rng.standard_normal((100, 4)) + 1.0
        vae = vae_train(x, 2, TrainConfig(epochs=10, learning_rate=0.01, optimizer="adam"), rng, hidden=(8,))
        assert vae.fit_history[-1] < vae.fit_history[0]


class TestTabular:
    def test_marginals_normalized(self, rng):
        t = Tabular.random(Space.binary(3), Space.categorical(4), rng)
        assert abs(np.exp(t.log_marginal_visible(Space.binary(3).enumerate()).value).sum() - 1) <= 1e-12
        assert abs(np.exp(t.log_marginal_hidden(np.arange(4)).value).sum() - 1) <= 1e-12

    def test_rejects_unnormalized(self):
        with pytest.raises(BadParams):
            Tabular(np.zeros((2, 2)), Space.categorical(2), Space.categorical(2))

    def test_posterior_frequencies(self, rng):
        t = Tabular.random(Space.categorical(2), Space.categorical(3), rng)
        h = t.sample_posterior(np.ones(100_000, dtype=int), rng)
        exact = np.exp(t.log_table[1] - logsumexp(t.log_table[1]))
        freq = np.bincount(h, minlength=3) / 100_000
        assert np.all(np.abs(freq - exact) <= 3 * np.sqrt(exact * (1 - exact) / 100_000))


class TestClassMixture:
    def test_class_posterior_rows(self, rng):
        x = two_clusters(rng)
        labels = np.full(len(x), -1)
        labels[:5], labels[-5:] = 0, 1
        m = class_mixture_fit_em(x, labels, 2, 2, TrainConfig(), rng)
        np.testing.assert_allclose(m.class_posterior(x).sum(axis=1), 1.0, atol=1e-12)
        assert abs(m.class_prior.sum() - 1) <= 1e-12

    def test_clamped_objective_monotone(self, rng):
        x = two_clusters(rng)
        labels = np.full(len(x), -1)
        labels[:5], labels[-5:] = 0, 1
        w = np.where(labels >= 0, 0.5 / 10, 0.5 / (len(x) - 10))
        m = class_mixture_fit_em(x, labels, 2, 2, TrainConfig(em_tol=1e-12), rng, weights=w)
        assert np.all(np.diff(m.fit_history) >= -1e-9)
        assert m.fit_history[-1] == pytest.approx(clamped_objective(m, x, labels, w), abs=1e-9)

    def test_bernoulli_emissions(self, rng):
        x = (rng.random((200, 4)) < np.where(np.arange(200)[:, None] < 100, 0.9, 0.1)).astype(float)
        labels = np.full(200, -1)
        labels[:3], labels[-3:] = 0, 1
        m = class_mixture_fit_em(x, labels, 2, 1, TrainConfig(), rng, emission="bernoulli")
        table = m.exact_log_joint()
        assert abs(logsumexp(table) - 0) <= 1e-12
        assert np.mean(m.class_posterior(x).argmax(axis=1) == (np.arange(200) >= 100)) >= 0.95


class TestSerialization:
    def models(self, rng):
        gmm = gmm_fit_em(two_clusters(rng), 3, TrainConfig(), rng)
        cm = ClassMixture(np.array([0.25, 0.25, 0.5]), "gaussian", 3, means=rng.standard_normal((3, 2)),
                          variances=np.ones((3, 2)))
        return [gmm, random_rbm(4, 3, rng), small_vae(rng), small_vae(rng, likelihood="bernoulli"),
                Tabular.random(Space.binary(2), Space.categorical(3), rng), cm]

    def test_round_trip_bit_exact(self, rng):
        for m in self.models(rng):
            buf = model_to_bytes(m)
            back = model_from_bytes(buf)
            assert type(back) is type(m)
            assert model_to_bytes(back) == buf
            for k, v in m.get_params().items():
                np.testing.assert_array_equal(back.get_params()[k], v)
