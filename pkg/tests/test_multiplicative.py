import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cascadeboost import oracle
from cascadeboost.cascade import CascadeModel
from cascadeboost.core import Space
from cascadeboost.dataset import Dataset
from cascadeboost.errors import BadParams, DegenerateWeights, IncompatibleSpaces, ZeroAcceptance
from cascadeboost.metamodels.config import TrainConfig
from cascadeboost.metamodels.gmm import GMM, GmmParams, gmm_fit_em, gmm_init_cover_standard_normal
from cascadeboost.metamodels.specs import GmmSpec, RbmSpec
from cascadeboost.metamodels.tabular import Tabular
from cascadeboost.multiplicative import (ChainConfig, DensityComponent,
                                         MultiplicativeOptions, estimate_log_partition, hybrid_build, load_ensemble,
                                         mcmc_sample, multiplicative_train, reweighted_dataset, reweighting,
                                         save_ensemble, unnormalized_log_density)
from cascadeboost.serialize import model_to_bytes

from helpers import prior_encoder_vae, random_binary_data, random_rbm, zero_rbm

NO_Z = MultiplicativeOptions(n_partition=0)


def marginal_tabular(probs, space):
    """A tabular model whose visible marginal is ``probs`` (one hidden state)."""
    p = np.asarray(probs, dtype=float)[:, None]
    return Tabular.from_probs(p, space, Space.categorical(1))


def random_pair(rng, V=4, alpha=(0.7, 0.9), scale=1.0):
    return hybrid_build([random_rbm(V, 3, rng, scale), random_rbm(V, 2, rng, scale)], list(alpha))


def tv(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def quadrature_log_z(log_u, lim=9.0, n=361):
    g = np.linspace(-lim, lim, n)
    xx, yy = np.meshgrid(g, g)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    vals = log_u(pts)
    return float(np.logaddexp.reduce(vals) + 2 * math.log(g[1] - g[0]))


class TestUnnormalizedDensity:
    def test_single_component(self, rng):
        m = random_rbm(4, 3, rng)
        xs = random_binary_data(rng, Space.binary(4), 10)
        est = unnormalized_log_density(hybrid_build([m]), xs)
        np.testing.assert_array_equal(est.value, m.log_marginal_visible(xs).value)
        assert est.is_exact

    def test_geometric_mean_of_identical(self, rng):
        m = random_rbm(4, 3, rng)
        xs = random_binary_data(rng, Space.binary(4), 10)
        est = unnormalized_log_density(hybrid_build([m, m], [0.5, 0.5]), xs)
        np.testing.assert_allclose(est.value, m.log_marginal_visible(xs).value, rtol=0, atol=1e-12)

    def test_hand_sum(self, rng):
        a = marginal_tabular([0.1, 0.2, 0.3, 0.4], Space.binary(2))
        b = marginal_tabular([0.4, 0.4, 0.1, 0.1], Space.binary(2))
        ens = hybrid_build([a, b], [0.3, 0.6])
        xs = Space.binary(2).enumerate()
        expected = 0.3 * np.log([0.1, 0.2, 0.3, 0.4]) + 0.6 * np.log([0.4, 0.4, 0.1, 0.1])
        np.testing.assert_allclose(unnormalized_log_density(ens, xs).value, expected, rtol=0, atol=1e-12)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            unnormalized_log_density(hybrid_build([zero_rbm(3, 2)]), np.zeros((2, 4)))

    def test_alpha_range(self):
        with pytest.raises(BadParams):
            DensityComponent(zero_rbm(2, 2), 1.5)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.05, 1.0))
    def test_scaling_argmax_invariance(self, seed, c):
        rng = np.random.default_rng(seed)
        alphas = rng.uniform(0.1, 1.0, 2)
        ms = [random_rbm(4, 3, rng), random_rbm(4, 2, rng)]
        xs = Space.binary(4).enumerate()
        a = unnormalized_log_density(hybrid_build(ms, list(alphas)), xs).value
        b = unnormalized_log_density(hybrid_build(ms, list(c * alphas)), xs).value
        assert np.argmax(a) == np.argmax(b)


class TestLogPartition:
    def test_proposal_itself(self, rng):
        m = random_rbm(4, 3, rng)
        z = estimate_log_partition(hybrid_build([m]), N=1000, rng=rng)
        assert abs(z.value) <= 3 * z.std_err + 1e-15
        assert z.ess == pytest.approx(1000)

    def test_matches_exact(self, rng):
        ens = random_pair(rng, V=6)
        exact = oracle.exact_partition(ens)
        z = estimate_log_partition(ens, N=10**5, rng=rng)
        assert abs(z.value - exact) <= 3 * z.std_err
        assert abs(z.value - exact) <= 0.02 * abs(exact)

    def test_doubling_alpha(self, rng):
        m = random_rbm(5, 3, rng, 1.5)
        half, full = hybrid_build([m], [0.5]), hybrid_build([m], [1.0])
        xs = Space.binary(5).enumerate()
        np.testing.assert_allclose(unnormalized_log_density(full, xs).value,
                                   2 * unnormalized_log_density(half, xs).value, rtol=0, atol=1e-12)
        uniform = zero_rbm(5, 1)
        for ens in (half, full):
            z = estimate_log_partition(ens, uniform, N=20000, rng=rng)
            assert abs(z.value - oracle.exact_partition(ens)) <= 3 * z.std_err
        assert oracle.exact_partition(full) == pytest.approx(0.0, abs=1e-12)
        assert oracle.exact_partition(half) > 0.1

    def test_error_shrinks_with_n(self):
        ens = random_pair(np.random.default_rng(4), V=6)
        exact = oracle.exact_partition(ens)
        errs = {}
        for N in (1000, 4000, 16000):
            errs[N] = np.mean([abs(estimate_log_partition(ens, N=N, rng=np.random.default_rng(s)).value - exact)
                               for s in range(40)])
        assert 0.3 <= errs[4000] / errs[1000] <= 0.75
        assert 0.3 <= errs[16000] / errs[4000] <= 0.75

    def test_degenerate_weights(self):
        # a rare proposal state carries almost all the target mass
        target = marginal_tabular([1e-30, 1 - 1e-30], Space.binary(1))
        proposal = marginal_tabular([1 - 5e-3, 5e-3], Space.binary(1))
        with pytest.raises(DegenerateWeights):
            estimate_log_partition(hybrid_build([target]), proposal, N=1000, rng=np.random.default_rng(0))

    def test_bad_n(self, rng):
        with pytest.raises(BadParams):
            estimate_log_partition(hybrid_build([zero_rbm(2, 2)]), N=1, rng=rng)


class TestReweighting:
    def test_beta_zero(self, rng):
        xs = random_binary_data(rng, Space.binary(4), 30)
        ds = reweighted_dataset(xs, random_pair(rng), 0.0)
        np.testing.assert_array_equal(ds.weights, np.ones(30))

    def test_uniform_density(self, rng):
        xs = random_binary_data(rng, Space.binary(4), 30)
        ds = reweighted_dataset(xs, hybrid_build([zero_rbm(4, 2)]), 1.0)
        np.testing.assert_allclose(ds.weights, 1.0, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("beta", [0.3, 1.0])
    def test_proportional_to_exact(self, rng, beta):
        ens = random_pair(rng, scale=0.5)
        xs = Space.binary(4).enumerate()
        ds = reweighted_dataset(xs, ens, beta)
        log_p = oracle.exact_ensemble_log_density(ens) - oracle.exact_partition(ens)
        expected = np.exp(-beta * log_p)
        expected *= xs.shape[0] / expected.sum()
        np.testing.assert_allclose(ds.weights, expected, rtol=1e-9, atol=0)
        assert abs(ds.weights.mean() - 1) <= 1e-12 and np.all(ds.weights >= 0)

    def test_base_weights_multiply(self, rng):
        w = reweighting(np.zeros(20), 1.0, np.linspace(1, 2, 20))
        np.testing.assert_allclose(w, np.linspace(1, 2, 20) / 1.5, rtol=1e-12)

    def test_degenerate(self):
        log_u = np.zeros(50)
        log_u[0] = -500.0
        with pytest.raises(DegenerateWeights):
            reweighting(log_u, 1.0)

    def test_clip_optional(self):
        log_u = -np.linspace(0, 3, 2000)
        plain = reweighting(log_u, 1.0)
        clipped = reweighting(log_u, 1.0, clip=True)
        assert plain.max() > clipped.max()
        assert abs(clipped.mean() - 1) <= 1e-12

    def test_bad_beta(self):
        with pytest.raises(BadParams):
            reweighting(np.zeros(20), 1.5)


class TestTrain:
    def test_single_component_is_plain_training(self):
        x = np.random.default_rng(0).standard_normal((200, 2))
        cfg = TrainConfig()
        ens = multiplicative_train(x, [GmmSpec(3, init="kmeans++")], cfg=cfg, rng=np.random.default_rng(5),
                                   options=NO_Z)
        plain = gmm_fit_em(x, 3, cfg, np.random.default_rng(5))
        assert model_to_bytes(ens.components[0].model) == model_to_bytes(plain)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.05, 1.0))
    def test_monotone_when_stage_objective_maximized(self, seed, alpha):
        # M_2 = the exact maximizer of the reweighted objective (beta = 1), i.e. the
        # reweighted empirical distribution itself
        rng = np.random.default_rng(seed)
        space = Space.binary(4)
        xs = random_binary_data(rng, space, int(rng.integers(20, 40)))
        ens1 = hybrid_build([random_rbm(4, 3, rng, 0.5)])
        ds = reweighted_dataset(xs, ens1, 1.0)
        probs = np.bincount(space.index(xs), weights=ds.weights, minlength=16)
        m2 = marginal_tabular(probs / probs.sum(), space)
        ens2 = hybrid_build([ens1.components[0].model, m2], [1.0, alpha])
        idx = space.index(xs)
        log_p1 = oracle.exact_ensemble_log_density(ens1) - oracle.exact_partition(ens1)
        log_p2 = oracle.exact_ensemble_log_density(ens2) - oracle.exact_partition(ens2)
        # the sufficient condition E_D[log M_2] >= ln E_{P_1}[M_2] holds for this learner
        log_m2 = m2.log_marginal_visible(space.enumerate()).value
        assert np.mean(log_m2[idx]) >= oracle._exact.logsumexp(log_p1 + log_m2) - 1e-9
        assert np.mean(log_p2[idx]) >= np.mean(log_p1[idx]) - 1e-9

    def test_gmm_parallel_gmm_heldout(self):
        # two curved clusters, which a 2-component diagonal GMM cannot fit exactly
        rng = np.random.default_rng(0)

        def draw(n):
            t, lab = rng.uniform(0, np.pi, n), rng.integers(0, 2, n)
            arc = np.where(lab[:, None] == 0, np.c_[np.cos(t), np.sin(t)], np.c_[1 - np.cos(t), 0.5 - np.sin(t)])
            return 2 * arc + 0.15 * rng.standard_normal((n, 2))

        train, test = draw(3000), draw(3000)
        cfg = TrainConfig()
        single = gmm_fit_em(train, 2, cfg, np.random.default_rng(1))
        ens = multiplicative_train(train, [GmmSpec(2, init="kmeans++"), GmmSpec(2, init="kmeans++")],
                                   [1.0, 0.25], [1.0, 1.0], cfg, np.random.default_rng(1), NO_Z)
        log_z = quadrature_log_z(lambda p: unnormalized_log_density(ens, p).value)
        diff = unnormalized_log_density(ens, test).value - log_z - single.log_marginal_visible(test).value
        assert diff.mean() >= -3 * diff.std(ddof=1) / math.sqrt(diff.size)

    def test_hybrid_specs(self, rng):
        xs = random_binary_data(rng, Space.binary(4), 40)
        ens = multiplicative_train(xs, [[RbmSpec(3), RbmSpec(2)], RbmSpec(3)], cfg=TrainConfig(epochs=2), rng=rng,
                                   options=MultiplicativeOptions(n_partition=2000))
        assert isinstance(ens.components[0].model, CascadeModel) and ens.components[0].is_exact
        assert abs(ens.log_z.value - oracle.exact_partition(ens)) <= 3 * ens.log_z.std_err

    def test_bad_lengths(self, rng):
        with pytest.raises(BadParams):
            multiplicative_train(np.zeros((3, 2)), [GmmSpec(1)], [1.0, 1.0], rng=rng)


class TestMcmc:
    def test_target_equals_proposal(self, rng):
        res = mcmc_sample(hybrid_build([random_rbm(4, 3, rng)]), 500, ChainConfig(burn_in=100), rng)
        assert res.acceptance_rate == 1.0

    def test_matches_exact(self):
        rng = np.random.default_rng(17)
        ens = random_pair(rng, V=3, alpha=(1.0, 0.6))
        res = mcmc_sample(ens, 10**6, ChainConfig(burn_in=1000, thinning=2), rng)
        emp = np.bincount(Space.binary(3).index(res.samples), minlength=8) / res.samples.shape[0]
        assert tv(emp, oracle.exact_ensemble_distribution(ens)) <= 0.05

    def test_deterministic(self, rng):
        ens = random_pair(rng, V=3)
        a = mcmc_sample(ens, 300, ChainConfig(burn_in=50, thinning=3), np.random.default_rng(2))
        b = mcmc_sample(ens, 300, ChainConfig(burn_in=50, thinning=3), np.random.default_rng(2))
        np.testing.assert_array_equal(a.samples, b.samples)
        assert a.acceptance_rate == b.acceptance_rate

    def test_detailed_balance(self):
        target = marginal_tabular([0.2, 0.5, 0.3], Space.categorical(3))
        proposal = marginal_tabular([0.5, 0.3, 0.2], Space.categorical(3))
        res = mcmc_sample(hybrid_build([target]), 200_000, ChainConfig(burn_in=100), np.random.default_rng(9),
                          proposal=proposal)
        s = res.samples
        counts = np.zeros((3, 3))
        np.add.at(counts, (s[:-1], s[1:]), 1)
        flow = counts / counts.sum()  # pi_i T_ij
        for i in range(3):
            for j in range(i + 1, 3):
                n = counts.sum()
                se = math.sqrt((flow[i, j] + flow[j, i]) / n)
                assert abs(flow[i, j] - flow[j, i]) <= 3 * se

    def test_zero_acceptance(self):
        # a target far narrower than the proposal: once near its mode the chain never moves
        narrow = GMM(GmmParams(np.ones(1), np.zeros((1, 2)), np.full((1, 2), 1e-6)))
        with pytest.raises(ZeroAcceptance):
            mcmc_sample(hybrid_build([narrow]), 10, ChainConfig(burn_in=20000), np.random.default_rng(0),
                        proposal=GMM(GmmParams(np.ones(1), np.zeros((1, 2)), np.ones((1, 2)))))

    def test_multiple_chains(self, rng):
        ens = random_pair(rng, V=3)
        res = mcmc_sample(ens, 101, ChainConfig(burn_in=10, n_chains=4), np.random.default_rng(1))
        assert res.samples.shape == (101, 3)

    def test_bad_config(self):
        with pytest.raises(BadParams):
            ChainConfig(thinning=0)


class TestHybrid:
    def test_single_cascade(self, rng):
        casc = CascadeModel([random_rbm(3, 2, rng), random_rbm(2, 2, rng)])
        xs = Space.binary(3).enumerate()
        est = unnormalized_log_density(hybrid_build([casc]), xs)
        np.testing.assert_allclose(est.value, oracle.exact_log_marginal(casc), rtol=0, atol=1e-12)

    def test_real_cascade_uses_bound(self, rng):
        casc = CascadeModel([prior_encoder_vae(2, 2), GMM(gmm_init_cover_standard_normal(3, 2))])
        comp = DensityComponent(casc)
        assert not comp.is_exact
        est = comp.log_density(rng.standard_normal((5, 2)), 2, rng, 4)
        assert not est.is_exact and est.value.shape == (5,)

    def test_exact_sum_matches_estimate(self, rng):
        casc = CascadeModel([random_rbm(5, 3, rng), random_rbm(3, 2, rng)])
        ens = hybrid_build([casc, random_rbm(5, 4, rng)], [0.8, 0.6])
        exact = oracle.exact_partition(ens)
        states = Space.binary(5).enumerate()
        u = unnormalized_log_density(ens, states).value
        assert abs(np.logaddexp.reduce(u) - exact) <= 1e-12
        z = estimate_log_partition(ens, N=20000, rng=rng)
        assert abs(z.value - exact) <= 3 * z.std_err

    def test_incompatible(self, rng):
        with pytest.raises(IncompatibleSpaces):
            hybrid_build([zero_rbm(3, 2), zero_rbm(4, 2)])

    def test_manifest_round_trip(self, rng, tmp_path):
        casc = CascadeModel([random_rbm(3, 2, rng), random_rbm(2, 2, rng)])
        ens = hybrid_build([casc, random_rbm(3, 3, rng)], [1.0, 0.5])
        ens.log_z = estimate_log_partition(ens, N=500, rng=rng, seed=3)
        save_ensemble(ens, tmp_path / "ens")
        back = load_ensemble(tmp_path / "ens")
        assert back.alphas == ens.alphas and back.log_z == ens.log_z
        xs = Space.binary(3).enumerate()
        np.testing.assert_array_equal(unnormalized_log_density(back, xs).value,
                                      unnormalized_log_density(ens, xs).value)


def test_dataset_weights_respected(rng):
    xs = random_binary_data(rng, Space.binary(4), 20)
    ds = Dataset(xs, Space.binary(4), np.full(20, 2.0))
    out = reweighted_dataset(ds, hybrid_build([zero_rbm(4, 2)]), 1.0)
    np.testing.assert_allclose(out.weights, 1.0, rtol=1e-12)
