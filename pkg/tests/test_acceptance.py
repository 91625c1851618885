"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``criterion N PASS|FAIL`` line (visible under plain
``pytest``) before asserting, so a full run doubles as a scorecard.
"""

import math
import time

import numpy as np
import pytest

from cascadeboost import oracle
from cascadeboost.cascade import CascadeModel, CascadeOptions, bound_terms, convergence_gap, greedy_train
from cascadeboost.config import parse_config
from cascadeboost.core import Space
from cascadeboost.data import make_synthetic, split_labeled
from cascadeboost.experiment import BENCH_COLUMNS, bench, run_experiment, strip_timings
from cascadeboost.metamodels.config import TrainConfig
from cascadeboost.metamodels.gmm import GMM, gmm_init_cover_standard_normal
from cascadeboost.metamodels.specs import ClassMixSpec, GmmSpec, VaeSpec
from cascadeboost.metamodels.vae import vae_init
from cascadeboost.multiplicative import ChainConfig, estimate_log_partition, hybrid_build, mcmc_sample
from cascadeboost.semisup import (SemiSupConfig, accuracy_eval, canonical_labeled, pooled_dataset,
                                  semisup_bound_terms, semisup_train)

from helpers import prior_encoder_vae
from test_data_cli import CASCADE_CFG, HYBRID_CFG, MULT_CFG, SEMISUP_CFG
from test_metamodels import em_history, finite_difference_check
from test_multiplicative import random_pair, tv

MIXTURE = {"k": 4, "d": 4}
ADAM = TrainConfig(epochs=20, batch_size=50, learning_rate=0.01, optimizer="adam")
SEEDS = range(20)


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number:2d} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def test_criterion_01_bound_never_exceeds_loglik(report):
    t0 = time.perf_counter()
    slack = oracle.fuzz_lower_bound(100, np.random.default_rng(101))
    dt = time.perf_counter() - t0
    report(1, slack >= -1e-9 and dt <= 120, f"min slack {slack:.3e} over 100 chains in {dt:.1f}s")


def test_criterion_02_single_model_tight(report):
    rng = np.random.default_rng(202)
    worst = 0.0
    gmm = GMM(gmm_init_cover_standard_normal(3, 2))
    x = rng.standard_normal((60, 2))
    exact_gmm = math.fsum(gmm.log_marginal_visible(x).value) / 60
    rbm = oracle.random_rbm(5, 3, rng)
    xb = oracle.random_points(rng, Space.binary(5), 30)
    exact_rbm = oracle.exact_data_loglik([rbm], xb)
    for n_mc in (1, 4, 16):
        worst = max(worst, abs(bound_terms(CascadeModel([gmm]), x, n_mc, rng).total - exact_gmm),
                    abs(bound_terms(CascadeModel([rbm]), xb, n_mc, rng).total - exact_rbm))
    report(2, worst <= 1e-9, f"max |total - exact| {worst:.3e} for GMM and RBM, n_mc in 1/4/16")


def test_criterion_03_optimal_top_blocks_gain(report):
    t0 = time.perf_counter()
    gain = oracle.fuzz_optimal_top(100, np.random.default_rng(303))
    positive = oracle.non_optimal_improvement(np.random.default_rng(304))
    dt = time.perf_counter() - t0
    ok = gain <= 1e-9 and positive > 0 and dt <= 120
    report(3, ok, f"max partial sum {gain:.3e}, non-optimal case {positive:.4f}, {dt:.1f}s")


def test_criterion_04_convergence_gap(report):
    exact = oracle.fuzz_top_gap(100, np.random.default_rng(404))
    rng = np.random.default_rng(405)
    prior = convergence_gap(CascadeModel([prior_encoder_vae(4, 2)]), rng.standard_normal((10, 4)), 1, rng)
    ds, _ = make_synthetic("gaussian_mixture", MIXTURE, 1000, 405)
    model, _ = greedy_train(ds, [VaeSpec(2, hidden=(32,))], ADAM, rng)
    gap = convergence_gap(model, ds, 4, rng)
    ok = exact <= 1e-9 and round(prior.prior_term, 6) == -2.837877 and gap.value >= -3 * gap.std_err
    report(4, ok, f"optimal |gap| {exact:.3e}, prior term {prior.prior_term:.6f}, "
                  f"trained gap {gap.value:.4f} (signed {gap.signed:.4f}, se {gap.std_err:.4f})")


def test_criterion_05_gmm_on_vae(report):
    t0 = time.perf_counter()
    l2, low = [], []
    for seed in SEEDS:
        ds, _ = make_synthetic("gaussian_mixture", MIXTURE, 1000, seed)
        _, reps = greedy_train(ds, [VaeSpec(2, hidden=(32,)), GmmSpec(10, init="cover")], ADAM,
                               np.random.default_rng(seed), CascadeOptions(n_mc=4))
        term = reps[-1].terms[-1]
        l2.append(term.value)
        low.append(term.value >= -3 * term.std_err)
    dt = time.perf_counter() - t0
    ok = all(low) and float(np.mean(l2)) > 0 and dt <= 600
    report(5, ok, f"L_2 >= -3se in {sum(low)}/20, mean L_2 {np.mean(l2):.4f}, {dt:.1f}s")


def test_criterion_06_vae_stack_trend(report):
    top = VaeSpec(2, hidden=(32,), decoder_var=1.0)
    improves = plateaus = 0
    for seed in SEEDS:
        ds, _ = make_synthetic("gaussian_mixture", MIXTURE, 1000, seed)
        _, reps = greedy_train(ds, [VaeSpec(2, hidden=(32,)), top, top], ADAM, np.random.default_rng(seed),
                               CascadeOptions(n_mc=4))
        improves += reps[1].total >= reps[0].total - 3 * reps[1].total_std_err
        l3 = reps[2].terms[-1]
        plateaus += abs(l3.value) <= 3 * l3.std_err
    report(6, improves == 20 and plateaus >= 15, f"k=2 not below k=1 in {improves}/20, |L_3| <= 3se in {plateaus}/20")


def test_criterion_07_vae_gradients(report):
    worst = 0.0
    for likelihood in ("gaussian", "bernoulli"):
        rng = np.random.default_rng(707)
        params = vae_init(4, 2, (5, 3), likelihood, rng)
        x = (rng.random((6, 4)) < 0.5).astype(float) if likelihood == "bernoulli" else rng.standard_normal((6, 4))
        worst = max(worst, finite_difference_check(params, x, rng.standard_normal((6, 2)), rng.random(6) + 0.1))
    report(7, worst <= 1e-4, f"max relative error {worst:.3e}")


def test_criterion_08_em_monotone(report):
    rng = np.random.default_rng(808)
    worst = math.inf
    for trial in range(50):
        n, d, K = int(rng.integers(10, 200)), int(rng.integers(1, 5)), int(rng.integers(1, 6))
        x = rng.standard_normal((n, d)) * rng.uniform(0.2, 3.0, d) + rng.uniform(-5, 5, d)
        for w in (np.ones(n), rng.random(n) + 0.05):
            hist = np.asarray(em_history(x, w, K, rng))
            if hist.size > 1:
                worst = min(worst, float(np.diff(hist).min()))
    report(8, worst >= -1e-9, f"smallest per-iteration change {worst:.3e} over 50 weighted and 50 unweighted fits")


def test_criterion_09_partition_estimate(report):
    master = np.random.default_rng(909)
    close = covered = 0
    for _ in range(50):
        rng = np.random.default_rng(master.integers(2**32))
        ens = hybrid_build([oracle.random_rbm(6, 3, rng), oracle.random_rbm(6, 3, rng)], [1.0, 1.0])
        exact = oracle.exact_partition(ens)
        est = estimate_log_partition(ens, None, 100_000, rng)
        close += abs(est.value - exact) <= 0.02 * abs(exact)
        covered += abs(est.value - exact) <= 2 * est.std_err
    report(9, close >= 48 and covered >= 45, f"within 2% in {close}/50, 2-sigma coverage {covered}/50")


def test_criterion_10_mcmc_fidelity(report):
    rng = np.random.default_rng(1010)
    ens = random_pair(rng, V=4, alpha=(1.0, 0.6))
    res = mcmc_sample(ens, 10**6, ChainConfig(burn_in=1000, thinning=2), rng)
    emp = np.bincount(Space.binary(4).index(res.samples), minlength=16) / res.samples.shape[0]
    dist = tv(emp, oracle.exact_ensemble_distribution(ens))
    own = mcmc_sample(hybrid_build([oracle.random_rbm(4, 3, rng)]), 2000, ChainConfig(burn_in=100), rng)
    ok = dist <= 0.05 and own.acceptance_rate == 1.0
    report(10, ok, f"TV {dist:.4f} at 1e6 samples, self-proposal acceptance {own.acceptance_rate}")


SEMI_MEANS = {"k": 4, "means": "3,3,-3,-3,3,-3,-3,3", "label_map": "0,0,1,1"}
SEMI_CFG = TrainConfig(epochs=20, batch_size=50, learning_rate=0.01, optimizer="adam", em_max_iters=200)


def semi_task(seed):
    ds, _ = make_synthetic("gaussian_mixture", SEMI_MEANS, 2020, seed)
    test, _ = make_synthetic("gaussian_mixture", SEMI_MEANS, 1000, 10_000 + seed)
    return split_labeled(ds, 10, 2, seed), test


def test_criterion_11_semisup(report):
    accs = []
    for seed in SEEDS:
        lds, test = semi_task(seed)
        rng = np.random.default_rng(seed)
        model, _ = semisup_train(lds, [VaeSpec(2, hidden=(32,)), ClassMixSpec(2, 2)], SEMI_CFG, rng,
                                 SemiSupConfig(0.9, 0.1))
        accs.append(accuracy_eval(model, test.points, test.labels, 4, rng))
    good = sum(a >= 0.90 for a in accs)

    lds, _ = semi_task(0)
    semi, _ = semisup_train(lds, [VaeSpec(2, hidden=(32,)), ClassMixSpec(2, 2)], SEMI_CFG,
                            np.random.default_rng(0), SemiSupConfig(1.0, 0.0))
    pooled = pooled_dataset(canonical_labeled(lds), 1.0, 0.0)
    casc, _ = greedy_train(pooled, [VaeSpec(2, hidden=(32,)), GmmSpec(4, init="kmeans++")], SEMI_CFG,
                           np.random.default_rng(0))
    j = semisup_bound_terms(semi, lds, 4, np.random.default_rng(1))
    c = bound_terms(casc, pooled, 4, np.random.default_rng(2))
    within = all(abs(a.value - b.value) <= 3 * math.hypot(a.std_err, b.std_err) for a, b in zip(j.terms, c.terms))
    report(11, good >= 18 and within,
           f"accuracy >= 0.90 in {good}/20 (min {min(accs):.3f}), beta=0 terms within 3 sigma: {within}")


def test_criterion_12_bench(report, tmp_path):
    res = bench(out=tmp_path)
    rows = {r["mode"]: r for r in res["rows"]}
    measured = all(np.isfinite(rows[m][c]) for m in ("cascade", "parallel", "hybrid")
                   for c in ("log_likelihood", "train_s", "density_s", "sampling_s"))
    speedup = res["sampling_speedup"]
    report(12, set(rows) == {"cascade", "parallel", "hybrid"} and measured and speedup >= 10,
           f"columns {', '.join(BENCH_COLUMNS[2:])} present, sampling speedup {speedup:.1f}x")


def test_criterion_13_determinism(report, tmp_path):
    same = []
    for name, text in (("cascade", CASCADE_CFG), ("semisup", SEMISUP_CFG), ("multiplicative", MULT_CFG),
                       ("hybrid", HYBRID_CFG)):
        cfg = parse_config(text)
        a = run_experiment(cfg, tmp_path / name / "a")
        b = run_experiment(cfg, tmp_path / name / "b")
        files = [f for f in sorted((tmp_path / name / "a").rglob("*")) if f.is_file() and f.name != "metrics.jsonl"]
        ok = strip_timings(a.records) == strip_timings(b.records) and all(
            f.read_bytes() == (tmp_path / name / "b" / f.relative_to(tmp_path / name / "a")).read_bytes()
            for f in files)
        same.append(ok)
    report(13, all(same), f"bit-identical reruns in {sum(same)}/4 modes")
