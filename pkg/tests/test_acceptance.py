"""End-to-end acceptance checks, one named test per criterion.

These run the library at realistic problem sizes and assert the
statistical and numerical behavior the package promises.  Run with
`pytest -v` to get one pass/fail line per criterion.
"""

import filecmp
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from scipy.special import expit
from scipy.stats import kstest

from netlvm.cli import main as cli_main
from netlvm.diagnostics import dunn_smyth_residuals
from netlvm.estimator import (
    FitOptions,
    apply_sign_anchors,
    build_constraints,
    fit_glamle,
    fitted_mean_matrices,
    sandwich_vcov,
    wald_test,
)
from netlvm.laplace import laplace_loglik, solve_latent_mode
from netlvm.laplace import grad_alpha, grad_alpha_fd, grad_sigma, grad_sigma_fd
from netlvm.mcmc import McmcConfig, run_mwg
from netlvm.model import MultiviewData, dyad_pairs
from netlvm.quadrature import gauss_hermite_rule, laplace_error
from netlvm.simulate import McPlan, gen_network, gen_truth, run_monte_carlo
from conftest import (
    make_spec,
    random_alpha,
    random_instance,
    random_orthogonal,
    sample_layers,
)


def test_criterion_01_inner_solver_stationarity():
    rng = np.random.default_rng(101)
    families = ["bernoulli", "poisson"]
    assumptions = ["A2", "A2prime"]
    for i in range(1000):
        spec, alpha, sigma, data = random_instance(
            rng,
            family=families[i % 2],
            q=int(rng.integers(1, 4)),
            assumption=assumptions[(i // 2) % 2],
            n_nodes=int(rng.integers(4, 21)),
            K=1,
            scale=0.8,
        )
        res = solve_latent_mode(alpha, data.responses[0], sigma, spec)
        assert res.grad_norm <= 1e-10, f"instance {i}: {res.grad_norm}"
        assert res.iterations <= 100, f"instance {i}: {res.iterations}"


def test_criterion_02_gradient_correctness():
    rng = np.random.default_rng(202)
    for i in range(50):
        assumption = "A2" if i % 2 == 0 else "A2prime"
        family = "bernoulli" if i % 4 < 2 else "poisson"
        spec, alpha, sigma, data = random_instance(
            rng, family=family, q=2, assumption=assumption, n_nodes=6, K=3,
            scale=0.6)
        ga = grad_alpha(alpha, sigma, data, spec)
        fa = grad_alpha_fd(alpha, sigma, data, spec, step=1e-5)
        assert np.all(np.abs(ga - fa) <= 1e-4 * np.abs(fa) + 1e-8), \
            f"instance {i}: grad_alpha mismatch"
        if assumption == "A2prime":
            gs = grad_sigma(alpha, sigma, data, spec)
            fs = grad_sigma_fd(alpha, sigma, data, spec, step=1e-5)
            assert np.all(np.abs(gs - fs) <= 1e-4 * np.abs(fs) + 1e-8), \
                f"instance {i}: grad_sigma mismatch"


def test_criterion_03_laplace_error_shrinks_with_network_size():
    rng = np.random.default_rng(303)
    medians = []
    for n in (4, 6, 8, 10):
        spec = make_spec(q=1, include_intercept=False, n_nodes=n)
        alpha = random_alpha(spec, rng, scale=0.8)
        errs = []
        for _ in range(50):
            data = sample_layers(spec, alpha, np.eye(1), 1, rng)
            errs.append(abs(laplace_error(alpha, data.responses[0], np.eye(1),
                                          spec, order=60)))
        medians.append(float(np.median(errs)))
    assert all(b <= a for a, b in zip(medians, medians[1:])), medians
    assert medians[-1] < 0.02, medians


def test_criterion_04_rotation_invariance():
    rng = np.random.default_rng(404)
    checked = 0
    for q in (2, 3):
        spec, alpha, sigma, data = random_instance(rng, q=q, n_nodes=6, K=5,
                                                   scale=0.6)
        base = laplace_loglik(alpha, np.eye(q), data, spec)
        pi_base = fitted_mean_matrices(alpha, base.z_modes, spec)
        for _ in range(10):
            O = random_orthogonal(q, rng)
            rot = alpha.copy()
            rot[:, 1:] = alpha[:, 1:] @ O.T
            ev = laplace_loglik(rot, np.eye(q), data, spec)
            assert abs(ev.loglik - base.loglik) < 1e-8
            pi_rot = fitted_mean_matrices(rot, ev.z_modes, spec)
            assert np.abs(pi_rot - pi_base).max() < 1e-8
            checked += 1
    assert checked == 20


@pytest.fixture(scope="module")
def mc_bias_runs():
    out = {}
    for assumption in ("A2", "A2prime"):
        spec = make_spec(q=1, include_intercept=True, assumption=assumption,
                         n_nodes=10)
        plan = McPlan(n_replicates=200, spec=spec, K=100, generator_seed=505,
                      loading_sd=0.8, sigma_scale=1.5)
        rows = run_monte_carlo(plan, FitOptions(max_outer=300), n_threads=4)
        out[assumption] = rows
    return out


def test_criterion_05_monte_carlo_bias_band(mc_bias_runs):
    rows = mc_bias_runs["A2"]
    ok = [r for r in rows if not r["failed"]]
    assert len(ok) == len(rows), "fit failures in replicate study"
    med_eigen = float(np.median([r["eigen_error_mean"] for r in ok]))
    assert -0.05 <= med_eigen <= 0.05, med_eigen
    for i in range(3):
        med_rmse = float(np.median([r[f"rmse_pi_{i}"] for r in ok]))
        assert med_rmse < 0.15, (i, med_rmse)


def test_criterion_06_a2_a2prime_parity(mc_bias_runs):
    meds = {}
    for assumption, rows in mc_bias_runs.items():
        ok = [r for r in rows if not r["failed"]]
        meds[assumption] = float(np.median([r["eigen_error_mean"]
                                            for r in ok]))
    assert abs(meds["A2prime"] - meds["A2"]) < 0.05, meds


def test_criterion_07_mcmc_laplace_agreement():
    spec = make_spec(q=1, include_intercept=False, n_nodes=8)
    plan = McPlan(n_replicates=1, spec=spec, K=20, loading_sd=0.8)
    truth = gen_truth(plan, seed=707)
    data = gen_network(truth, spec, seed=708)

    fit = fit_glamle(data, spec, FitOptions(seed=1, max_outer=300))
    pi_la = fitted_mean_matrices(fit.alpha_hat, fit.z_modes, spec)

    cfg = McmcConfig(n_iterations=20000, burn_in=5000, seed=2)
    sample = run_mwg(data, spec, cfg)

    off = ~np.eye(8, dtype=bool)
    gap = np.abs(pi_la[:, off] - sample.pi_mean[:, off]).mean()
    assert gap < 0.05, gap
    assert np.abs(pi_la[:, off] - truth.pi_true[:, off]).mean() < 0.10
    assert np.abs(sample.pi_mean[:, off] - truth.pi_true[:, off]).mean() < 0.10


def test_criterion_08_mwg_exact_on_micro_problem():
    # two nodes, one binary layer: the posterior over (alpha_01, alpha_10, z)
    # is three dimensional and can be integrated by tensor quadrature
    spec = make_spec(q=1, include_intercept=False, n_nodes=2)
    resp = np.zeros((1, 2, 2), dtype=np.int64)
    resp[0, 0, 1] = 1
    data = MultiviewData(["a", "b"], ["0"], resp)
    y = np.array([1.0, 0.0])                                # dyads (0,1),(1,0)

    rule = gauss_hermite_rule(3, 40)
    a1, a2, z = rule.nodes.T
    w = np.exp(rule.log_weights)
    p1, p2 = expit(a1 * z), expit(a2 * z)
    lik = (p1 ** y[0]) * ((1 - p1) ** (1 - y[0])) \
        * (p2 ** y[1]) * ((1 - p2) ** (1 - y[1]))
    norm = np.sum(w * lik)
    exact = np.array([np.sum(w * lik * p1), np.sum(w * lik * p2)]) / norm

    cfg = McmcConfig(n_iterations=210000, burn_in=10000, seed=808)
    sample = run_mwg(data, spec, cfg)
    got = np.array([sample.pi_mean[0, 0, 1], sample.pi_mean[0, 1, 0]])
    assert np.abs(got - exact).max() < 0.02, (got, exact)


def test_criterion_09_wald_calibration():
    spec = make_spec(q=1, include_intercept=True, n_nodes=8)
    cons = build_constraints(spec)
    rng = np.random.default_rng(909)
    alpha_true = random_alpha(spec, rng, scale=0.7)
    alpha_true[:, 0] = rng.uniform(-0.5, 0.5, size=spec.m)
    alpha_true[0, 1] = 1.0                       # well-separated sign anchor
    alpha_true, _ = apply_sign_anchors(alpha_true, None, spec, cons)
    target = np.array([alpha_true[0, 1]])

    def one_rep(rep):
        rep_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=910, spawn_key=(rep,)))
        data = sample_layers(spec, alpha_true, np.eye(1), 200, rep_rng)
        fit = fit_glamle(data, spec, FitOptions(seed=rep, max_outer=300))
        vcov = sandwich_vcov(fit, data, spec)
        R = np.zeros((1, len(fit.free_params)))
        R[0, 1] = 1.0                            # free index 1 = alpha[0, 1]
        _, _, p = wald_test(fit, vcov, R, target, data.n_layers)
        return p

    with ThreadPoolExecutor(max_workers=4) as pool:
        pvals = list(pool.map(one_rep, range(300)))
    rate = float(np.mean(np.asarray(pvals) < 0.05))
    assert 0.02 <= rate <= 0.10, rate


def test_criterion_10_dunn_smyth_normality():
    passes = 0
    runs = 100
    for s in range(runs):
        spec = make_spec(q=1, include_intercept=True, n_nodes=6)
        plan = McPlan(n_replicates=1, spec=spec, K=30, loading_sd=0.7)
        truth = gen_truth(plan, seed=10_000 + s)
        data = gen_network(truth, spec, seed=20_000 + s)
        fit = fit_glamle(data, spec, FitOptions(seed=s, max_outer=200))
        mu = fitted_mean_matrices(fit.alpha_hat, fit.z_modes, spec)
        res = dunn_smyth_residuals(mu, data, spec, seed=s)
        _, p = kstest(res.residuals, "norm")
        if p > 0.01:
            passes += 1
    assert passes >= 95, passes


def test_criterion_11_seeded_cli_byte_reproducibility(tmp_path):
    def run(args):
        code = cli_main([str(a) for a in args])
        assert code == 0, args
        return code

    produced = {"a": [], "b": []}
    for tag in ("a", "b"):
        d = tmp_path / tag
        d.mkdir()
        edges, truth = d / "edges.csv", d / "truth.json"
        run(["simulate", "--nodes", 6, "--layers", 8, "--factors", 1,
             "--seed", 11, "--loading-sd", 0.6, "--out", edges,
             "--truth", truth])
        fit = d / "fit.json"
        run(["fit", "--data", edges, "--factors", 1, "--seed", 3,
             "--out", fit])
        oracle = d / "oracle.csv"
        run(["oracle", "--data", edges, "--fit", fit, "--order", 20,
             "--out", oracle])
        resid, qq = d / "resid.csv", d / "qq.csv"
        run(["diagnose", "--fit", fit, "--data", edges, "--seed", 5,
             "--out", resid, "--qq", qq])
        chain, pi = d / "chain.json", d / "pi.csv"
        run(["mcmc", "--data", edges, "--factors", 1, "--iters", 200,
             "--burn", 50, "--seed", 7, "--out", chain, "--pi", pi])
        planf = d / "plan.txt"
        planf.write_text("nodes = 5\nlayers = 10\nreplicates = 2\n"
                         "factors = 1\nloading_sd = 0.5\nseed = 9\n"
                         "max_outer = 100\n")
        mc = d / "mc.csv"
        run(["montecarlo", "--plan", planf, "--out", mc])
        produced[tag] = [edges, truth, fit, oracle, resid, qq, chain, pi, mc]

    for x, y in zip(produced["a"], produced["b"]):
        assert filecmp.cmp(x, y, shallow=False), (x, y)
