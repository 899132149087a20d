"""Command-line interface.

Exit codes: 0 on success, 1 on usage or data-format errors, 2 on
numerical failures during model fitting.
"""

import sys

import click
import numpy as np

from . import io as nio
from .diagnostics import dunn_smyth_residuals, qq_data
from .errors import NetlvmError, NumericalError
from .estimator import FitOptions, FitResult, fit_glamle, fitted_mean_matrices
from .laplace import laplace_loglayer
from .mcmc import McmcConfig, run_mwg
from .model import Loadings, ModelSpec, dyad_pairs
from .quadrature import marginal_loglayer_quadrature
from .simulate import McPlan, gen_network, gen_truth, run_monte_carlo

ASSUMPTION_FLAGS = {"a2": "A2", "a2prime": "A2prime"}
GRADIENT_FLAGS = {"analytic": "analytic", "fd": "finite_difference"}

family_option = click.option(
    "--family", type=click.Choice(["bernoulli", "poisson"]),
    default="bernoulli", show_default=True)
assumption_option = click.option(
    "--assumption", type=click.Choice(["a2", "a2prime"]),
    default="a2", show_default=True)
directed_option = click.option(
    "--directed/--undirected", "directed", default=True, show_default=True)


@click.group()
def cli():
    """Latent variable models for multiview networks."""


def _spawn_seeds(seed, count):
    ss = np.random.SeedSequence(seed)
    return [int(child.generate_state(1)[0]) for child in ss.spawn(count)]


def _build_spec(family, factors, intercept, assumption, directed, n_nodes):
    return ModelSpec(family=family, q=factors, include_intercept=intercept,
                     assumption=ASSUMPTION_FLAGS.get(assumption, assumption),
                     directed=directed, n_nodes=n_nodes)


@cli.command()
@click.option("--nodes", type=int, required=True)
@click.option("--layers", type=int, required=True)
@click.option("--factors", type=int, required=True)
@family_option
@assumption_option
@directed_option
@click.option("--no-intercept", is_flag=True, default=False)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--loading-sd", type=float, default=1.0, show_default=True)
@click.option("--sigma-scale", type=float, default=1.5, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--truth", "truth_path", type=click.Path(), required=True)
def simulate(nodes, layers, factors, family, assumption, directed,
             no_intercept, seed, loading_sd, sigma_scale, out, truth_path):
    """Draw a synthetic multiview network plus its generating truth."""
    spec = _build_spec(family, factors, not no_intercept, assumption,
                       directed, nodes)
    plan = McPlan(n_replicates=1, spec=spec, K=layers, generator_seed=seed,
                  loading_sd=loading_sd, sigma_scale=sigma_scale)
    truth_seed, data_seed = _spawn_seeds(seed, 2)
    truth = gen_truth(plan, seed=truth_seed)
    data = gen_network(truth, spec, seed=data_seed)
    nio.write_edge_list(out, data, directed=spec.directed)
    nio.write_truth(truth_path, truth, spec)
    click.echo(f"wrote {out} and {truth_path}")


@cli.command()
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--factors", type=int, required=True)
@family_option
@assumption_option
@directed_option
@click.option("--no-intercept", is_flag=True, default=False)
@click.option("--method", type=click.Choice(["laplace", "mcmc"]),
              default="laplace", show_default=True)
@click.option("--gradient", type=click.Choice(["analytic", "fd"]),
              default="analytic", show_default=True)
@click.option("--vcov", is_flag=True, default=False)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def fit(data_path, factors, family, assumption, directed, no_intercept,
        method, gradient, vcov, seed, out):
    """Fit the model to an edge-list file and write a fit file."""
    data = nio.ingest(data_path, family=family, directed=directed)
    if method == "mcmc" and not no_intercept:
        # sampler contract: binary responses, no intercept column
        no_intercept = True
    spec = _build_spec(family, factors, not no_intercept, assumption,
                       directed, data.n_nodes)
    data.check_against(spec)
    if method == "laplace":
        opts = FitOptions(gradient=GRADIENT_FLAGS[gradient], seed=seed,
                          compute_vcov=vcov)
        result = fit_glamle(data, spec, opts)
    else:
        config = McmcConfig(seed=seed)
        sample = run_mwg(data, spec, config)
        alpha = np.mean(sample.alpha_draws, axis=0)
        z = np.mean(sample.z_draws, axis=0)
        result = FitResult(
            alpha_hat=Loadings(alpha=alpha, constraint_mask=frozenset()),
            sigma_hat=np.eye(spec.q), z_modes=z, loglik=None,
            loglik_trace=[], grad_norm=None, converged=True,
            n_outer_iters=config.n_iterations, vcov=None, seed=seed,
            spec=spec)
    nio.write_fit(out, result, data, method=method)
    click.echo(f"wrote {out}")


@cli.command()
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--fit", "fit_path", type=click.Path(exists=True), required=True)
@click.option("--order", type=int, default=30, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def oracle(data_path, fit_path, order, out):
    """Per-layer exact marginal log-likelihood vs its Laplace value."""
    spec, loadings, sigma, _, _ = nio.read_fit(fit_path)
    data = nio.ingest(data_path, family=spec.family, directed=spec.directed)
    data.check_against(spec)
    rows = []
    for k, label in enumerate(data.layer_labels):
        y_layer = data.responses[k]
        exact = marginal_loglayer_quadrature(loadings, y_layer, sigma, spec,
                                             order=order)
        lap, _ = laplace_loglayer(loadings, y_layer, sigma, spec)
        rows.append({"layer": k, "label": label, "log_exact": float(exact),
                     "log_laplace": float(lap),
                     "error": float(lap - exact)})
    nio.write_table(out, rows,
                    ["layer", "label", "log_exact", "log_laplace", "error"])
    click.echo(f"wrote {out}")


MC_METRIC_KEYS = ("replicate", "truth_seed", "data_seed", "fit_seed",
                  "failed", "converged", "loglik", "grad_norm",
                  "eigen_error_mean")


@cli.command()
@click.option("--plan", "plan_path", type=click.Path(exists=True), required=True)
@click.option("--threads", type=int, default=0, show_default=True,
              help="Worker threads for replicates (0 = sequential).")
@click.option("--out", type=click.Path(), required=True)
def montecarlo(plan_path, threads, out):
    """Run the replicate study described by a key-value plan file."""
    cfg = nio.parse_plan(plan_path)
    try:
        spec = _build_spec(
            cfg.get("family", "bernoulli"), cfg.get("factors", 1),
            cfg.get("intercept", True), cfg.get("assumption", "a2"),
            cfg.get("directed", True), cfg["nodes"])
        plan = McPlan(
            n_replicates=cfg["replicates"], spec=spec, K=cfg["layers"],
            generator_seed=cfg.get("seed", 0),
            loading_sd=cfg.get("loading_sd", 1.0),
            sigma_scale=cfg.get("sigma_scale", 1.5))
    except KeyError as exc:
        raise click.UsageError(f"plan file is missing key {exc}") from None
    opts = FitOptions(
        outer_tol=cfg.get("outer_tol", 1e-5),
        rel_tol=cfg.get("rel_tol", 1e-9),
        max_outer=cfg.get("max_outer", 500),
        gradient=GRADIENT_FLAGS.get(cfg.get("gradient", "analytic"),
                                    cfg.get("gradient", "analytic")))
    threads = threads or cfg.get("threads", 0)
    rows = run_monte_carlo(plan, opts, n_threads=threads)
    columns = list(MC_METRIC_KEYS)
    columns += [f"rmse_pi_{i}" for i in range(len(plan.fixed_dyads))]
    columns.append("error")
    nio.write_table(out, rows, columns)
    n_failed = sum(1 for r in rows if r["failed"])
    click.echo(f"wrote {out} ({len(rows)} replicates, {n_failed} failed)")


@cli.command()
@click.option("--fit", "fit_path", type=click.Path(exists=True), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--qq", "qq_path", type=click.Path(), required=True)
def diagnose(fit_path, data_path, seed, out, qq_path):
    """Randomized quantile residuals and normal Q-Q data for a fit."""
    spec, loadings, sigma, z_modes, _ = nio.read_fit(fit_path)
    data = nio.ingest(data_path, family=spec.family, directed=spec.directed)
    data.check_against(spec)
    mu = fitted_mean_matrices(loadings, z_modes, spec)
    res = dunn_smyth_residuals(mu, data, spec, seed=seed)

    pairs = dyad_pairs(spec.n_nodes, spec.directed)
    rows = []
    idx = 0
    for k, label in enumerate(data.layer_labels):
        for i, j in pairs:
            rows.append({"layer": label,
                         "src": data.node_labels[i],
                         "dst": data.node_labels[j],
                         "residual": float(res.residuals[idx]),
                         "uniform": float(res.uniforms[idx])})
            idx += 1
    nio.write_table(out, rows, ["layer", "src", "dst", "residual", "uniform"])

    theo, sample, lo, hi = qq_data(res.residuals, seed=seed)
    nio.write_matrix_csv(qq_path, ["theoretical", "sample", "lower", "upper"],
                         [theo, sample, lo, hi])
    click.echo(f"wrote {out} and {qq_path}")


@cli.command()
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--factors", type=int, required=True)
@directed_option
@click.option("--iters", type=int, default=10000, show_default=True)
@click.option("--burn", type=int, default=1000, show_default=True)
@click.option("--thin", type=int, default=1, show_default=True)
@click.option("--proposal-sd", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--pi", "pi_path", type=click.Path(), required=True)
def mcmc(data_path, factors, directed, iters, burn, thin, proposal_sd, seed,
         out, pi_path):
    """Reference posterior sampling for the binary no-intercept model."""
    data = nio.ingest(data_path, family="bernoulli", directed=directed)
    spec = _build_spec("bernoulli", factors, False, "a2", directed,
                       data.n_nodes)
    data.check_against(spec)
    config = McmcConfig(n_iterations=iters, burn_in=burn, thin=thin,
                        proposal_sd=proposal_sd, seed=seed)
    sample = run_mwg(data, spec, config)

    import json
    doc = {
        "format_version": nio.FORMAT_VERSION,
        "config": {"n_iterations": iters, "burn_in": burn, "thin": thin,
                   "proposal_sd": proposal_sd, "seed": seed},
        "acceptance_rates": sample.acceptance_rates,
        "alpha_draws": [a.tolist() for a in sample.alpha_draws],
        "z_draws": [z.tolist() for z in sample.z_draws],
    }
    with open(out, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")

    pairs = dyad_pairs(spec.n_nodes, spec.directed)
    rows = []
    for k, label in enumerate(data.layer_labels):
        for i, j in pairs:
            rows.append({"layer": label,
                         "src": data.node_labels[i],
                         "dst": data.node_labels[j],
                         "pi_mean": float(sample.pi_mean[k, i, j])})
    nio.write_table(pi_path, rows, ["layer", "src", "dst", "pi_mean"])
    click.echo(f"wrote {out} and {pi_path} "
               f"(acceptance alpha={sample.acceptance_rates['alpha']:.3f}, "
               f"z={sample.acceptance_rates['z']:.3f})")


def main(argv=None):
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except NumericalError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except NetlvmError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
