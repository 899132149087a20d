"""Evaluation metrics and randomized-quantile residual diagnostics."""

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, poisson

from .errors import InvalidSpecError
from .model import dyad_pairs

UNIFORM_CLAMP = 1e-12


def spectral_radius(matrix, tol=1e-10, max_iter=100000):
    """Dominant eigenvalue modulus of a nonnegative matrix by power iteration.

    For nonnegative matrices this is the real Perron root.  Returns 0 for
    the zero matrix.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidSpecError("matrix must be square")
    if (a < 0).any():
        raise InvalidSpecError("matrix entries must be nonnegative")
    if not a.any():
        return 0.0
    n = a.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    lam = 0.0
    for _ in range(max_iter):
        w = a @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        lam_new = nw
        v = w / nw
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return float(lam_new)
        lam = lam_new
    return float(lam)


def eigen_error_mean(pi_hat, pi_true):
    """Mean over layers of the spectral-radius estimation error."""
    pi_hat = np.asarray(pi_hat, dtype=float)
    pi_true = np.asarray(pi_true, dtype=float)
    if pi_hat.shape != pi_true.shape:
        raise InvalidSpecError("pi_hat and pi_true must have matching shapes")
    errs = [spectral_radius(h) - spectral_radius(t)
            for h, t in zip(pi_hat, pi_true)]
    return float(np.mean(errs))


def rmse_pi(pi_hat, pi_true, dyad):
    """Root mean squared error of the fitted mean at one dyad, across layers."""
    i, j = dyad
    if i == j:
        raise InvalidSpecError("diagonal entries are structural zeros")
    pi_hat = np.asarray(pi_hat, dtype=float)
    pi_true = np.asarray(pi_true, dtype=float)
    if pi_hat.shape != pi_true.shape:
        raise InvalidSpecError("pi_hat and pi_true must have matching shapes")
    diff = pi_hat[:, i, j] - pi_true[:, i, j]
    return float(np.sqrt(np.mean(diff ** 2)))


@dataclass
class ResidualSet:
    residuals: np.ndarray
    uniforms: np.ndarray
    seed: int


def dunn_smyth_residuals(fitted_means, data, spec, seed=0):
    """Randomized quantile residuals for every off-diagonal (i, j, k).

    fitted_means is a (K, n, n) tensor of conditional means (or a fit
    result exposing them).  Each residual is the normal quantile of a
    uniform draw between the fitted CDF at y-1 and at y; standard normal
    when the model is correct.
    """
    if hasattr(fitted_means, "alpha_hat"):
        from .estimator import fitted_mean_matrices
        fitted_means = fitted_mean_matrices(
            fitted_means.alpha_hat, fitted_means.z_modes, spec)
    mu = np.asarray(fitted_means, dtype=float)
    pairs = dyad_pairs(spec.n_nodes, spec.directed)
    mu_flat = mu[:, pairs[:, 0], pairs[:, 1]].ravel()
    responses = np.asarray(getattr(data, "responses", data))
    if responses.ndim == 3:
        y_flat = responses[:, pairs[:, 0], pairs[:, 1]].ravel()
    else:
        y_flat = np.asarray(responses, dtype=float).ravel()

    if spec.family == "bernoulli":
        f_hi = np.where(y_flat >= 1, 1.0, 1.0 - mu_flat)
        f_lo = np.where(y_flat >= 1, 1.0 - mu_flat, 0.0)
    else:
        f_hi = poisson.cdf(y_flat, mu_flat)
        f_lo = np.where(y_flat > 0, poisson.cdf(y_flat - 1, mu_flat), 0.0)

    rng = np.random.default_rng(seed)
    u = f_lo + rng.uniform(size=y_flat.shape) * (f_hi - f_lo)
    u = np.clip(u, UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
    return ResidualSet(residuals=norm.ppf(u), uniforms=u, seed=seed)


def qq_data(residuals, n_envelope=200, seed=0):
    """Normal Q-Q pairs plus a simulated pointwise 95% envelope.

    Returns (theoretical, sample, lo, hi) arrays of equal length, sorted
    by theoretical quantile.  The envelope comes from n_envelope seeded
    standard-normal resamples of the same size.
    """
    r = np.sort(np.asarray(residuals, dtype=float))
    n = len(r)
    if n == 0:
        raise InvalidSpecError("residuals must be nonempty")
    theo = norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    rng = np.random.default_rng(seed)
    sims = np.sort(rng.standard_normal(size=(n_envelope, n)), axis=1)
    lo = np.percentile(sims, 2.5, axis=0)
    hi = np.percentile(sims, 97.5, axis=0)
    return theo, r, lo, hi
