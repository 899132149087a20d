"""Laplace machinery: latent-mode solves, curvature, approximate likelihood.

Per layer k the marginal density integral is replaced by its Laplace
approximation around the maximizer z_hat of the scaled complete-data
objective Q.  The per-layer contribution to the approximate log-likelihood
is

    -0.5 log det Gamma + sum_{i!=j} {y eta - b(eta) + c(y)}
    - z_hat' Sigma^{-1} z_hat / 2   [- 0.5 log det Sigma when Sigma != I]

with Gamma = sum_{i!=j} b''(eta) a a' + Sigma^{-1} over the factor part a
of each loading row.  The 2*pi and 1/m normalizations cancel between the
Gaussian integral and Q.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InnerSolveError, InvalidSpecError
from .model import (
    Loadings,
    augment,
    check_spd,
    complete_data_loglik,
    cumulant,
    curvature_weight,
    curvature_weight_deriv,
    dyad_pairs,
    log_normalizer,
    mean_response,
)


@dataclass
class LaplaceOptions:
    inner_tol: float = 1e-10
    max_inner: int = 100
    max_halvings: int = 30


@dataclass
class InnerSolveResult:
    z_hat: np.ndarray
    gamma: np.ndarray
    iterations: int
    grad_norm: float


@dataclass
class LaplaceEval:
    loglik: float
    per_layer: np.ndarray
    z_modes: np.ndarray
    grad_alpha: np.ndarray = None
    grad_sigma: np.ndarray = None


def _as_alpha(loadings):
    if isinstance(loadings, Loadings):
        return loadings.alpha
    return np.asarray(loadings, dtype=float)


def _layer_flat(y_layer, spec):
    y = np.asarray(y_layer, dtype=float)
    pairs = dyad_pairs(spec.n_nodes, spec.directed)
    return y[pairs[:, 0], pairs[:, 1]]


def _data_flat(data, spec):
    """Accept either a MultiviewData or a pre-flattened (K, m) array."""
    arr = np.asarray(getattr(data, "responses", data), dtype=float)
    if arr.ndim == 3:
        pairs = dyad_pairs(spec.n_nodes, spec.directed)
        return arr[:, pairs[:, 0], pairs[:, 1]]
    return np.atleast_2d(arr)


def q_function(loadings, z, y_layer, sigma, spec):
    """Scaled complete-data objective: complete-data log-likelihood over m."""
    return complete_data_loglik(loadings, z, y_layer, sigma, spec) / spec.m


# ---------------------------------------------------------------------------
# Inner solve (batched over layers)
# ---------------------------------------------------------------------------

def _solve_modes(alpha, y_flat, sigma, spec, opts=None, z0=None):
    """Damped Newton for all layers at once.

    Returns (z_modes (K, q), iterations (K,), grad_norms (K,)).  The
    stationarity residual is the infinity norm of dQ/dz, i.e. the raw
    score divided by m.  Raises InnerSolveError naming the first
    non-converged layer.
    """
    opts = opts or LaplaceOptions()
    alpha = _as_alpha(alpha)
    if not np.isfinite(alpha).all():
        raise InvalidSpecError("alpha entries must be finite")
    y_flat = np.atleast_2d(y_flat)
    K, m = y_flat.shape
    fac = alpha[:, spec.factor_cols]                      # (m, q)
    eta0 = alpha[:, 0] if spec.include_intercept else np.zeros(m)
    sig_inv = np.linalg.inv(check_spd(sigma))

    Z = np.zeros((K, spec.q)) if z0 is None else np.array(z0, dtype=float)
    iters = np.zeros(K, dtype=int)
    armijo = 1e-4

    def objective(Zc, y=y_flat):
        eta = eta0 + Zc @ fac.T
        val = np.sum(y * eta - cumulant(spec.family, eta), axis=1)
        return val - 0.5 * np.einsum("ki,ij,kj->k", Zc, sig_inv, Zc)

    S = objective(Z)
    grad_norms = np.full(K, np.inf)
    for _ in range(opts.max_inner):
        eta = eta0 + Z @ fac.T
        resid = y_flat - mean_response(spec.family, eta)
        G = resid @ fac - Z @ sig_inv                     # (K, q) raw score
        grad_norms = np.abs(G).max(axis=1) / m
        active = grad_norms > opts.inner_tol
        if not active.any():
            break
        W = curvature_weight(spec.family, eta)
        gamma = np.einsum("km,mi,mj->kij", W, fac, fac) + sig_inv
        step = np.linalg.solve(gamma[active], G[active][..., None])[..., 0]
        slope = np.einsum("ki,ki->k", G[active], step)

        t = np.ones(active.sum())
        Za = Z[active]
        Sa = S[active]
        ya = y_flat[active]
        # rounding slack: near the optimum the predicted gain drops below
        # double precision, so exact Armijo would reject every step
        slack = 16.0 * np.finfo(float).eps * (1.0 + np.abs(Sa))
        for _ in range(opts.max_halvings):
            trial = Za + t[:, None] * step
            S_new = objective(trial, ya)
            bad = ~(S_new >= Sa + armijo * t * slope - slack)
            if not bad.any():
                break
            t[bad] *= 0.5
        Z = Z.copy()
        Z[active] = Za + t[:, None] * step
        S = objective(Z)
        iters[active] += 1
    else:
        # final residual check after exhausting iterations
        eta = eta0 + Z @ fac.T
        resid = y_flat - mean_response(spec.family, eta)
        G = resid @ fac - Z @ sig_inv
        grad_norms = np.abs(G).max(axis=1) / m
        if (grad_norms > opts.inner_tol).any():
            bad = int(np.argmax(grad_norms > opts.inner_tol))
            raise InnerSolveError(
                f"latent-mode solve did not converge for layer {bad} "
                f"(residual {grad_norms[bad]:.3e})",
                z_last=Z[bad], grad_norm=float(grad_norms[bad]), layer=bad)
    return Z, np.maximum(iters, 1), grad_norms


def gamma_matrix(loadings, z_hat, sigma, spec):
    """Curvature of the unscaled complete-data objective at z_hat, negated."""
    alpha = _as_alpha(loadings)
    fac = alpha[:, spec.factor_cols]
    eta = alpha @ augment(z_hat, spec)
    w = curvature_weight(spec.family, eta)
    return (fac * w[:, None]).T @ fac + np.linalg.inv(check_spd(sigma))


def solve_latent_mode(loadings, y_layer, sigma, spec, opts=None):
    """Newton solve of dQ/dz = 0 for a single layer, starting from z = 0."""
    y_flat = _layer_flat(y_layer, spec)
    Z, iters, norms = _solve_modes(loadings, y_flat[None, :], sigma, spec, opts)
    gamma = gamma_matrix(loadings, Z[0], sigma, spec)
    return InnerSolveResult(z_hat=Z[0], gamma=gamma, iterations=int(iters[0]),
                            grad_norm=float(norms[0]))


# ---------------------------------------------------------------------------
# Approximate log-likelihood
# ---------------------------------------------------------------------------

def _logdet_spd(mat, what="Gamma"):
    """log det via Cholesky; jitters the diagonal if the factorization fails."""
    jitter = 0.0
    while True:
        try:
            chol = np.linalg.cholesky(mat + jitter * np.eye(mat.shape[0]))
            return 2.0 * np.sum(np.log(np.diag(chol)))
        except np.linalg.LinAlgError:
            jitter = 1e-8 if jitter == 0.0 else 2.0 * jitter
            if jitter > 1e-2:
                raise
            warnings.warn(f"{what} not positive definite; adding {jitter:.1e} jitter")


def _loglik_batched(alpha, sigma, y_flat, spec, opts=None, z0=None):
    """Per-layer Laplace values plus the solved modes."""
    alpha = _as_alpha(alpha)
    y_flat = np.atleast_2d(y_flat)
    K, m = y_flat.shape
    fac = alpha[:, spec.factor_cols]
    eta0 = alpha[:, 0] if spec.include_intercept else np.zeros(m)
    sigma = check_spd(sigma)
    sig_inv = np.linalg.inv(sigma)
    _, logdet_sigma = np.linalg.slogdet(sigma)

    Z, _, _ = _solve_modes(alpha, y_flat, sigma, spec, opts, z0=z0)
    eta = eta0 + Z @ fac.T
    W = curvature_weight(spec.family, eta)
    gamma = np.einsum("km,mi,mj->kij", W, fac, fac) + sig_inv

    const = np.sum(log_normalizer(spec.family, y_flat), axis=1)
    fit = np.sum(y_flat * eta - cumulant(spec.family, eta), axis=1) + const
    quad = 0.5 * np.einsum("ki,ij,kj->k", Z, sig_inv, Z)
    logdets = np.array([_logdet_spd(gamma[k]) for k in range(K)])
    per_layer = -0.5 * logdets + fit - quad
    if spec.assumption == "A2prime":
        per_layer = per_layer - 0.5 * logdet_sigma
    return per_layer, Z, gamma, eta, W

def laplace_loglayer(loadings, y_layer, sigma, spec, opts=None):
    """Laplace-approximated marginal log density of a single layer."""
    y_flat = _layer_flat(y_layer, spec)
    per_layer, Z, gamma, _, _ = _loglik_batched(loadings, sigma, y_flat[None, :],
                                                spec, opts)
    inner = solve_latent_mode(loadings, y_layer, sigma, spec, opts)
    return float(per_layer[0]), inner


def laplace_loglik(loadings, sigma, data, spec, opts=None, z0=None):
    """Total Laplace-approximated log-likelihood over all layers."""
    y_flat = _data_flat(data, spec)
    if y_flat.shape[0] < 1:
        raise InvalidSpecError("need at least one layer")
    per_layer, Z, _, _, _ = _loglik_batched(loadings, sigma, y_flat, spec, opts, z0=z0)
    return LaplaceEval(loglik=float(per_layer.sum()), per_layer=per_layer, z_modes=Z)


# ---------------------------------------------------------------------------
# Analytic gradients
# ---------------------------------------------------------------------------

def _grad_layer_ingredients(fac, eta, gamma_k, spec):
    """Shared pieces of the loadings/covariance gradient for one layer.

    The direct data term is resid * z_hat.  The log-det term carries both
    the explicit eta dependence and the implicit z_hat(parameter) chain,
    obtained from the stationarity condition (dz_hat = Gamma^{-1} * mixed
    second derivatives of the exponent).
    """
    M = np.linalg.inv(gamma_k)
    wp = curvature_weight_deriv(spec.family, eta)
    v = fac @ M                                  # (m, q) rows a' Gamma^{-1}
    s = np.einsum("mi,mi->m", v, fac)            # a' Gamma^{-1} a
    c = (wp * s) @ fac                           # tr(Gamma^{-1} dGamma/dz_u)
    d = M @ c
    u = fac @ d
    return M, wp, v, s, c, d, u


def grad_alpha_layers(loadings, sigma, data, spec, opts=None, z0=None):
    """Per-layer gradient of the Laplace log-likelihood wrt each loading.

    Returns (K, m, p).  Constrained entries are *not* masked here; the
    estimator masks them when packing.
    """
    alpha = _as_alpha(loadings)
    y_flat = _data_flat(data, spec)
    per_layer, Z, gamma, eta, W = _loglik_batched(alpha, sigma, y_flat, spec,
                                                  opts, z0=z0)
    K, m = y_flat.shape
    fac = alpha[:, spec.factor_cols]
    resid = y_flat - mean_response(spec.family, eta)

    out = np.zeros((K, m, spec.p))
    off = 1 if spec.include_intercept else 0
    for k in range(K):
        M, wp, v, s, c, d, u = _grad_layer_ingredients(fac, eta[k], gamma[k], spec)
        z_aug = augment(Z[k], spec)              # (p,)
        r = resid[k]
        w = W[k]
        # column l: r*z_l - 0.5*(wp*z_l*s + 2*w*v[:,t] - w*z_l*u + r*d[t])
        base = r[:, None] * z_aug[None, :] \
            - 0.5 * (wp * s - w * u)[:, None] * z_aug[None, :]
        base[:, off:] -= 0.5 * (2.0 * w[:, None] * v + np.outer(r, d))
        out[k] = base
    return out


def grad_alpha(loadings, sigma, data, spec, opts=None, z0=None):
    """Gradient of the total Laplace log-likelihood wrt the loadings, (m, p)."""
    return grad_alpha_layers(loadings, sigma, data, spec, opts, z0=z0).sum(axis=0)


def sigma_free_elements(spec, diagonal=True):
    """Ordered free (row, col) positions of the symmetric latent covariance."""
    if diagonal:
        return [(i, i) for i in range(spec.q)]
    return [(i, j) for i in range(spec.q) for j in range(i + 1)]


def grad_sigma_layers(loadings, sigma, data, spec, opts=None, diagonal=True,
                      z0=None):
    """Per-layer gradient wrt the free elements of Sigma, (K, n_free).

    Only meaningful under A2prime.  Includes the implicit z_hat(Sigma)
    chain through the log-det term.
    """
    if spec.assumption != "A2prime":
        raise InvalidSpecError("sigma gradient requires assumption A2prime")
    alpha = _as_alpha(loadings)
    y_flat = _data_flat(data, spec)
    per_layer, Z, gamma, eta, W = _loglik_batched(alpha, sigma, y_flat, spec,
                                                  opts, z0=z0)
    K = y_flat.shape[0]
    fac = alpha[:, spec.factor_cols]
    resid = y_flat - mean_response(spec.family, eta)
    sig_inv = np.linalg.inv(sigma)
    elements = sigma_free_elements(spec, diagonal)

    out = np.zeros((K, len(elements)))
    for k in range(K):
        M, wp, v, s, c, d, u = _grad_layer_ingredients(fac, eta[k], gamma[k], spec)
        wz = sig_inv @ Z[k]
        # dGamma/dsigma = -Sig^{-1} D Sig^{-1}; plus prior normalization,
        # quadratic term, and the implicit z_hat chain -0.5 c' dz/dsigma
        mat = 0.5 * (sig_inv @ M @ sig_inv - sig_inv + np.outer(wz, wz))
        chain = -0.5 * np.outer(sig_inv @ d, wz)
        mat = mat + 0.5 * (chain + chain.T)
        mat = 0.5 * (mat + mat.T)
        for idx, (i, j) in enumerate(elements):
            out[k, idx] = mat[i, i] if i == j else 2.0 * mat[i, j]
    return out


def grad_sigma(loadings, sigma, data, spec, opts=None, diagonal=True, z0=None):
    """Gradient of the total Laplace log-likelihood wrt free Sigma elements."""
    return grad_sigma_layers(loadings, sigma, data, spec, opts, diagonal,
                             z0=z0).sum(axis=0)


# ---------------------------------------------------------------------------
# Finite-difference fallbacks (authoritative cross-check)
# ---------------------------------------------------------------------------

def grad_alpha_fd(loadings, sigma, data, spec, opts=None, step=1e-5):
    """Central finite differences of laplace_loglik over every loading entry."""
    alpha = _as_alpha(loadings).copy()
    out = np.zeros_like(alpha)
    for r in range(alpha.shape[0]):
        for c in range(alpha.shape[1]):
            orig = alpha[r, c]
            alpha[r, c] = orig + step
            hi = laplace_loglik(alpha, sigma, data, spec, opts).loglik
            alpha[r, c] = orig - step
            lo = laplace_loglik(alpha, sigma, data, spec, opts).loglik
            alpha[r, c] = orig
            out[r, c] = (hi - lo) / (2.0 * step)
    return out


def grad_sigma_fd(loadings, sigma, data, spec, opts=None, diagonal=True,
                  step=1e-6):
    """Central finite differences over free symmetric elements of Sigma."""
    sigma = np.array(sigma, dtype=float)
    elements = sigma_free_elements(spec, diagonal)
    out = np.zeros(len(elements))
    for idx, (i, j) in enumerate(elements):
        pert = np.zeros_like(sigma)
        pert[i, j] = step
        pert[j, i] = step
        hi = laplace_loglik(loadings, sigma + pert, data, spec, opts).loglik
        lo = laplace_loglik(loadings, sigma - pert, data, spec, opts).loglik
        out[idx] = (hi - lo) / (2.0 * step)
    return out
