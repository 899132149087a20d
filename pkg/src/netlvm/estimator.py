"""Maximum-likelihood fitting of the Laplace-approximated objective.

The outer problem maximizes the approximate log-likelihood over the free
loadings (identifiability constraints removed) and, under A2prime, a
log-Cholesky parameterization of the latent covariance.  Post-fit
inference uses the M-estimation sandwich covariance over per-layer
scores.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import chi2
from sklearn.base import BaseEstimator

from .errors import InvalidSpecError, RankDeficiencyError
from .laplace import (
    LaplaceOptions,
    grad_alpha,
    grad_alpha_layers,
    grad_sigma,
    grad_sigma_layers,
    laplace_loglik,
    sigma_free_elements,
    _data_flat,
)
from .model import (
    Loadings,
    ModelSpec,
    MultiviewData,
    dyad_pairs,
    mean_response,
)


# ---------------------------------------------------------------------------
# Identifiability constraints
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstraintSet:
    """Zero constraints and sign anchors on the factor block of the loadings.

    Positions are factor-block coordinates (dyad row, factor column).
    q(q-1)/2 upper-triangle zeros in the first q rows pin the rotation;
    the diagonal anchors pin each column sign.
    """

    zero_entries: tuple
    sign_anchors: tuple


def build_constraints(spec):
    zeros = tuple((d, l) for d in range(spec.q) for l in range(d + 1, spec.q))
    anchors = tuple((l, l) for l in range(spec.q))
    return ConstraintSet(zero_entries=zeros, sign_anchors=anchors)


def matrix_zero_positions(spec, constraints):
    """Constraint positions translated to full-matrix (row, col) coordinates."""
    off = 1 if spec.include_intercept else 0
    return [(d, l + off) for (d, l) in constraints.zero_entries]


def _free_alpha_mask(spec, constraints):
    mask = np.ones((spec.m, spec.p), dtype=bool)
    for (r, c) in matrix_zero_positions(spec, constraints):
        mask[r, c] = False
    return mask


# ---------------------------------------------------------------------------
# Parameter packing
# ---------------------------------------------------------------------------

def n_free_params(spec, constraints, sigma_diagonal=True):
    n = spec.m * spec.p - len(constraints.zero_entries)
    if spec.assumption == "A2prime":
        n += spec.q if sigma_diagonal else spec.q * (spec.q + 1) // 2
    return n


def pack_params(alpha, sigma, spec, constraints, sigma_diagonal=True):
    """Flatten (alpha, sigma) into the free-parameter vector.

    Alpha entries go row-major with constrained zeros skipped; sigma is
    mapped through its lower-triangular Cholesky factor with log diagonal
    (A2prime only; under A2 sigma is fixed at the identity).
    """
    alpha = np.asarray(alpha, dtype=float)
    parts = [alpha[_free_alpha_mask(spec, constraints)]]
    if spec.assumption == "A2prime":
        chol = np.linalg.cholesky(np.asarray(sigma, dtype=float))
        if sigma_diagonal:
            parts.append(np.log(np.diag(chol)))
        else:
            vals = []
            for i in range(spec.q):
                for j in range(i + 1):
                    vals.append(np.log(chol[i, i]) if i == j else chol[i, j])
            parts.append(np.array(vals))
    return np.concatenate(parts)


def unpack_params(vec, spec, constraints, sigma_diagonal=True,
                  enforce_signs=False):
    """Inverse of pack_params; optionally flips columns to satisfy sign anchors."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (n_free_params(spec, constraints, sigma_diagonal),):
        raise InvalidSpecError(
            f"expected {n_free_params(spec, constraints, sigma_diagonal)} free "
            f"parameters, got {vec.shape}")
    mask = _free_alpha_mask(spec, constraints)
    n_alpha = int(mask.sum())
    alpha = np.zeros((spec.m, spec.p))
    alpha[mask] = vec[:n_alpha]
    if spec.assumption == "A2prime":
        rest = vec[n_alpha:]
        chol = np.zeros((spec.q, spec.q))
        if sigma_diagonal:
            np.fill_diagonal(chol, np.exp(rest))
        else:
            pos = 0
            for i in range(spec.q):
                for j in range(i + 1):
                    chol[i, j] = np.exp(rest[pos]) if i == j else rest[pos]
                    pos += 1
        sigma = chol @ chol.T
    else:
        sigma = np.eye(spec.q)
    if enforce_signs:
        alpha, _ = apply_sign_anchors(alpha, None, spec, constraints)
    return alpha, sigma


def apply_sign_anchors(alpha, z_modes, spec, constraints):
    """Flip factor columns (and matching z components) to nonnegative anchors."""
    alpha = np.array(alpha, dtype=float)
    z_modes = None if z_modes is None else np.array(z_modes, dtype=float)
    off = 1 if spec.include_intercept else 0
    for (row, col) in constraints.sign_anchors:
        val = alpha[row, col + off]
        if val < 0:
            alpha[:, col + off] *= -1.0
            if z_modes is not None:
                z_modes[:, col] *= -1.0
        elif val == 0.0:
            warnings.warn(f"sign anchor for factor column {col} is exactly zero; "
                          "column sign left as produced")
    return alpha, z_modes


def _sigma_chol_jacobian(vec_rest, spec, sigma_diagonal):
    """d Sigma / d (cholesky params), as a list of symmetric matrices."""
    q = spec.q
    chol = np.zeros((q, q))
    if sigma_diagonal:
        np.fill_diagonal(chol, np.exp(vec_rest))
        params = [(i, i) for i in range(q)]
    else:
        pos = 0
        params = []
        for i in range(q):
            for j in range(i + 1):
                chol[i, j] = np.exp(vec_rest[pos]) if i == j else vec_rest[pos]
                params.append((i, j))
                pos += 1
    jacs = []
    for (i, j) in params:
        dL = np.zeros((q, q))
        dL[i, j] = chol[i, i] if i == j else 1.0
        dS = dL @ chol.T
        jacs.append(dS + dS.T)
    return jacs


def _chain_sigma_grad(g_elements, vec_rest, spec, sigma_diagonal):
    """Chain dloglik/dSigma (free symmetric elements) to the Cholesky params."""
    elements = sigma_free_elements(spec, diagonal=sigma_diagonal)
    jacs = _sigma_chol_jacobian(vec_rest, spec, sigma_diagonal)
    out = np.zeros(len(jacs))
    for pidx, dS in enumerate(jacs):
        out[pidx] = sum(g_elements[eidx] * dS[u, v]
                        for eidx, (u, v) in enumerate(elements))
    return out


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

@dataclass
class FitOptions:
    outer_tol: float = 1e-5
    rel_tol: float = 1e-9
    max_outer: int = 500
    inner_tol: float = 1e-10
    max_inner: int = 100
    gradient: str = "analytic"       # or "finite_difference"
    seed: int = 0
    sigma_diagonal: bool = True
    compute_vcov: bool = False
    start: np.ndarray = None         # optional free-parameter start vector
    lbfgs_memory: int = 10

    def laplace_options(self):
        return LaplaceOptions(inner_tol=self.inner_tol, max_inner=self.max_inner)


@dataclass
class FitResult:
    alpha_hat: Loadings
    sigma_hat: np.ndarray
    z_modes: np.ndarray
    loglik: float
    loglik_trace: list
    grad_norm: float
    converged: bool
    n_outer_iters: int
    vcov: np.ndarray
    seed: int
    spec: ModelSpec
    constraints: ConstraintSet = None
    free_params: np.ndarray = None
    opts: FitOptions = field(default_factory=FitOptions, repr=False)


def default_start(data, spec, constraints, opts):
    """Small random loadings; intercepts from per-dyad empirical means."""
    rng = np.random.default_rng(opts.seed)
    y_flat = _data_flat(data, spec)
    K = y_flat.shape[0]
    alpha = rng.normal(0.0, 0.1, size=(spec.m, spec.p))
    if spec.include_intercept:
        ybar = y_flat.mean(axis=0)
        if spec.family == "bernoulli":
            p = np.clip(ybar, 1.0 / (K + 2.0), 1.0 - 1.0 / (K + 2.0))
            alpha[:, 0] = np.log(p / (1.0 - p))
        else:
            alpha[:, 0] = np.log(np.maximum(ybar, 1.0 / (K + 2.0)))
    for (r, c) in matrix_zero_positions(spec, constraints):
        alpha[r, c] = 0.0
    sigma = np.eye(spec.q)
    return pack_params(alpha, sigma, spec, constraints, opts.sigma_diagonal)


def _make_objective(data, spec, constraints, opts):
    """Negative loglik and gradient over the free vector, with warm starts."""
    lap_opts = opts.laplace_options()
    mask = _free_alpha_mask(spec, constraints)
    n_alpha = int(mask.sum())
    warm = {"z": None}

    def value(x):
        alpha, sigma = unpack_params(x, spec, constraints, opts.sigma_diagonal)
        ev = laplace_loglik(alpha, sigma, data, spec, lap_opts, z0=warm["z"])
        warm["z"] = ev.z_modes
        return -ev.loglik, ev

    def gradient(x):
        alpha, sigma = unpack_params(x, spec, constraints, opts.sigma_diagonal)
        ga = grad_alpha(alpha, sigma, data, spec, lap_opts, z0=warm["z"])
        g = ga[mask]
        if spec.assumption == "A2prime":
            gs = grad_sigma(alpha, sigma, data, spec, lap_opts,
                            diagonal=opts.sigma_diagonal, z0=warm["z"])
            g = np.concatenate([g, _chain_sigma_grad(
                gs, x[n_alpha:], spec, opts.sigma_diagonal)])
        return -g

    def gradient_fd(x, step=1e-6):
        g = np.zeros_like(x)
        for j in range(len(x)):
            e = np.zeros_like(x)
            e[j] = step
            g[j] = (value(x + e)[0] - value(x - e)[0]) / (2.0 * step)
        return g

    grad = gradient if opts.gradient == "analytic" else gradient_fd
    return value, grad


def fit_glamle(data, spec, opts=None):
    """Quasi-Newton maximization of the Laplace-approximated log-likelihood."""
    opts = opts or FitOptions()
    if isinstance(data, MultiviewData):
        data.check_against(spec)
    constraints = build_constraints(spec)
    value, gradient = _make_objective(data, spec, constraints, opts)

    x0 = opts.start if opts.start is not None else default_start(
        data, spec, constraints, opts)
    x0 = np.asarray(x0, dtype=float)

    trace = [-value(x0)[0]]

    def fun(x):
        f, _ = value(x)
        return f, gradient(x)

    def callback(x):
        trace.append(-value(x)[0])

    res = minimize(fun, x0, jac=True, method="L-BFGS-B", callback=callback,
                   options={"maxiter": opts.max_outer,
                            "maxcor": opts.lbfgs_memory,
                            "ftol": opts.rel_tol,
                            "gtol": opts.outer_tol})
    x_hat = res.x
    f_hat, ev = value(x_hat)
    g_hat = gradient(x_hat)
    grad_norm = float(np.abs(g_hat).max())
    rel_change = abs(trace[-1] - trace[-2]) / max(1.0, abs(trace[-1])) \
        if len(trace) > 1 else 0.0
    converged = grad_norm <= opts.outer_tol or \
        (res.success and rel_change <= opts.rel_tol)

    alpha, sigma = unpack_params(x_hat, spec, constraints, opts.sigma_diagonal)
    alpha, z_modes = apply_sign_anchors(alpha, ev.z_modes, spec, constraints)
    x_hat = pack_params(alpha, sigma, spec, constraints, opts.sigma_diagonal)
    loadings = Loadings(alpha=alpha, constraint_mask=frozenset(
        matrix_zero_positions(spec, constraints)))

    fit = FitResult(
        alpha_hat=loadings, sigma_hat=sigma, z_modes=z_modes,
        loglik=float(-f_hat), loglik_trace=trace, grad_norm=grad_norm,
        converged=bool(converged), n_outer_iters=int(res.nit), vcov=None,
        seed=opts.seed, spec=spec, constraints=constraints,
        free_params=x_hat, opts=opts)
    if opts.compute_vcov:
        fit.vcov = sandwich_vcov(fit, data, spec)
    return fit


def fitted_mean_matrices(loadings, z_modes, spec):
    """Conditional mean matrices mu(alpha' z_hat) as a (K, n, n) tensor."""
    alpha = getattr(loadings, "alpha", loadings)
    z_modes = np.atleast_2d(z_modes)
    if spec.include_intercept:
        z_aug = np.hstack([np.ones((len(z_modes), 1)), z_modes])
    else:
        z_aug = z_modes
    eta = z_aug @ np.asarray(alpha, dtype=float).T          # (K, m)
    mu = mean_response(spec.family, eta)
    pairs = dyad_pairs(spec.n_nodes, spec.directed)
    out = np.zeros((len(z_modes), spec.n_nodes, spec.n_nodes))
    out[:, pairs[:, 0], pairs[:, 1]] = mu
    if not spec.directed:
        out[:, pairs[:, 1], pairs[:, 0]] = mu
    return out


# ---------------------------------------------------------------------------
# Sandwich inference
# ---------------------------------------------------------------------------

def per_layer_scores(x, data, spec, constraints, opts):
    """(K, d) per-layer gradients of the approximate log-likelihood."""
    lap_opts = opts.laplace_options()
    mask = _free_alpha_mask(spec, constraints)
    n_alpha = int(mask.sum())
    alpha, sigma = unpack_params(x, spec, constraints, opts.sigma_diagonal)
    ga = grad_alpha_layers(alpha, sigma, data, spec, lap_opts)   # (K, m, p)
    scores = ga[:, mask]
    if spec.assumption == "A2prime":
        gs = grad_sigma_layers(alpha, sigma, data, spec, lap_opts,
                               diagonal=opts.sigma_diagonal)
        chained = np.array([
            _chain_sigma_grad(gs[k], x[n_alpha:], spec, opts.sigma_diagonal)
            for k in range(gs.shape[0])])
        scores = np.hstack([scores, chained])
    return scores


def sandwich_vcov(fit, data, spec, fd_scale=1e-5):
    """Robust covariance B^{-1} A B^{-1}' of the free-parameter estimator.

    A is the empirical outer product of per-layer scores; B the negative
    average score Jacobian by central finite differences.
    """
    opts = fit.opts
    constraints = fit.constraints or build_constraints(spec)
    x = np.asarray(fit.free_params, dtype=float)
    K = _data_flat(data, spec).shape[0]
    d = len(x)

    s = per_layer_scores(x, data, spec, constraints, opts)
    a_hat = s.T @ s / K

    b_hat = np.zeros((d, d))
    for j in range(d):
        h = fd_scale * (1.0 + abs(x[j]))
        e = np.zeros(d)
        e[j] = h
        s_hi = per_layer_scores(x + e, data, spec, constraints, opts).sum(axis=0)
        s_lo = per_layer_scores(x - e, data, spec, constraints, opts).sum(axis=0)
        b_hat[:, j] = -(s_hi - s_lo) / (2.0 * h * K)

    u, sv, vt = np.linalg.svd(b_hat)
    tol = sv.max() * d * np.finfo(float).eps * 1e3
    if sv.min() <= tol:
        null = vt[sv <= tol]
        raise RankDeficiencyError(
            f"score Jacobian is rank deficient ({np.sum(sv > tol)}/{d})",
            null_directions=null)
    b_inv = np.linalg.inv(b_hat)
    return b_inv @ a_hat @ b_inv.T


def wald_test(fit, vcov, restriction, target, n_layers):
    """Wald statistic for the linear restriction R theta = r.

    Returns (statistic, degrees of freedom, p-value); the statistic is
    chi-square with rank(R) degrees of freedom under the null.
    """
    R = np.atleast_2d(np.asarray(restriction, dtype=float))
    r = np.atleast_1d(np.asarray(target, dtype=float))
    if np.linalg.matrix_rank(R) != R.shape[0]:
        raise InvalidSpecError("restriction matrix must have full row rank")
    theta = np.asarray(fit.free_params, dtype=float)
    diff = R @ theta - r
    inner = R @ vcov @ R.T
    try:
        sol = np.linalg.solve(inner, diff)
    except np.linalg.LinAlgError:
        raise RankDeficiencyError("R V R' is singular") from None
    stat = float(n_layers * diff @ sol)
    df = R.shape[0]
    return stat, df, float(chi2.sf(stat, df))


# ---------------------------------------------------------------------------
# Estimator API
# ---------------------------------------------------------------------------

class MultiviewNetworkLVM(BaseEstimator):
    """Latent-factor model for multiview networks, sklearn-style.

    Parameters mirror FitOptions plus the model configuration.  fit
    accepts a (K, n, n) response tensor (or a MultiviewData) and exposes
    the fitted loadings, covariance and per-layer latent modes.
    """

    def __init__(self, n_factors=1, family="bernoulli", include_intercept=True,
                 assumption="A2", directed=True, outer_tol=1e-5,
                 max_outer=500, gradient="analytic", compute_vcov=False,
                 seed=0):
        self.n_factors = n_factors
        self.family = family
        self.include_intercept = include_intercept
        self.assumption = assumption
        self.directed = directed
        self.outer_tol = outer_tol
        self.max_outer = max_outer
        self.gradient = gradient
        self.compute_vcov = compute_vcov
        self.seed = seed

    def _validate_input(self, Y):
        if isinstance(Y, MultiviewData):
            return Y
        Y = np.asarray(Y)
        if Y.ndim != 3 or Y.shape[1] != Y.shape[2]:
            raise InvalidSpecError("Y must be a (K, n, n) tensor")
        n = Y.shape[1]
        return MultiviewData(
            node_labels=[str(i) for i in range(n)],
            layer_labels=[str(k) for k in range(Y.shape[0])],
            responses=Y)

    def fit(self, Y, y=None):
        data = self._validate_input(Y)
        spec = ModelSpec(family=self.family, q=self.n_factors,
                         include_intercept=self.include_intercept,
                         assumption=self.assumption, directed=self.directed,
                         n_nodes=data.n_nodes)
        opts = FitOptions(outer_tol=self.outer_tol, max_outer=self.max_outer,
                          gradient=self.gradient,
                          compute_vcov=self.compute_vcov, seed=self.seed)
        fit = fit_glamle(data, spec, opts)
        self.spec_ = spec
        self.result_ = fit
        self.alpha_ = fit.alpha_hat.alpha
        self.sigma_ = fit.sigma_hat
        self.z_modes_ = fit.z_modes
        self.loglik_ = fit.loglik
        self.converged_ = fit.converged
        self.vcov_ = fit.vcov
        return self

    def predict_mean(self):
        """Fitted conditional mean matrices, (K, n, n)."""
        if not hasattr(self, "result_"):
            raise InvalidSpecError("estimator is not fitted")
        return fitted_mean_matrices(self.alpha_, self.z_modes_, self.spec_)

    def predict_proba(self):
        if self.family != "bernoulli":
            raise InvalidSpecError("edge probabilities require the bernoulli family")
        return self.predict_mean()

    def score(self, Y, y=None):
        """Mean per-layer approximate log-likelihood of new layers."""
        if not hasattr(self, "result_"):
            raise InvalidSpecError("estimator is not fitted")
        data = self._validate_input(Y)
        spec = ModelSpec(family=self.family, q=self.n_factors,
                         include_intercept=self.include_intercept,
                         assumption=self.assumption, directed=self.directed,
                         n_nodes=data.n_nodes)
        ev = laplace_loglik(self.alpha_, self.sigma_, data, spec)
        return ev.loglik / data.n_layers
