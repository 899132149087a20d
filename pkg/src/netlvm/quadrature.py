"""Exact marginal log-likelihood by tensor-product Gauss-Hermite quadrature.

Ground truth for the Laplace approximation on small latent dimensions.
The latent integral is transformed to standard-normal coordinates via the
Cholesky factor of Sigma, then evaluated on a tensor grid in log space.
"""

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidSpecError
from .laplace import _layer_flat, laplace_loglayer
from .model import check_spd, conditional_logpdf

MAX_Q = 3
DEFAULT_ORDER = 30


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product rule for integrals against a standard normal weight."""

    nodes: np.ndarray        # (order**q, q)
    log_weights: np.ndarray  # (order**q,)
    order: int


@lru_cache(maxsize=32)
def gauss_hermite_rule(q, order):
    """Build the tensor rule; weights normalize to 1 against N(0, I)."""
    if q > MAX_Q:
        raise InvalidSpecError(f"quadrature supports q <= {MAX_Q}, got {q}")
    if order < 2:
        raise InvalidSpecError("quadrature order must be >= 2")
    x, w = np.polynomial.hermite.hermgauss(order)
    # change of variables to the N(0,1) weight: z = sqrt(2) x, w -> w/sqrt(pi)
    z1 = np.sqrt(2.0) * x
    logw1 = np.log(w) - 0.5 * np.log(np.pi)
    idx = list(product(range(order), repeat=q))
    nodes = np.array([[z1[i] for i in tup] for tup in idx])
    log_weights = np.array([sum(logw1[i] for i in tup) for tup in idx])
    return QuadratureRule(nodes=nodes, log_weights=log_weights, order=order)


def marginal_loglayer_quadrature(loadings, y_layer, sigma, spec,
                                 order=DEFAULT_ORDER):
    """log of the exact marginal density of one layer.

    Integrates the product of edge densities against the latent Gaussian
    by substituting z = L u (Sigma = L L') and summing in log space.
    """
    if spec.q > MAX_Q:
        raise InvalidSpecError(f"quadrature supports q <= {MAX_Q}, got {spec.q}")
    rule = gauss_hermite_rule(spec.q, order)
    alpha = getattr(loadings, "alpha", loadings)
    alpha = np.asarray(alpha, dtype=float)
    chol = np.linalg.cholesky(check_spd(sigma))
    z_nodes = rule.nodes @ chol.T                               # (N, q)
    if spec.include_intercept:
        z_nodes = np.hstack([np.ones((len(z_nodes), 1)), z_nodes])
    y_flat = _layer_flat(y_layer, spec)
    eta = z_nodes @ alpha.T                                     # (N, m)
    log_g = conditional_logpdf(spec.family, y_flat[None, :], eta).sum(axis=1)
    return float(logsumexp(rule.log_weights + log_g))


def laplace_error(loadings, y_layer, sigma, spec, order=DEFAULT_ORDER):
    """Signed approximation error log f_tilde - log f, in nats."""
    approx, _ = laplace_loglayer(loadings, y_layer, sigma, spec)
    exact = marginal_loglayer_quadrature(loadings, y_layer, sigma, spec, order)
    return approx - exact
