"""Shared helpers for building random model instances."""

import numpy as np
import pytest

from netlvm.estimator import build_constraints, matrix_zero_positions
from netlvm.model import ModelSpec, MultiviewData, dyad_pairs, mean_response


def make_spec(family="bernoulli", q=1, include_intercept=True,
              assumption="A2", directed=True, n_nodes=4):
    return ModelSpec(family=family, q=q, include_intercept=include_intercept,
                     assumption=assumption, directed=directed, n_nodes=n_nodes)


def random_alpha(spec, rng, scale=0.8):
    """Random loadings with the identifiability zeros applied."""
    alpha = rng.normal(0.0, scale, size=(spec.m, spec.p))
    cons = build_constraints(spec)
    for rc in matrix_zero_positions(spec, cons):
        alpha[rc] = 0.0
    return alpha


def random_sigma(spec, rng, diagonal=True):
    if spec.assumption == "A2":
        return np.eye(spec.q)
    d = rng.uniform(1.1, 2.0, size=spec.q)
    return np.diag(d)


def sample_layers(spec, alpha, sigma, K, rng):
    """Draw K layers from the model; returns a MultiviewData."""
    chol = np.linalg.cholesky(sigma)
    z = rng.normal(size=(K, spec.q)) @ chol.T
    if spec.include_intercept:
        z_aug = np.hstack([np.ones((K, 1)), z])
    else:
        z_aug = z
    eta = z_aug @ alpha.T                                    # (K, m)
    mu = mean_response(spec.family, eta)
    if spec.family == "bernoulli":
        y = (rng.uniform(size=mu.shape) < mu).astype(np.int64)
    else:
        y = rng.poisson(mu).astype(np.int64)
    pairs = dyad_pairs(spec.n_nodes, spec.directed)
    resp = np.zeros((K, spec.n_nodes, spec.n_nodes), dtype=np.int64)
    resp[:, pairs[:, 0], pairs[:, 1]] = y
    if not spec.directed:
        resp[:, pairs[:, 1], pairs[:, 0]] = y
    return MultiviewData(node_labels=[str(i) for i in range(spec.n_nodes)],
                         layer_labels=[str(k) for k in range(K)],
                         responses=resp)


def random_instance(rng, family="bernoulli", q=1, include_intercept=True,
                    assumption="A2", directed=True, n_nodes=4, K=1, scale=0.8):
    spec = make_spec(family, q, include_intercept, assumption, directed, n_nodes)
    alpha = random_alpha(spec, rng, scale)
    sigma = random_sigma(spec, rng)
    data = sample_layers(spec, alpha, sigma, K, rng)
    return spec, alpha, sigma, data


def random_orthogonal(q, rng):
    a = rng.normal(size=(q, q))
    qmat, r = np.linalg.qr(a)
    return qmat * np.sign(np.diag(r))


@pytest.fixture
def rng():
    return np.random.default_rng(20230815)
