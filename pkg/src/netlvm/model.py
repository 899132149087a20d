"""Core data model: multiview networks, dyad indexing, edge families.

A multiview network is K square response matrices over the same node set.
Each off-diagonal entry follows an exponential-family distribution whose
canonical parameter is a linear combination of layer-level latent factors,
eta_ij = alpha_ij' z.  Everything downstream (Laplace fitting, quadrature,
MCMC, simulation) builds on the functions defined here.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import InvalidSpecError, SupportError

FAMILIES = ("bernoulli", "poisson")
ASSUMPTIONS = ("A2", "A2prime")


# ---------------------------------------------------------------------------
# Dyad indexing
# ---------------------------------------------------------------------------

def dyad_count(n_nodes, directed):
    """Number of dyads: n(n-1) directed, n(n-1)/2 undirected."""
    if n_nodes < 2:
        raise InvalidSpecError(f"need at least 2 nodes, got {n_nodes}")
    return n_nodes * (n_nodes - 1) if directed else n_nodes * (n_nodes - 1) // 2


def dyad_pairs(n_nodes, directed):
    """(m, 2) array of node pairs in the canonical row-major order.

    Undirected: pairs (i, j) with i < j, i ascending then j.
    Directed: all ordered pairs (i, j) with i != j, row-major.
    The ordering is deterministic so loadings rows are stable across runs
    and file round-trips.
    """
    if n_nodes < 2:
        raise InvalidSpecError(f"need at least 2 nodes, got {n_nodes}")
    pairs = []
    if directed:
        for i in range(n_nodes):
            for j in range(n_nodes):
                if i != j:
                    pairs.append((i, j))
    else:
        for i in range(n_nodes):
            for j in range(i + 1, n_nodes):
                pairs.append((i, j))
    return np.asarray(pairs, dtype=np.intp)


class DyadIndex:
    """Bijection between node pairs and rows 0..m-1 of the loadings matrix."""

    def __init__(self, n_nodes, directed):
        self.n_nodes = n_nodes
        self.directed = directed
        self.pairs = dyad_pairs(n_nodes, directed)
        self.m = len(self.pairs)
        self._lookup = {(int(i), int(j)): r for r, (i, j) in enumerate(self.pairs)}

    def index_of(self, i, j):
        if i == j:
            raise InvalidSpecError("self-edges carry no dyad index")
        if not self.directed and i > j:
            i, j = j, i
        return self._lookup[(i, j)]

    def pair_of(self, row):
        i, j = self.pairs[row]
        return int(i), int(j)


# ---------------------------------------------------------------------------
# Model specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """Static description of one model configuration."""

    family: str = "bernoulli"
    q: int = 1
    include_intercept: bool = True
    assumption: str = "A2"
    directed: bool = True
    n_nodes: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidSpecError(f"unknown family {self.family!r}")
        if self.assumption not in ASSUMPTIONS:
            raise InvalidSpecError(f"unknown assumption {self.assumption!r}")
        if self.q < 1:
            raise InvalidSpecError("latent dimension q must be >= 1")
        if self.n_nodes < 2:
            raise InvalidSpecError("n_nodes must be >= 2")

    @property
    def m(self):
        return dyad_count(self.n_nodes, self.directed)

    @property
    def p(self):
        """Number of loading columns: intercept (if any) plus q factors."""
        return self.q + (1 if self.include_intercept else 0)

    @property
    def factor_cols(self):
        """Column indices of the factor block within the loadings matrix."""
        off = 1 if self.include_intercept else 0
        return slice(off, off + self.q)

    def dyads(self):
        return DyadIndex(self.n_nodes, self.directed)

    def validate_responses(self, y):
        y = np.asarray(y)
        if self.family == "bernoulli":
            if not np.isin(y, (0, 1)).all():
                raise SupportError("bernoulli responses must lie in {0, 1}")
        else:
            if (y < 0).any() or not np.equal(np.mod(y, 1), 0).all():
                raise SupportError("poisson responses must be nonnegative integers")


# ---------------------------------------------------------------------------
# Edge-response families (canonical link)
# ---------------------------------------------------------------------------

def mean_response(family, eta):
    """Inverse canonical link: logistic for bernoulli, exp for poisson."""
    eta = np.asarray(eta, dtype=float)
    if family == "bernoulli":
        # overflow-safe logistic: exponentiates nonpositive arguments only
        out = np.exp(np.minimum(eta, 0.0)) / (1.0 + np.exp(-np.abs(eta)))
        return out if out.ndim else float(out)
    if family == "poisson":
        out = np.exp(eta)
        return out if out.ndim else float(out)
    raise InvalidSpecError(f"unknown family {family!r}")


def cumulant(family, eta):
    """b(eta): log(1+e^eta) for bernoulli, e^eta for poisson."""
    eta = np.asarray(eta, dtype=float)
    if family == "bernoulli":
        # log(1+e^x) = max(x,0) + log1p(exp(-|x|))
        out = np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))
        return out if out.ndim else float(out)
    if family == "poisson":
        out = np.exp(eta)
        return out if out.ndim else float(out)
    raise InvalidSpecError(f"unknown family {family!r}")


def log_normalizer(family, y):
    """c(y): 0 for bernoulli, -log(y!) for poisson."""
    y = np.asarray(y, dtype=float)
    if family == "bernoulli":
        out = np.zeros_like(y)
    elif family == "poisson":
        out = -gammaln(y + 1.0)
    else:
        raise InvalidSpecError(f"unknown family {family!r}")
    return out if out.ndim else float(out)


def curvature_weight(family, eta):
    """b''(eta): the conditional variance weight."""
    if family == "bernoulli":
        mu = mean_response("bernoulli", eta)
        return mu * (1.0 - mu)
    return mean_response(family, eta)


def curvature_weight_deriv(family, eta):
    """b'''(eta), used by the analytic loadings gradient."""
    if family == "bernoulli":
        mu = mean_response("bernoulli", eta)
        return mu * (1.0 - mu) * (1.0 - 2.0 * mu)
    return mean_response(family, eta)


def conditional_logpdf(family, y, eta):
    """log density of one edge response given its canonical parameter."""
    y_arr = np.asarray(y)
    if family == "bernoulli":
        if not np.isin(y_arr, (0, 1)).all():
            raise SupportError("bernoulli response must be 0 or 1")
    elif family == "poisson":
        if (y_arr < 0).any() or not np.equal(np.mod(y_arr, 1), 0).all():
            raise SupportError("poisson response must be a nonnegative integer")
    else:
        raise InvalidSpecError(f"unknown family {family!r}")
    out = y_arr * np.asarray(eta, dtype=float) - cumulant(family, eta) \
        + log_normalizer(family, y_arr)
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------

@dataclass
class MultiviewData:
    """K layers of n x n integer responses with node and layer labels."""

    node_labels: list
    layer_labels: list
    responses: np.ndarray  # (K, n, n)

    def __post_init__(self):
        self.responses = np.asarray(self.responses)
        if self.responses.ndim != 3 or self.responses.shape[1] != self.responses.shape[2]:
            raise InvalidSpecError("responses must be a (K, n, n) tensor")
        if len(self.node_labels) != self.responses.shape[1]:
            raise InvalidSpecError("node_labels length must match matrix size")
        if len(self.layer_labels) != self.responses.shape[0]:
            raise InvalidSpecError("layer_labels length must match layer count")
        diag = np.einsum("kii->ki", self.responses)
        if np.any(diag != 0):
            raise InvalidSpecError("diagonal entries must be structural zeros")

    @property
    def n_layers(self):
        return self.responses.shape[0]

    @property
    def n_nodes(self):
        return self.responses.shape[1]

    def check_against(self, spec):
        """Validate support, symmetry and size against a ModelSpec."""
        if spec.n_nodes != self.n_nodes:
            raise InvalidSpecError(
                f"spec has {spec.n_nodes} nodes, data has {self.n_nodes}")
        spec.validate_responses(self.flatten(spec))
        if not spec.directed:
            if not np.array_equal(self.responses, self.responses.transpose(0, 2, 1)):
                raise InvalidSpecError("undirected data must be symmetric per layer")

    def flatten(self, spec):
        """(K, m) dyad-ordered view of the responses."""
        pairs = dyad_pairs(self.n_nodes, spec.directed)
        return self.responses[:, pairs[:, 0], pairs[:, 1]].astype(float)


@dataclass
class Loadings:
    """m x p loadings matrix with an identifiability constraint mask.

    constraint_mask holds (row, col) positions in *matrix* coordinates
    (intercept column included, if present) that are fixed to zero.
    """

    alpha: np.ndarray
    constraint_mask: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.alpha.ndim != 2:
            raise InvalidSpecError("alpha must be a 2-d matrix")
        if not np.isfinite(self.alpha).all():
            raise InvalidSpecError("alpha entries must be finite")
        for (r, c) in self.constraint_mask:
            if self.alpha[r, c] != 0.0:
                raise InvalidSpecError(
                    f"constrained entry ({r}, {c}) must be exactly zero")

    def factor_block(self, spec):
        return self.alpha[:, spec.factor_cols]


@dataclass
class LatentState:
    """Per-layer latent modes plus the latent covariance."""

    z_modes: np.ndarray  # (K, q)
    sigma: np.ndarray    # (q, q)

    def __post_init__(self):
        self.z_modes = np.atleast_2d(np.asarray(self.z_modes, dtype=float))
        self.sigma = np.asarray(self.sigma, dtype=float)
        check_spd(self.sigma)

    def check_against(self, spec):
        if self.z_modes.shape[1] != spec.q or self.sigma.shape != (spec.q, spec.q):
            raise InvalidSpecError("latent state dimensions do not match spec")
        if spec.assumption == "A2" and not np.array_equal(self.sigma, np.eye(spec.q)):
            raise InvalidSpecError("sigma must be the identity under A2")


def check_spd(sigma):
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise InvalidSpecError("sigma must be square")
    if not np.allclose(sigma, sigma.T, atol=1e-10):
        raise InvalidSpecError("sigma must be symmetric")
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise InvalidSpecError("sigma must be positive definite") from None
    return sigma


# ---------------------------------------------------------------------------
# Complete-data log-likelihood
# ---------------------------------------------------------------------------

def augment(z, spec):
    """Prepend the constant 1 to the latent vector when the model has an intercept."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if spec.include_intercept:
        return np.concatenate(([1.0], z))
    return z


def complete_data_loglik(loadings, z, y_layer, sigma, spec):
    """Joint log density of one layer and its latent vector.

    Sum of the conditional edge log densities plus the latent Gaussian
    log density (standard normal under A2).
    """
    sigma = check_spd(sigma)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (spec.q,):
        raise InvalidSpecError(f"z must have length q={spec.q}")
    alpha = loadings.alpha if isinstance(loadings, Loadings) else np.asarray(loadings)
    pairs = dyad_pairs(spec.n_nodes, spec.directed)
    y_flat = np.asarray(y_layer)[pairs[:, 0], pairs[:, 1]]
    eta = alpha @ augment(z, spec)
    ll = float(np.sum(conditional_logpdf(spec.family, y_flat, eta)))
    sign, logdet = np.linalg.slogdet(sigma)
    quad = z @ np.linalg.solve(sigma, z)
    ll += -0.5 * spec.q * np.log(2.0 * np.pi) - 0.5 * logdet - 0.5 * quad
    return ll
