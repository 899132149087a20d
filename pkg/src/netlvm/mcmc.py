"""Metropolis-within-Gibbs reference sampler for the binary model.

Posterior over the loadings and the per-layer latent positions with
independent standard-normal priors.  Every scalar parameter gets its own
random-walk Metropolis update against its full conditional; there are no
joint updates.  Only the rotation/reflection-invariant edge-probability
summaries are reported.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpecError
from .model import MultiviewData, cumulant, dyad_pairs, mean_response


@dataclass
class McmcConfig:
    n_iterations: int = 10000
    burn_in: int = 1000
    thin: int = 1
    proposal_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.burn_in >= self.n_iterations:
            raise InvalidSpecError("burn_in must be smaller than n_iterations")
        if self.thin < 1:
            raise InvalidSpecError("thin must be >= 1")
        if self.proposal_sd <= 0:
            raise InvalidSpecError("proposal_sd must be positive")


@dataclass
class McmcState:
    """Current loadings (m, q), latent positions (K, q) and linear predictors."""

    alpha: np.ndarray
    z: np.ndarray
    eta: np.ndarray = None  # (m, K), kept in sync by the sampler

    def __post_init__(self):
        if self.eta is None:
            self.eta = self.alpha @ self.z.T


@dataclass
class PosteriorSample:
    alpha_draws: list
    z_draws: list
    acceptance_rates: dict
    pi_mean: np.ndarray      # (K, n, n)
    config: McmcConfig = field(repr=False, default=None)


def _check_model(spec):
    if spec.family != "bernoulli":
        raise InvalidSpecError("the sampler supports the bernoulli family only")
    if spec.include_intercept:
        raise InvalidSpecError("the sampler supports no-intercept models only")


def _bern_loglik(y, eta):
    return float(np.sum(y * eta - cumulant("bernoulli", eta)))


def log_full_conditional_alpha(entry, state, y_flat):
    """Log full conditional of one loading entry, up to a constant.

    entry is (dyad_row, factor_col); y_flat is the (m, K) response matrix
    in dyad order.  Standard-normal prior plus the entry's dyad
    likelihood across all layers.
    """
    d, t = entry
    val = state.alpha[d, t]
    prior = -0.5 * val * val - 0.5 * np.log(2.0 * np.pi)
    return prior + _bern_loglik(y_flat[d], state.eta[d])


def log_full_conditional_z(entry, state, y_flat):
    """Log full conditional of one latent coordinate (layer, factor_col)."""
    k, t = entry
    val = state.z[k, t]
    prior = -0.5 * val * val - 0.5 * np.log(2.0 * np.pi)
    return prior + _bern_loglik(y_flat[:, k], state.eta[:, k])


def mwg_step(state, y_flat, config, rng):
    """One sweep over every loading entry, then every latent coordinate.

    Mutates state in place; returns (accepted_alpha, accepted_z) counts.
    """
    m, q = state.alpha.shape
    K = state.z.shape[0]
    sd = config.proposal_sd
    acc_a = 0
    acc_z = 0

    for d in range(m):
        y_d = y_flat[d]
        for t in range(q):
            eps = rng.normal(0.0, sd)
            cur = state.alpha[d, t]
            new = cur + eps
            d_eta = eps * state.z[:, t]              # (K,)
            eta_new = state.eta[d] + d_eta
            delta = (-0.5 * (new * new - cur * cur)
                     + np.sum(y_d * d_eta)
                     - np.sum(cumulant("bernoulli", eta_new)
                              - cumulant("bernoulli", state.eta[d])))
            if delta >= 0 or np.log(rng.uniform()) < delta:
                state.alpha[d, t] = new
                state.eta[d] = eta_new
                acc_a += 1

    for k in range(K):
        y_k = y_flat[:, k]
        for t in range(q):
            eps = rng.normal(0.0, sd)
            cur = state.z[k, t]
            new = cur + eps
            d_eta = eps * state.alpha[:, t]          # (m,)
            eta_new = state.eta[:, k] + d_eta
            delta = (-0.5 * (new * new - cur * cur)
                     + np.sum(y_k * d_eta)
                     - np.sum(cumulant("bernoulli", eta_new)
                              - cumulant("bernoulli", state.eta[:, k])))
            if delta >= 0 or np.log(rng.uniform()) < delta:
                state.z[k, t] = new
                state.eta[:, k] = eta_new
                acc_z += 1

    return acc_a, acc_z


def run_mwg(data, spec, config, initial_state=None):
    """Run the sampler and accumulate edge-probability posterior means."""
    _check_model(spec)
    if isinstance(data, MultiviewData):
        data.check_against(spec)
        y_flat = data.flatten(spec).T                # (m, K)
    else:
        y_flat = np.atleast_2d(np.asarray(data, dtype=float)).T
    m, K = y_flat.shape
    q = spec.q
    rng = np.random.default_rng(config.seed)

    if initial_state is None:
        state = McmcState(alpha=rng.normal(size=(m, q)),
                          z=rng.normal(size=(K, q)))
    else:
        state = McmcState(alpha=np.array(initial_state.alpha, dtype=float),
                          z=np.array(initial_state.z, dtype=float))

    alpha_draws = []
    z_draws = []
    pi_sum = np.zeros((m, K))
    kept = 0
    acc_a = 0
    acc_z = 0
    for it in range(config.n_iterations):
        da, dz = mwg_step(state, y_flat, config, rng)
        acc_a += da
        acc_z += dz
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            alpha_draws.append(state.alpha.copy())
            z_draws.append(state.z.copy())
            pi_sum += mean_response("bernoulli", state.eta)
            kept += 1

    pairs = dyad_pairs(spec.n_nodes, spec.directed)
    pi_mean = np.zeros((K, spec.n_nodes, spec.n_nodes))
    pi_flat = (pi_sum / kept).T                      # (K, m)
    pi_mean[:, pairs[:, 0], pairs[:, 1]] = pi_flat
    if not spec.directed:
        pi_mean[:, pairs[:, 1], pairs[:, 0]] = pi_flat

    total = config.n_iterations
    rates = {"alpha": acc_a / (total * m * q), "z": acc_z / (total * K * q)}
    return PosteriorSample(alpha_draws=alpha_draws, z_draws=z_draws,
                           acceptance_rates=rates, pi_mean=pi_mean,
                           config=config)
