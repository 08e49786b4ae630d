"""Scalar Bernoulli-Gaussian prior and its Gaussian-smoothed marginal.

The prior is alpha * N(0, sigma_x^2) + (1 - alpha) * delta_0, applied i.i.d.
per coordinate. Convolving it with N(0, sigma^2) gives a two-component
Gaussian mixture, so p_z, h_sigma = -log p_z and both derivatives of h_sigma
have closed forms. Everything below works in log-domain and broadcasts over
``z`` and ``sigma`` so the same code serves scalar calls, whole signals and
GAMP's per-coordinate noise levels.
"""
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit, logsumexp

LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_ALPHA = 0.2


class BernoulliGaussianPrior(BaseModel):
    """alpha * N(0, sigma_x^2) + (1 - alpha) * delta_0.

    ``sigma_x`` defaults to 1/sqrt(alpha) (unit signal variance). Passing it
    explicitly decouples the two parameters.
    """

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(default=DEFAULT_ALPHA, gt=0.0, le=1.0)
    sigma_x: float = Field(gt=0.0, allow_inf_nan=False)

    @model_validator(mode="before")
    @classmethod
    def _unit_variance_default(cls, data):
        if isinstance(data, dict) and data.get("sigma_x") is None:
            alpha = data.get("alpha", DEFAULT_ALPHA)
            if isinstance(alpha, (int, float)) and alpha > 0:
                data = {**data, "sigma_x": 1.0 / math.sqrt(alpha)}
        return data

    @property
    def variance(self):
        return self.alpha * self.sigma_x ** 2


def as_finite(values, name):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} must be finite")
    return values


def as_positive(sigma):
    sigma = np.asarray(sigma, dtype=float)
    if not np.all(sigma > 0) or not np.all(np.isfinite(sigma)):
        raise ValueError(f"sigma must be positive and finite, got {sigma}")
    return sigma


def scalar_or_array(values):
    return float(values) if np.ndim(values) == 0 else values


def sample_signal(prior, n, rng):
    """Draw n i.i.d. components: N(0, sigma_x^2) with probability alpha, else 0."""
    if int(n) < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    support = rng.random(int(n)) < prior.alpha
    slab = rng.normal(0.0, prior.sigma_x, int(n))
    return np.where(support, slab, 0.0)


def log_gaussian_pdf(sigma, x):
    sigma = as_positive(sigma)
    x = np.asarray(x, dtype=float)
    return -0.5 * (x / sigma) ** 2 - 0.5 * LOG_2PI - np.log(sigma)


def gaussian_pdf(sigma, x):
    return scalar_or_array(np.exp(log_gaussian_pdf(sigma, x)))


def _log_components(prior, sigma, z):
    """Weighted log-densities of the slab and atom parts of p_z."""
    sigma = as_positive(sigma)
    z = as_finite(z, "z")
    slab_sd = np.sqrt(prior.sigma_x ** 2 + sigma ** 2)
    log_slab = math.log(prior.alpha) + log_gaussian_pdf(slab_sd, z)
    if prior.alpha < 1.0:
        log_atom = math.log1p(-prior.alpha) + log_gaussian_pdf(sigma, z)
    else:
        log_atom = np.full(np.shape(log_slab), -np.inf)
    return np.broadcast_arrays(log_slab, log_atom)


def log_marginal_density_z(prior, sigma, z):
    log_slab, log_atom = _log_components(prior, sigma, z)
    return logsumexp(np.stack([log_slab, log_atom]), axis=0)


def marginal_density_z(prior, sigma, z):
    """p_z(z) = alpha * phi_{sqrt(sigma_x^2 + sigma^2)}(z) + (1 - alpha) * phi_sigma(z)."""
    return scalar_or_array(np.exp(log_marginal_density_z(prior, sigma, z)))


def slab_responsibility(prior, sigma, z):
    """Posterior probability that the observation z came from the slab."""
    log_slab, log_atom = _log_components(prior, sigma, z)
    with np.errstate(invalid="ignore"):
        return expit(log_slab - log_atom)


def h_sigma(prior, sigma, z):
    return scalar_or_array(-log_marginal_density_z(prior, sigma, z))


def h_sigma_prime(prior, sigma, z):
    z = as_finite(z, "z")
    sigma = as_positive(sigma)
    pi = slab_responsibility(prior, sigma, z)
    slab_var = prior.sigma_x ** 2 + sigma ** 2
    return scalar_or_array(z * (pi / slab_var + (1.0 - pi) / sigma ** 2))


def h_sigma_second(prior, sigma, z):
    z = as_finite(z, "z")
    sigma = as_positive(sigma)
    log_slab, log_atom = _log_components(prior, sigma, z)
    with np.errstate(invalid="ignore"):
        pi = expit(log_slab - log_atom)
        # pi * (1 - pi) without cancellation when pi is close to 1
        spread = pi * expit(log_atom - log_slab)
    slab_var = prior.sigma_x ** 2 + sigma ** 2
    precision_gap = 1.0 / sigma ** 2 - 1.0 / slab_var
    curvature = pi / slab_var + (1.0 - pi) / sigma ** 2
    return scalar_or_array(curvature - spread * (z * precision_gap) ** 2)
