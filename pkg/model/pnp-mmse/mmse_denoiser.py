"""Exact MMSE denoiser for the Bernoulli-Gaussian prior and the regularizer it induces.

The denoiser D(z) = E[x | z] for z = x + N(0, sigma^2) is a proximal
operator: D = prox_{gamma h} with

    h(x) = -1/(2 gamma) |x - D^-1(x)|^2 + sigma^2/gamma * h_sigma(D^-1(x)).

For this prior D is odd, strictly increasing and unbounded, so its image is
the whole real line and h is finite everywhere. There is no +inf branch.
"""
import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from errors import NumericalFailure
from prior_bg import (
    BernoulliGaussianPrior,
    as_finite,
    as_positive,
    h_sigma,
    h_sigma_prime,
    h_sigma_second,
    scalar_or_array,
    slab_responsibility,
)

MAX_BRACKET_DOUBLINGS = 64
MAX_NEWTON_STEPS = 200
NEWTON_TOL = 1e-14
INVERSE_RTOL = 1e-12


class MmseDenoiser(BaseModel):
    model_config = ConfigDict(frozen=True)

    prior: BernoulliGaussianPrior
    sigma: float = Field(gt=0.0, allow_inf_nan=False)

    @property
    def shrinkage(self):
        """Wiener gain c = sigma_x^2 / (sigma_x^2 + sigma^2) of the slab component."""
        return self.prior.sigma_x ** 2 / (self.prior.sigma_x ** 2 + self.sigma ** 2)

    def __call__(self, z):
        return denoise_vector(self, z)


class RegularizerContext(BaseModel):
    """Binds the step size gamma to a denoiser; h and its gradient depend on both."""

    model_config = ConfigDict(frozen=True)

    denoiser: MmseDenoiser
    gamma: float = Field(gt=0.0, allow_inf_nan=False)


def posterior_moments(prior, sigma, z):
    """Posterior mean and variance of x given z, vectorized over z and sigma.

    Var[x|z] = pi c sigma^2 + pi (1 - pi) (c z)^2, the cancellation-free form of
    pi (c sigma^2 + (c z)^2) - (pi c z)^2.
    """
    sigma = as_positive(sigma)
    z = as_finite(z, "z")
    gain = prior.sigma_x ** 2 / (prior.sigma_x ** 2 + sigma ** 2)
    pi = slab_responsibility(prior, sigma, z)
    slab_mean = gain * z
    mean = pi * slab_mean
    variance = pi * gain * sigma ** 2 + pi * (1.0 - pi) * slab_mean ** 2
    return mean, variance


def _denoise(denoiser, z):
    z = as_finite(z, "z")
    pi = slab_responsibility(denoiser.prior, denoiser.sigma, z)
    return pi * denoiser.shrinkage * z


def denoise_scalar(denoiser, z):
    if np.ndim(z) != 0:
        raise ValueError("denoise_scalar expects a scalar; use denoise_vector")
    return float(_denoise(denoiser, z))


def denoise_vector(denoiser, z):
    return np.asarray(_denoise(denoiser, z), dtype=float)


def posterior_variance_scalar(denoiser, z):
    _, variance = posterior_moments(denoiser.prior, denoiser.sigma, z)
    return scalar_or_array(variance)


def denoiser_derivative(denoiser, z):
    """D'(z) = 1 - sigma^2 h_sigma''(z), strictly positive."""
    curvature = np.asarray(h_sigma_second(denoiser.prior, denoiser.sigma, z))
    return scalar_or_array(1.0 - denoiser.sigma ** 2 * curvature)


def tweedie_residual(denoiser, z):
    score_step = denoiser.sigma ** 2 * np.asarray(h_sigma_prime(denoiser.prior, denoiser.sigma, z))
    return scalar_or_array(_denoise(denoiser, z) - (np.asarray(z, dtype=float) - score_step))


def invert_vector(denoiser, x):
    """Componentwise D^-1 by bracketing plus safeguarded Newton.

    D is odd, so the root is found for |x| and the sign restored. On [0, inf)
    D(z) <= c z, which puts the root above |x| / c.
    """
    x = as_finite(x, "x")
    target = np.abs(x)
    lo = target / denoiser.shrinkage
    hi = lo + 1.0
    for _ in range(MAX_BRACKET_DOUBLINGS):
        short = _denoise(denoiser, hi) < target
        if not short.any():
            break
        hi = np.where(short, 2.0 * hi, hi)
    else:
        raise NumericalFailure("could not bracket the inverse of the denoiser")

    z = 0.5 * (lo + hi)
    for _ in range(MAX_NEWTON_STEPS):
        residual = _denoise(denoiser, z) - target
        lo = np.where(residual < 0, z, lo)
        hi = np.where(residual > 0, z, hi)
        step = residual / np.asarray(denoiser_derivative(denoiser, z))
        newton = z - step
        scale = np.maximum(1.0, np.abs(z))
        converged = (np.abs(residual) <= NEWTON_TOL * np.maximum(1.0, target)) | (
            np.abs(step) <= NEWTON_TOL * scale
        )
        bisect = (newton <= lo) | (newton >= hi) | ~np.isfinite(newton)
        z = np.where(converged, newton, np.where(bisect, 0.5 * (lo + hi), newton))
        if converged.all():
            break

    miss = np.abs(_denoise(denoiser, z) - target)
    if np.any(miss > INVERSE_RTOL * np.maximum(1.0, target)):
        raise NumericalFailure(f"inverse denoiser did not converge (max miss {miss.max():.3e})")
    return np.sign(x) * z


def invert_scalar(denoiser, x):
    if np.ndim(x) != 0:
        raise ValueError("invert_scalar expects a scalar; use invert_vector")
    return float(invert_vector(denoiser, x))


def regularizer_h_terms(ctx, x, preimage=None):
    """Per-coordinate terms of h. ``preimage`` skips root finding when D^-1(x) is known."""
    x = as_finite(x, "x")
    u = invert_vector(ctx.denoiser, x) if preimage is None else np.asarray(preimage, dtype=float)
    d = ctx.denoiser
    smoothed = np.asarray(h_sigma(d.prior, d.sigma, u))
    return -((x - u) ** 2) / (2.0 * ctx.gamma) + (d.sigma ** 2 / ctx.gamma) * smoothed


def regularizer_h(ctx, x, preimage=None):
    return float(np.sum(regularizer_h_terms(ctx, x, preimage)))


def regularizer_grad(ctx, x, preimage=None):
    """grad h(x) = (D^-1(x) - x) / gamma."""
    x = as_finite(x, "x")
    u = invert_vector(ctx.denoiser, x) if preimage is None else np.asarray(preimage, dtype=float)
    return (u - x) / ctx.gamma


def prox_oracle_phi(ctx, u, z):
    """phi(u) = 1/2 |D(u) - z|^2 + gamma h(D(u)), simplified through Tweedie's formula.

    Its unique global minimizer is u = z, which is what makes D a proximal
    operator. gamma cancels out of the simplified form.
    """
    d = ctx.denoiser
    u = as_finite(u, "u")
    z = float(as_finite(z, "z"))
    score = np.asarray(h_sigma_prime(d.prior, d.sigma, u))
    value = (
        0.5 * (_denoise(d, u) - z) ** 2
        - 0.5 * d.sigma ** 4 * score ** 2
        + d.sigma ** 2 * np.asarray(h_sigma(d.prior, d.sigma, u))
    )
    return scalar_or_array(value)
