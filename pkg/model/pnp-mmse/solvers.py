"""Iterative solvers: PnP-ISTA with the exact MMSE denoiser, LASSO via ISTA, and MMSE-GAMP.

All solvers start from x = 0 and record a SolverTrace. PnP-ISTA also traces
f = g + h and |grad f|; with gamma <= 1/L that objective must not increase.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from errors import ConfigurationError, NumericalFailure
from linear_model import STEP_SAFETY, data_fidelity, grad_data_fidelity, snr_db
from mmse_denoiser import (
    RegularizerContext,
    denoise_vector,
    posterior_moments,
    regularizer_h,
)

logger = logging.getLogger(__name__)

MONOTONE_RTOL = 1e-9
STEP_SLACK = 1e-9
DIVERGENCE_DROP_DB = 20.0
DIVERGENCE_WINDOW = 10
DEFAULT_MAX_ITER = 500
DEFAULT_DAMPING = 0.9
# |grad f(x^T)| <= STATIONARITY_RATIO * |grad f(x^1)| counts as converged
STATIONARITY_RATIO = 1e-3
# GAMP variances never drop below this fraction of the prior variance
VARIANCE_FLOOR = 1e-12
GAMP_TOL = 1e-12


class TraceOptions(BaseModel):
    model_config = ConfigDict(frozen=True)

    trace_interval: int = Field(default=1, ge=1)
    # stop once |grad f(x^t)| <= grad_tol * |grad f(x^1)|
    grad_tol: Optional[float] = Field(default=None, gt=0.0)
    track_objective: bool = True
    allow_large_step: bool = False
    keep_iterates: bool = False


@dataclass
class SolverTrace:
    solver: str
    iterations: List[int] = field(default_factory=list)
    snr_db: List[float] = field(default_factory=list)
    objective_f: Optional[List[float]] = None
    grad_norm: Optional[List[float]] = None
    final_iterate: Optional[np.ndarray] = None
    iterations_run: int = 0
    gamma: Optional[float] = None
    monotone: Optional[bool] = None
    diverged: bool = False
    fixed_point_residual: Optional[float] = None
    first_grad_norm: Optional[float] = None
    final_grad_norm: Optional[float] = None
    iterates: Optional[List[np.ndarray]] = None
    preimages: Optional[List[np.ndarray]] = None

    @property
    def final_snr_db(self):
        return self.snr_db[-1]

    @property
    def stationarity_ratio(self):
        """|grad f| at the last iterate over |grad f(x^1)|."""
        if self.first_grad_norm is None or self.final_grad_norm is None:
            raise ValueError(f"{self.solver} trace has no gradient norms")
        if self.first_grad_norm == 0:
            return 0.0
        return self.final_grad_norm / self.first_grad_norm

    def reached_stationarity(self, ratio=STATIONARITY_RATIO):
        return self.stationarity_ratio <= ratio

    def normalized_cost(self):
        """f(x^t) / |f(x^0)|; equals f/f(x^0) when f(x^0) > 0."""
        if not self.objective_f:
            raise ValueError(f"{self.solver} trace has no objective values")
        cost = np.asarray(self.objective_f)
        return cost / abs(cost[0])

    def to_frame(self):
        frame = pd.DataFrame({"iter": self.iterations, "snr_db": self.snr_db})
        if self.objective_f is not None:
            frame["objective_f"] = self.objective_f
        if self.grad_norm is not None:
            frame["grad_norm"] = self.grad_norm
        return frame


@dataclass
class GampState:
    x_hat: np.ndarray
    tau_x: np.ndarray
    s: np.ndarray
    p: np.ndarray
    v_p: np.ndarray

    def check(self, iteration):
        for name in ("tau_x", "v_p"):
            values = getattr(self, name)
            if not np.all(np.isfinite(values)) or np.any(values <= 0):
                raise NumericalFailure(f"GAMP variance {name} lost positivity", iteration)
        if not np.all(np.isfinite(self.x_hat)) or not np.all(np.isfinite(self.s)):
            raise NumericalFailure("GAMP produced a non-finite estimate", iteration)


def resolve_step(problem, gamma=None, allow_large_step=False):
    """Return (gamma, within_bound). gamma=None picks 0.99 / L_hat."""
    limit = 1.0 / problem.lipschitz.value
    if gamma is None:
        return STEP_SAFETY * limit, True
    if gamma <= 0:
        raise ValueError(f"step size must be positive, got {gamma}")
    within_bound = gamma <= limit * (1.0 + STEP_SLACK)
    if not within_bound and not allow_large_step:
        raise ConfigurationError(f"step size {gamma:.6g} exceeds 1/L = {limit:.6g}")
    if not within_bound:
        logger.warning("STEP -> gamma=%.6g exceeds 1/L=%.6g; monotonicity is not asserted", gamma, limit)
    return float(gamma), within_bound


def _check_finite_iterate(x, iteration):
    if not np.all(np.isfinite(x)):
        raise NumericalFailure("non-finite iterate", iteration)


def _record_due(t, max_iter, options, stopping):
    return t % options.trace_interval == 0 or t == max_iter or stopping


def _check_monotone(trace, f0, within_bound):
    if not trace.objective_f or not within_bound:
        trace.monotone = None
        return
    increases = np.diff(trace.objective_f)
    trace.monotone = bool(np.all(increases <= MONOTONE_RTOL * abs(f0)))
    if not trace.monotone:
        worst = int(np.argmax(increases)) + 1
        logger.warning(
            "%s -> objective increased by %.3e at record %d", trace.solver.upper(), increases.max(), worst
        )


def pnp_objective(problem, ctx, x, preimage=None):
    """f(x) = g(x) + h(x)."""
    return data_fidelity(problem, x) + regularizer_h(ctx, x, preimage)


def pnp_ista(problem, denoiser, gamma=None, max_iter=DEFAULT_MAX_ITER, options=None):
    """z^t = x^{t-1} - gamma grad g(x^{t-1}),  x^t = D_sigma(z^t).

    z^t is the exact preimage of x^t, so h and grad h at x^t come for free:
    grad h(x^t) = (z^t - x^t) / gamma.
    """
    options = options or TraceOptions()
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    gamma, within_bound = resolve_step(problem, gamma, options.allow_large_step)
    ctx = RegularizerContext(denoiser=denoiser, gamma=gamma)

    trace = SolverTrace(solver="pnp", gamma=gamma)
    if options.track_objective:
        trace.objective_f, trace.grad_norm = [], []
    if options.keep_iterates:
        trace.iterates, trace.preimages = [], []

    x = np.zeros(problem.n)
    z = np.zeros(problem.n)  # D(0) = 0
    grad_g = grad_data_fidelity(problem, x)

    def record(t, grad_f_norm):
        trace.iterations.append(t)
        trace.snr_db.append(snr_db(x, problem.x_true))
        if options.track_objective:
            trace.objective_f.append(pnp_objective(problem, ctx, x, preimage=z))
            trace.grad_norm.append(grad_f_norm)
        if options.keep_iterates:
            trace.iterates.append(x.copy())
            trace.preimages.append(z.copy())

    record(0, float(np.linalg.norm(grad_g)))
    grad_f_norm = None
    t = 0
    for t in range(1, max_iter + 1):
        z = x - gamma * grad_g
        x = denoise_vector(denoiser, z)
        _check_finite_iterate(x, t)
        grad_g = grad_data_fidelity(problem, x)

        grad_f_norm = float(np.linalg.norm(grad_g + (z - x) / gamma))
        if t == 1:
            trace.first_grad_norm = grad_f_norm
        stopping = options.grad_tol is not None and grad_f_norm <= options.grad_tol * trace.first_grad_norm
        if _record_due(t, max_iter, options, stopping):
            record(t, grad_f_norm)
        if stopping:
            logger.debug("PNP -> gradient tolerance reached at iteration %d", t)
            break

    trace.final_grad_norm = grad_f_norm
    trace.iterations_run = t
    trace.final_iterate = x
    trace.fixed_point_residual = float(np.linalg.norm(x - denoise_vector(denoiser, x - gamma * grad_g)))
    if options.track_objective:
        _check_monotone(trace, trace.objective_f[0], within_bound)
    return trace


def soft_threshold(z, tau):
    """sign(z) max(|z| - tau, 0), the prox of tau |.|."""
    if np.any(np.asarray(tau) < 0):
        raise ValueError("threshold must be non-negative")
    z = np.asarray(z, dtype=float)
    shrunk = np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)
    return float(shrunk) if shrunk.ndim == 0 else shrunk


def lasso_objective(problem, lam, x):
    return data_fidelity(problem, x) + lam * float(np.sum(np.abs(x)))


def lasso_ista(problem, lam, gamma=None, max_iter=DEFAULT_MAX_ITER, options=None):
    """ISTA for 1/2 |y - Hx|^2 + lam |x|_1."""
    options = options or TraceOptions()
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    gamma, within_bound = resolve_step(problem, gamma, options.allow_large_step)
    H = problem.operator.matrix

    trace = SolverTrace(solver="lasso", gamma=gamma)
    if options.track_objective:
        trace.objective_f = []

    x = np.zeros(problem.n)

    def record(t):
        trace.iterations.append(t)
        trace.snr_db.append(snr_db(x, problem.x_true))
        if options.track_objective:
            trace.objective_f.append(lasso_objective(problem, lam, x))

    record(0)
    for t in range(1, max_iter + 1):
        x = soft_threshold(x - gamma * (H.T @ (H @ x - problem.y)), gamma * lam)
        _check_finite_iterate(x, t)
        if _record_due(t, max_iter, options, False):
            record(t)

    trace.iterations_run = max_iter
    trace.final_iterate = x
    if options.track_objective:
        _check_monotone(trace, trace.objective_f[0], within_bound)
    return trace


def gamp(problem, prior, max_iter=DEFAULT_MAX_ITER, damping=DEFAULT_DAMPING, options=None):
    """MMSE-GAMP with an AWGN output channel and the Bernoulli-Gaussian input channel.

    Keeps full per-component variances. Damping blends the new x_hat, s and
    tau_x with their previous values, and tau_x, v_r are floored at
    VARIANCE_FLOOR * prior variance so a noiseless channel cannot drive them
    to zero. Stops early once |x_hat^t - x_hat^{t-1}| <= GAMP_TOL |x_hat^t|.

    Divergence means the SNR fell DIVERGENCE_DROP_DB below the running max of
    its trailing DIVERGENCE_WINDOW-iteration minimum. An error that oscillates
    through zero gives isolated SNR spikes, and those never raise that
    baseline. No objective is traced.
    """
    options = options or TraceOptions()
    if not 0.0 < damping <= 1.0:
        raise ValueError(f"damping must lie in (0, 1], got {damping}")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    H = problem.operator.matrix
    H2 = problem.operator.squared
    noise_var = problem.sigma_e ** 2
    floor = VARIANCE_FLOOR * prior.variance

    state = GampState(
        x_hat=np.zeros(problem.n),
        tau_x=np.full(problem.n, prior.variance),
        s=np.zeros(problem.m),
        p=np.zeros(problem.m),
        v_p=np.ones(problem.m),
    )
    trace = SolverTrace(solver="gamp")
    trace.iterations.append(0)
    trace.snr_db.append(snr_db(state.x_hat, problem.x_true))
    recent = deque([trace.snr_db[0]], maxlen=DIVERGENCE_WINDOW)
    baseline = trace.snr_db[0]

    t = 0
    for t in range(1, max_iter + 1):
        # output linear step
        v_p = H2 @ state.tau_x
        p = H @ state.x_hat - v_p * state.s
        # AWGN output channel
        tau_s = 1.0 / (v_p + noise_var)
        s_new = (problem.y - p) * tau_s
        s = s_new if t == 1 else damping * s_new + (1.0 - damping) * state.s
        # input linear step
        v_r = np.maximum(1.0 / (H2.T @ tau_s), floor)
        r = state.x_hat + v_r * (H.T @ s)
        # Bernoulli-Gaussian input channel
        x_new, tau_new = posterior_moments(prior, np.sqrt(v_r), r)
        x_hat = damping * x_new + (1.0 - damping) * state.x_hat
        tau_x = np.maximum(damping * tau_new + (1.0 - damping) * state.tau_x, floor)

        change = float(np.linalg.norm(x_hat - state.x_hat))
        state = GampState(x_hat=x_hat, tau_x=tau_x, s=s, p=p, v_p=v_p)
        state.check(t)

        current = snr_db(state.x_hat, problem.x_true)
        recent.append(current)
        baseline = max(baseline, min(recent))
        diverged = current < baseline - DIVERGENCE_DROP_DB
        converged = change <= GAMP_TOL * float(np.linalg.norm(x_hat))
        if _record_due(t, max_iter, options, diverged or converged):
            trace.iterations.append(t)
            trace.snr_db.append(current)
        if diverged:
            trace.diverged = True
            logger.warning("GAMP -> SNR fell %.1f dB below its baseline at iteration %d", baseline - current, t)
            break
        if converged:
            logger.debug("GAMP -> estimate settled at iteration %d", t)
            break

    trace.iterations_run = t
    trace.final_iterate = state.x_hat
    return trace


def mm_surrogate_value(problem, ctx, x, s, preimage=None):
    """mu(x, s) = g(s) + grad g(s)^T (x - s) + |x - s|^2 / (2 gamma) + h(x)."""
    gap = _surrogate_model(problem, ctx.gamma, x, s)
    return gap + regularizer_h(ctx, x, preimage)


def mm_residual(problem, ctx, x, s):
    """mu(x, s) - f(x); non-negative whenever gamma <= 1/L."""
    return _surrogate_model(problem, ctx.gamma, x, s) - data_fidelity(problem, x)


def _surrogate_model(problem, gamma, x, s):
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    step = x - s
    return (
        data_fidelity(problem, s)
        + float(grad_data_fidelity(problem, s) @ step)
        + float(step @ step) / (2.0 * gamma)
    )
