"""Small-scale numerical checks of the denoiser, the regularizer and the solvers.

Each check returns a CheckResult; the suite never raises on a violated
property. A failed check only shows up in the report and its exit code.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from errors import NumericalFailure
from linear_model import (
    MeasurementOperator,
    ProblemInstance,
    data_fidelity,
    generate_operator,
    grad_data_fidelity,
    make_problem,
)
from mmse_denoiser import (
    MmseDenoiser,
    RegularizerContext,
    denoise_vector,
    denoiser_derivative,
    invert_vector,
    posterior_moments,
    prox_oracle_phi,
    regularizer_grad,
    regularizer_h,
    regularizer_h_terms,
    tweedie_residual,
)
from prior_bg import BernoulliGaussianPrior, sample_signal
from solvers import MONOTONE_RTOL, TraceOptions, gamp, lasso_ista, mm_residual, mm_surrogate_value, pnp_ista

logger = logging.getLogger(__name__)

PASS, FAIL, SKIPPED = "PASS", "FAIL", "SKIPPED"
REPORT_COLUMNS = ["check", "status", "value", "tolerance", "detail"]

# (alpha, sigma) pairs covering sparse/dense priors and small/large noise
DENOISER_SETTINGS = [(0.2, 0.5), (0.05, 0.1), (0.5, 1.0), (0.9, 0.01), (1.0, 0.3)]
SMALL_N = 64
SMALL_M = 48


@dataclass
class CheckResult:
    check: str
    status: str
    value: Optional[float] = None
    tolerance: Optional[float] = None
    detail: str = ""

    @property
    def passed(self):
        return self.status != FAIL


@dataclass
class ValidationReport:
    results: List[CheckResult] = field(default_factory=list)

    @property
    def exit_code(self):
        return 0 if all(result.passed for result in self.results) else 1

    @property
    def failures(self):
        return [result for result in self.results if not result.passed]

    def to_frame(self):
        return pd.DataFrame([vars(result) for result in self.results], columns=REPORT_COLUMNS)

    def write(self, output_dir):
        path = Path(output_dir) / "validation.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.6g")
        logger.info("CSV -> wrote %d checks to %s", len(self.results), path)
        return path


def _verdict(name, ok, value, tolerance, detail=""):
    return CheckResult(name, PASS if ok else FAIL, float(value), tolerance, detail)


def _denoiser(alpha, sigma):
    return MmseDenoiser(prior=BernoulliGaussianPrior(alpha=alpha), sigma=sigma)


def tweedie_grid(denoiser, grid_points=201):
    """Symmetric grid over [-10 (sigma_x + sigma), 10 (sigma_x + sigma)]."""
    reach = 10.0 * (denoiser.prior.sigma_x + denoiser.sigma)
    return np.linspace(-reach, reach, grid_points)


def check_tweedie(tolerance, grid_points=201):
    worst = 0.0
    for alpha, sigma in DENOISER_SETTINGS:
        denoiser = _denoiser(alpha, sigma)
        z = tweedie_grid(denoiser, grid_points)
        residual = np.abs(tweedie_residual(denoiser, z)) / np.maximum(1.0, np.abs(z))
        worst = max(worst, float(residual.max()))
    return _verdict("tweedie", worst < tolerance, worst, tolerance, f"{len(DENOISER_SETTINGS)} settings")


def check_jacobian():
    z = np.linspace(-10.0, 10.0, 2001)
    smallest = min(float(np.min(denoiser_derivative(_denoiser(a, s), z))) for a, s in DENOISER_SETTINGS)
    steepest = float(np.max(denoiser_derivative(_denoiser(0.2, 0.5), z)))
    ok = smallest > 0 and steepest > 1.0
    return _verdict("jacobian", ok, smallest, 0.0, f"min D'={smallest:.3e}, max D' at alpha=0.2 sigma=0.5 is {steepest:.4f}")


def check_derivative(step=1e-4, tolerance=1e-6):
    """D' against Var[x|z] / sigma^2 and against central differences of D."""
    worst = 0.0
    z = np.linspace(-6.0, 6.0, 241)
    for alpha, sigma in DENOISER_SETTINGS:
        denoiser = _denoiser(alpha, sigma)
        analytic = denoiser_derivative(denoiser, z)
        _, variance = posterior_moments(denoiser.prior, sigma, z)
        scaled = step * sigma
        central = (denoise_vector(denoiser, z + scaled) - denoise_vector(denoiser, z - scaled)) / (2.0 * scaled)
        identity_gap = np.abs(analytic - variance / sigma ** 2) / np.maximum(1.0, analytic)
        fd_gap = np.abs(analytic - central) / np.maximum(1.0, analytic)
        worst = max(worst, float(identity_gap.max()), float(fd_gap.max()))
    return _verdict("derivative", worst <= tolerance, worst, tolerance)


def check_inverse(tolerance=1e-12, preimage_tolerance=1e-7):
    worst_forward = 0.0
    worst_backward = 0.0
    for alpha, sigma in DENOISER_SETTINGS:
        denoiser = _denoiser(alpha, sigma)
        z = np.linspace(-8.0, 8.0, 321)
        x = denoise_vector(denoiser, z)
        u = invert_vector(denoiser, x)
        worst_forward = max(worst_forward, float(np.max(np.abs(denoise_vector(denoiser, u) - x) / np.maximum(1.0, np.abs(x)))))
        worst_backward = max(worst_backward, float(np.max(np.abs(u - z) / np.maximum(1.0, np.abs(z)))))
    ok = worst_forward <= tolerance and worst_backward <= preimage_tolerance
    return _verdict("inverse", ok, worst_forward, tolerance, f"max preimage error {worst_backward:.3e}")


def prox_grid_minimizer(ctx, z, grid_step=1e-4, margin=3.0, coarse_step=1e-2):
    """Grid minimizer of 1/2 (v - z)^2 + gamma h(v) on [min(z, D(z)) - margin, max(z, D(z)) + margin].

    A coarse pass over the whole interval finds the basin of the global
    minimum; a pass at ``grid_step`` within two coarse cells of it refines it.
    Returns (minimizer, coarse minimum sits on the interval edge).
    """
    center = float(denoise_vector(ctx.denoiser, z))
    lo, hi = min(z, center) - margin, max(z, center) + margin

    def objective(v):
        return 0.5 * (v - z) ** 2 + ctx.gamma * regularizer_h_terms(ctx, v)

    coarse = np.arange(lo, hi + coarse_step / 2, coarse_step)
    rough_index = int(np.argmin(objective(coarse)))
    rough = coarse[rough_index]
    fine = np.arange(rough - 2 * coarse_step, rough + 2 * coarse_step + grid_step / 2, grid_step)
    return float(fine[int(np.argmin(objective(fine)))]), rough_index in (0, len(coarse) - 1)


def check_prox(draws=200, perturbations=100, grid_step=1e-4, seed=0):
    """D(z) minimizes 1/2 (v - z)^2 + gamma h(v), checked two ways per draw."""
    rng = np.random.default_rng(seed)
    violations = 0
    worst_offset = 0.0
    for _ in range(draws):
        denoiser = _denoiser(rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0))
        ctx = RegularizerContext(denoiser=denoiser, gamma=rng.uniform(0.1, 2.0))
        z = rng.normal(0.0, 3.0)

        delta = rng.uniform(1e-3, 3.0, perturbations) * rng.choice([-1.0, 1.0], perturbations)
        if not np.all(prox_oracle_phi(ctx, z, z) < prox_oracle_phi(ctx, z + delta, z)):
            violations += 1

        minimizer, on_edge = prox_grid_minimizer(ctx, z, grid_step)
        if on_edge:
            violations += 1
        worst_offset = max(worst_offset, abs(minimizer - float(denoise_vector(denoiser, z))))

    ok = violations == 0 and worst_offset <= grid_step
    return _verdict("prox", ok, worst_offset, grid_step, f"{violations} of {draws} draws violated")


def _central_gradient(fn, x, step):
    grad = np.empty_like(x)
    for i in range(x.size):
        bump = np.zeros_like(x)
        bump[i] = step
        grad[i] = (fn(x + bump) - fn(x - bump)) / (2.0 * step)
    return grad


def check_gradients(points=50, step=1e-6, tolerance=1e-5, seed=1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (4, 7, 10):
        operator = generate_operator(max(1, int(0.8 * n)), n, rng)
        x_true = rng.normal(size=n)
        problem = ProblemInstance(
            operator=operator, x_true=x_true, y=operator.matrix @ x_true + 0.1 * rng.normal(size=operator.m), sigma_e=0.1
        )
        ctx = RegularizerContext(denoiser=_denoiser(0.3, 0.4), gamma=0.5)
        for _ in range(points):
            x = rng.normal(size=n)
            for fn, analytic in (
                (lambda v: data_fidelity(problem, v), grad_data_fidelity(problem, x)),
                (lambda v: regularizer_h(ctx, v), regularizer_grad(ctx, x)),
            ):
                numeric = _central_gradient(fn, x, step)
                gap = np.linalg.norm(numeric - analytic) / max(1.0, np.linalg.norm(analytic))
                worst = max(worst, float(gap))
    return _verdict("gradients", worst <= tolerance, worst, tolerance, "n in (4, 7, 10)")


def _small_problem(alpha, seed, input_snr_db=20.0):
    prior = BernoulliGaussianPrior(alpha=alpha)
    rngs = [np.random.default_rng(np.random.SeedSequence([seed, role])) for role in range(3)]
    return prior, make_problem(prior, SMALL_M, SMALL_N, input_snr_db, *rngs)


def check_mm_sandwich(alpha, trajectories=5, iterations=60, tolerance=1e-9):
    worst = 0.0
    slack = 0.0
    for seed in range(trajectories):
        prior, problem = _small_problem(alpha, seed)
        denoiser = MmseDenoiser(prior=prior, sigma=0.2 + 0.1 * seed)
        trace = pnp_ista(problem, denoiser, max_iter=iterations, options=TraceOptions(keep_iterates=True))
        ctx = RegularizerContext(denoiser=denoiser, gamma=trace.gamma)
        f = trace.objective_f
        scale = max(1.0, abs(f[0]))
        residual_sum = 0.0
        for t in range(1, len(f)):
            x, s = trace.iterates[t], trace.iterates[t - 1]
            mu = mm_surrogate_value(problem, ctx, x, s, preimage=trace.preimages[t])
            worst = max(worst, (f[t] - mu) / scale, (mu - f[t - 1]) / scale)
            residual_sum += mm_residual(problem, ctx, x, s)
        slack = max(slack, (residual_sum - (f[0] - f[-1])) / scale)
    ok = worst <= tolerance and slack <= tolerance * iterations
    return _verdict("mm_sandwich", ok, worst, tolerance, f"surrogate residual sum slack {slack:.3e}")


def check_monotonicity(config, iterations=100):
    prior, problem = _small_problem(config.alpha, config.seed)
    limit = 1.0 / problem.lipschitz.value
    if config.gamma is not None and config.gamma > limit:
        return CheckResult("monotonicity", SKIPPED, None, MONOTONE_RTOL, f"gamma={config.gamma:.4g} exceeds 1/L={limit:.4g}")

    denoiser = MmseDenoiser(prior=prior, sigma=float(np.median(config.sigma_grid)))
    pnp = pnp_ista(problem, denoiser, gamma=config.gamma, max_iter=iterations)
    lasso = lasso_ista(problem, 0.05 * float(np.max(np.abs(problem.operator.matrix.T @ problem.y))), gamma=config.gamma, max_iter=iterations)
    rises = [
        float(np.max(np.diff(trace.objective_f))) / abs(trace.objective_f[0]) for trace in (pnp, lasso)
    ]
    ok = pnp.monotone and lasso.monotone
    return _verdict("monotonicity", ok, max(rises), MONOTONE_RTOL, f"pnp and lasso over {iterations} iterations")


def check_gamp_variances(config, iterations=100):
    _, problem = _small_problem(config.alpha, config.seed)
    trace = gamp(problem, config.prior, max_iter=iterations, damping=config.gamp_damping)
    return _verdict("gamp_variances", not trace.diverged, trace.final_snr_db, 0.0, "final SNR (dB) of a positive-variance run")


def check_gamp_decoupled(n=SMALL_N, tolerance=1e-6, seed=2):
    """With H = I and a Gaussian prior, GAMP must land on the scalar MMSE estimate."""
    rng = np.random.default_rng(seed)
    prior = BernoulliGaussianPrior(alpha=1.0)
    x_true = rng.normal(0.0, prior.sigma_x, n)
    sigma_e = 0.3
    problem = ProblemInstance(
        operator=MeasurementOperator(np.eye(n)), x_true=x_true, y=x_true + sigma_e * rng.normal(size=n), sigma_e=sigma_e
    )
    trace = gamp(problem, prior, max_iter=500)
    expected = denoise_vector(MmseDenoiser(prior=prior, sigma=sigma_e), problem.y)
    gap = float(np.max(np.abs(trace.final_iterate - expected)))
    return _verdict("gamp_decoupled", gap < tolerance, gap, tolerance)


def check_gamp_noiseless(alpha, n=SMALL_N, iterations=2000, min_snr_db=30.0, seed=3):
    """H = I and sigma_e = 0: the estimate has to approach y itself."""
    prior = BernoulliGaussianPrior(alpha=alpha)
    x_true = sample_signal(prior, n, np.random.default_rng(seed))
    if not x_true.any():
        x_true[0] = prior.sigma_x
    problem = ProblemInstance(operator=MeasurementOperator(np.eye(n)), x_true=x_true, y=x_true.copy(), sigma_e=0.0)
    trace = gamp(problem, prior, max_iter=iterations)
    ok = not trace.diverged and trace.final_snr_db >= min_snr_db
    return _verdict("gamp_noiseless", ok, trace.final_snr_db, min_snr_db, f"SNR (dB) against y after {trace.iterations_run} iterations")


def run_validation_suite(config):
    checks = [
        ("tweedie", lambda: check_tweedie(config.tweedie_tol)),
        ("jacobian", check_jacobian),
        ("derivative", check_derivative),
        ("inverse", check_inverse),
        ("prox", check_prox),
        ("gradients", check_gradients),
        ("mm_sandwich", lambda: check_mm_sandwich(config.alpha)),
        ("monotonicity", lambda: check_monotonicity(config)),
        ("gamp_variances", lambda: check_gamp_variances(config)),
        ("gamp_decoupled", check_gamp_decoupled),
        ("gamp_noiseless", lambda: check_gamp_noiseless(config.alpha)),
    ]
    report = ValidationReport()
    for name, check in checks:
        try:
            result = check()
        except NumericalFailure as exc:
            result = CheckResult(name, FAIL, None, None, f"numerical failure: {exc}")
        logger.info("CHECK -> %s %s %s", result.check, result.status, result.detail)
        report.results.append(result)
    return report
