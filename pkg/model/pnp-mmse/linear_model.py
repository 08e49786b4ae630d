"""Measurement model y = H x + e with a dense Gaussian H."""
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from prior_bg import sample_signal

logger = logging.getLogger(__name__)

SNR_CAP_DB = 300.0
STEP_SAFETY = 0.99


@dataclass(frozen=True)
class MeasurementOperator:
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.ndim != 2 or 0 in matrix.shape:
            raise ValueError(f"operator must be a non-empty 2-D array, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("operator entries must be finite")
        object.__setattr__(self, "matrix", matrix)

    @property
    def m(self):
        return self.matrix.shape[0]

    @property
    def n(self):
        return self.matrix.shape[1]

    @cached_property
    def squared(self):
        """Entrywise square H o H, used by GAMP's variance updates."""
        return self.matrix ** 2


@dataclass(frozen=True)
class LipschitzEstimate:
    value: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class ProblemInstance:
    operator: MeasurementOperator
    x_true: np.ndarray
    y: np.ndarray
    sigma_e: float

    def __post_init__(self):
        if np.shape(self.x_true) != (self.operator.n,):
            raise ValueError(f"x_true must have length {self.operator.n}")
        if np.shape(self.y) != (self.operator.m,):
            raise ValueError(f"y must have length {self.operator.m}")
        if self.sigma_e < 0:
            raise ValueError("sigma_e must be non-negative")

    @property
    def m(self):
        return self.operator.m

    @property
    def n(self):
        return self.operator.n

    @cached_property
    def lipschitz(self):
        return lipschitz_constant(self.operator)


def _matrix(H):
    return H.matrix if isinstance(H, MeasurementOperator) else np.asarray(H, dtype=float)


def generate_operator(m, n, rng):
    """H with i.i.d. N(0, 1/m) entries, so columns have unit expected norm."""
    if int(m) < 1 or int(n) < 1:
        raise ValueError(f"dimensions must be positive, got m={m}, n={n}")
    return MeasurementOperator(rng.standard_normal((int(m), int(n))) / np.sqrt(m))


def calibrate_noise_sigma(H, x_true, input_snr_db):
    """Per-component noise std giving E[|Hx|^2 / |e|^2] = 10^(snr/10)."""
    matrix = _matrix(H)
    signal = np.linalg.norm(matrix @ np.asarray(x_true, dtype=float))
    if signal == 0:
        raise ValueError("cannot calibrate noise for a zero measurement signal")
    return float(signal / np.sqrt(matrix.shape[0] * 10.0 ** (input_snr_db / 10.0)))


def make_problem(prior, m, n, input_snr_db, signal_rng, matrix_rng, noise_rng):
    """One (x_true, H, e) realization; each role draws from its own generator."""
    x_true = sample_signal(prior, n, signal_rng)
    operator = generate_operator(m, n, matrix_rng)
    clean = operator.matrix @ x_true
    sigma_e = calibrate_noise_sigma(operator, x_true, input_snr_db)
    y = clean + sigma_e * noise_rng.standard_normal(operator.m)
    return ProblemInstance(operator=operator, x_true=x_true, y=y, sigma_e=sigma_e)


def _check_length(problem, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.n,):
        raise ValueError(f"expected a vector of length {problem.n}, got shape {x.shape}")
    return x


def data_fidelity(problem, x):
    """g(x) = 1/2 |y - Hx|^2."""
    x = _check_length(problem, x)
    residual = problem.y - problem.operator.matrix @ x
    return 0.5 * float(residual @ residual)


def grad_data_fidelity(problem, x):
    x = _check_length(problem, x)
    H = problem.operator.matrix
    return H.T @ (H @ x - problem.y)


def lipschitz_constant(H, tol=1e-6, max_iter=5000, seed=0):
    """Power iteration for lambda_max(H^T H).

    The Rayleigh quotient never exceeds the true value, so the estimate is
    a lower bound that converges from below.
    """
    matrix = _matrix(H)
    if not np.any(matrix):
        raise ValueError("the operator is identically zero")
    v = np.random.default_rng(seed).standard_normal(matrix.shape[1])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for iteration in range(1, max_iter + 1):
        w = matrix.T @ (matrix @ v)
        updated = float(v @ w)
        norm_w = np.linalg.norm(w)
        if norm_w == 0:
            # start vector landed in the null space; restart from a fresh draw
            v = np.random.default_rng(seed + iteration).standard_normal(matrix.shape[1])
            v /= np.linalg.norm(v)
            continue
        v = w / norm_w
        if abs(updated - estimate) < tol * updated:
            return LipschitzEstimate(updated, True, iteration)
        estimate = updated
    logger.warning("LIPSCHITZ -> power iteration stopped after %d steps without converging", max_iter)
    return LipschitzEstimate(estimate, False, max_iter)


def snr_db(x_hat, x_ref):
    """10 log10(|x_ref|^2 / |x_hat - x_ref|^2), capped at 300 dB for exact recovery."""
    x_hat = np.asarray(x_hat, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    if x_hat.shape != x_ref.shape:
        raise ValueError("x_hat and x_ref must have the same length")
    reference = float(x_ref @ x_ref)
    if reference == 0:
        raise ValueError("reference signal is zero")
    error = float((x_hat - x_ref) @ (x_hat - x_ref))
    if error == 0:
        return SNR_CAP_DB
    return float(min(SNR_CAP_DB, 10.0 * np.log10(reference / error)))
