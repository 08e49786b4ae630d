"""Seeded multi-trial experiments: convergence traces and measurement-rate sweeps.

Every (rate, trial) pair gets its own instance, drawn from generators keyed
by (seed, rate_index, trial_index, role). All solvers of a trial share that
instance. Trials run in order, or on a process pool that returns results in
submission order, so output never depends on the worker count.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from aggregate_utils import align_traces, nonincreasing_columns, summarize, summarize_groups
from errors import ConfigurationError, FailureBudgetExceeded, NumericalFailure
from experiment_config import ExperimentConfig
from linear_model import make_problem
from mmse_denoiser import MmseDenoiser
from solvers import MONOTONE_RTOL, STATIONARITY_RATIO, TraceOptions, gamp, lasso_ista, pnp_ista

logger = logging.getLogger(__name__)

ROLE_CODES = {"signal": 0, "matrix": 1, "noise": 2}
FLOAT_FORMAT = "%.12g"

COST_COLUMNS = ["iter", "f_norm_mean", "f_norm_min", "f_norm_max"]
SNR_COLUMNS = ["iter", "solver", "snr_mean", "snr_min", "snr_max"]
SWEEP_COLUMNS = ["rate", "solver", "snr_mean", "snr_min", "snr_max"]
SELECTION_COLUMNS = ["rate", "trial", "solver", "param_name", "param_value"]


@dataclass(frozen=True)
class TrialTask:
    config: ExperimentConfig
    rate_index: int
    trial_index: int
    track_objective: bool = False

    @property
    def rate(self):
        return self.config.measurement_rates[self.rate_index]


@dataclass
class TrialOutcome:
    rate: float
    rate_index: int
    trial_index: int
    traces: Dict[str, object] = field(default_factory=dict)
    selections: List[dict] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def failed(self):
        return self.error is not None


def trial_rng(seed, rate_index, trial_index, role):
    return np.random.default_rng(np.random.SeedSequence([seed, rate_index, trial_index, ROLE_CODES[role]]))


def build_instance(config, rate_index, trial_index):
    rate = config.measurement_rates[rate_index]
    return make_problem(
        config.prior,
        config.measurements(rate),
        config.n,
        config.input_snr_db,
        signal_rng=trial_rng(config.seed, rate_index, trial_index, "signal"),
        matrix_rng=trial_rng(config.seed, rate_index, trial_index, "matrix"),
        noise_rng=trial_rng(config.seed, rate_index, trial_index, "noise"),
    )


def trace_options(config, track_objective):
    return TraceOptions(
        trace_interval=config.trace_interval,
        grad_tol=config.grad_tol,
        track_objective=track_objective,
        allow_large_step=config.allow_large_step,
    )


def tune_pnp(problem, config, options):
    """Run PnP-ISTA for every sigma in the grid and keep the best final SNR (first on ties).

    Only runs that end stationary, |grad f(x^T)| <= STATIONARITY_RATIO |grad f(x^1)|,
    compete. When no sigma gets there within max_iter the most stationary run
    is kept instead.
    """
    runs = []
    for sigma in config.sigma_grid:
        denoiser = MmseDenoiser(prior=config.prior, sigma=sigma)
        runs.append((sigma, pnp_ista(problem, denoiser, gamma=config.gamma, max_iter=config.max_iter, options=options)))

    stationary = [run for run in runs if run[1].reached_stationarity()]
    if stationary:
        best_sigma, best = max(stationary, key=lambda run: run[1].final_snr_db)
    else:
        best_sigma, best = min(runs, key=lambda run: run[1].stationarity_ratio)
        logger.warning(
            "GRID -> no sigma reached |grad f| ratio %.0e in %d iterations; kept sigma=%.4g (ratio %.2e)",
            STATIONARITY_RATIO,
            config.max_iter,
            best_sigma,
            best.stationarity_ratio,
        )
    logger.debug("GRID -> pnp sigma=%.4g (%.2f dB, %d of %d stationary)", best_sigma, best.final_snr_db, len(stationary), len(runs))
    return best, best_sigma


def tune_lasso(problem, config, options):
    """Same search over lambda, with the grid scaled by |H^T y|_inf."""
    scale = float(np.max(np.abs(problem.operator.matrix.T @ problem.y)))
    if scale == 0:
        raise NumericalFailure("H^T y vanishes; the lambda grid is degenerate")
    best, best_lam = None, None
    for relative in config.lambda_grid:
        trace = lasso_ista(problem, relative * scale, gamma=config.gamma, max_iter=config.max_iter, options=options)
        if best is None or trace.final_snr_db > best.final_snr_db:
            best, best_lam = trace, relative * scale
    logger.debug("GRID -> lasso lambda=%.4g (%.2f dB)", best_lam, best.final_snr_db)
    return best, best_lam


def run_trial(task):
    """One (rate, trial) work item. Numerical failures are recorded, not raised."""
    config = task.config
    outcome = TrialOutcome(rate=task.rate, rate_index=task.rate_index, trial_index=task.trial_index)
    options = trace_options(config, task.track_objective)

    def select(solver, name, value):
        outcome.selections.append(
            {"rate": task.rate, "trial": task.trial_index, "solver": solver, "param_name": name, "param_value": value}
        )

    solver = None
    try:
        problem = build_instance(config, task.rate_index, task.trial_index)
        if "pnp" in config.solvers:
            solver = "pnp"
            trace, sigma = tune_pnp(problem, config, options)
            outcome.traces["pnp"] = trace
            select("pnp", "sigma", sigma)
            select("pnp", "gamma", trace.gamma)
        if "lasso" in config.solvers:
            solver = "lasso"
            trace, lam = tune_lasso(problem, config, options.model_copy(update={"track_objective": False}))
            outcome.traces["lasso"] = trace
            select("lasso", "lambda", lam)
            select("lasso", "gamma", trace.gamma)
        if "gamp" in config.solvers:
            solver = "gamp"
            outcome.traces["gamp"] = gamp(
                problem, config.prior, max_iter=config.max_iter, damping=config.gamp_damping, options=options
            )
            select("gamp", "damping", config.gamp_damping)
    except NumericalFailure as exc:
        outcome.error = f"{solver or 'instance'}: {exc}"
        logger.error(
            "TRIAL -> rate %.3g trial %d failed in %s at iteration %s: %s",
            task.rate,
            task.trial_index,
            solver or "instance",
            exc.iteration,
            exc,
        )
        outcome.traces.clear()
        outcome.selections.clear()
    return outcome


def execute_trials(tasks, workers=1, progress=False):
    """Run tasks and return outcomes in task order."""
    bar = dict(total=len(tasks), desc="trials", unit="trial", disable=not progress)
    if workers <= 1 or len(tasks) <= 1:
        return [run_trial(task) for task in tqdm(tasks, **bar)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(tqdm(pool.map(run_trial, tasks), **bar))


def check_failure_budget(outcomes, max_failure_fraction):
    failed = sum(outcome.failed for outcome in outcomes)
    total = len(outcomes)
    if failed:
        logger.warning("TRIAL -> %d of %d trials failed", failed, total)
    if failed == total or failed > max_failure_fraction * total:
        raise FailureBudgetExceeded(failed, total)
    return [outcome for outcome in outcomes if not outcome.failed]


def _write_csv(frame, path, columns):
    frame = frame[columns]
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info("CSV -> wrote %d rows to %s", len(frame), path)
    return path


def _selections_frame(outcomes):
    rows = [row for outcome in outcomes for row in outcome.selections]
    return pd.DataFrame(rows, columns=SELECTION_COLUMNS)


def _tasks(config, rate_indices, track_objective):
    return [
        TrialTask(config=config, rate_index=r, trial_index=t, track_objective=track_objective)
        for r in rate_indices
        for t in range(config.trials)
    ]


def run_convergence_experiment(config, progress=False):
    """Write convergence_cost.csv, convergence_snr.csv and selections.csv; return their paths."""
    if "pnp" not in config.solvers:
        raise ConfigurationError("the convergence experiment needs pnp in the solver set")
    if len(config.measurement_rates) != 1:
        raise ConfigurationError(
            f"the convergence experiment takes a single measurement rate, got {config.measurement_rates}"
        )

    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    outcomes = execute_trials(_tasks(config, [0], track_objective=True), config.workers, progress)
    succeeded = check_failure_budget(outcomes, config.max_failure_fraction)

    costs = align_traces([(o.traces["pnp"].iterations, o.traces["pnp"].normalized_cost()) for o in succeeded])
    monotone = nonincreasing_columns(costs, tolerance=MONOTONE_RTOL)
    if len(monotone) != costs.shape[1]:
        logger.warning("PNP -> normalized cost increased in %d trials", costs.shape[1] - len(monotone))
    cost_frame = summarize(costs, "f_norm")

    snr_frames = []
    for solver in config.solvers:
        snr = align_traces([(o.traces[solver].iterations, o.traces[solver].snr_db) for o in succeeded])
        frame = summarize(snr, "snr")
        frame.insert(1, "solver", solver)
        snr_frames.append(frame)
    snr_frame = pd.concat(snr_frames, ignore_index=True)

    return {
        "convergence_cost": _write_csv(cost_frame, output_dir / "convergence_cost.csv", COST_COLUMNS),
        "convergence_snr": _write_csv(snr_frame, output_dir / "convergence_snr.csv", SNR_COLUMNS),
        "selections": _write_csv(_selections_frame(outcomes), output_dir / "selections.csv", SELECTION_COLUMNS),
    }


def run_rate_sweep(config, progress=False):
    """Write rate_sweep.csv and selections.csv; return their paths."""
    if len(config.measurement_rates) < 2:
        raise ConfigurationError("the rate sweep needs at least two measurement rates")

    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    tasks = _tasks(config, range(len(config.measurement_rates)), track_objective=False)
    outcomes = execute_trials(tasks, config.workers, progress)
    succeeded = check_failure_budget(outcomes, config.max_failure_fraction)

    records = pd.DataFrame(
        [
            {"rate": o.rate, "solver": solver, "trial": o.trial_index, "snr": o.traces[solver].final_snr_db}
            for o in succeeded
            for solver in config.solvers
        ]
    )
    sweep = summarize_groups(records, ["rate", "solver"], "snr", "snr")
    return {
        "rate_sweep": _write_csv(sweep, output_dir / "rate_sweep.csv", SWEEP_COLUMNS),
        "selections": _write_csv(_selections_frame(outcomes), output_dir / "selections.csv", SELECTION_COLUMNS),
    }
