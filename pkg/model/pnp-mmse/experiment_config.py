"""Experiment configuration: defaults, a KEY=VALUE config file and CLI overrides.

Precedence, lowest first: model defaults, command defaults, config file,
``--paper-scale``, explicit overrides.
"""
import logging
import os
from pathlib import Path
from typing import List, Optional

import numpy as np
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import ConfigurationError
from prior_bg import BernoulliGaussianPrior

logger = logging.getLogger(__name__)

SOLVER_NAMES = ("pnp", "lasso", "gamp")
PAPER_SCALE = {"n": 4096, "trials": 100}
KEY_ALIASES = {
    "rates": "measurement_rates",
    "out": "output_dir",
    "snr": "input_snr_db",
    "snr_db": "input_snr_db",
}


def _default_rates():
    return [round(0.1 * k, 1) for k in range(1, 10)]


def _default_lambda_grid():
    return np.geomspace(1e-4, 1.0, 15).tolist()


def _default_sigma_grid():
    return np.geomspace(0.01, 0.37, 9).tolist()


def _split(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    n: int = Field(default=1024, ge=1)
    measurement_rates: List[float] = Field(default_factory=_default_rates)
    alpha: float = Field(default=0.2, gt=0.0, le=1.0)
    input_snr_db: float = Field(default=20.0, allow_inf_nan=False)
    trials: int = Field(default=20, ge=1)
    solvers: List[str] = Field(default_factory=lambda: list(SOLVER_NAMES))
    max_iter: int = Field(default=500, ge=1)
    # relative to |H^T y|_inf of each instance
    lambda_grid: List[float] = Field(default_factory=_default_lambda_grid)
    sigma_grid: List[float] = Field(default_factory=_default_sigma_grid)
    gamma: Optional[float] = Field(default=None, gt=0.0)
    allow_large_step: bool = False
    gamp_damping: float = Field(default=0.9, gt=0.0, le=1.0)
    trace_interval: int = Field(default=1, ge=1)
    grad_tol: Optional[float] = Field(default=None, gt=0.0)
    workers: int = Field(default=1, ge=1)
    output_dir: Path = Path("results")
    max_failure_fraction: float = Field(default=0.05, ge=0.0, lt=1.0)
    tweedie_tol: float = Field(default=1e-9, gt=0.0)

    @field_validator("measurement_rates", "lambda_grid", "sigma_grid", "solvers", mode="before")
    @classmethod
    def _split_lists(cls, value):
        return _split(value)

    @field_validator("gamma", "grad_tol", mode="before")
    @classmethod
    def _auto_is_none(cls, value):
        if isinstance(value, str) and value.strip().lower() in ("", "auto", "none"):
            return None
        return value

    @field_validator("measurement_rates")
    @classmethod
    def _check_rates(cls, rates):
        if not rates:
            raise ValueError("at least one measurement rate is required")
        if any(not 0.0 < rate <= 1.0 for rate in rates):
            raise ValueError(f"measurement rates must lie in (0, 1], got {rates}")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError(f"measurement rates must be strictly ascending, got {rates}")
        return rates

    @field_validator("lambda_grid", "sigma_grid")
    @classmethod
    def _check_grid(cls, grid):
        if any(not np.isfinite(value) or value <= 0 for value in grid):
            raise ValueError(f"grid values must be positive and finite, got {grid}")
        return grid

    @field_validator("solvers")
    @classmethod
    def _check_solvers(cls, solvers):
        names = [name.lower() for name in solvers]
        unknown = sorted(set(names) - set(SOLVER_NAMES))
        if unknown:
            raise ValueError(f"unknown solvers {unknown}; choose from {list(SOLVER_NAMES)}")
        if not names:
            raise ValueError("the solver set is empty")
        return [name for name in SOLVER_NAMES if name in names]

    @model_validator(mode="after")
    def _grids_for_enabled_solvers(self):
        if "pnp" in self.solvers and not self.sigma_grid:
            raise ValueError("sigma_grid is empty but pnp is enabled")
        if "lasso" in self.solvers and not self.lambda_grid:
            raise ValueError("lambda_grid is empty but lasso is enabled")
        return self

    @property
    def prior(self):
        return BernoulliGaussianPrior(alpha=self.alpha)

    def measurements(self, rate):
        """Number of measurements m = round(rate * n), at least one."""
        return max(1, int(round(rate * self.n)))


def read_config_file(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")

    values = {}
    for key, value in dotenv_values(path).items():
        key = key.strip().lower().replace("-", "_")
        if value is None:
            raise ConfigurationError(f"{path}: key '{key}' has no value")
        values[KEY_ALIASES.get(key, key)] = value
    logger.debug("CONFIG -> read %d keys from %s", len(values), path)
    return values


def load_config(path=None, overrides=None, paper_scale=False, defaults=None):
    data = dict(defaults or {})
    if path:
        data.update(read_config_file(os.fspath(path)))
    if paper_scale:
        data.update(PAPER_SCALE)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[KEY_ALIASES.get(key, key)] = value

    try:
        config = ExperimentConfig(**data)
    except ValidationError as exc:
        raise ConfigurationError(str(exc)) from exc
    logger.info(
        "CONFIG -> n=%d trials=%d rates=%s solvers=%s seed=%d",
        config.n,
        config.trials,
        config.measurement_rates,
        ",".join(config.solvers),
        config.seed,
    )
    return config
