import logging

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

STAT_NAMES = ("mean", "min", "max")


def align_traces(series):
    """Put per-trial (iterations, values) pairs on one iteration index.

    Trials that stopped early keep their last value for the remaining
    iterations. Returns a frame indexed by iteration with one column per trial.
    """
    if not series:
        return pd.DataFrame()

    columns = {}
    for trial, (iterations, values) in enumerate(series):
        if len(iterations) != len(values):
            raise ValueError(f"trial {trial}: {len(iterations)} iterations but {len(values)} values")
        columns[trial] = pd.Series(np.asarray(values, dtype=float), index=pd.Index(iterations, name="iter"))

    frame = pd.DataFrame(columns).sort_index()
    frame.index.name = "iter"
    padded = int(frame.isna().sum().sum())
    if padded:
        logger.debug("AGGREGATE -> forward-filling %d entries from early-stopped trials", padded)
    return frame.ffill()


def summarize(frame, prefix):
    """Row-wise mean/min/max across trial columns, as <prefix>_mean etc."""
    if frame.empty:
        return pd.DataFrame(columns=["iter"] + [f"{prefix}_{stat}" for stat in STAT_NAMES])

    summary = pd.DataFrame(
        {
            f"{prefix}_mean": frame.mean(axis=1),
            f"{prefix}_min": frame.min(axis=1),
            f"{prefix}_max": frame.max(axis=1),
        }
    )
    # the mean can drift a rounding error past min/max when all trials agree
    summary[f"{prefix}_mean"] = summary[f"{prefix}_mean"].clip(summary[f"{prefix}_min"], summary[f"{prefix}_max"])
    return summary.reset_index()


def summarize_groups(records, keys, value, prefix):
    """Group a long frame by ``keys`` in first-appearance order and summarize ``value``."""
    if records.empty:
        return pd.DataFrame(columns=list(keys) + [f"{prefix}_{stat}" for stat in STAT_NAMES])

    grouped = records.groupby(list(keys), sort=False)[value].agg(list(STAT_NAMES))
    grouped["mean"] = grouped["mean"].clip(grouped["min"], grouped["max"])
    grouped.columns = [f"{prefix}_{stat}" for stat in grouped.columns]
    return grouped.reset_index()


def nonincreasing_columns(frame, tolerance=0.0):
    """Trial columns whose values never rise by more than ``tolerance`` from one row to the next."""
    steps = frame.diff().iloc[1:]
    return [column for column in frame.columns if bool((steps[column] <= tolerance).all())]
