"""Goodness score, regression error metrics and per-task validation scores."""
from __future__ import annotations

import math
import warnings

import numpy as np

from .graph import TaskInfo, TaskKind

DEFAULT_G_TH = 0.2


def goodness(acc: float, lr_index: int, lr_total: int, g_th: float = DEFAULT_G_TH) -> float:
    """Blend of validation accuracy and relative branching depth.

    ``g_th`` = 0 scores accuracy only, ``g_th`` = 1 scores depth only.
    """
    if lr_total <= 0:
        raise ValueError("lr_total must be positive")
    if not 0.0 <= acc <= 1.0 or math.isnan(acc):
        raise ValueError(f"acc must lie in [0, 1], got {acc}")
    if not 0.0 <= g_th <= 1.0:
        raise ValueError(f"g_th must lie in [0, 1], got {g_th}")
    if not 0 <= lr_index <= lr_total:
        raise ValueError(f"lr_index must lie in [0, lr_total], got {lr_index}/{lr_total}")
    return acc * (1.0 - g_th) + (lr_index / lr_total) * g_th


def _pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.size} targets vs {y_hat.size} predictions")
    if y.size == 0:
        raise ValueError("empty input")
    return y, y_hat


def mae(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean(np.abs(y - y_hat)))


def mse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean((y - y_hat) ** 2))


def rmse(y, y_hat) -> float:
    return math.sqrt(mse(y, y_hat))


def r2(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    ss_res = float(np.sum((y - y_hat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        if ss_res == 0.0:
            return 1.0
        raise ValueError("r2 is undefined for constant targets with nonzero residuals")
    return 1.0 - ss_res / ss_tot


def regression_report(y, y_hat) -> dict:
    return {"mae": mae(y, y_hat), "mse": mse(y, y_hat), "rmse": rmse(y, y_hat), "r2": r2(y, y_hat)}


def task_score(predictions, targets, task: TaskInfo) -> float:
    """Validation score in [0, 1] for one task.

    Classification: fraction correct (argmax, or 0.5 threshold for a single
    sigmoid output).  Regression: ``max(0, 1 - mae / target_range)``.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets)
    if targets.shape[0] == 0:
        raise ValueError("empty validation set")
    if predictions.shape[0] != targets.shape[0]:
        raise ValueError("predictions and targets are not aligned")
    if task.kind is TaskKind.CLASSIFICATION:
        if task.num_outputs == 1:
            pred = (predictions.reshape(-1) >= 0.5).astype(int)
        else:
            pred = predictions.reshape(len(predictions), -1).argmax(axis=1)
        return float(np.mean(pred == targets.reshape(-1).astype(int)))
    t = targets.astype(np.float64).ravel()
    span = float(t.max() - t.min())
    if span == 0.0:
        warnings.warn("constant regression targets; score set to 0", RuntimeWarning, stacklevel=2)
        return 0.0
    err = mae(t, predictions.ravel())
    return max(0.0, 1.0 - err / span)
