"""Prediction metrics: R^2, Pearson/Spearman correlation, RMSE."""

import numpy as np
from scipy.stats import rankdata


def r2_score(y, yhat) -> float:
    """``1 - SS_res / SS_tot``. Not clamped, so it can be negative on test data."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return float("nan")
    return 1.0 - float(((y - yhat) ** 2).sum()) / ss_tot


def pearson(y, yhat) -> float:
    """Pearson correlation; NaN when either input is constant."""
    a = np.asarray(y, dtype=float) - np.mean(y)
    b = np.asarray(yhat, dtype=float) - np.mean(yhat)
    den = np.sqrt((a @ a) * (b @ b))
    if den == 0.0:
        return float("nan")
    return float(np.clip(a @ b / den, -1.0, 1.0))


def spearman(y, yhat) -> float:
    return pearson(rankdata(y), rankdata(yhat))


def rmse(y, yhat) -> float:
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def score_all(y, yhat, use_spearman: bool = False) -> dict:
    corr = spearman if use_spearman else pearson
    return {"r2": r2_score(y, yhat), "rho": corr(y, yhat), "rmse": rmse(y, yhat)}
