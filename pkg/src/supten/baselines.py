"""Comparison methods: tri-linear N-way PLS and PLS1 on the unfolded tensor."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .decomp import check_rank, cross_covariance, loading_pair
from .errors import BadRank, DimensionMismatch, ZeroCovariance
from .linalg import ZERO_NORM, solve_ridge
from .tensor import (
    Preprocess,
    PreprocessStats,
    Tensor3,
    mode23_contract,
    preprocess,
    rank1_subtract,
    unfold_mode1,
)


@dataclass(frozen=True)
class NplsModel:
    """Tri-PLS1 fit.

    ``coef`` regresses centered y on all ``rank`` score columns.
    ``y_residual_norms[r]`` is ``||y_rem||`` after component ``r``.
    """

    rank: int
    feature_weights: np.ndarray
    time_weights: np.ndarray
    scores: np.ndarray
    coef: np.ndarray
    stats: PreprocessStats
    y_residual_norms: np.ndarray

    @property
    def fitted(self) -> np.ndarray:
        return self.scores @ self.coef + self.stats.y_mean

    def predict(self, x_new: Tensor3) -> np.ndarray:
        return npls_predict(self, x_new)


def npls_fit(
    x: Tensor3,
    y,
    rank: int,
    *,
    flags: Preprocess = Preprocess(),
    tol: float = 1e-10,
    max_iter: int = 1000,
) -> NplsModel:
    """N-way PLS for a scalar target.

    Same Z-driven extraction as :func:`~supten.decomp.ste_fit`, except that
    after every component the regression of y on all scores so far is refit
    and ``Z`` for the next component is built from the y residual.
    """
    check_rank(rank, x)
    xc, yc, stats = preprocess(x, y, flags=flags)
    ref = float(np.linalg.norm(xc.values) * np.linalg.norm(yc))

    n, j, k = xc.shape
    scores = np.zeros((n, rank))
    wj = np.zeros((j, rank))
    wk = np.zeros((k, rank))
    yres = np.zeros(rank)
    x_rem, y_rem = xc, yc
    coef = np.zeros(0)
    for r in range(rank):
        z = cross_covariance(x_rem, y_rem, ref)
        f, t = loading_pair(z, tol, max_iter)
        u = mode23_contract(x_rem, f, t)
        scores[:, r], wj[:, r], wk[:, r] = u, f, t
        coef = solve_ridge(scores[:, : r + 1], yc, 0.0)
        x_rem = rank1_subtract(x_rem, u, f, t)
        y_rem = yc - scores[:, : r + 1] @ coef
        yres[r] = np.linalg.norm(y_rem)
    return NplsModel(rank, wj, wk, scores, coef, stats, yres)


def npls_scores(model: NplsModel, x_new: Tensor3) -> np.ndarray:
    if (x_new.n_features, x_new.n_times) != model.stats.cell_means.shape:
        raise DimensionMismatch(
            f"model expects (*, {model.stats.n_features}, {model.stats.n_times}), got {x_new.shape}"
        )
    x_rem, _, _ = preprocess(x_new, stats=model.stats)
    out = np.zeros((x_new.n_samples, model.rank))
    for r in range(model.rank):
        f, t = model.feature_weights[:, r], model.time_weights[:, r]
        u = mode23_contract(x_rem, f, t)
        x_rem = rank1_subtract(x_rem, u, f, t)
        out[:, r] = u
    return out


def npls_predict(model: NplsModel, x_new: Tensor3) -> np.ndarray:
    return npls_scores(model, x_new) @ model.coef + model.stats.y_mean


@dataclass(frozen=True)
class PlsModel:
    """PLS1 (NIPALS) on a centered matrix; ``stats`` is set by the tensor wrapper."""

    rank: int
    weights: np.ndarray
    loadings: np.ndarray
    y_loadings: np.ndarray
    y_mean: float
    fitted: np.ndarray
    stats: Optional[PreprocessStats] = None

    def predict(self, x_new) -> np.ndarray:
        if isinstance(x_new, Tensor3):
            return pls_predict_tensor(self, x_new)
        return pls1_predict(self, x_new)


def pls1_fit(x_mat, y, rank: int) -> PlsModel:
    """NIPALS PLS1. ``x_mat`` must already be column-centered; y is centered here."""
    x_mat = np.asarray(x_mat, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = x_mat.shape
    if y.shape != (n,):
        raise DimensionMismatch(f"y has shape {y.shape}, expected ({n},)")
    if not 1 <= rank <= min(n - 1, p):
        raise BadRank(f"rank must be in [1, {min(n - 1, p)}], got {rank}")
    y_mean = float(y.mean())
    xr = x_mat.copy()
    yr = y - y_mean
    ref = float(np.linalg.norm(xr) * np.linalg.norm(yr))

    w_all = np.zeros((p, rank))
    p_all = np.zeros((p, rank))
    q_all = np.zeros(rank)
    fitted = np.full(n, y_mean)
    for r in range(rank):
        w = xr.T @ yr
        wn = np.linalg.norm(w)
        if wn < ZERO_NORM or wn <= 1e-12 * ref:
            raise ZeroCovariance(f"X'y norm {wn:.3e} is numerically zero at component {r + 1}")
        w /= wn
        t = xr @ w
        tt = t @ t
        p_r = xr.T @ t / tt
        q_r = yr @ t / tt
        xr -= np.outer(t, p_r)
        yr = yr - q_r * t
        fitted += q_r * t
        w_all[:, r], p_all[:, r], q_all[r] = w, p_r, q_r
    return PlsModel(rank, w_all, p_all, q_all, y_mean, fitted)


def pls1_predict(model: PlsModel, x_mat_new) -> np.ndarray:
    xr = np.array(x_mat_new, dtype=float, copy=True)
    if xr.ndim != 2 or xr.shape[1] != model.weights.shape[0]:
        raise DimensionMismatch(
            f"expected (*, {model.weights.shape[0]}) matrix, got {xr.shape}"
        )
    yhat = np.full(xr.shape[0], model.y_mean)
    for r in range(model.rank):
        t = xr @ model.weights[:, r]
        xr -= np.outer(t, model.loadings[:, r])
        yhat += model.y_loadings[r] * t
    return yhat


def pls_fit_tensor(x: Tensor3, y, rank: int, *, flags: Preprocess = Preprocess()) -> PlsModel:
    """PLS1 on the mode-1 unfolding of the same preprocessed tensor STE/NPLS see."""
    xc, _, stats = preprocess(x, y, flags=flags)
    model = pls1_fit(unfold_mode1(xc), y, rank)
    return PlsModel(
        model.rank, model.weights, model.loadings, model.y_loadings,
        model.y_mean, model.fitted, stats,
    )


def pls_predict_tensor(model: PlsModel, x_new: Tensor3) -> np.ndarray:
    if model.stats is None:
        raise ValueError("model was fit on a matrix; call pls1_predict with an unfolded tensor")
    if (x_new.n_features, x_new.n_times) != model.stats.cell_means.shape:
        raise DimensionMismatch(f"tensor {x_new.shape} does not match the fitted model")
    xc, _, _ = preprocess(x_new, stats=model.stats)
    return pls1_predict(model, unfold_mode1(xc))
