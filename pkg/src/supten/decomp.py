"""Supervised tensor embedding, feature importance and CP-ALS."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    BadK,
    BadRank,
    DimensionMismatch,
    NotConverged,
    SingularSystem,
    ZeroCovariance,
    ZeroMatrix,
)
from .linalg import ZERO_NORM, cholesky_solve, leading_singular_pair, sign_flip
from .tensor import (
    Preprocess,
    PreprocessStats,
    Tensor3,
    mode1_vector_product,
    mode23_contract,
    preprocess,
    rank1_subtract,
)

logger = logging.getLogger(__name__)

# Z is treated as zero below this fraction of ||X||_F * ||y||_2 (its upper bound).
REL_ZERO_COV = 1e-12


def check_rank(rank: int, x: Tensor3) -> None:
    limit = min(x.n_samples, x.n_features * x.n_times)
    if not 1 <= rank <= limit:
        raise BadRank(f"rank must be in [1, {limit}] for a {x.shape} tensor, got {rank}")


def cross_covariance(x_rem: Tensor3, y, ref_norm: float) -> np.ndarray:
    """``Z = x_rem x_1 y``, raising ZeroCovariance when it carries no signal."""
    z = mode1_vector_product(x_rem, y)
    zn = np.linalg.norm(z)
    if zn < ZERO_NORM or zn <= REL_ZERO_COV * ref_norm:
        raise ZeroCovariance(f"cross-covariance norm {zn:.3e} is numerically zero")
    return z


def loading_pair(z: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, np.ndarray]:
    """(feature loading, time loading) from the leading singular pair of ``z``."""
    try:
        pair = leading_singular_pair(z, tol=tol, max_iter=max_iter)
    except NotConverged as exc:
        logger.warning("%s; using last iterate", exc)
        pair = exc.result
    except ZeroMatrix as exc:
        raise ZeroCovariance(str(exc)) from exc
    return pair.left, pair.right


@dataclass(frozen=True)
class SteModel:
    """Fitted supervised tensor embedding.

    ``scores`` is ``N x R``; ``feature_loadings`` ``J x R`` and
    ``time_loadings`` ``K x R`` hold unit-norm columns.
    """

    rank: int
    scores: np.ndarray
    feature_loadings: np.ndarray
    time_loadings: np.ndarray
    stats: PreprocessStats
    residual_norms: np.ndarray

    @property
    def n_features(self) -> int:
        return self.feature_loadings.shape[0]

    @property
    def n_times(self) -> int:
        return self.time_loadings.shape[0]

    def transform(self, x_new: Tensor3) -> np.ndarray:
        return ste_project(self, x_new)


def ste_fit(
    x: Tensor3,
    y,
    rank: int,
    *,
    flags: Preprocess = Preprocess(),
    tol: float = 1e-10,
    max_iter: int = 1000,
) -> SteModel:
    """Supervised tensor embedding.

    Each component takes the leading singular pair of the cross-covariance
    ``Z = X_rem x_1 y`` as feature/time loadings, scores every sample by
    contracting ``X_rem`` with them, and removes the rank-1 model from
    ``X_rem``. The target is centered once and never deflated.
    """
    check_rank(rank, x)
    xc, yc, stats = preprocess(x, y, flags=flags)
    ref = float(np.linalg.norm(xc.values) * np.linalg.norm(yc))

    n, j, k = xc.shape
    scores = np.zeros((n, rank))
    floads = np.zeros((j, rank))
    tloads = np.zeros((k, rank))
    resid = np.zeros(rank)
    x_rem = xc
    for r in range(rank):
        z = cross_covariance(x_rem, yc, ref)
        f, t = loading_pair(z, tol, max_iter)
        u = mode23_contract(x_rem, f, t)
        x_rem = rank1_subtract(x_rem, u, f, t)
        scores[:, r], floads[:, r], tloads[:, r] = u, f, t
        resid[r] = np.linalg.norm(x_rem.values)
    return SteModel(rank, scores, floads, tloads, stats, resid)


def ste_project(model: SteModel, x_new: Tensor3) -> np.ndarray:
    """Scores for new samples by sequential deflation with the stored loadings."""
    if (x_new.n_features, x_new.n_times) != (model.n_features, model.n_times):
        raise DimensionMismatch(
            f"model expects (*, {model.n_features}, {model.n_times}), got {x_new.shape}"
        )
    x_rem, _, _ = preprocess(x_new, stats=model.stats)
    out = np.zeros((x_new.n_samples, model.rank))
    for r in range(model.rank):
        f = model.feature_loadings[:, r]
        t = model.time_loadings[:, r]
        u = mode23_contract(x_rem, f, t)
        x_rem = rank1_subtract(x_rem, u, f, t)
        out[:, r] = u
    return out


def feature_importance(model: SteModel) -> np.ndarray:
    """Per-feature activation: sum over components of squared feature loadings."""
    return (model.feature_loadings**2).sum(axis=1)


def select_top_k(fi, k: int) -> list[int]:
    """Indices of the ``k`` largest importances (ties to the lower index), ascending."""
    fi = np.asarray(fi, dtype=float)
    if not 1 <= k <= fi.size:
        raise BadK(f"k must be in [1, {fi.size}], got {k}")
    order = np.lexsort((np.arange(fi.size), -fi))
    return sorted(int(i) for i in order[:k])


@dataclass(frozen=True)
class CpModel:
    rank: int
    weights: np.ndarray
    samples: np.ndarray
    features: np.ndarray
    times: np.ndarray
    fit: float
    fit_history: np.ndarray
    iterations: int

    def reconstruct(self) -> np.ndarray:
        return np.einsum("r,nr,jr,kr->njk", self.weights, self.samples, self.features, self.times)


def _cp_sweeps(x, rank, tol, max_iter, rng):
    n, j, k = x.shape
    b = rng.standard_normal((j, rank))
    c = rng.standard_normal((k, rank))
    a = np.zeros((n, rank))
    lam = np.ones(rank)
    xnorm = np.linalg.norm(x)
    if xnorm < ZERO_NORM:
        raise SingularSystem("cannot decompose a zero tensor")

    history = []
    fit_old = -np.inf
    it = 0
    for it in range(1, max_iter + 1):
        # each factor update is the least-squares solution against the Khatri-Rao
        # product of the other two, written as an einsum MTTKRP
        a = cholesky_solve((b.T @ b) * (c.T @ c), np.einsum("njk,jr,kr->rn", x, b, c)).T
        a, _ = _normalize(a)
        b = cholesky_solve((a.T @ a) * (c.T @ c), np.einsum("njk,nr,kr->rj", x, a, c)).T
        b, _ = _normalize(b)
        c = cholesky_solve((a.T @ a) * (b.T @ b), np.einsum("njk,nr,jr->rk", x, a, b)).T
        c, lam = _normalize(c)

        xhat = np.einsum("r,nr,jr,kr->njk", lam, a, b, c)
        fit = 1.0 - np.linalg.norm(x - xhat) / xnorm
        history.append(fit)
        if abs(fit - fit_old) < tol:
            break
        fit_old = fit
    return a, b, c, lam, np.array(history), it


def _normalize(m):
    norms = np.linalg.norm(m, axis=0)
    if np.any(norms < ZERO_NORM):
        raise SingularSystem("a CP factor column collapsed to zero")
    return m / norms, norms


def cp_als(
    x: Tensor3,
    rank: int,
    tol: float = 1e-8,
    max_iter: int = 500,
    seed: int = 0,
) -> CpModel:
    """Unsupervised CP decomposition by alternating least squares.

    ``x`` is used as given (impute and center it first). Factors get
    unit-norm columns, magnitudes go to ``weights``, components are sorted
    by descending weight, and signs follow the feature factor's
    largest-entry-positive convention (then the time factor's), with the
    sample factor absorbing the flips. One restart with a fresh
    seed-derived initialization is attempted on a singular subproblem.
    """
    if rank < 1:
        raise BadRank(f"rank must be >= 1, got {rank}")
    if not x.fully_observed:
        raise ValueError("cp_als requires a fully observed tensor; impute first")
    seeds = np.random.SeedSequence(seed).spawn(2)
    last_exc: Optional[Exception] = None
    for ss in seeds:
        try:
            a, b, c, lam, hist, it = _cp_sweeps(x.values, rank, tol, max_iter, np.random.default_rng(ss))
            break
        except SingularSystem as exc:
            last_exc = exc
            logger.info("cp_als restart after singular subproblem: %s", exc)
    else:
        raise SingularSystem(f"cp_als failed after restart: {last_exc}")

    for r in range(rank):
        # every flip is paired with a flip of the sample factor
        b[:, r], a[:, r] = sign_flip(b[:, r], a[:, r])
        c[:, r], a[:, r] = sign_flip(c[:, r], a[:, r])
    order = np.argsort(-lam, kind="stable")
    return CpModel(
        rank=rank,
        weights=lam[order],
        samples=a[:, order],
        features=b[:, order],
        times=c[:, order],
        fit=float(hist[-1]),
        fit_history=hist,
        iterations=it,
    )
