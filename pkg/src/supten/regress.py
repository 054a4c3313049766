"""Regression functions applied to latent score matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NonFinite
from .linalg import solve_ridge

KINDS = ("ols", "ridge", "svr")


@dataclass(frozen=True)
class RegressorSpec:
    """Regressor kind plus its hyperparameters.

    ``lam`` applies to ridge, ``C``/``epsilon`` to the linear SVR.
    """

    kind: str = "ols"
    lam: float = 0.0
    C: float = 1.0
    epsilon: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown regressor kind {self.kind!r}; expected one of {KINDS}")
        if self.lam < 0 or self.C <= 0 or self.epsilon < 0:
            raise ValueError(f"invalid hyperparameters in {self}")

    @property
    def label(self) -> str:
        if self.kind == "ridge":
            return f"ridge(lam={self.lam:g})"
        if self.kind == "svr":
            return f"svr(C={self.C:g},eps={self.epsilon:g})"
        return "ols"


def expand_grid(kinds, lams=(1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0), Cs=(0.1, 1.0, 10.0), epsilons=(0.01, 0.1)):
    """All regressor specs for the requested kinds over the hyperparameter grids."""
    specs = []
    for kind in kinds:
        kind = kind.lower()
        if kind == "ols":
            specs.append(RegressorSpec("ols"))
        elif kind == "ridge":
            specs.extend(RegressorSpec("ridge", lam=float(lam)) for lam in lams)
        elif kind == "svr":
            specs.extend(
                RegressorSpec("svr", C=float(c), epsilon=float(e)) for c in Cs for e in epsilons
            )
        else:
            raise ValueError(f"unknown regressor kind {kind!r}")
    return specs


@dataclass(frozen=True)
class Regressor:
    """Fitted affine map ``yhat = U @ coef + intercept``.

    ``checkpoints`` records the SVR objective of the best iterate so far
    every 500 steps (empty for least-squares kinds).
    """

    spec: RegressorSpec
    coef: np.ndarray
    intercept: float
    checkpoints: tuple = field(default=())

    def predict(self, u_new) -> np.ndarray:
        return predict(self, u_new)


def fit_regressor(spec: RegressorSpec, u, y) -> Regressor:
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.ndim != 2 or y.shape != (u.shape[0],):
        raise DimensionMismatch(f"scores {u.shape} incompatible with target {y.shape}")
    if u.shape[0] < 2:
        raise ValueError("need at least two samples to fit a regressor")
    u_mean = u.mean(axis=0)
    y_mean = float(y.mean())
    uc = u - u_mean
    yc = y - y_mean

    if spec.kind in ("ols", "ridge"):
        lam = spec.lam if spec.kind == "ridge" else 0.0
        coef = solve_ridge(uc, yc, lam)
        checkpoints = ()
        b0 = 0.0
    else:
        coef, b0, checkpoints = _svr_subgradient(uc, yc, spec.C, spec.epsilon)
    intercept = y_mean + b0 - float(u_mean @ coef)
    if not (np.all(np.isfinite(coef)) and np.isfinite(intercept)):
        raise NonFinite(f"{spec.label} produced non-finite coefficients")
    return Regressor(spec, coef, intercept, checkpoints)


def svr_objective(u, y, coef, intercept, C, epsilon) -> float:
    """``C * sum(max(0, |y - u coef - b| - eps)) + 0.5 ||coef||^2``."""
    resid = np.abs(y - u @ coef - intercept)
    return float(C * np.maximum(resid - epsilon, 0.0).sum() + 0.5 * coef @ coef)


def _svr_subgradient(uc, yc, C, epsilon, steps=5000, every=500):
    """Deterministic subgradient descent on the linear epsilon-SVR objective.

    Works in standardized coordinates (columns of ``uc`` and ``yc`` scaled to
    unit std) on the objective divided by ``C * N``, which has the same
    minimizer, with step ``1 / t`` from a zero start. The best iterate seen
    is returned.
    """
    n, p = uc.shape
    su = uc.std(axis=0)
    su = np.where(su > 0, su, 1.0)
    sy = float(yc.std()) or 1.0
    us = uc / su
    ys = yc / sy
    eps = epsilon / sy
    # regularizer in original coordinates: 0.5 * sum((sy * w_j / su_j)^2)
    reg = (sy / su) ** 2 / (C * n * sy)

    w = np.zeros(p)
    b = 0.0

    def objective(w_, b_):
        coef = sy * w_ / su
        return svr_objective(uc, yc, coef, sy * b_, C, epsilon)

    best = (objective(w, b), w.copy(), b)
    checkpoints = []
    for t in range(1, steps + 1):
        resid = ys - us @ w - b
        active = np.abs(resid) > eps
        g_sign = -np.sign(resid) * active
        gw = us.T @ g_sign / n + reg * w
        gb = g_sign.sum() / n
        step = 1.0 / t
        w = w - step * gw
        b = b - step * gb
        if t % every == 0 or t == steps:
            obj = objective(w, b)
            if not np.isfinite(obj):
                raise NonFinite("SVR objective diverged")
            if obj < best[0]:
                best = (obj, w.copy(), b)
            if t % every == 0:
                # raw subgradient iterates are not monotone; record the incumbent
                checkpoints.append(best[0])
        elif (t & 15) == 0:
            obj = objective(w, b)
            if obj < best[0]:
                best = (obj, w.copy(), b)
    _, w, b = best
    return sy * w / su, sy * b, tuple(checkpoints)


def predict(reg: Regressor, u_new) -> np.ndarray:
    u_new = np.asarray(u_new, dtype=float)
    if u_new.ndim == 1:
        u_new = u_new[None, :]
    if u_new.shape[1] != reg.coef.shape[0]:
        raise DimensionMismatch(f"expected {reg.coef.shape[0]} score columns, got {u_new.shape[1]}")
    return u_new @ reg.coef + reg.intercept
