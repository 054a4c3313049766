"""Dense 3-way tensors and the contractions/preprocessing the models share.

Mode order is fixed throughout the package as (samples, features, time),
so a tensor of shape ``(N, J, K)`` holds ``x[n, j, k]`` = value of feature
``j`` for sample ``n`` in time bin ``k``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch

logger = logging.getLogger(__name__)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Tensor3:
    """Dense ``N x J x K`` real tensor with an observation mask.

    ``mask[n, j, k]`` is True when the cell was observed. Unobserved cells
    hold NaN until :func:`impute_mean` fills them.
    """

    values: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 3:
            raise DimensionMismatch(f"expected a 3-way array, got ndim={values.ndim}")
        if min(values.shape) < 1:
            raise DimensionMismatch(f"all dimensions must be >= 1, got {values.shape}")
        if self.mask is None:
            mask = ~np.isnan(values)
        else:
            mask = np.array(self.mask, dtype=bool, copy=True)
            if mask.shape != values.shape:
                raise DimensionMismatch(f"mask shape {mask.shape} != values shape {values.shape}")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def n_times(self) -> int:
        return self.values.shape[2]

    @property
    def fully_observed(self) -> bool:
        return bool(self.mask.all())

    @property
    def missing_rate(self) -> float:
        return float(1.0 - self.mask.mean())

    def take_samples(self, idx) -> "Tensor3":
        idx = np.asarray(idx, dtype=int)
        return Tensor3(self.values[idx], self.mask[idx])

    def take_features(self, idx) -> "Tensor3":
        idx = np.asarray(idx, dtype=int)
        return Tensor3(self.values[:, idx], self.mask[:, idx])


@dataclass(frozen=True)
class PreprocessStats:
    """Training-split statistics, applied unchanged to held-out data.

    ``fill`` holds the per-feature fallback means used by imputation;
    ``scale``/``center`` record which transforms were active.
    """

    cell_means: np.ndarray
    feature_min: np.ndarray
    feature_max: np.ndarray
    y_mean: float = 0.0
    fill: Optional[np.ndarray] = None
    scale: bool = True
    center: bool = True

    @property
    def n_features(self) -> int:
        return self.cell_means.shape[0]

    @property
    def n_times(self) -> int:
        return self.cell_means.shape[1]


def _require_observed(x: Tensor3, what: str) -> None:
    if not x.fully_observed:
        raise ValueError(f"{what} requires a fully observed tensor; impute first")


def mode1_vector_product(x: Tensor3, y) -> np.ndarray:
    """Contract the sample mode with ``y``: ``Z[j, k] = sum_n x[n, j, k] * y[n]``."""
    y = np.asarray(y, dtype=float)
    if y.shape != (x.n_samples,):
        raise DimensionMismatch(f"y has shape {y.shape}, expected ({x.n_samples},)")
    return np.tensordot(y, x.values, axes=(0, 0))


def mode23_contract(x: Tensor3, f, t) -> np.ndarray:
    """Per-sample score ``u[n] = sum_{j,k} x[n, j, k] f[j] t[k]``."""
    f = np.asarray(f, dtype=float)
    t = np.asarray(t, dtype=float)
    if f.shape != (x.n_features,) or t.shape != (x.n_times,):
        raise DimensionMismatch(
            f"loading shapes {f.shape}, {t.shape} do not match tensor {x.shape}"
        )
    return np.einsum("njk,j,k->n", x.values, f, t)


def outer3(u, f, t) -> np.ndarray:
    return np.einsum("n,j,k->njk", u, f, t)


def rank1_subtract(x: Tensor3, u, f, t) -> Tensor3:
    """Return ``x - u o f o t``."""
    u = np.asarray(u, dtype=float)
    f = np.asarray(f, dtype=float)
    t = np.asarray(t, dtype=float)
    if u.shape != (x.n_samples,) or f.shape != (x.n_features,) or t.shape != (x.n_times,):
        raise DimensionMismatch(
            f"factor shapes {u.shape}, {f.shape}, {t.shape} do not match tensor {x.shape}"
        )
    return Tensor3(x.values - outer3(u, f, t), x.mask)


def unfold_mode1(x: Tensor3) -> np.ndarray:
    """Mode-1 matricization, ``N x (J*K)``; column ``j*K + k`` holds cell ``(j, k)``."""
    n, j, k = x.shape
    return x.values.reshape(n, j * k).copy()


def refold_mode1(mat, n_features: int, n_times: int) -> Tensor3:
    """Inverse of :func:`unfold_mode1`."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[1] != n_features * n_times:
        raise DimensionMismatch(
            f"cannot refold {mat.shape} into (*, {n_features}, {n_times})"
        )
    return Tensor3(mat.reshape(mat.shape[0], n_features, n_times))


def impute_mean(x: Tensor3, fill=None) -> tuple[Tensor3, np.ndarray]:
    """Fill unobserved cells with the mean of the sample's own feature series.

    A series with no observed cells falls back to ``fill[j]``; when ``fill``
    is not given it is computed as the mean of feature ``j`` over all
    observed cells of ``x`` (0 with a warning when the feature has none).

    Returns the imputed tensor and the per-feature fallback vector, which a
    caller should reuse on held-out data.
    """
    vals = np.where(x.mask, x.values, 0.0)
    counts_nj = x.mask.sum(axis=2)
    if fill is None:
        counts_j = x.mask.sum(axis=(0, 2))
        fill = np.zeros(x.n_features)
        seen = counts_j > 0
        fill[seen] = vals.sum(axis=(0, 2))[seen] / counts_j[seen]
        if not seen.all():
            empty = np.flatnonzero(~seen).tolist()
            warnings.warn(
                f"features {empty} have no observed values; filled with 0",
                RuntimeWarning,
                stacklevel=2,
            )
    else:
        fill = np.asarray(fill, dtype=float)
        if fill.shape != (x.n_features,):
            raise DimensionMismatch(f"fill has shape {fill.shape}, expected ({x.n_features},)")
    if x.fully_observed:
        return x, fill

    with np.errstate(invalid="ignore", divide="ignore"):
        series_mean = vals.sum(axis=2) / counts_nj
    series_mean = np.where(counts_nj > 0, series_mean, fill[None, :])
    out = np.where(x.mask, x.values, series_mean[:, :, None])
    return Tensor3(out, np.ones_like(x.mask)), fill


def _apply_transform(x: np.ndarray, stats: PreprocessStats) -> np.ndarray:
    out = x
    if stats.scale:
        span = stats.feature_max - stats.feature_min
        safe = np.where(span > 0, span, 1.0)
        out = (out - stats.feature_min[None, :, None]) / safe[None, :, None]
        out = np.where((span > 0)[None, :, None], out, 0.0)
    if stats.center:
        out = out - stats.cell_means[None, :, :]
    return out


def center_and_scale(
    x: Tensor3,
    y=None,
    stats: Optional[PreprocessStats] = None,
    *,
    scale: bool = True,
    center: bool = True,
) -> tuple[Tensor3, Optional[np.ndarray], PreprocessStats]:
    """Min-max scale each feature to [0, 1], then center every (feature, time) cell.

    Without ``stats`` the transform is estimated from ``x``/``y`` (training
    mode). With ``stats`` the stored transform is applied as-is and the
    ``scale``/``center`` keywords are ignored. ``y`` may be None when only
    the tensor needs transforming.
    """
    _require_observed(x, "center_and_scale")
    if stats is None:
        if scale:
            fmin = x.values.min(axis=(0, 2))
            fmax = x.values.max(axis=(0, 2))
        else:
            fmin = np.zeros(x.n_features)
            fmax = np.ones(x.n_features)
        proto = PreprocessStats(
            cell_means=np.zeros((x.n_features, x.n_times)),
            feature_min=fmin,
            feature_max=fmax,
            scale=scale,
            center=False,
        )
        scaled = _apply_transform(x.values, proto)
        cell_means = scaled.mean(axis=0) if center else np.zeros((x.n_features, x.n_times))
        y_mean = float(np.mean(y)) if (center and y is not None) else 0.0
        stats = PreprocessStats(
            cell_means=_frozen(cell_means),
            feature_min=_frozen(fmin),
            feature_max=_frozen(fmax),
            y_mean=y_mean,
            scale=scale,
            center=center,
        )
    elif (stats.n_features, stats.n_times) != (x.n_features, x.n_times):
        raise DimensionMismatch(
            f"stats are for ({stats.n_features}, {stats.n_times}) cells, tensor is {x.shape}"
        )

    xt = Tensor3(_apply_transform(x.values, stats), x.mask)
    yt = None
    if y is not None:
        y = np.asarray(y, dtype=float)
        if y.shape != (x.n_samples,):
            raise DimensionMismatch(f"y has shape {y.shape}, expected ({x.n_samples},)")
        yt = y - stats.y_mean
    return xt, yt, stats


@dataclass(frozen=True)
class Preprocess:
    """Which preprocessing steps a fit applies."""

    impute: bool = True
    scale: bool = True
    center: bool = True


def preprocess(
    x: Tensor3,
    y=None,
    stats: Optional[PreprocessStats] = None,
    flags: Preprocess = Preprocess(),
) -> tuple[Tensor3, Optional[np.ndarray], PreprocessStats]:
    """Impute (if needed) then :func:`center_and_scale`; stats carry the imputation fill."""
    fill = None if stats is None else stats.fill
    if not x.fully_observed:
        if not flags.impute and stats is None:
            raise ValueError("tensor has missing cells and imputation is disabled")
        x, fill = impute_mean(x, fill)
    elif stats is None and flags.impute:
        _, fill = impute_mean(x)
    xt, yt, st = center_and_scale(x, y, stats, scale=flags.scale, center=flags.center)
    if stats is None and fill is not None:
        st = PreprocessStats(
            cell_means=st.cell_means,
            feature_min=st.feature_min,
            feature_max=st.feature_max,
            y_mean=st.y_mean,
            fill=_frozen(fill),
            scale=st.scale,
            center=st.center,
        )
    return xt, yt, st

