"""Synthetic CP-structured benchmark data with a controlled noise ratio.

``eta`` is the Frobenius-norm ratio of injected noise to clean signal, for
both the tensor and the target:

    X = X0 + eta * ||X0|| / ||E|| * E
    y = U q + eta * ||U q|| / ||e|| * e

Randomness comes from numpy's PCG64 generator (``default_rng(seed)``) with
its ziggurat normal sampler; draws happen in a fixed order (U, B, C, E, q,
e, distractors, mask) so the same seed always reproduces the same data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadSpec
from .tensor import Tensor3


@dataclass(frozen=True)
class SynthSpec:
    N: int = 100
    J: int = 20
    K: int = 15
    rank: int = 3
    eta: float = 0.1
    seed: int = 0
    distractor_features: int = 0
    missing_rate: float = 0.0
    # lower bound on |B| and |q| entries; 0 keeps plain standard normal draws
    loading_floor: float = 0.0

    def validate(self) -> None:
        if min(self.N, self.J, self.K) < 1:
            raise BadSpec(f"dimensions must be >= 1, got {(self.N, self.J, self.K)}")
        if not 1 <= self.rank <= min(self.N, self.J, self.K):
            raise BadSpec(f"rank must be in [1, {min(self.N, self.J, self.K)}], got {self.rank}")
        if self.eta < 0 or not np.isfinite(self.eta):
            raise BadSpec(f"eta must be finite and >= 0, got {self.eta}")
        if self.distractor_features < 0:
            raise BadSpec("distractor_features must be >= 0")
        if not 0.0 <= self.missing_rate < 1.0:
            raise BadSpec("missing_rate must be in [0, 1)")
        if self.loading_floor < 0 or not np.isfinite(self.loading_floor):
            raise BadSpec("loading_floor must be finite and >= 0")


@dataclass(frozen=True)
class SynthTruth:
    U: np.ndarray
    B: np.ndarray
    C: np.ndarray
    q: np.ndarray
    x_clean: np.ndarray
    y_clean: np.ndarray
    informative: tuple  # feature indices carrying signal


def _floor(a, floor):
    # sign(0) would zero an entry, so exact zeros go positive
    if floor <= 0:
        return a
    return np.where(a < 0, -1.0, 1.0) * np.maximum(np.abs(a), floor)


def generate(spec: SynthSpec) -> tuple[Tensor3, np.ndarray, SynthTruth]:
    """Draw a dataset; distractor features are appended after the informative ones.

    With ``loading_floor > 0`` every planted feature and component carries
    signal of at least that magnitude, so planted-recovery checks are not
    confounded by features whose loadings happen to be near zero.

    Each distractor slab is standard normal noise rescaled to the mean
    Frobenius norm of the informative feature slabs, so selection has to rely
    on covariance with y rather than magnitude.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    u = rng.standard_normal((spec.N, spec.rank))
    b = rng.standard_normal((spec.J, spec.rank))
    c = rng.standard_normal((spec.K, spec.rank))
    b = _floor(b, spec.loading_floor)
    x0 = np.einsum("nr,jr,kr->njk", u, b, c)
    e = rng.standard_normal(x0.shape)
    x = x0 + spec.eta * (np.linalg.norm(x0) / np.linalg.norm(e)) * e

    q = _floor(rng.standard_normal(spec.rank), spec.loading_floor)
    y0 = u @ q
    ey = rng.standard_normal(spec.N)
    y = y0 + spec.eta * (np.linalg.norm(y0) / np.linalg.norm(ey)) * ey

    if spec.distractor_features:
        slab_norm = np.linalg.norm(x, axis=(0, 2)).mean()
        d = rng.standard_normal((spec.N, spec.distractor_features, spec.K))
        d *= slab_norm / np.linalg.norm(d, axis=(0, 2))[None, :, None]
        x = np.concatenate([x, d], axis=1)

    mask = np.ones(x.shape, dtype=bool)
    if spec.missing_rate > 0:
        mask = rng.random(x.shape) >= spec.missing_rate
        x = np.where(mask, x, np.nan)

    truth = SynthTruth(u, b, c, q, x0, y0, tuple(range(spec.J)))
    return Tensor3(x, mask), y, truth
