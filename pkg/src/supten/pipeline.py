"""Supervised tensor regression and the repeated nested cross-validation harness."""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .baselines import npls_fit, pls_fit_tensor
from .decomp import SteModel, cp_als, feature_importance, select_top_k, ste_fit, ste_project
from .errors import BadPlan, DimensionMismatch, NumericalError, SuptenError
from .linalg import cholesky_solve
from .metrics import score_all
from .regress import Regressor, RegressorSpec, fit_regressor
from .tensor import Preprocess, PreprocessStats, Tensor3, preprocess

logger = logging.getLogger(__name__)

METHODS = ("STR", "STE", "NPLS", "PLS", "CP")
_ALIASES = {"STE+G": "STE", "CP+G": "CP", "STR+G": "STR"}


def canonical_method(name: str) -> str:
    key = name.strip().upper()
    key = _ALIASES.get(key, key)
    if key not in METHODS:
        raise ValueError(f"unknown method {name!r}; expected one of {METHODS}")
    return key


# ---------------------------------------------------------------------------
# STR predictor
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StrPipeline:
    """STE on all features, top-K selection by activation, STE again, then g(U)."""

    first_pass: SteModel
    fi: np.ndarray
    selected: tuple
    second_pass: SteModel
    regressor: Regressor
    K: int
    R: int

    @property
    def y_mean(self) -> float:
        return self.second_pass.stats.y_mean

    @property
    def fitted(self) -> np.ndarray:
        return self.regressor.predict(self.second_pass.scores) + self.y_mean

    def predict(self, x_new: Tensor3) -> np.ndarray:
        return str_predict(self, x_new)


def _str_embed(x: Tensor3, y, K: int, R: int, flags: Preprocess):
    first = ste_fit(x, y, R, flags=flags)
    fi = feature_importance(first)
    selected = tuple(select_top_k(fi, K))
    if K == x.n_features:
        second = first
    else:
        second = ste_fit(x.take_features(selected), y, R, flags=flags)
    return first, fi, selected, second


def str_fit(
    x: Tensor3,
    y,
    K: int,
    R: int,
    g: RegressorSpec = RegressorSpec(),
    *,
    flags: Preprocess = Preprocess(),
) -> StrPipeline:
    first, fi, selected, second = _str_embed(x, y, K, R, flags)
    yc = np.asarray(y, dtype=float) - second.stats.y_mean
    reg = fit_regressor(g, second.scores, yc)
    return StrPipeline(first, fi, selected, second, reg, K, R)


def str_predict(p: StrPipeline, x_new: Tensor3) -> np.ndarray:
    if x_new.n_features != p.first_pass.n_features:
        raise DimensionMismatch(
            f"pipeline expects {p.first_pass.n_features} features, got {x_new.n_features}"
        )
    scores = ste_project(p.second_pass, x_new.take_features(p.selected))
    return p.regressor.predict(scores) + p.y_mean


# ---------------------------------------------------------------------------
# CP + g
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CpEmbedding:
    """Unsupervised CP on the preprocessed training tensor.

    Sample scores for any tensor are the least-squares coefficients against
    the fixed feature/time factors, so train and test use the same map.
    """

    cp: object
    stats: PreprocessStats

    def transform(self, x_new: Tensor3) -> np.ndarray:
        xc, _, _ = preprocess(x_new, stats=self.stats)
        b, c = self.cp.features, self.cp.times
        gram = (b.T @ b) * (c.T @ c)
        rhs = np.einsum("njk,jr,kr->rn", xc.values, b, c)
        return cholesky_solve(gram, rhs).T


@dataclass(frozen=True)
class CpRegression:
    embedding: CpEmbedding
    regressor: Regressor
    R: int

    def predict(self, x_new: Tensor3) -> np.ndarray:
        return self.regressor.predict(self.embedding.transform(x_new)) + self.embedding.stats.y_mean


def _cp_embed(x: Tensor3, y, R: int, flags: Preprocess, seed: int) -> CpEmbedding:
    xc, _, stats = preprocess(x, y, flags=flags)
    return CpEmbedding(cp_als(xc, R, seed=seed), stats)


# ---------------------------------------------------------------------------
# Candidates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodSpec:
    """One method and its hyperparameter grid.

    ``k_grid`` only matters for STR (empty means no selection); NPLS and PLS
    ignore ``regressors``.
    """

    name: str
    k_grid: tuple = ()
    r_grid: tuple = (1, 2, 3)
    regressors: tuple = (RegressorSpec(),)

    def __post_init__(self):
        object.__setattr__(self, "name", canonical_method(self.name))
        object.__setattr__(self, "k_grid", tuple(int(k) for k in self.k_grid))
        object.__setattr__(self, "r_grid", tuple(int(r) for r in self.r_grid))
        object.__setattr__(self, "regressors", tuple(self.regressors))
        if not self.r_grid or any(r < 1 for r in self.r_grid):
            raise ValueError("r_grid must be non-empty with entries >= 1")
        if any(k < 1 for k in self.k_grid):
            raise ValueError("k_grid entries must be >= 1")
        if self.name in ("STR", "STE", "CP") and not self.regressors:
            raise ValueError(f"{self.name} needs at least one regressor")


@dataclass(frozen=True)
class Candidate:
    method: str
    K: Optional[int]
    R: int
    reg: Optional[RegressorSpec] = None

    @property
    def embed_key(self):
        return (self.method, self.K, self.R)

    @property
    def reg_label(self) -> str:
        return self.reg.label if self.reg is not None else "builtin"


def candidates(spec: MethodSpec, n_features: int) -> list[Candidate]:
    """Expand a method grid into concrete configurations, in grid order."""
    out = []
    if spec.name == "STR":
        ks = spec.k_grid or (n_features,)
        ks = list(dict.fromkeys(min(k, n_features) for k in ks))
    elif spec.name == "STE":
        ks = [n_features]
    else:
        ks = [None]
    for k in ks:
        for r in spec.r_grid:
            if spec.name in ("NPLS", "PLS"):
                out.append(Candidate(spec.name, k, r))
            else:
                out.extend(Candidate(spec.name, k, r, g) for g in spec.regressors)
    return out


def _embed(key, x, y, flags, seed):
    """Fit the regressor-independent part of a candidate: (train scores, y mean, fitted parts)."""
    method, K, R = key
    if method in ("STR", "STE"):
        first, fi, selected, second = _str_embed(x, y, K, R, flags)
        return second.scores, second.stats.y_mean, (first, fi, selected, second)
    if method == "CP":
        emb = _cp_embed(x, y, R, flags, seed)
        return emb.transform(x), emb.stats.y_mean, emb
    raise ValueError(f"{method} has no separate embedding step")


def _assemble(cand: Candidate, embedded, reg: Regressor):
    if cand.method in ("STR", "STE"):
        first, fi, selected, second = embedded
        return StrPipeline(first, fi, selected, second, reg, cand.K, cand.R)
    return CpRegression(embedded, reg, cand.R)


def fit_candidate(cand: Candidate, x: Tensor3, y, flags: Preprocess = Preprocess(), seed: int = 0):
    """Fit one configuration on training data; the result has ``.predict(tensor)``."""
    if cand.method == "NPLS":
        return npls_fit(x, y, cand.R, flags=flags)
    if cand.method == "PLS":
        return pls_fit_tensor(x, y, cand.R, flags=flags)
    scores, y_mean, embedded = _embed(cand.embed_key, x, y, flags, seed)
    reg = fit_regressor(cand.reg, scores, np.asarray(y, dtype=float) - y_mean)
    return _assemble(cand, embedded, reg)


def score_candidates(cands, x_tr, y_tr, x_va, y_va, flags, seed_of, use_spearman=False):
    """Validation metrics for every candidate; None where fitting failed.

    Candidates sharing an embedding reuse a single embedding fit.
    ``seed_of(i)`` gives the CP seed for the i-th distinct embedding.
    """
    results = [None] * len(cands)
    groups: dict = {}
    for i, c in enumerate(cands):
        groups.setdefault(c.embed_key, []).append(i)
    for gi, (key, idxs) in enumerate(groups.items()):
        method = key[0]
        try:
            if method in ("NPLS", "PLS"):
                model = fit_candidate(cands[idxs[0]], x_tr, y_tr, flags)
                results[idxs[0]] = score_all(y_va, model.predict(x_va), use_spearman)
                continue
            scores, y_mean, embedded = _embed(key, x_tr, y_tr, flags, seed_of(gi))
            if method == "CP":
                va_scores = embedded.transform(x_va)
            else:
                _, _, selected, second = embedded
                va_scores = ste_project(second, x_va.take_features(selected))
        except SuptenError as exc:
            logger.debug("embedding %s failed: %s", key, exc)
            continue
        yc = np.asarray(y_tr, dtype=float) - y_mean
        for i in idxs:
            try:
                reg = fit_regressor(cands[i].reg, scores, yc)
            except SuptenError as exc:
                logger.debug("regressor %s failed: %s", cands[i].reg_label, exc)
                continue
            results[i] = score_all(y_va, reg.predict(va_scores) + y_mean, use_spearman)
    return results


# ---------------------------------------------------------------------------
# CV plan
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    test: np.ndarray
    inner: tuple  # ((train, validation), ...) as absolute sample indices


@dataclass(frozen=True)
class CvPlan:
    outer_folds: int
    inner_folds: int
    repeats: int
    master_seed: int
    splits: tuple  # splits[repeat][fold] -> Split

    def iter_splits(self):
        for rep, folds in enumerate(self.splits):
            for f, split in enumerate(folds):
                yield rep, f, split


def _kfold(indices: np.ndarray, k: int, rng: np.random.Generator):
    perm = indices[rng.permutation(indices.size)]
    parts = np.array_split(perm, k)
    return [(np.sort(np.concatenate(parts[:i] + parts[i + 1 :])), np.sort(parts[i])) for i in range(k)]


def make_plan(n: int, outer_folds: int = 5, inner_folds: int = 3, repeats: int = 20, seed: int = 0) -> CvPlan:
    """Seeded repeated nested K-fold partitions of ``n`` samples."""
    if outer_folds < 2 or inner_folds < 2 or repeats < 1:
        raise BadPlan("need outer_folds >= 2, inner_folds >= 2 and repeats >= 1")
    if n // outer_folds < 2:
        raise BadPlan(f"{n} samples cannot form {outer_folds} outer folds of >= 2 samples")
    min_train = n - -(-n // outer_folds)
    if min_train // inner_folds < 2:
        raise BadPlan(f"outer training sets of {min_train} samples cannot form {inner_folds} inner folds of >= 2")
    all_idx = np.arange(n)
    splits = []
    for rep in range(repeats):
        rng = np.random.default_rng(np.random.SeedSequence([seed, rep]))
        folds = []
        for f, (tr, te) in enumerate(_kfold(all_idx, outer_folds, rng)):
            irng = np.random.default_rng(np.random.SeedSequence([seed, rep, f]))
            folds.append(Split(tr, te, tuple(_kfold(tr, inner_folds, irng))))
        splits.append(tuple(folds))
    return CvPlan(outer_folds, inner_folds, repeats, seed, tuple(splits))


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Nested CV
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldResult:
    method: str
    repeat: int
    fold: int
    candidate: Optional[Candidate]
    metrics: Optional[dict]
    inner_scores: tuple  # (mean r2, mean rho) per candidate in grid order
    error: Optional[str] = None


@dataclass(frozen=True)
class ReportRow:
    method: str
    target: str
    K: Optional[int]
    R: Optional[int]
    regressor: str
    r2_mean: float
    r2_std: float
    rho_mean: float
    rho_std: float
    rmse_mean: float
    rmse_std: float
    n_folds: int
    seed: int


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    folds: list = field(default_factory=list)

    def extend(self, other: "EvalReport") -> "EvalReport":
        self.rows.extend(other.rows)
        self.folds.extend(other.folds)
        return self

    def row(self, method: str, target: Optional[str] = None) -> ReportRow:
        method = canonical_method(method)
        for r in self.rows:
            if r.method == method and (target is None or r.target == target):
                return r
        raise KeyError((method, target))


def _select(cands, per_fold):
    """Best candidate by mean inner R^2, Pearson as tie-break, then grid order."""
    summary = []
    for i in range(len(cands)):
        vals = [fold[i] for fold in per_fold]
        if any(v is None or not np.isfinite(v["r2"]) for v in vals):
            summary.append((-np.inf, -np.inf))
            continue
        rhos = [v["rho"] for v in vals]
        rho = float(np.mean(rhos)) if all(np.isfinite(rhos)) else -np.inf
        summary.append((float(np.mean([v["r2"] for v in vals])), rho))
    best = max(range(len(cands)), key=lambda i: (summary[i][0], summary[i][1], -i))
    return best, tuple(summary)


def _run_fold(args):
    method_idx, spec, rep, f, split, x, y, flags, seed, use_spearman = args
    cands = candidates(spec, x.n_features)
    inner_summary = ()
    if len(cands) == 1:
        best = 0
    else:
        per_fold = []
        for i, (tr, va) in enumerate(split.inner):
            per_fold.append(
                score_candidates(
                    cands, x.take_samples(tr), y[tr], x.take_samples(va), y[va], flags,
                    lambda g, i=i: derive_seed(seed, method_idx, rep, f, i + 1, g),
                    use_spearman,
                )
            )
        best, inner_summary = _select(cands, per_fold)
        if not np.isfinite(inner_summary[best][0]):
            return FoldResult(spec.name, rep, f, None, None, inner_summary, "every grid cell failed")
    cand = cands[best]
    g_index = list(dict.fromkeys(c.embed_key for c in cands)).index(cand.embed_key)
    try:
        model = fit_candidate(
            cand, x.take_samples(split.train), y[split.train], flags,
            derive_seed(seed, method_idx, rep, f, 0, g_index),
        )
        yhat = model.predict(x.take_samples(split.test))
    except SuptenError as exc:
        return FoldResult(spec.name, rep, f, cand, None, inner_summary, f"{type(exc).__name__}: {exc}")
    metrics = score_all(y[split.test], yhat, use_spearman)
    return FoldResult(spec.name, rep, f, cand, metrics, inner_summary)


def _mean_std(vals):
    vals = np.asarray([v for v in vals if np.isfinite(v)], dtype=float)
    if vals.size == 0:
        return float("nan"), float("nan")
    return float(vals.mean()), float(vals.std(ddof=1)) if vals.size > 1 else 0.0


def _summarize(spec, folds, target, seed, n_features) -> ReportRow:
    ok = [fr for fr in folds if fr.metrics is not None]
    chosen = Counter(fr.candidate for fr in ok)
    if chosen:
        top = max(chosen.values())
        # most frequent configuration, earliest in grid order on ties
        cand = next(c for c in candidates(spec, n_features) if chosen[c] == top)
        K, R, reg = cand.K, cand.R, cand.reg_label
    else:
        K, R, reg = None, None, ""
    r2 = _mean_std([fr.metrics["r2"] for fr in ok])
    rho = _mean_std([fr.metrics["rho"] for fr in ok])
    err = _mean_std([fr.metrics["rmse"] for fr in ok])
    return ReportRow(spec.name, target, K, R, reg, *r2, *rho, *err, len(ok), seed)


def nested_cv(
    x: Tensor3,
    y,
    methods: Sequence[MethodSpec],
    plan: CvPlan,
    *,
    target: str = "y",
    flags: Preprocess = Preprocess(),
    jobs: int = 1,
    use_spearman: bool = False,
) -> EvalReport:
    """Repeated nested CV over every method's grid.

    Per outer fold the grid is searched on the inner folds of the outer
    training set, the winner is refit on the whole outer training set, and
    the untouched outer test fold is scored. Failed grid cells score -inf;
    failed outer folds are kept in ``report.folds`` with an error and left
    out of the summary rows.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (x.n_samples,):
        raise DimensionMismatch(f"y has shape {y.shape}, expected ({x.n_samples},)")
    n_plan = sum(s.train.size + s.test.size for s in plan.splits[0]) // plan.outer_folds
    if n_plan != x.n_samples:
        raise BadPlan(f"plan covers {n_plan} samples, data has {x.n_samples}")
    tasks = [
        (mi, spec, rep, f, split, x, y, flags, plan.master_seed, use_spearman)
        for mi, spec in enumerate(methods)
        for rep, f, split in plan.iter_splits()
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_run_fold(t) for t in tasks]

    report = EvalReport(folds=results)
    per_method = plan.repeats * plan.outer_folds
    for mi, spec in enumerate(methods):
        folds = results[mi * per_method : (mi + 1) * per_method]
        failed = sum(fr.metrics is None for fr in folds)
        if failed:
            logger.warning("%s: %d of %d outer folds failed", spec.name, failed, len(folds))
        report.rows.append(_summarize(spec, folds, target, plan.master_seed, x.n_features))
    return report


@dataclass(frozen=True)
class MeshResult:
    k_grid: tuple
    r_grid: tuple
    r2_mean: np.ndarray
    r2_std: np.ndarray
    rho_mean: np.ndarray
    rho_std: np.ndarray

    def argmax(self) -> tuple[int, int]:
        """(K, R) of the best mean R^2 cell."""
        masked = np.where(np.isfinite(self.r2_mean), self.r2_mean, -np.inf)
        i, j = np.unravel_index(int(np.argmax(masked)), masked.shape)
        return self.k_grid[i], self.r_grid[j]


def mesh_evaluate(
    x: Tensor3,
    y,
    k_grid,
    r_grid,
    g: RegressorSpec,
    plan: CvPlan,
    *,
    flags: Preprocess = Preprocess(),
    jobs: int = 1,
    use_spearman: bool = False,
) -> MeshResult:
    """Cross-validated STR score for every (K, R) cell with a fixed regressor."""
    k_grid, r_grid = tuple(int(k) for k in k_grid), tuple(int(r) for r in r_grid)
    specs = [MethodSpec("STR", (k,), (r,), (g,)) for k in k_grid for r in r_grid]
    # one nested_cv call keeps parallelism across cells
    report = nested_cv(x, y, specs, plan, flags=flags, jobs=jobs, use_spearman=use_spearman)
    shape = (len(k_grid), len(r_grid))
    cells = {}
    for mi in range(len(specs)):
        folds = report.folds[mi * plan.repeats * plan.outer_folds : (mi + 1) * plan.repeats * plan.outer_folds]
        ok = [fr.metrics for fr in folds if fr.metrics is not None]
        cells[mi] = (
            _mean_std([m["r2"] for m in ok]),
            _mean_std([m["rho"] for m in ok]),
        )
    arr = {name: np.full(shape, np.nan) for name in ("r2m", "r2s", "rhom", "rhos")}
    for mi, ((r2m, r2s), (rhom, rhos)) in cells.items():
        i, j = divmod(mi, len(r_grid))
        arr["r2m"][i, j], arr["r2s"][i, j] = r2m, r2s
        arr["rhom"][i, j], arr["rhos"][i, j] = rhom, rhos
    return MeshResult(k_grid, r_grid, arr["r2m"], arr["r2s"], arr["rhom"], arr["rhos"])


def select_candidate(
    x: Tensor3,
    y,
    spec: MethodSpec,
    n_folds: int = 3,
    seed: int = 0,
    *,
    flags: Preprocess = Preprocess(),
    use_spearman: bool = False,
) -> Candidate:
    """Pick the best grid configuration by plain K-fold CV on all of ``x``."""
    y = np.asarray(y, dtype=float)
    cands = candidates(spec, x.n_features)
    if len(cands) == 1:
        return cands[0]
    if x.n_samples // n_folds < 2:
        raise BadPlan(f"{x.n_samples} samples cannot form {n_folds} folds of >= 2")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    per_fold = [
        score_candidates(
            cands, x.take_samples(tr), y[tr], x.take_samples(va), y[va], flags,
            lambda g, i=i: derive_seed(seed, i + 1, g), use_spearman,
        )
        for i, (tr, va) in enumerate(_kfold(np.arange(x.n_samples), n_folds, rng))
    ]
    best, summary = _select(cands, per_fold)
    if not np.isfinite(summary[best][0]):
        raise NumericalError("every grid configuration failed")
    return cands[best]
