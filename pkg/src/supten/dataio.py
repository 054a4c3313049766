"""CSV ingestion, experiment configuration and result serialization.

Tensor CSV (long format), one row per observed or missing cell::

    subject_id,feature,time_index,value
    s01,steps_mean,0,0.42
    s01,steps_mean,1,          <- empty value = missing

Targets CSV::

    subject_id,gpa,stress
    s01,3.2,
"""

from __future__ import annotations

import csv
import logging
import math
import os
import pickle
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .errors import ConfigError, DuplicateTriple, EmptyDataset, ParseError
from .pipeline import EvalReport, MeshResult, MethodSpec, ReportRow, canonical_method
from .regress import expand_grid
from .synth import SynthSpec
from .tensor import Preprocess, Tensor3

logger = logging.getLogger(__name__)

TENSOR_HEADER = ["subject_id", "feature", "time_index", "value"]
REPORT_COLUMNS = [f.name for f in fields(ReportRow)]


@dataclass(frozen=True)
class Dataset:
    x: Tensor3
    targets: dict  # construct name -> length-N float array, NaN = unanswered
    subjects: tuple
    features: tuple
    times: tuple

    def for_target(self, name: str) -> tuple["Dataset", np.ndarray]:
        """Restrict to subjects with a value for ``name``."""
        if name not in self.targets:
            raise KeyError(f"unknown target {name!r}; available: {sorted(self.targets)}")
        y = self.targets[name]
        keep = np.flatnonzero(~np.isnan(y))
        dropped = y.size - keep.size
        if dropped:
            logger.info("target %s: dropped %d subjects without a value", name, dropped)
        if keep.size == 0:
            raise EmptyDataset(f"no subject has a value for target {name!r}")
        sub = Dataset(
            self.x.take_samples(keep),
            {k: v[keep] for k, v in self.targets.items()},
            tuple(self.subjects[i] for i in keep),
            self.features,
            self.times,
        )
        return sub, y[keep]


def _parse_float(text, line, column):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", line, column) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {text!r}", line, column)
    return v


def read_long_csv(path) -> tuple[Tensor3, tuple, tuple, tuple]:
    """Parse a long-format tensor CSV; returns (tensor, subjects, features, times)."""
    records = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyDataset(f"{path} is empty")
        if [h.strip() for h in header] != TENSOR_HEADER:
            raise ParseError(f"expected header {','.join(TENSOR_HEADER)}", 1)
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 fields, got {len(row)}", line)
            subj, feat, t_text, v_text = (c.strip() for c in row)
            if not subj:
                raise ParseError("empty subject_id", line, "subject_id")
            if not feat:
                raise ParseError("empty feature", line, "feature")
            try:
                t = int(t_text)
            except ValueError:
                raise ParseError(f"bad time_index {t_text!r}", line, "time_index") from None
            if t < 0:
                raise ParseError("time_index must be >= 0", line, "time_index")
            v = _parse_float(v_text, line, "value") if v_text else None
            key = (subj, feat, t)
            if key in records:
                raise DuplicateTriple(f"duplicate triple {key}", line)
            records[key] = v
    if not records:
        raise EmptyDataset(f"{path} has no data rows")

    subjects = tuple(sorted({k[0] for k in records}))
    features = tuple(sorted({k[1] for k in records}))
    times = tuple(sorted({k[2] for k in records}))
    si = {s: i for i, s in enumerate(subjects)}
    fi = {f: i for i, f in enumerate(features)}
    ti = {t: i for i, t in enumerate(times)}
    values = np.full((len(subjects), len(features), len(times)), np.nan)
    for (s, f, t), v in records.items():
        if v is not None:
            values[si[s], fi[f], ti[t]] = v
    return Tensor3(values, ~np.isnan(values)), subjects, features, times


def read_targets_csv(path) -> tuple[tuple, dict]:
    """Parse a wide targets CSV into (subject ids, {construct: values})."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "subject_id" or len(header) < 2:
            raise ParseError("expected header subject_id,<construct>,...", 1)
        names = [h.strip() for h in header[1:]]
        subjects, cols = [], {n: [] for n in names}
        seen = set()
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
            subj = row[0].strip()
            if subj in seen:
                raise ParseError(f"duplicate subject {subj!r}", line, "subject_id")
            seen.add(subj)
            subjects.append(subj)
            for name, cell in zip(names, row[1:]):
                cell = cell.strip()
                cols[name].append(_parse_float(cell, line, name) if cell else np.nan)
    return tuple(subjects), {n: np.array(v, dtype=float) for n, v in cols.items()}


def load_tensor(csv_path, targets_path=None, target: Optional[str] = None) -> Dataset:
    """Load observations (and optionally targets) into a :class:`Dataset`.

    Subjects absent from the targets file get NaN targets. With ``target``
    given, subjects lacking that construct are dropped.
    """
    x, subjects, features, times = read_long_csv(csv_path)
    logger.info(
        "loaded %s: %d subjects x %d features x %d times, %.1f%% missing",
        csv_path, *x.shape, 100.0 * x.missing_rate,
    )
    targets = {}
    if targets_path is not None:
        t_subj, cols = read_targets_csv(targets_path)
        pos = {s: i for i, s in enumerate(t_subj)}
        for name, col in cols.items():
            targets[name] = np.array([col[pos[s]] if s in pos else np.nan for s in subjects])
    ds = Dataset(x, targets, subjects, features, times)
    if target is not None:
        ds, _ = ds.for_target(target)
    return ds


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def save_tensor(path, x: Tensor3, subjects=None, features=None, times=None) -> None:
    """Write a tensor in long format, including empty-valued rows for missing cells."""
    n, j, k = x.shape
    subjects = subjects or [f"s{i:04d}" for i in range(n)]
    features = features or [f"f{i:04d}" for i in range(j)]
    times = times or list(range(k))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TENSOR_HEADER)
        for a, s in enumerate(subjects):
            for b, f in enumerate(features):
                for c, t in enumerate(times):
                    v = float(x.values[a, b, c]) if x.mask[a, b, c] else None
                    w.writerow([s, f, t, _fmt(v)])


def save_targets(path, subjects, targets: dict) -> None:
    names = list(targets)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", *names])
        for i, s in enumerate(subjects):
            row = [s]
            for name in names:
                v = float(targets[name][i])
                row.append("" if math.isnan(v) else repr(v))
            w.writerow(row)


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

_SECTIONS = {
    "data": {"tensor", "targets"},
    "synth": {f.name for f in fields(SynthSpec)},
    "grid": {"K", "R", "regressors", "ridge_lambda", "svr_C", "svr_epsilon"},
    "cv": {"outer_folds", "inner_folds", "repeats", "seed"},
    "preprocess": {"impute", "scale", "center"},
    "metrics": {"spearman"},
    "fit": {"method", "target", "K", "R", "regressor", "lam", "C", "epsilon", "folds"},
}
_TOP = set(_SECTIONS) | {"targets", "methods", "output"}


@dataclass
class ExperimentConfig:
    tensor_path: Optional[Path] = None
    targets_path: Optional[Path] = None
    synth: Optional[SynthSpec] = None
    targets: list = field(default_factory=list)
    methods: list = field(default_factory=lambda: ["STR", "NPLS", "PLS"])
    k_grid: list = field(default_factory=list)
    r_grid: list = field(default_factory=lambda: [1, 2, 3])
    regressors: list = field(default_factory=lambda: ["ols", "ridge"])
    ridge_lambda: list = field(default_factory=lambda: [1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0])
    svr_C: list = field(default_factory=lambda: [0.1, 1.0, 10.0])
    svr_epsilon: list = field(default_factory=lambda: [0.01, 0.1])
    outer_folds: int = 5
    inner_folds: int = 3
    repeats: int = 20
    seed: int = 0
    flags: Preprocess = Preprocess()
    spearman: bool = False
    fit: dict = field(default_factory=dict)
    output: Optional[Path] = None

    def regressor_specs(self) -> tuple:
        return tuple(expand_grid(self.regressors, self.ridge_lambda, self.svr_C, self.svr_epsilon))

    def method_specs(self) -> list:
        regs = self.regressor_specs()
        return [MethodSpec(m, tuple(self.k_grid), tuple(self.r_grid), regs) for m in self.methods]


def _check_keys(section: str, mapping, allowed) -> None:
    if not isinstance(mapping, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def parse_config(doc: dict, base_dir=".") -> ExperimentConfig:
    """Validate a config mapping; unknown keys anywhere are an error."""
    if doc is None:
        doc = {}
    _check_keys("<root>", doc, _TOP)
    for name, allowed in _SECTIONS.items():
        if name in doc:
            _check_keys(name, doc[name], allowed)
    base = Path(base_dir)
    cfg = ExperimentConfig()
    data = doc.get("data")
    if data:
        if "tensor" not in data:
            raise ConfigError("data.tensor is required")
        cfg.tensor_path = base / data["tensor"]
        if data.get("targets"):
            cfg.targets_path = base / data["targets"]
    if "synth" in doc:
        try:
            cfg.synth = SynthSpec(**doc["synth"])
            cfg.synth.validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad synth section: {exc}") from exc
    if cfg.tensor_path is None and cfg.synth is None:
        raise ConfigError("config needs a data or synth section")

    cfg.targets = [str(t) for t in _as_list(doc.get("targets", []))]
    if "methods" in doc:
        cfg.methods = _as_list(doc["methods"])
    try:
        cfg.methods = [canonical_method(str(m)) for m in cfg.methods]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not cfg.methods:
        raise ConfigError("methods must be non-empty")

    grid = doc.get("grid", {})
    cfg.k_grid = [int(k) for k in _as_list(grid.get("K", cfg.k_grid))]
    cfg.r_grid = [int(r) for r in _as_list(grid.get("R", cfg.r_grid))]
    cfg.regressors = [str(r).lower() for r in _as_list(grid.get("regressors", cfg.regressors))]
    cfg.ridge_lambda = [float(v) for v in _as_list(grid.get("ridge_lambda", cfg.ridge_lambda))]
    cfg.svr_C = [float(v) for v in _as_list(grid.get("svr_C", cfg.svr_C))]
    cfg.svr_epsilon = [float(v) for v in _as_list(grid.get("svr_epsilon", cfg.svr_epsilon))]
    for name in ("r_grid", "regressors", "ridge_lambda", "svr_C", "svr_epsilon"):
        if not getattr(cfg, name):
            raise ConfigError(f"grid {name} must be non-empty")
    if "K" in grid and not cfg.k_grid:
        raise ConfigError("grid K must be non-empty")
    try:
        cfg.method_specs()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    cv = doc.get("cv", {})
    cfg.outer_folds = int(cv.get("outer_folds", cfg.outer_folds))
    cfg.inner_folds = int(cv.get("inner_folds", cfg.inner_folds))
    cfg.repeats = int(cv.get("repeats", cfg.repeats))
    cfg.seed = int(cv.get("seed", cfg.seed))
    cfg.flags = Preprocess(**{k: bool(v) for k, v in doc.get("preprocess", {}).items()})
    cfg.spearman = bool(doc.get("metrics", {}).get("spearman", False))
    cfg.fit = dict(doc.get("fit", {}))
    if doc.get("output"):
        cfg.output = base / doc["output"]
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(doc, path.parent)


# ---------------------------------------------------------------------------
# Reports, meshes, predictions
# ---------------------------------------------------------------------------


def _header_lines(timestamp: bool):
    if timestamp:
        return [f"# generated {datetime.now(timezone.utc).isoformat(timespec='seconds')}\n"]
    return []


def save_report(report: EvalReport, path, *, timestamp: bool = False) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.writelines(_header_lines(timestamp))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in report.rows:
            w.writerow([_fmt(getattr(row, c)) for c in REPORT_COLUMNS])


def _uncommented(fh):
    return (line for line in fh if not line.startswith("#"))


def load_report(path) -> EvalReport:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(_uncommented(fh))
        if reader.fieldnames != REPORT_COLUMNS:
            raise ParseError(f"unexpected report header {reader.fieldnames}", 1)
        for rec in reader:
            opt_int = lambda s: int(s) if s else None  # noqa: E731
            rows.append(
                ReportRow(
                    method=rec["method"],
                    target=rec["target"],
                    K=opt_int(rec["K"]),
                    R=opt_int(rec["R"]),
                    regressor=rec["regressor"],
                    r2_mean=float(rec["r2_mean"]),
                    r2_std=float(rec["r2_std"]),
                    rho_mean=float(rec["rho_mean"]),
                    rho_std=float(rec["rho_std"]),
                    rmse_mean=float(rec["rmse_mean"]),
                    rmse_std=float(rec["rmse_std"]),
                    n_folds=int(rec["n_folds"]),
                    seed=int(rec["seed"]),
                )
            )
    return EvalReport(rows=rows)


def save_mesh(mesh: MeshResult, path, *, target: str = "y", timestamp: bool = False) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.writelines(_header_lines(timestamp))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target", "K", "R", "r2_mean", "r2_std", "rho_mean", "rho_std"])
        for i, k in enumerate(mesh.k_grid):
            for j, r in enumerate(mesh.r_grid):
                w.writerow([
                    target, k, r,
                    *(_fmt(float(a[i, j])) for a in (mesh.r2_mean, mesh.r2_std, mesh.rho_mean, mesh.rho_std)),
                ])


def save_predictions(path, subjects, yhat) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "prediction"])
        for s, v in zip(subjects, yhat):
            w.writerow([s, repr(float(v))])


# ---------------------------------------------------------------------------
# Models and factors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SavedModel:
    model: object
    method: str
    target: str
    subjects: tuple
    features: tuple
    times: tuple
    config: dict


def save_model(saved: SavedModel, path) -> None:
    with open(path, "wb") as fh:
        pickle.dump(saved, fh, protocol=pickle.HIGHEST_PROTOCOL)


def load_model(path) -> SavedModel:
    # models are produced locally by `fit`; only load files you created
    with open(path, "rb") as fh:
        saved = pickle.load(fh)
    if not isinstance(saved, SavedModel):
        raise ParseError(f"{path} is not a saved model")
    return saved


def _write_matrix(path, labels, mat, prefix="comp") -> None:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", *(f"{prefix}{r + 1}" for r in range(mat.shape[1]))])
        for lab, row in zip(labels, mat):
            w.writerow([lab, *(repr(float(v)) for v in row)])


def read_matrix(path) -> tuple[list, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        labels, rows = [], []
        for row in reader:
            labels.append(row[0])
            rows.append([float(v) for v in row[1:]])
    return labels, np.array(rows, dtype=float)


def factor_tables(model, subjects, features, times) -> dict:
    """Named (labels, matrix) tables describing a fitted model's factors."""
    from .baselines import NplsModel
    from .decomp import CpModel, SteModel
    from .pipeline import CpRegression, StrPipeline

    if isinstance(model, StrPipeline):
        sel = [features[i] for i in model.selected]
        tables = _ste_tables(model.second_pass, subjects, sel, times)
        tables["feature_importance"] = (list(features), model.fi[:, None])
        return tables
    if isinstance(model, SteModel):
        return _ste_tables(model, subjects, features, times)
    if isinstance(model, NplsModel):
        return {
            "scores": (list(subjects), model.scores),
            "feature_loadings": (list(features), model.feature_weights),
            "time_loadings": (list(times), model.time_weights),
            "coefficients": ([f"comp{r + 1}" for r in range(model.rank)], model.coef[:, None]),
        }
    if isinstance(model, CpRegression):
        model = model.embedding.cp
    if isinstance(model, CpModel):
        return {
            "scores": (list(subjects), model.samples),
            "feature_loadings": (list(features), model.features),
            "time_loadings": (list(times), model.times),
            "weights": ([f"comp{r + 1}" for r in range(model.rank)], model.weights[:, None]),
        }
    raise TypeError(f"{type(model).__name__} has no tensor factors to export")


def _ste_tables(m, subjects, features, times):
    return {
        "scores": (list(subjects), m.scores),
        "feature_loadings": (list(features), m.feature_loadings),
        "time_loadings": (list(times), m.time_loadings),
    }


def _model_dims(model) -> tuple[int, int, int]:
    from .pipeline import CpRegression, StrPipeline

    if isinstance(model, StrPipeline):
        return model.second_pass.scores.shape[0], model.fi.size, model.second_pass.n_times
    if isinstance(model, CpRegression):
        model = model.embedding.cp
    for names in (
        ("scores", "feature_loadings", "time_loadings"),
        ("scores", "feature_weights", "time_weights"),
        ("samples", "features", "times"),
    ):
        if all(hasattr(model, a) for a in names):
            return tuple(getattr(model, a).shape[0] for a in names)
    raise TypeError(f"{type(model).__name__} has no tensor factors to export")


def save_factors(model, path, subjects=None, features=None, times=None) -> list:
    """Write one CSV per factor table into directory ``path``; returns the file paths."""
    n, j, k = _model_dims(model)
    subjects = list(subjects) if subjects is not None else [f"s{i:04d}" for i in range(n)]
    features = list(features) if features is not None else [f"f{i:04d}" for i in range(j)]
    times = list(times) if times is not None else list(range(k))
    os.makedirs(path, exist_ok=True)
    written = []
    for name, (labels, mat) in factor_tables(model, subjects, features, times).items():
        out = Path(path) / f"{name}.csv"
        _write_matrix(out, labels, mat)
        written.append(out)
    return written


def load_factors(path) -> dict:
    return {p.stem: read_matrix(p) for p in sorted(Path(path).glob("*.csv"))}
