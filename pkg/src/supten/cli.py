"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numerical failure.
Log verbosity comes from the ``STE_LOG`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from datetime import datetime, timezone
from pathlib import Path

from . import dataio
from .errors import DataError, NumericalError
from .pipeline import (
    Candidate,
    MethodSpec,
    canonical_method,
    fit_candidate,
    make_plan,
    mesh_evaluate,
    nested_cv,
    select_candidate,
)
from .regress import RegressorSpec
from .synth import SynthSpec, generate
from .tensor import Tensor3

logger = logging.getLogger("supten")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="supten", description="Supervised tensor embedding and regression.")
    parser.add_argument("--log-file", default="supten-error.log", help="where error details are appended")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=True):
        if seed:
            p.add_argument("--seed", type=int, default=None, help="override every seed in the config")
        p.add_argument("--out", required=True)
        return p

    p = common(sub.add_parser("synth", help="generate a synthetic dataset"))
    p.add_argument("--spec", required=True, help="YAML file with a synth section")

    p = common(sub.add_parser("fit", help="fit one method on a full dataset"))
    p.add_argument("--config", required=True)

    p = common(sub.add_parser("predict", help="predict with a fitted model"), seed=False)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="tensor CSV in long format")

    for name, helptext in (("evaluate", "repeated nested CV across methods and targets"),
                           ("mesh", "STR score surface over the K and R grids")):
        p = common(sub.add_parser(name, help=helptext))
        p.add_argument("--config", required=True)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--deterministic", action="store_true", help="omit the timestamp header")

    p = common(sub.add_parser("export-factors", help="dump model factors as CSV"), seed=False)
    p.add_argument("--model", required=True)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("STE_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _load_config(path, seed):
    cfg = dataio.load_config(path)
    if seed is not None:
        cfg.seed = seed
        if cfg.synth is not None:
            cfg.synth = SynthSpec(**{**cfg.synth.__dict__, "seed": seed})
    return cfg


def _dataset(cfg) -> dataio.Dataset:
    if cfg.synth is not None:
        x, y, _ = generate(cfg.synth)
        n, j, k = x.shape
        return dataio.Dataset(
            x, {"y": y},
            tuple(f"s{i:04d}" for i in range(n)),
            tuple(f"f{i:04d}" for i in range(j)),
            tuple(range(k)),
        )
    return dataio.load_tensor(cfg.tensor_path, cfg.targets_path)


def _targets(cfg, ds) -> list:
    names = cfg.targets or sorted(ds.targets)
    if not names:
        raise DataError("no targets available; give data.targets or a synth section")
    missing = [t for t in names if t not in ds.targets]
    if missing:
        raise DataError(f"targets not found: {missing}")
    return names


def cmd_synth(args) -> int:
    cfg = dataio.load_config(args.spec)
    if cfg.synth is None:
        raise DataError(f"{args.spec} has no synth section")
    spec = cfg.synth if args.seed is None else SynthSpec(**{**cfg.synth.__dict__, "seed": args.seed})
    x, y, truth = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n, j, k = x.shape
    subjects = [f"s{i:04d}" for i in range(n)]
    features = [f"f{i:04d}" for i in range(j)]
    dataio.save_tensor(out / "tensor.csv", x, subjects, features, list(range(k)))
    dataio.save_targets(out / "targets.csv", subjects, {"y": y})
    truth_dir = out / "truth"
    truth_dir.mkdir(exist_ok=True)
    dataio._write_matrix(truth_dir / "U.csv", subjects, truth.U)
    dataio._write_matrix(truth_dir / "B.csv", features[: spec.J], truth.B)
    dataio._write_matrix(truth_dir / "C.csv", list(range(k)), truth.C)
    dataio._write_matrix(truth_dir / "q.csv", [f"comp{r + 1}" for r in range(spec.rank)], truth.q[:, None])
    return EXIT_OK


def _fit_candidate_from_cfg(cfg, x, y) -> Candidate:
    fit = cfg.fit
    method = canonical_method(fit.get("method", cfg.methods[0]))
    if "R" in fit:
        reg = None
        if method not in ("NPLS", "PLS"):
            kind = str(fit.get("regressor", cfg.regressors[0])).lower()
            reg = RegressorSpec(
                kind,
                lam=float(fit.get("lam", cfg.ridge_lambda[0] if kind == "ridge" else 0.0)),
                C=float(fit.get("C", cfg.svr_C[0])),
                epsilon=float(fit.get("epsilon", cfg.svr_epsilon[0])),
            )
        K = None
        if method == "STR":
            K = min(int(fit.get("K", x.n_features)), x.n_features)
        elif method == "STE":
            K = x.n_features
        return Candidate(method, K, int(fit["R"]), reg)
    spec = MethodSpec(method, tuple(cfg.k_grid), tuple(cfg.r_grid), cfg.regressor_specs())
    return select_candidate(
        x, y, spec, int(fit.get("folds", cfg.inner_folds)), cfg.seed,
        flags=cfg.flags, use_spearman=cfg.spearman,
    )


def cmd_fit(args) -> int:
    cfg = _load_config(args.config, args.seed)
    ds = _dataset(cfg)
    target = cfg.fit.get("target") or _targets(cfg, ds)[0]
    if target not in ds.targets:
        raise DataError(f"target {target!r} not found")
    ds, y = ds.for_target(target)
    cand = _fit_candidate_from_cfg(cfg, ds.x, y)
    logger.info("fitting %s", cand)
    model = fit_candidate(cand, ds.x, y, cfg.flags, cfg.seed)
    saved = dataio.SavedModel(
        model, cand.method, target, ds.subjects, ds.features, ds.times,
        {"K": cand.K, "R": cand.R, "regressor": cand.reg_label},
    )
    dataio.save_model(saved, args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    saved = dataio.load_model(args.model)
    x, subjects, features, times = dataio.read_long_csv(args.data)
    fpos = {f: i for i, f in enumerate(features)}
    tpos = {t: i for i, t in enumerate(times)}
    missing = [f for f in saved.features if f not in fpos] + [t for t in saved.times if t not in tpos]
    if missing:
        raise DataError(f"data lacks features/times the model was fit on: {missing[:5]}")
    fi = [fpos[f] for f in saved.features]
    ti = [tpos[t] for t in saved.times]
    x = Tensor3(x.values[:, fi][:, :, ti], x.mask[:, fi][:, :, ti])
    yhat = saved.model.predict(x)
    dataio.save_predictions(args.out, subjects, yhat)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config, args.seed)
    ds = _dataset(cfg)
    report = dataio.EvalReport()
    for target in _targets(cfg, ds):
        sub, y = ds.for_target(target)
        plan = make_plan(sub.x.n_samples, cfg.outer_folds, cfg.inner_folds, cfg.repeats, cfg.seed)
        report.extend(
            nested_cv(
                sub.x, y, cfg.method_specs(), plan, target=target, flags=cfg.flags,
                jobs=args.jobs, use_spearman=cfg.spearman,
            )
        )
    dataio.save_report(report, args.out, timestamp=not args.deterministic)
    return EXIT_OK


def cmd_mesh(args) -> int:
    cfg = _load_config(args.config, args.seed)
    ds = _dataset(cfg)
    g = cfg.regressor_specs()[0]
    k_grid = cfg.k_grid or [ds.x.n_features]
    first = True
    for target in _targets(cfg, ds):
        sub, y = ds.for_target(target)
        plan = make_plan(sub.x.n_samples, cfg.outer_folds, cfg.inner_folds, cfg.repeats, cfg.seed)
        mesh = mesh_evaluate(
            sub.x, y, k_grid, cfg.r_grid, g, plan, flags=cfg.flags,
            jobs=args.jobs, use_spearman=cfg.spearman,
        )
        path = args.out if first else _suffixed(args.out, target)
        dataio.save_mesh(mesh, path, target=target, timestamp=not args.deterministic)
        first = False
    return EXIT_OK


def _suffixed(path, target) -> str:
    p = Path(path)
    return str(p.with_name(f"{p.stem}_{target}{p.suffix}"))


def cmd_export(args) -> int:
    saved = dataio.load_model(args.model)
    try:
        dataio.save_factors(saved.model, args.out, saved.subjects, saved.features, saved.times)
    except TypeError as exc:
        raise DataError(str(exc)) from exc
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "mesh": cmd_mesh,
    "export-factors": cmd_export,
}


def _log_failure(path, argv, exc) -> None:
    record = {
        "time": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "argv": list(argv),
        "error": type(exc).__name__,
        "message": str(exc),
        "traceback": traceback.format_exception(type(exc), exc, exc.__traceback__),
    }
    try:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")
    except OSError:
        pass


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        err, code = exc, EXIT_NUMERIC
    except (DataError, OSError, KeyError, ValueError) as exc:
        err, code = exc, EXIT_DATA
    print(f"supten {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
    _log_failure(args.log_file, argv, err)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
