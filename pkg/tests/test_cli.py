import json
import subprocess
import sys

import numpy as np

from supten import dataio
from supten.cli import run

SYNTH = """\
synth: {{N: 40, J: 6, K: 5, rank: 2, eta: 0.2, seed: 3}}
methods: {methods}
grid: {{K: [3, 6], R: [1, 2], regressors: [ols]}}
cv: {{outer_folds: 4, inner_folds: 2, repeats: 2, seed: 7}}
"""


def _cfg(tmp_path, methods="[STR, NPLS, PLS, CP]", name="c.yaml", text=None):
    path = tmp_path / name
    path.write_text(text if text is not None else SYNTH.format(methods=methods))
    return str(path)


def _run(tmp_path, *argv):
    return run(["--log-file", str(tmp_path / "err.log"), *argv])


def test_evaluate_one_cell_gives_one_row(tmp_path):
    text = SYNTH.format(methods="[STR]").replace("K: [3, 6], R: [1, 2]", "K: [3], R: [2]")
    cfg = _cfg(tmp_path, text=text)
    assert _run(tmp_path, "evaluate", "--config", cfg, "--out", str(tmp_path / "r.csv"), "--deterministic") == 0
    rows = dataio.load_report(tmp_path / "r.csv").rows
    assert len(rows) == 1
    assert (rows[0].method, rows[0].K, rows[0].R, rows[0].n_folds) == ("STR", 3, 2, 8)


def test_unknown_flag_is_usage_error(tmp_path, capsys):
    assert _run(tmp_path, "evaluate", "--bogus") == 1
    assert "usage" in capsys.readouterr().err
    assert _run(tmp_path) == 1
    assert _run(tmp_path, "--help") == 0


def test_synth_then_evaluate(tmp_path):
    spec = _cfg(tmp_path, text="synth: {N: 40, J: 6, K: 5, rank: 2, eta: 0.2, seed: 3}\n")
    out = tmp_path / "data"
    assert _run(tmp_path, "synth", "--spec", spec, "--out", str(out)) == 0
    for name in ("tensor.csv", "targets.csv", "truth/U.csv", "truth/B.csv", "truth/C.csv", "truth/q.csv"):
        assert (out / name).exists()
    ds = dataio.load_tensor(out / "tensor.csv", out / "targets.csv")
    assert ds.x.shape == (40, 6, 5)
    cfg = _cfg(tmp_path, text=(
        "data: {tensor: data/tensor.csv, targets: data/targets.csv}\n"
        "methods: [STR, STE, NPLS, PLS, CP]\n"
        "grid: {K: [3, 6], R: [1, 2], regressors: [ols, ridge], ridge_lambda: [0.1, 10]}\n"
        "cv: {outer_folds: 4, inner_folds: 2, repeats: 1}\n"
    ), name="eval.yaml")
    assert _run(tmp_path, "evaluate", "--config", cfg, "--out", str(tmp_path / "r.csv")) == 0
    report = dataio.load_report(tmp_path / "r.csv")
    assert [r.method for r in report.rows] == ["STR", "STE", "NPLS", "PLS", "CP"]
    assert all(r.target == "y" and r.n_folds == 4 for r in report.rows)
    assert report.row("STR").r2_mean > 0.5


def test_evaluate_bytes_identical_and_jobs_independent(tmp_path):
    cfg = _cfg(tmp_path)
    outs = []
    for i, jobs in enumerate((1, 1, 2)):
        out = tmp_path / f"r{i}.csv"
        assert _run(tmp_path, "evaluate", "--config", cfg, "--out", str(out), "--deterministic", "--jobs", str(jobs)) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    assert _run(tmp_path, "evaluate", "--config", cfg, "--out", str(tmp_path / "s.csv"), "--deterministic", "--seed", "8") == 0
    assert (tmp_path / "s.csv").read_bytes() != outs[0]


def test_timestamp_header_only_without_deterministic(tmp_path):
    text = SYNTH.format(methods="[PLS]")
    cfg = _cfg(tmp_path, text=text)
    _run(tmp_path, "evaluate", "--config", cfg, "--out", str(tmp_path / "r.csv"))
    assert (tmp_path / "r.csv").read_text().startswith("# generated")


def test_mesh(tmp_path):
    cfg = _cfg(tmp_path)
    assert _run(tmp_path, "mesh", "--config", cfg, "--out", str(tmp_path / "m.csv"), "--deterministic") == 0
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "target,K,R,r2_mean,r2_std,rho_mean,rho_std"
    assert [tuple(line.split(",")[1:3]) for line in lines[1:]] == [("3", "1"), ("3", "2"), ("6", "1"), ("6", "2")]


def test_fit_predict_export(tmp_path):
    data = tmp_path / "data"
    spec = _cfg(tmp_path, text="synth: {N: 40, J: 6, K: 5, rank: 2, eta: 0.1, seed: 1}\n", name="s.yaml")
    _run(tmp_path, "synth", "--spec", spec, "--out", str(data))
    cfg = _cfg(tmp_path, text=(
        "data: {tensor: data/tensor.csv, targets: data/targets.csv}\n"
        "fit: {method: STR, K: 4, R: 2, regressor: ridge, lam: 0.5}\n"
    ), name="fit.yaml")
    model = tmp_path / "m.pkl"
    assert _run(tmp_path, "fit", "--config", cfg, "--out", str(model)) == 0
    saved = dataio.load_model(model)
    assert saved.config == {"K": 4, "R": 2, "regressor": "ridge(lam=0.5)"}
    pred = tmp_path / "p.csv"
    assert _run(tmp_path, "predict", "--model", str(model), "--data", str(data / "tensor.csv"), "--out", str(pred)) == 0
    rows = pred.read_text().splitlines()
    assert rows[0] == "subject_id,prediction" and len(rows) == 41
    yhat = np.array([float(r.split(",")[1]) for r in rows[1:]])
    np.testing.assert_allclose(yhat, saved.model.fitted, atol=1e-10)
    assert _run(tmp_path, "export-factors", "--model", str(model), "--out", str(tmp_path / "f")) == 0
    tables = dataio.load_factors(tmp_path / "f")
    assert tables["scores"][1].shape == (40, 2)
    assert len(tables["feature_importance"][0]) == 6


def test_fit_selects_by_cv_without_explicit_rank(tmp_path):
    cfg = _cfg(tmp_path, text=SYNTH.format(methods="[NPLS]") + "fit: {folds: 3}\n")
    assert _run(tmp_path, "fit", "--config", cfg, "--out", str(tmp_path / "m.pkl")) == 0
    assert dataio.load_model(tmp_path / "m.pkl").config["R"] in (1, 2)


def test_data_error_exit_code_and_log(tmp_path, capsys):
    cfg = _cfg(tmp_path, text="data: {tensor: missing.csv}\n")
    assert _run(tmp_path, "evaluate", "--config", cfg, "--out", str(tmp_path / "r.csv")) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("supten evaluate:")
    record = json.loads((tmp_path / "err.log").read_text().splitlines()[-1])
    assert "evaluate" in record["argv"] and record["error"] == "FileNotFoundError" and record["traceback"]
    bad = _cfg(tmp_path, text="synth: {N: 40}\nbogus: 1\n", name="bad.yaml")
    assert _run(tmp_path, "evaluate", "--config", bad, "--out", str(tmp_path / "r.csv")) == 2


def test_numerical_error_exit_code(tmp_path):
    # exact rank-1 data makes a second STE component impossible
    (tmp_path / "t.csv").write_text(
        "subject_id,feature,time_index,value\n"
        + "".join(f"s{i},f{j},{k},{(i - 1.5) * (j + 1) * (k + 1)}\n" for i in range(4) for j in range(2) for k in range(2))
    )
    (tmp_path / "y.csv").write_text("subject_id,y\n" + "".join(f"s{i},{i}\n" for i in range(4)))
    cfg = _cfg(tmp_path, text=(
        "data: {tensor: t.csv, targets: y.csv}\npreprocess: {scale: false}\n"
        "fit: {method: STE, R: 2}\n"
    ))
    assert _run(tmp_path, "fit", "--config", cfg, "--out", str(tmp_path / "m.pkl")) == 3


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "supten.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "export-factors" in proc.stdout
