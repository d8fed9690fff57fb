import json
import math
import subprocess
import sys

import numpy as np
import pytest

from calibra.baselines import fit_crps_only
from calibra.cli import main
from calibra.datasets import SplitSpec, load_csv, read_columns, split_indices

from oracles import ks_envelope

REPORT_KEYS = {"version", "command", "provenance", "splits", "methods", "timing_s", "seeds"}
METHOD_KEYS = {"name", "crps", "rs", "ar", "nlpd", "beta", "cal_err_pct"}


def _json(path):
    return json.loads(path.read_text())


@pytest.fixture
def g_csv(tmp_path):
    p = tmp_path / "g.csv"
    assert main(["gen", "--dataset", "G", "--n", "300", "--seed", "7", "--out", str(p), "--equal-nlpd"]) == 0
    return p


def test_gen_writes_rows_and_header(tmp_path):
    p = tmp_path / "g.csv"
    assert main(["gen", "--dataset", "G", "--n", "100", "--seed", "7", "--out", str(p)]) == 0
    lines = p.read_text().splitlines()
    assert lines[0] == "x1,y,true_mean,true_sigma"
    assert len(lines) == 101


def test_gen_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        main(["gen", "--dataset", "W", "--n", "50", "--seed", "3", "--out", str(p)])
    assert a.read_bytes() == b.read_bytes()


def test_gen_5d_has_five_inputs(tmp_path):
    p = tmp_path / "d.csv"
    main(["gen", "--dataset", "5D", "--n", "10000", "--seed", "0", "--out", str(p)])
    d = load_csv(p)
    assert d.x.shape == (10000, 5)


def test_bad_flags_exit_nonzero(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--dataset", "Q", "--n", "10", "--out", str(tmp_path / "x.csv")])
    assert exc.value.code != 0
    code = main(["gen", "--dataset", "G", "--n", "10", "--out", str(tmp_path / "missing" / "dir" / "x.csv")])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_fit_and_eval_end_to_end(g_csv, tmp_path):
    model, rep = tmp_path / "m.json", tmp_path / "r.json"
    assert main(["fit", "--data", str(g_csv), "--out-model", str(model), "--out-report", str(rep)]) == 0
    r = _json(rep)
    assert REPORT_KEYS <= set(r)
    assert [m["partition"] for m in r["methods"]] == ["train", "val", "test"]
    assert all(METHOD_KEYS <= set(m) for m in r["methods"])

    ev, rel, sig = tmp_path / "e.json", tmp_path / "rel.csv", tmp_path / "sig.csv"
    assert main(["eval", "--data", str(g_csv), "--model", str(model), "--out-report", str(ev),
                 "--out-reliability", str(rel), "--out-sigma", str(sig)]) == 0
    e = _json(ev)
    test_row = r["methods"][2]
    assert e["methods"][0]["crps"] == pytest.approx(test_row["crps"], abs=1e-12)
    assert e["methods"][0]["cal_err_pct"] == pytest.approx(test_row["cal_err_pct"], abs=1e-12)

    cols = read_columns(rel)
    assert list(cols) == ["predicted_prob", "observed_freq"]
    assert cols["predicted_prob"].size == test_row["n"]
    assert np.all((cols["predicted_prob"] >= 0) & (cols["predicted_prob"] <= 1))
    assert np.all((cols["observed_freq"] >= 0) & (cols["observed_freq"] <= 1))
    s = read_columns(sig)
    assert list(s) == ["x", "sigma_true", "sigma_pred"]
    assert np.all(np.diff(s["x"]) >= 0)


def test_fit_crps_loss_matches_baseline(g_csv, tmp_path):
    model = tmp_path / "m.json"
    main(["fit", "--data", str(g_csv), "--loss", "crps", "--out-model", str(model),
          "--out-report", str(tmp_path / "r.json")])
    theta = _json(model)["variance"]["parameters"]["theta"]
    d = load_csv(g_csv)
    tr, va, _ = split_indices(d.n, SplitSpec((0.33, 0.33, 0.34), 0))
    idx = np.concatenate([tr, va])
    ref, _ = fit_crps_only(d.x[idx], (d.y - d.true_mean)[idx], regressor="poly")
    np.testing.assert_allclose(theta, ref.theta, rtol=1e-12)


def test_fit_pointwise_writes_sigma_csv(g_csv, tmp_path):
    out = tmp_path / "p.csv"
    assert main(["fit", "--data", str(g_csv), "--estimator", "pointwise", "--loss", "crps",
                 "--out-model", str(tmp_path / "p.json"), "--out-report", str(tmp_path / "r.json"),
                 "--out-sigma", str(out)]) == 0
    c = read_columns(out)
    np.testing.assert_allclose(c["sigma_pred"], np.abs(c["eps"]) / math.sqrt(math.log(2)), rtol=1e-12)


def test_fit_poly_on_5d_is_an_error(tmp_path):
    p = tmp_path / "d.csv"
    main(["gen", "--dataset", "5D", "--n", "50", "--out", str(p)])
    assert main(["fit", "--data", str(p), "--out-model", str(tmp_path / "m.json"),
                 "--out-report", str(tmp_path / "r.json")]) == 2


def test_eval_schema_mismatch(g_csv, tmp_path):
    model = tmp_path / "m.json"
    main(["fit", "--data", str(g_csv), "--out-model", str(model), "--out-report", str(tmp_path / "r.json")])
    p = tmp_path / "d.csv"
    main(["gen", "--dataset", "5D", "--n", "50", "--out", str(p)])
    assert main(["eval", "--data", str(p), "--model", str(model), "--out-report", str(tmp_path / "e.json")]) == 2


def test_eval_true_sigma_inside_ks_envelope(tmp_path):
    inside = 0
    for seed in range(5):
        p = tmp_path / f"g{seed}.csv"
        main(["gen", "--dataset", "G", "--n", "1000", "--seed", str(seed), "--out", str(p)])
        rep = tmp_path / f"t{seed}.json"
        assert main(["eval", "--data", str(p), "--sigma-column", "true_sigma", "--out-report", str(rep)]) == 0
        inside += _json(rep)["methods"][0]["cal_err_pct"] <= ks_envelope(1000)
    assert inside >= 4


def test_eval_equal_nlpd_reports(g_csv, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["eval", "--data", str(g_csv), "--sigma-column", "true_sigma", "--out-report", str(a)])
    main(["eval", "--data", str(g_csv), "--sigma-column", "sigma_equal_nlpd", "--out-report", str(b)])
    ma, mb = _json(a)["methods"][0], _json(b)["methods"][0]
    assert ma["nlpd"] == pytest.approx(mb["nlpd"], abs=1e-9)
    assert mb["cal_err_pct"] > ma["cal_err_pct"] + 5


def test_bench_toy_single_run_medians_equal_values(tmp_path):
    out = tmp_path / "b"
    assert main(["bench", "toy", "--dataset", "G", "--runs", "1", "--out-dir", str(out)]) == 0
    r = _json(out / "report.json")
    runs = read_columns(out / "runs.csv")
    m = r["methods"][0]
    assert m["runs_ok"] == 1 and m["runs_failed"] == 0
    assert m["crps"] == runs["crps"][0] and m["cal_err_pct"] == runs["cal_err_pct"][0]
    assert m["grid_rmse"] == runs["grid_rmse"][0]
    band = read_columns(out / "band.csv")
    assert list(band) == ["x", "sigma_true", "sigma_median", "sigma_q05", "sigma_q95"]


def test_bench_toy_is_reproducible_and_thread_independent(tmp_path, monkeypatch):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["bench", "toy", "--dataset", "G", "--runs", "3", "--seed", "5", "--out-dir", str(a)])
    monkeypatch.setenv("CALIBRA_THREADS", "3")
    main(["bench", "toy", "--dataset", "G", "--runs", "3", "--seed", "5", "--out-dir", str(b)])
    ra, rb = _json(a / "report.json"), _json(b / "report.json")
    assert ra["seeds"] == rb["seeds"] == [5, 6, 7]
    for k in METHOD_KEYS - {"name"}:
        assert ra["methods"][0][k] == pytest.approx(rb["methods"][0][k], abs=1e-12)


def test_bench_failures_are_counted(tmp_path):
    out = tmp_path / "f"
    code = main(["bench", "toy", "--dataset", "5D", "--estimator", "poly", "--runs", "2", "--out-dir", str(out)])
    assert code == 1
    r = _json(out / "report.json")
    assert len(r["failures"]) == 2 and r["methods"][0]["runs_ok"] == 0


def test_bench_tabular_standin(tmp_path):
    out = tmp_path / "t"
    assert main(["bench", "tabular", "--standin", "energy_like", "--runs", "1", "--methods", "ar,kmeans",
                 "--restarts", "1", "--out-dir", str(out)]) == 0
    r = _json(out / "report.json")
    assert [m["name"] for m in r["methods"]] == ["ar", "kmeans"]
    assert r["kmeans_select"] == "val"
    assert r["provenance"]["generator"] == "energy_like"


def test_module_entry_point(tmp_path):
    p = tmp_path / "g.csv"
    res = subprocess.run([sys.executable, "-m", "calibra", "gen", "--dataset", "Y", "--n", "10", "--out", str(p)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert p.exists()
