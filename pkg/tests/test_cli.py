import json
import math

import numpy as np
import pytest

from cvxreg.cli import main
from cvxreg.data import read_csv, standardize
from cvxreg.model import load_model, load_model_json, predict


@pytest.fixture
def quad_csv(tmp_path):
    path = tmp_path / "quad.csv"
    assert main(["gen", "--example", "quad", "--n", "20", "--d", "2", "--snr", "3", "--seed", "4",
                 "--output", str(path)]) == 0
    return path


def tight_fit(tmp_path, csv, *extra):
    model = tmp_path / "model.json"
    rc = main(["fit", "--input", str(csv), "--output", str(model), "--tol-primal", "1e-9",
               "--tol-grad", "1e-9", "--max-iters", "300000", *extra])
    assert rc == 0
    return model


def test_gen_is_deterministic(tmp_path):
    for name in ("a", "b"):
        main(["gen", "--n", "30", "--d", "3", "--snr", "2", "--seed", "9", "--output", str(tmp_path / name)])
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert (tmp_path / "a").read_text().splitlines()[0] == "x1,x2,x3,y"


def test_fit_writes_model_and_trace(tmp_path, quad_csv):
    model_path = tight_fit(tmp_path, quad_csv)
    obj = load_model_json(model_path)
    assert obj["schema"] == "cvxreg-model-v1" and obj["standardization"] is not None
    assert (tmp_path / "model.json.trace.csv").read_text().startswith("iter,objective,")
    model = load_model(model_path)
    sdata, _ = standardize(read_csv(quad_csv))
    assert abs(model.theta.mean() - sdata.Y.mean()) <= 1e-6


def test_predict_reproduces_fit_at_anchors(tmp_path, quad_csv, capsys):
    model_path = tight_fit(tmp_path, quad_csv)
    model = load_model(model_path)
    out = tmp_path / "pred.csv"
    assert main(["predict", "--model", str(model_path), "--input", str(quad_csv), "--output", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "y"
    raw_theta = model.standardization.inverse_y(model.theta)
    np.testing.assert_allclose([float(v) for v in lines[1:]], raw_theta, atol=1e-6)


def test_predict_canonical_outside_hull(tmp_path, quad_csv, capsys):
    model_path = tight_fit(tmp_path, quad_csv)
    q = tmp_path / "q.csv"
    q.write_text("x1,x2\n0,0\n5,5\n")
    assert main(["predict", "--model", str(model_path), "--input", str(q), "--method", "canonical"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "y" and lines[2] == "outside_hull"
    expected = predict(load_model(model_path), [[0.0, 0.0]], method="canonical")[0]
    assert float(lines[1]) == pytest.approx(expected, abs=1e-12)


def test_smooth_prints_certificate(tmp_path, quad_csv, capsys):
    model_path = tight_fit(tmp_path, quad_csv)
    capsys.readouterr()
    assert main(["smooth", "--model", str(model_path), "--prox", "entropy", "--epsilon", "0.01"]) == 0
    cert = json.loads(capsys.readouterr().out)
    assert cert["tau"] == pytest.approx(0.01 / math.log(20), rel=1e-15)
    assert load_model_json(model_path)["smooth"]["certificate"]["epsilon"] == pytest.approx(0.01)


def test_smooth_flags_are_exclusive(tmp_path, quad_csv, capsys):
    model_path = tight_fit(tmp_path, quad_csv)
    assert main(["smooth", "--model", str(model_path), "--epsilon", "0.1", "--tau", "0.1"]) == 1
    assert main(["smooth", "--model", str(model_path)]) == 1


def test_cv_writes_table(tmp_path, quad_csv, capsys):
    out = tmp_path / "cv.csv"
    assert main(["cv", "--input", str(quad_csv), "--output", str(out), "--folds", "3",
                 "--grid", "0.5,1,inf", "--tol-primal", "1e-5", "--tol-grad", "1e-5"]) == 0
    assert capsys.readouterr().out.startswith("chosen L = ")
    lines = out.read_text().splitlines()
    assert len(lines) == 4 and lines[3].startswith("inf,")


def test_diagnose_with_and_without_state(tmp_path, quad_csv, capsys):
    model = tmp_path / "m.json"
    state = tmp_path / "state.npz"
    assert main(["fit", "--input", str(quad_csv), "--output", str(model), "--save-state", str(state),
                 "--tol-primal", "1e-7", "--tol-grad", "1e-7", "--max-iters", "200000"]) == 0
    capsys.readouterr()
    assert main(["diagnose", "--model", str(model), "--input", str(quad_csv), "--state", str(state)]) == 0
    full = json.loads(capsys.readouterr().out)
    stored = load_model_json(model)["fit_meta"]["kkt"]
    for key in ("primal_feasibility", "theta_gradient", "subgrad_stationarity"):
        assert full[key] == pytest.approx(stored[key], rel=1e-6, abs=1e-12)
    assert main(["diagnose", "--model", str(model), "--input", str(quad_csv)]) == 0
    partial = json.loads(capsys.readouterr().out)
    assert partial["primal_feasibility"] <= 1e-7 and partial["theta_gradient"] is None


def test_concave_and_monotone_flags(tmp_path, quad_csv):
    model = tmp_path / "m.json"
    rc = main(["fit", "--input", str(quad_csv), "--output", str(model), "--variant", "concave",
               "--monotone", "+,0", "--tol-primal", "1e-5", "--tol-grad", "1e-5"])
    assert rc == 0
    m = load_model(model)
    assert m.variant.concave and np.all(m.xi[:, 0] >= 0)


def test_log_features(tmp_path):
    csv = tmp_path / "pos.csv"
    rng = np.random.default_rng(0)
    x = rng.uniform(1, 5, 15)
    csv.write_text("x1,y\n" + "".join(f"{float(a)!r},{float(np.log(a)) ** 2!r}\n" for a in x))
    model = tmp_path / "m.json"
    assert main(["fit", "--input", str(csv), "--output", str(model), "--log-features",
                 "--tol-primal", "1e-8", "--tol-grad", "1e-8", "--max-iters", "200000"]) == 0
    q = tmp_path / "q.csv"
    q.write_text("x1\n2.0\n")
    out = tmp_path / "p.csv"
    assert main(["predict", "--model", str(model), "--input", str(q), "--output", str(out)]) == 0
    assert float(out.read_text().splitlines()[1]) == pytest.approx(np.log(2.0) ** 2, abs=0.05)


def test_non_convergence_exit_code(tmp_path, quad_csv):
    model = tmp_path / "m.json"
    assert main(["fit", "--input", str(quad_csv), "--output", str(model), "--max-iters", "3"]) == 2
    assert load_model_json(model)["fit_meta"]["converged"] is False


def test_input_errors_and_json_reporting(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert main(["fit", "--input", str(missing), "--output", str(tmp_path / "m.json")]) == 1
    assert capsys.readouterr().err.startswith("cvxreg: ")
    bad = tmp_path / "bad.csv"
    bad.write_text("x1,y\n1,\n")
    assert main(["--json-errors", "fit", "--input", str(bad), "--output", str(tmp_path / "m.json")]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 1 and err["error"] and err["message"]
    assert main(["gen", "--n", "5", "--d", "2", "--example", "quadplus", "--output", str(tmp_path / "g")]) == 1
    assert main(["fit"]) == 1
    assert main(["--threads", "0", "gen", "--n", "5", "--d", "1", "--output", str(tmp_path / "g")]) == 1


def test_threads_flag(tmp_path):
    assert main(["--threads", "1", "gen", "--n", "5", "--d", "1", "--output", str(tmp_path / "g.csv")]) == 0


@pytest.mark.slow
def test_fit_example_scale_reaches_1e3_accuracy(tmp_path):
    csv = tmp_path / "d.csv"
    main(["gen", "--n", "500", "--d", "2", "--snr", "3", "--seed", "0", "--output", str(csv)])
    model = tmp_path / "m.json"
    assert main(["fit", "--input", str(csv), "--output", str(model)]) == 0
    kkt = load_model_json(model)["fit_meta"]["kkt"]
    assert kkt["primal_feasibility"] <= 1e-3 and kkt["theta_gradient"] <= 1e-3
