import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st

from latentrisk import cli
from latentrisk.baselines import cox_fit
from latentrisk.cohort import generate_synthetic, load_cohort, spec_model, table1_spec
from latentrisk.estimation import FitError
from latentrisk.hazard import BaseHazard
from latentrisk.io import load_model, read_curve_csv, resave_model, save_model
from latentrisk.likelihood import n_params, psi_objective
from latentrisk.models import LatentClassModel

FAST_FIT = {"restarts": 1, "amplitudes": [0.5], "error_bars": False}


def run(tmp_path, argv, cfg=None):
    if cfg is not None:
        path = tmp_path / f"cfg{len(list(tmp_path.glob('cfg*')))}.yaml"
        path.write_text(yaml.safe_dump(cfg))
        argv = argv + ["--config", str(path)]
    return cli.main(argv)


def files(d):
    return sorted(p.name for p in Path(d).iterdir()) if Path(d).exists() else []


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert cli.main(["simulate", "--out", str(d), "--seed", "3", "--config", str(_write(d, {
        "simulate": {"preset": "table1-B", "n_individuals": 300}}))]) == 0
    return d


def _write(d, cfg):
    p = d / "c.yaml"
    p.write_text(yaml.safe_dump(cfg))
    return p


def random_model(rng, L, R, p, K):
    coef = rng.normal(size=(L, R + 1, p + 1))
    coef[:, 0] = 0.0
    coef[0, :, 0] = 0.0
    hz = tuple(BaseHazard(0.0, 10.0, rng.uniform(0.01, 0.3, K + 1)) for _ in range(R + 1))
    return LatentClassModel(rng.dirichlet(np.ones(L)), coef, hz)


# ---------------------------------------------------------------------------
# model files


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 2), st.integers(1, 3), st.integers(0, 3))
def test_model_file_roundtrip_byte_identical(seed, L, R, p, K):
    import tempfile
    rng = np.random.default_rng(seed)
    m = random_model(rng, L, R, p, K)
    with tempfile.TemporaryDirectory() as d:
        a, b = Path(d) / "a.json", Path(d) / "b.json"
        save_model(a, m, {"psi": 1.0 / 3.0, "seed": seed})
        m2, doc = load_model(a)
        resave_model(doc, b)
        assert a.read_bytes() == b.read_bytes()
        save_model(b, m2, {"psi": 1.0 / 3.0, "seed": seed})
        assert a.read_bytes() == b.read_bytes()
        np.testing.assert_array_equal(m2.coefficients, m.coefficients)
        np.testing.assert_array_equal(m2.weights, m.weights)


def test_roundtrip_preserves_psi(tmp_path):
    spec = table1_spec("C", n_individuals=400)
    cohort, _ = generate_synthetic(spec)
    m = spec_model(spec, cohort, K=2)
    save_model(tmp_path / "m.json", m)
    m2, _ = load_model(tmp_path / "m.json")
    a, b = psi_objective(m, cohort), psi_objective(m2, cohort)
    assert abs(a - b) <= 1e-12 * abs(a)


def test_loading_validates(tmp_path):
    m = random_model(np.random.default_rng(0), 2, 1, 2, 1)
    save_model(tmp_path / "m.json", m)
    doc = json.loads((tmp_path / "m.json").read_text())
    doc["model"]["weights"] = [0.7, 0.7]
    doc.pop("model_hash")
    (tmp_path / "bad.json").write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        load_model(tmp_path / "bad.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    doc["model"]["coefficients"][0][1][1] += 1e-9
    (tmp_path / "tampered.json").write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="hash"):
        load_model(tmp_path / "tampered.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    doc["model"]["dims"]["p"] = 5
    doc.pop("model_hash")
    (tmp_path / "dims.json").write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="dims"):
        load_model(tmp_path / "dims.json")


# ---------------------------------------------------------------------------
# simulate


def test_simulate_table1_A(tmp_path):
    assert run(tmp_path, ["simulate", "--out", str(tmp_path / "o")], {"simulate": {"preset": "table1-A"}}) == 0
    c = load_cohort(tmp_path / "o" / "cohort.csv")
    assert c.n_individuals == 1600
    assert abs(int(np.sum(c.event_labels == 1)) - 1194) <= 0.03 * 1600
    truth = np.loadtxt(tmp_path / "o" / "truth.csv", delimiter=",", skiprows=1)
    assert truth.shape == (1600, 2) and set(np.unique(truth[:, 1])) == {1, 2}
    assert json.loads((tmp_path / "o" / "truth.json").read_text())["n_individuals"] == 1600


def test_simulate_deterministic(tmp_path):
    cfg = {"simulate": {"preset": "table1-C", "n_individuals": 200}, "seed": 11}
    assert run(tmp_path, ["simulate", "--out", str(tmp_path / "a")], cfg) == 0
    assert run(tmp_path, ["simulate", "--out", str(tmp_path / "b")], cfg) == 0
    for name in ("cohort.csv", "truth.csv", "truth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert run(tmp_path, ["simulate", "--out", str(tmp_path / "c"), "--seed", "12"], cfg) == 0
    assert (tmp_path / "a" / "cohort.csv").read_bytes() != (tmp_path / "c" / "cohort.csv").read_bytes()


def test_simulate_missing_rates_is_config_error(tmp_path, capsys):
    cfg = {"simulate": {"class_weights": [1.0], "betas": [[[0.0, 1.0]]], "n_individuals": 10}}
    assert run(tmp_path, ["simulate", "--out", str(tmp_path / "o")], cfg) == 1
    assert "base_rates" in capsys.readouterr().err
    assert files(tmp_path / "o") == []


def test_simulate_explicit_spec(tmp_path):
    cfg = {"simulate": {"class_weights": [1.0], "betas": [[[0.0, 0.5]]], "base_rates": [0.2],
                        "n_individuals": 50, "censor_time": 5.0}}
    assert run(tmp_path, ["simulate", "--out", str(tmp_path / "o")], cfg) == 0
    assert load_cohort(tmp_path / "o" / "cohort.csv").n_individuals == 50


# ---------------------------------------------------------------------------
# configuration and exit codes


def test_unknown_keys_rejected(tmp_path, capsys):
    assert run(tmp_path, ["simulate", "--out", str(tmp_path / "o")],
               {"simulate": {"preset": "table1-A", "colour": 1}}) == 1
    assert "simulate.colour" in capsys.readouterr().err
    assert run(tmp_path, ["simulate"], {"nonsense": True}) == 1
    assert files(tmp_path / "o") == []


def test_usage_errors_exit_one(tmp_path):
    assert cli.main([]) == 1
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["fit", "--config", str(tmp_path / "missing.yaml")]) == 1
    (tmp_path / "bad.yaml").write_text("a: [1, 2\n")
    assert cli.main(["fit", "--config", str(tmp_path / "bad.yaml")]) == 1
    assert cli.main(["fit", "--out", str(tmp_path / "o")]) == 1  # no data


def test_version_and_help_exit_zero(capsys):
    assert cli.main(["--version"]) == 0
    assert cli.main(["fit", "--help"]) == 0


def test_numeric_failure_exit_two(tmp_path, small_data, monkeypatch, capsys):
    def boom(*a, **k):
        raise FitError("all restarts produced a non-finite objective")
    monkeypatch.setattr(cli, "fit_map", boom)
    out = tmp_path / "o"
    assert cli.main(["fit", "--data", str(small_data / "cohort.csv"), "--out", str(out)]) == 2
    assert "numeric failure" in capsys.readouterr().err
    assert files(out) == []


def test_fit_failure_on_data_is_not_config_error(tmp_path):
    # every event is censoring: the primary hazard is unidentifiable but finite; fit still runs
    (tmp_path / "d.csv").write_text("time,event,x\n1,0,0.1\n2,0,0.5\n3,0,-0.2\n4,1,0.3\n")
    cfg = {"fit": {"L": 1, "K": 1, **FAST_FIT}}
    code = run(tmp_path, ["fit", "--data", str(tmp_path / "d.csv"), "--out", str(tmp_path / "o")], cfg)
    assert code in (0, 2)


# ---------------------------------------------------------------------------
# fit / select / predict / classify / baseline


def test_fit_writes_model_and_report_deterministically(tmp_path, small_data):
    cfg = {"fit": {"L": 1, "K": 1, **FAST_FIT}}
    args = ["fit", "--data", str(small_data / "cohort.csv")]
    assert run(tmp_path, args + ["--out", str(tmp_path / "a")], cfg) == 0
    assert run(tmp_path, args + ["--out", str(tmp_path / "b")], cfg) == 0
    assert files(tmp_path / "a") == ["fit_report.json", "model.json"]
    assert (tmp_path / "a" / "model.json").read_bytes() == (tmp_path / "b" / "model.json").read_bytes()
    ra, rb = (json.loads((tmp_path / d / "fit_report.json").read_text()) for d in "ab")
    assert ra.pop("wall_time") >= 0 and rb.pop("wall_time") >= 0
    assert ra == rb
    model, doc = load_model(tmp_path / "a" / "model.json")
    assert doc["metadata"]["n_par"] == n_params("latent", 1, 1, 2, 3)
    assert model.normalization is not None


def test_fit_gaussian_via_cli(tmp_path, small_data):
    cfg = {"fit": {"model": "gaussian", "K": 1, "simplex_max_iter": 100, **FAST_FIT}}
    assert run(tmp_path, ["fit", "--data", str(small_data / "cohort.csv"), "--out", str(tmp_path / "o")], cfg) == 0
    _, doc = load_model(tmp_path / "o" / "model.json")
    assert doc["model"]["kind"] == "gaussian"


def test_select_writes_grid(tmp_path, small_data):
    cfg = {"fit": FAST_FIT, "select": {"L_grid": [1, 2], "K_grid": [1]}}
    assert run(tmp_path, ["select", "--data", str(small_data / "cohort.csv"), "--out", str(tmp_path / "o")], cfg) == 0
    rep = json.loads((tmp_path / "o" / "selection.json").read_text())
    psis = {(c["L"], c["K"]): c["psi"] for c in rep["grid"]}
    assert set(psis) == {(1, 1), (2, 1)}
    assert (rep["chosen"]["L"], rep["chosen"]["K"]) == min(psis, key=psis.get)
    assert (tmp_path / "o" / "model.json").exists()


@pytest.fixture(scope="module")
def truth_model(tmp_path_factory):
    d = tmp_path_factory.mktemp("truth")
    spec = table1_spec("B", n_individuals=300, rng_seed=3)
    cohort, classes = generate_synthetic(spec)
    save_model(d / "model.json", spec_model(spec, cohort))
    return d / "model.json", cohort, classes


def test_predict_curves_start_at_one(tmp_path, truth_model):
    path, _, _ = truth_model
    cfg = {"predict": {"risks": [1, 2], "covariates": [[0, 0, 0], [1, -1, 0.5]],
                       "bands": [{"covariate": 1, "band": "UQ"}, {"covariate": 1, "band": "IQ"}],
                       "grid": {"t_max": 50, "n": 26}}}
    assert run(tmp_path, ["predict", "--model", str(path), "--out", str(tmp_path / "o")], cfg) == 0
    written = files(tmp_path / "o")
    assert "decontaminated_risk1_z0.csv" in written and "crude_risk2_cov1_IQ.csv" in written
    for name in written:
        t, v, meta = read_curve_csv(tmp_path / "o" / name)
        assert t[0] == 0.0 and len(t) == 26
        assert meta["model-hash"] and meta["risk"] in ("1", "2")
        if name.startswith("incidence"):
            assert v[0] == 0.0 and np.all(np.diff(v) >= 0)
        else:
            assert v[0] == 1.0 and np.all(np.diff(v) <= 1e-12)


def test_predict_deterministic(tmp_path, truth_model):
    path, _, _ = truth_model
    cfg = {"predict": {"kinds": ["crude"], "bands": [{"covariate": 2, "band": "LQ"}], "grid": {"n": 5}}}
    for d in ("a", "b"):
        assert run(tmp_path, ["predict", "--model", str(path), "--out", str(tmp_path / d)], cfg) == 0
    for name in files(tmp_path / "a"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_predict_fails_atomically(tmp_path, truth_model):
    path, _, _ = truth_model
    # the first risk's curves are computed before the bad band is reached
    cfg = {"predict": {"bands": [{"covariate": 1, "band": "XQ"}], "grid": {"n": 5}}}
    out = tmp_path / "o"
    assert run(tmp_path, ["predict", "--model", str(path), "--out", str(out)], cfg) == 1
    assert files(out) == []


def test_classify_with_truth(tmp_path, truth_model, capsys):
    path, cohort, classes = truth_model
    cohort.to_csv(tmp_path / "c.csv")
    (tmp_path / "t.csv").write_text("id,class\n" + "".join(f"{i + 1},{c + 1}\n" for i, c in enumerate(classes)))
    code = cli.main(["classify", "--model", str(path), "--data", str(tmp_path / "c.csv"),
                     "--truth", str(tmp_path / "t.csv"), "--out", str(tmp_path / "o")])
    assert code == 0
    assert "f=" in capsys.readouterr().out
    rep = json.loads((tmp_path / "o" / "classify_report.json").read_text())
    assert 0.0 <= rep["classification_fraction"] <= 1.0
    assert rep["max_abs_censoring_coefficient"] == 0.0
    rows = (tmp_path / "o" / "posterior.csv").read_text().splitlines()
    assert rows[0] == "id,p_1,p_2,argmax" and len(rows) == 301
    P = np.loadtxt(tmp_path / "o" / "posterior.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(P[:, 1:3].sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(P[:, 3], np.argmax(P[:, 1:3], axis=1) + 1)


def test_classify_truth_length_mismatch(tmp_path, truth_model):
    path, cohort, _ = truth_model
    cohort.to_csv(tmp_path / "c.csv")
    (tmp_path / "t.csv").write_text("id,class\n1,1\n")
    assert cli.main(["classify", "--model", str(path), "--data", str(tmp_path / "c.csv"),
                     "--truth", str(tmp_path / "t.csv"), "--out", str(tmp_path / "o")]) == 1
    assert files(tmp_path / "o") == []


def test_baseline_outputs(tmp_path, small_data):
    assert cli.main(["baseline", "--data", str(small_data / "cohort.csv"), "--out", str(tmp_path / "o")]) == 0
    cox = json.loads((tmp_path / "o" / "cox_risk1.json").read_text())
    ref = cox_fit(load_cohort(small_data / "cohort.csv"), 1)
    np.testing.assert_allclose(cox["coefficients"], ref.coefficients, rtol=1e-12)
    lines = (tmp_path / "o" / "km_risk1.csv").read_text().splitlines()
    assert lines[1] == "t,value" and lines[2] == "0.0,1.0"
    v = np.array([float(x.split(",")[1]) for x in lines[2:]])
    assert np.all(np.diff(v) <= 0) and np.all(v >= 0)
