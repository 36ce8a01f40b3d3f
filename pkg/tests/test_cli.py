import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

import dagfit
from dagfit.cli import EXIT_CONFIG, EXIT_NOCONVERGE, EXIT_OK, main, pseudo_dataset

TOY = Path(dagfit.__file__).parent / "data" / "toy.yaml"
GOLDEN = Path(__file__).parent / "golden"

LINEAR = """
parameters:
  - {name: a, central: 1.0, sigma: 1.0}
bundles:
  - {kind: histogram_data, name: template, provides: [template], options: {edges: [0, 1, 2, 3], counts: [1, 2, 3]}}
  - {kind: histogram_data, name: observed, provides: [data], options: {edges: [0, 1, 2, 3], counts: [2, 4, 7]}}
expressions:
  prediction: "a * template"
statistic:
  kind: chi2
  prediction: prediction
  data: data
  covariance: {stat: data}
"""


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main([str(a) for a in argv], out=out, err=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def linear(tmp_path):
    path = tmp_path / "linear.yaml"
    path.write_text(LINEAR)
    return path


# -- build ----------------------------------------------------------------------------


def test_build_toy_matches_golden(tmp_path):
    dot = tmp_path / "g.dot"
    table = tmp_path / "params.txt"
    code, out, _ = run("build", "--config", TOY, "--dot", dot, "--params", table)
    assert code == EXIT_OK
    assert out == (GOLDEN / "toy_build.txt").read_text()
    assert dot.read_text().count(" -> ") == 18
    assert len(table.read_text().splitlines()) == 1 + 5


def test_build_unknown_bundle_kind(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("bundles:\n  - {kind: warp_drive}\nstatistic: {kind: chi2, prediction: p, data: d}\n")
    code, _, err = run("build", "--config", cfg)
    assert code == EXIT_CONFIG
    assert "warp_drive" in err


def test_build_empty_config(tmp_path):
    cfg = tmp_path / "empty.yaml"
    cfg.write_text("")
    code, _, err = run("build", "--config", cfg)
    assert code == EXIT_CONFIG
    assert "no statistic defined" in err


def test_build_reports_expression_position(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(LINEAR.replace('"a * template"', '"a * "'))
    code, _, err = run("build", "--config", cfg)
    assert code == EXIT_CONFIG
    assert "expressions.prediction" in err and "1:5" in err


# -- fit --------------------------------------------------------------------------------


def test_fit_linear(tmp_path, linear):
    out_path = tmp_path / "fit.json"
    code, out, _ = run("fit", "--config", linear, "--output", out_path)
    assert code == EXIT_OK
    doc = json.loads(out_path.read_text())
    assert list(doc) == ["values", "errors", "covariance", "fun", "nfev", "converged", "message"]
    # weighted least squares with V = diag(data)
    t, d = np.array([1.0, 2.0, 3.0]), np.array([2.0, 4.0, 7.0])
    w = 1 / d
    assert doc["values"]["a"] == pytest.approx(np.sum(w * t * d) / np.sum(w * t * t), abs=1e-6)
    assert doc["errors"]["a"] == pytest.approx(1 / np.sqrt(np.sum(w * t * t)), rel=1e-3)
    assert out.splitlines()[0].startswith("a = ")


def test_fit_zero_noise_closure(tmp_path):
    code, _, _ = run("mc", "--config", TOY, "--output", tmp_path, "--asimov")
    assert code == EXIT_OK
    out_path = tmp_path / "fit.json"
    code, _, _ = run("fit", "--config", TOY, "--output", out_path, "--data", tmp_path / "asimov.txt")
    assert code == EXIT_OK
    doc = json.loads(out_path.read_text())
    truth = {"peak.mean": (5.0, 0.05), "peak.width": (1.0, 0.05), "norm": (5000.0, 500.0), "bkg": (1.0, 0.3)}
    for name, (value, sigma) in truth.items():
        assert abs(doc["values"][name] - value) <= 1e-4 * sigma, name


def test_fit_unparseable_config(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("parameters: [unclosed\n")
    out_path = tmp_path / "fit.json"
    code, _, err = run("fit", "--config", cfg, "--output", out_path)
    assert code == EXIT_CONFIG
    assert not out_path.exists()


def test_fit_nonconvergence_writes_json(tmp_path):
    cfg = tmp_path / "toy.yaml"
    cfg.write_text(TOY.read_text() + "\nfit: {maxfev: 15}\n")
    (tmp_path / "toy_data.txt").write_text((TOY.parent / "toy_data.txt").read_text())
    out_path = tmp_path / "fit.json"
    code, _, _ = run("fit", "--config", cfg, "--output", out_path)
    assert code == EXIT_NOCONVERGE
    assert json.loads(out_path.read_text())["converged"] is False


# -- scan -------------------------------------------------------------------------------


def read_scan(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["value", "fun_min", "converged"]
    return [(float(v), float(f), int(c)) for v, f, c in rows[1:]]


def test_scan_across_best_fit(tmp_path, linear):
    run("fit", "--config", linear, "--output", tmp_path / "fit.json")
    fit = json.loads((tmp_path / "fit.json").read_text())
    a, err = fit["values"]["a"], fit["errors"]["a"]
    out_path = tmp_path / "scan.csv"
    code, _, _ = run("scan", "--config", linear, "--param", "a", "--lo", a - err, "--hi", a + err,
                     "--points", 3, "--output", out_path)
    assert code == EXIT_OK
    rows = read_scan(out_path)
    assert abs(min(r[1] for r in rows) - fit["fun"]) <= 1e-9
    # the curve is exactly quadratic: one Hessian error away costs one unit
    assert rows[0][1] - fit["fun"] == pytest.approx(1.0, rel=1e-2)
    assert rows[2][1] - fit["fun"] == pytest.approx(1.0, rel=1e-2)


def test_scan_single_point(tmp_path, linear):
    out_path = tmp_path / "scan.csv"
    code, _, _ = run("scan", "--config", linear, "--param", "a", "--lo", 1.5, "--hi", 3.0, "--n", 1,
                     "--output", out_path)
    assert code == EXIT_OK
    rows = read_scan(out_path)
    assert len(rows) == 1 and rows[0][0] == 1.5 and rows[0][2] == 1


def test_scan_unknown_parameter(tmp_path, linear):
    code, _, err = run("scan", "--config", linear, "--param", "zz", "--lo", 0, "--hi", 1, "--points", 2,
                       "--output", tmp_path / "s.csv")
    assert code == EXIT_CONFIG
    assert "zz" in err


# -- mc ---------------------------------------------------------------------------------


def test_mc_deterministic(tmp_path):
    for d in ("a", "b"):
        assert run("mc", "--config", TOY, "--output", tmp_path / d, "--seed", 7, "--n", 3)[0] == EXIT_OK
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["mc_00000.txt", "mc_00001.txt", "mc_00002.txt"]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    assert (tmp_path / "a" / names[0]).read_bytes() != (tmp_path / "a" / names[1]).read_bytes()


def test_mc_file_depends_only_on_seed_and_index(tmp_path):
    run("mc", "--config", TOY, "--output", tmp_path / "few", "--seed", 3, "--n", 2)
    run("mc", "--config", TOY, "--output", tmp_path / "many", "--seed", 3, "--n", 5)
    assert (tmp_path / "few" / "mc_00001.txt").read_bytes() == (tmp_path / "many" / "mc_00001.txt").read_bytes()


def test_mc_zero_files(tmp_path):
    code, _, _ = run("mc", "--config", TOY, "--output", tmp_path / "none", "--n", 0)
    assert code == EXIT_OK
    assert list((tmp_path / "none").iterdir()) == []


def test_mc_invalid(tmp_path):
    assert run("mc", "--config", TOY, "--output", tmp_path, "--n", -1)[0] == EXIT_CONFIG
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("mc", "--config", TOY, "--output", blocker / "sub", "--n", 1)[0] == EXIT_CONFIG


def test_poisson_mean_of_single_bin():
    draws = np.array([pseudo_dataset(np.array([100.0]), 11, k)[0] for k in range(10_000)])
    assert abs(draws.mean() - 100.0) <= 3 * 10 / 100


# -- expr -------------------------------------------------------------------------------


def test_expr_dump_ast():
    code, out, _ = run("expr", "a*b + c", "--dump-ast")
    assert code == EXIT_OK
    assert out.splitlines() == ["Add", "  Mul", "    NameRef a", "    NameRef b", "  NameRef c"]
    code, _, err = run("expr", "a + ")
    assert code == EXIT_CONFIG and "1:5" in err
