import csv
import json

import numpy as np
import pytest

from fusedfda.basis import design_matrix
from fusedfda.cli import main
from fusedfda.data import read_dataset
from fusedfda.ecm import FitResult
from fusedfda.mixture import log_component_densities, DesignData

from oracles import dense_log_density


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def small_sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--scenario", "I", "--sigma-e", "1.0", "--seed", "3", "--n-per-cluster", "15", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def small_fit(small_sim, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    args = ["fit", str(small_sim / "data.csv"), "--g", "2", "--lambda-l", "100", "--lambda-s", "1e-4", "--seed", "1", "--out", str(out)]
    assert main(args) == 0
    return out


def test_simulate_default_size(tmp_path):
    assert main(["simulate", "--scenario", "I", "--sigma-e", "1.0", "--seed", "1", "--out", str(tmp_path)]) == 0
    ds = read_dataset(tmp_path / "data.csv")
    assert ds.n_curves == 400
    truth = json.loads((tmp_path / "truth.json").read_text())
    assert len(truth["true_labels"]) == 400
    assert truth["noninformative_intervals"][0][:2] == [0, 1]


def test_simulate_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--scenario", "II", "--sigma-e", "2", "--seed", "7", "--n-per-cluster", "3", "--out", str(tmp_path / d)]) == 0
    for name in ("data.csv", "truth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_usage_errors_exit_two(capsys):
    for argv in (["simulate", "--sigma-e", "1"], ["simulate", "--scenario", "IV", "--sigma-e", "1"], ["nope"], []):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_fit_outputs(small_fit):
    rows = read_rows(small_fit / "means.csv")
    assert rows[0] == ["cluster", "t", "mu"]
    assert len(rows) == 1 + 2 * 200
    assert read_rows(small_fit / "fused.csv")[0] == ["g", "g2", "lo", "hi"]
    doc = json.loads((small_fit / "fit.json").read_text())
    assert doc["config"]["n_clusters"] == 2 and doc["seed"] == 1


def test_fit_rerun_identical(small_sim, small_fit, tmp_path):
    args = ["fit", str(small_sim / "data.csv"), "--g", "2", "--lambda-l", "100", "--lambda-s", "1e-4", "--seed", "1", "--out", str(tmp_path)]
    assert main(args) == 0
    assert (tmp_path / "fit.json").read_bytes() == (small_fit / "fit.json").read_bytes()


def test_fit_huge_fusion_reports_full_domain(small_sim, tmp_path):
    assert main(["fit", str(small_sim / "data.csv"), "--g", "2", "--lambda-l", "1e6", "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "fused.csv")
    assert rows[1:] == [["1", "2", "0.0", "1.0"]]


def test_fit_config_file_and_missing_data(small_sim, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_clusters": 1, "lambda_smooth": 1e-3}))
    assert main(["fit", str(small_sim / "data.csv"), "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "fit.json").read_text())["config"]["n_clusters"] == 1
    assert main(["fit", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 1


def test_cv_single_cell_and_rerun(small_sim, tmp_path):
    argv = ["cv", str(small_sim / "data.csv"), "--g", "2", "--lambda-l", "10", "--lambda-s", "1e-4", "--k", "3", "--refit"]
    assert main(argv + ["--out", str(tmp_path / "a")]) == 0
    assert main(argv + ["--out", str(tmp_path / "b")]) == 0
    chosen = json.loads((tmp_path / "a" / "chosen.json").read_text())
    assert chosen["chosen"] == {"n_clusters": 2, "lambda_smooth": 1e-4, "lambda_fuse": 10.0}
    assert (tmp_path / "a" / "cv_table.csv").read_bytes() == (tmp_path / "b" / "cv_table.csv").read_bytes()
    assert (tmp_path / "a" / "fit.json").exists()
    assert read_rows(tmp_path / "a" / "cv_table.csv")[0][:5] == ["G", "lambda_s", "lambda_l", "cv_mean", "cv_se"]


def test_cv_defaults():
    from fusedfda.cli import build_parser

    args = build_parser().parse_args(["cv", "x.csv"])
    assert (args.k, args.m1, args.m2, args.m3) == (5, 0.5, 0.0, 0.5)
    assert args.g == [1, 2, 3]


def test_classify_training_curves_match_fit(small_sim, small_fit, tmp_path):
    out = tmp_path / "labels.csv"
    assert main(["classify", str(small_sim / "data.csv"), "--model", str(small_fit / "fit.json"), "--out", str(out)]) == 0
    rows = read_rows(out)
    assert rows[0] == ["curve_id", "label", "posterior_1", "posterior_2"]
    model = FitResult.from_json((small_fit / "fit.json").read_text())
    assert [int(r[1]) for r in rows[1:]] == model.labels.tolist()
    post = np.array([[float(v) for v in r[2:]] for r in rows[1:]])
    np.testing.assert_allclose(post.sum(axis=1), 1.0, atol=1e-12)


def test_classify_held_out_curves_match_oracle(small_fit, tmp_path, capsys):
    assert main(["simulate", "--scenario", "I", "--sigma-e", "1.0", "--seed", "99", "--n-per-cluster", "4", "--out", str(tmp_path)]) == 0
    assert main(["classify", str(tmp_path / "data.csv"), "--model", str(small_fit / "fit.json")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    labels = [int(ln.split(",")[1]) for ln in lines[1:]]
    model = FitResult.from_json((small_fit / "fit.json").read_text())
    p = model.params
    ds = read_dataset(tmp_path / "data.csv", domain=(0.0, 1.0))
    for c, lab in zip(ds.curves, labels):
        S = design_matrix(model.basis, c.timepoints)
        ref = [np.log(p.mixing[g]) + dense_log_density(c.values, S, p.means[g], p.gamma_diag, p.noise_var) for g in range(2)]
        assert lab == int(np.argmax(ref)) + 1


def test_classify_single_cluster_model(small_sim, tmp_path, capsys):
    assert main(["fit", str(small_sim / "data.csv"), "--g", "1", "--out", str(tmp_path)]) == 0
    assert main(["classify", str(small_sim / "data.csv"), "--model", str(tmp_path / "fit.json")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert {ln.split(",")[1] for ln in lines[1:]} == {"1"}


def test_classify_rejects_out_of_domain(small_fit, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("curve_id,t,y\na,0.5,1\na,1.5,2\n")
    assert main(["classify", str(bad), "--model", str(small_fit / "fit.json")]) == 1


def test_evaluate(small_sim, small_fit, tmp_path):
    out = tmp_path / "m.csv"
    assert main(["evaluate", "--model", str(small_fit / "fit.json"), "--truth", str(small_sim / "truth.json"), "--out", str(out)]) == 0
    rows = read_rows(out)
    assert rows[0] == ["aRand", "rmse", "noninf_fraction", "G_selected"]
    assert 0.5 < float(rows[1][0]) <= 1.0 and rows[1][3] == "2"
    assert main(["evaluate", "--model", str(small_fit / "fit.json"), "--truth", str(tmp_path / "none.json")]) == 1


def test_evaluate_perfect_and_empty(small_sim, small_fit, tmp_path, capsys):
    doc = json.loads((small_fit / "fit.json").read_text())
    truth = json.loads((small_sim / "truth.json").read_text())
    doc["labels"] = truth["true_labels"]
    doc["fused_pairs"] = [[1, 2, [[iv[0], iv[1]] for iv in truth["noninformative_intervals"][0][2]]]]
    perfect = tmp_path / "perfect.json"
    perfect.write_text(json.dumps(doc))
    assert main(["evaluate", "--model", str(perfect), "--truth", str(small_sim / "truth.json")]) == 0
    row = capsys.readouterr().out.strip().splitlines()[1].split(",")
    assert float(row[0]) == 1.0 and float(row[2]) == 1.0
    doc["fused_pairs"] = []
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps(doc))
    assert main(["evaluate", "--model", str(empty), "--truth", str(small_sim / "truth.json")]) == 0
    assert float(capsys.readouterr().out.strip().splitlines()[1].split(",")[2]) == 0.0


def test_study_writes_tables(tmp_path, capsys):
    argv = ["study", "--scenario", "I", "--sigma-e", "1.0", "--replicates", "1", "--n-per-cluster", "10", "--g", "2"]
    argv += ["--lambda-l", "0,100", "--lambda-s", "1e-4", "--k", "2", "--out", str(tmp_path)]
    assert main(argv) == 0
    assert "scenario I sigma_e=1" in capsys.readouterr().out
    assert len(read_rows(tmp_path / "replicates.csv")) == 2
    assert read_rows(tmp_path / "summary.csv")[0][0] == "sigma_e"
