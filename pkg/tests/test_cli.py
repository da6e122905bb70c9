import csv
import json

import pytest

from crowdcert.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def certificate(out):
    return json.loads(out)["certificate"]


def test_certify_one_coin(capsys):
    code, cap = run(capsys, "certify", "one-coin", "--rho", 0.1, "--nu0", 0.5)
    assert code == 0
    assert certificate(cap.out)["verdict"] == "MV_OPTIMAL"


def test_certify_two_coin_delta(capsys, tmp_path):
    out = tmp_path / "c.json"
    code, cap = run(capsys, "certify", "two-coin", "--t00", 0.6, "--t11", 0.9, "--nu0", 0.9, "--h", 3,
                    "--out", out)
    assert code == 0 and "MV_SUBOPTIMAL" in cap.out
    payload = json.loads(out.read_text())
    assert payload["certificate"]["verdict"] == "MV_SUBOPTIMAL"
    assert payload["config"]["t00"] == 0.6


def test_certify_precondition_failure(capsys):
    code, cap = run(capsys, "certify", "one-coin", "--rho", 0.6, "--nu0", 0.5)
    assert code == 1 and "AdversarialNoise" in cap.err


def test_missing_option_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["certify", "one-coin", "--rho", "0.1"])
    assert exc.value.code == 2


@pytest.fixture()
def beta_dir(tmp_path, capsys):
    d = tmp_path / "beta"
    code, _ = run(capsys, "simulate", "fixed", "--n", 2000, "--nu0", 0.5, "--t00", 0.9, "--t11", 0.9,
                  "--h", 3, "--seed", 1, "--out-dir", d)
    assert code == 0
    return d


def test_simulate_outputs(beta_dir):
    assert (beta_dir / "annotations.csv").read_text().startswith("task_id,annotator_id,label\n")
    params = json.loads((beta_dir / "params.json").read_text())
    assert params["prior"] == [0.5, 0.5] and len(params["annotator_matrices"]) == 3


def test_simulate_deterministic(beta_dir, tmp_path, capsys):
    again = tmp_path / "again"
    run(capsys, "simulate", "fixed", "--n", 2000, "--nu0", 0.5, "--t00", 0.9, "--t11", 0.9,
        "--h", 3, "--seed", 1, "--out-dir", again)
    for name in ("annotations.csv", "gold.csv"):
        assert (again / name).read_bytes() == (beta_dir / name).read_bytes()


@pytest.mark.parametrize("method", ["mv", "ds", "iwmv"])
def test_aggregate(beta_dir, tmp_path, capsys, method):
    out = tmp_path / f"{method}.csv"
    code, cap = run(capsys, "aggregate", "--method", method, "--annotations", beta_dir / "annotations.csv",
                    "--gold", beta_dir / "gold.csv", "--out", out)
    assert code == 0 and "accuracy" in cap.out
    meta = json.loads((tmp_path / f"{method}.csv.meta.json").read_text())
    assert meta["accuracy"] == pytest.approx(0.971, abs=0.02)
    assert meta["config"]["method"] == method
    with open(out, newline="") as fh:
        assert len(list(csv.reader(fh))) == 2001
    if method == "ds":
        assert len(meta["annotator_matrices"]) == 3


def test_aggregate_map(beta_dir, tmp_path, capsys):
    t = tmp_path / "t.csv"
    t.write_text("0.9,0.1\n0.1,0.9\n")
    code, _ = run(capsys, "aggregate", "--method", "map", "--annotations", beta_dir / "annotations.csv",
                  "--t-matrix", t, "--prior", "0.5,0.5", "--out", tmp_path / "m.csv", "--format", "json")
    assert code == 0
    labels = json.loads((tmp_path / "m.csv").read_text())
    assert len(labels) == 2000 and set(labels.values()) <= {0, 1}


def test_aggregate_missing_file(tmp_path, capsys):
    code, cap = run(capsys, "aggregate", "--annotations", tmp_path / "nope.csv", "--out", tmp_path / "o.csv")
    assert code == 1 and cap.err


def test_certify_estimated(beta_dir, tmp_path, capsys):
    anchors = tmp_path / "anchors.csv"
    rows = (beta_dir / "gold.csv").read_text().splitlines()
    anchors.write_text("\n".join(rows[:201]) + "\n")
    code, cap = run(capsys, "certify", "estimated", "--annotations", beta_dir / "annotations.csv",
                    "--anchors", anchors, "--epsilon", 0.02, "--gamma", 0.05, "--eta", 0.3, "--xi", 0.05)
    assert code == 0
    payload = json.loads(cap.out)
    assert payload["certificate"]["verdict"] in ("CERTIFIED_OPTIMAL_WHP", "INCONCLUSIVE")
    assert payload["estimate"]["H"] == 3 and payload["estimate"]["N"] == 2000


def test_certify_estimated_injected(tmp_path, capsys):
    t = tmp_path / "t.csv"
    t.write_text("0.8,0.2\n0.2,0.8\n")
    code, cap = run(capsys, "certify", "estimated", "--t-hat", t, "--nu-noisy", "0.5,0.5", "--h", 3,
                    "--n", 100000, "--epsilon", 0.01, "--gamma", 0.01, "--eta", 0.3, "--xi", 0.1)
    assert code == 0
    cert = certificate(cap.out)
    assert cert["verdict"] == "CERTIFIED_OPTIMAL_WHP"
    assert cert["confidence"] == pytest.approx(1 - 0.02 - 2 * 2.718281828459045 ** (-2 * 1e-4 * 1e5))


def test_certify_two_groups_and_sigma(capsys):
    code, cap = run(capsys, "certify", "two-groups", "--h", 7, "--size-a", 3, "--ta00", 0.58, "--ta11", 0.8,
                    "--tb00", 0.8, "--tb11", 0.58, "--nu0", 0.55)
    assert code == 0 and certificate(cap.out)["verdict"] == "MV_OPTIMAL"
    code, cap = run(capsys, "certify", "sigma-bound", "--t00", 0.7, "--t11", 0.8, "--nu0", 0.6, "--h", 3)
    assert code == 0 and json.loads(cap.out)["sigma_bound"]["both"] > 0


def test_simulate_perturbed_and_groups(tmp_path, capsys):
    code, _ = run(capsys, "simulate", "perturbed", "--n", 500, "--nu0", 0.6, "--t00", 0.7, "--t11", 0.8,
                  "--h", 3, "--sigma-fraction", 0.9, "--out-dir", tmp_path / "p")
    assert code == 0
    params = json.loads((tmp_path / "p" / "params.json").read_text())
    assert params["sigma"] > 0
    code, _ = run(capsys, "simulate", "two-groups", "--n", 500, "--nu0", 0.55, "--ta00", 0.58, "--ta11", 0.8,
                  "--tb00", 0.8, "--tb11", 0.58, "--size-a", 3, "--size-b", 4, "--out-dir", tmp_path / "g")
    assert code == 0
    code, cap = run(capsys, "simulate", "perturbed", "--n", 500, "--nu0", 0.6, "--t00", 0.7, "--t11", 0.8,
                    "--h", 3, "--sigma", 0.5, "--out-dir", tmp_path / "q")
    assert code == 1 and "SigmaTooLarge" in cap.err


def test_sweep_csv(tmp_path, capsys):
    out = tmp_path / "s.csv"
    code, _ = run(capsys, "sweep", "--nu0", "open:0:1:5", "--t00", "open:0.5:1:5", "--t11", 0.8, "--h", "odd:1:5",
                  "--out", out)
    assert code == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 75
    meta = json.loads((tmp_path / "s.csv.meta.json").read_text())
    assert meta["n_cells"] == 75 and meta["n_errors"] == 0


def test_sweep_mc_smoke(tmp_path, capsys):
    out = tmp_path / "s.json"
    code, _ = run(capsys, "sweep", "--nu0", "open:0:1:5", "--t00", "open:0.5:1:5", "--t11", 0.75,
                  "--mode", "MONTE_CARLO", "--n-samples", 5000, "--seed", 2, "--out", out, "--format", "json")
    assert code == 0
    cells = json.loads(out.read_text())
    assert len(cells) == 25 and all(c["empirical_mv"] is not None for c in cells)


def test_sweep_cell_errors_exit_nonzero(tmp_path, capsys):
    code, _ = run(capsys, "sweep", "--nu0", 0.5, "--t00", 0.8, "--t11", 0.8, "--estimate",
                  "--n-samples", 2000, "--anchor-fraction", 0.0001, "--out", tmp_path / "s.csv")
    assert code == 1
    with open(tmp_path / "s.csv", newline="") as fh:
        assert list(csv.DictReader(fh))[0]["error"]


def test_oracle_check(capsys):
    code, cap = run(capsys, "oracle-check", "--t00", 0.7, "--t11", 0.8, "--nu0", 0.6, "--h", 5)
    assert code == 0 and json.loads(cap.out)["agree"] is True


def test_config_file_and_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"rho": 0.3, "nu0": 0.2}))
    code, cap = run(capsys, "certify", "one-coin", "--config", cfg)
    assert code == 0 and certificate(cap.out)["verdict"] == "MV_SUBOPTIMAL"
    code, cap = run(capsys, "certify", "one-coin", "--config", cfg, "--nu0", 0.5)
    payload = json.loads(cap.out)
    assert payload["certificate"]["verdict"] == "MV_OPTIMAL"
    assert payload["config"]["nu0"] == 0.5 and payload["config"]["rho"] == 0.3


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"rho": 0.3, "nu0": 0.2, "bogus": 1}))
    with pytest.raises(SystemExit) as exc:
        main(["certify", "one-coin", "--config", str(cfg)])
    assert exc.value.code == 2


def test_paths_resolved(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    run(capsys, "certify", "one-coin", "--rho", 0.1, "--nu0", 0.5, "--out", "rel.json")
    payload = json.loads((tmp_path / "rel.json").read_text())
    assert payload["config"]["out"] == str(tmp_path / "rel.json")
