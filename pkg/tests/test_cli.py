"""Command-line interface tests, driven through click's test runner."""

import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from spatialmt import SetupConfig, generate_setup, run_replications
from spatialmt.cli import main


def write_domain(domain, path):
    df = pd.DataFrame({"id": list(domain.ids),
                       "x": domain.coords[:, 0]})
    if domain.coords.shape[1] == 2:
        df["y"] = domain.coords[:, 1]
    df.to_csv(path, index=False)


def write_direct(domain, obs, path):
    n_rep, _ = obs.shape
    rows = [{"id": i, "rep": r, "value": obs[r, j]}
            for r in range(n_rep) for j, i in enumerate(domain.ids)]
    pd.DataFrame(rows).to_csv(path, index=False)


def write_panel(domain, obs, years, path):
    rows = [{"id": i, "t": years[r], "value": obs[r, j]}
            for r in range(obs.shape[0]) for j, i in enumerate(domain.ids)]
    pd.DataFrame(rows).to_csv(path, index=False)


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    """CSV fixtures: a 1d single-replicate set, a 2d 3-replicate set,
    a yearly panel, and a kernel file matching the 1d noise."""
    root = tmp_path_factory.mktemp("cli-data")
    out = {"root": root}

    dom1, obs1, _ = generate_setup(SetupConfig(
        setup="I", sparsity="sparse", gamma=4.0, noise="weak",
        m=80, reps=1, seed=5))
    write_domain(dom1, root / "loc1.csv")
    write_direct(dom1, obs1, root / "obs1.csv")
    (root / "kern1.txt").write_text(
        "family=exponential\nr=0.5\nrange=0.05\nshape=1.0\n")

    dom2, obs2, _ = generate_setup(SetupConfig(
        setup="IV", sparsity="dense", gamma=3.0, noise="medium",
        m=100, reps=1, seed=6))
    write_domain(dom2, root / "loc2.csv")
    write_direct(dom2, obs2, root / "obs2.csv")

    dom3, obs3, _ = generate_setup(SetupConfig(
        setup="ozone", sparsity="sparse", gamma=1.0, noise="weak",
        m=40, reps=1, seed=7))
    write_domain(dom3, root / "loc3.csv")
    write_panel(dom3, obs3, range(2010, 2022), root / "panel3.csv")
    return out


def invoke(args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


class TestSimulate:
    ARGS = ["simulate", "--setup", "I", "--sparsity", "sparse",
            "--gamma", "4.0", "--corr", "weak", "--m", "60",
            "--reps", "2", "--seed", "5", "--procedures", "bh,st,2d-st"]

    def test_matches_library_run(self, tmp_path):
        res = invoke(self.ARGS + ["--out", str(tmp_path)])
        assert res.exit_code == 0, res.output
        assert "wrote" in res.output
        got = pd.read_csv(tmp_path / "summary.csv")
        cfg = SetupConfig(setup="I", sparsity="sparse", gamma=4.0,
                          noise="weak", m=60, reps=2, seed=5)
        want, want_rec = run_replications(cfg, ("bh", "st", "2d-st"), 0.1)
        pd.testing.assert_frame_equal(got, want, check_dtype=False)
        got_rec = pd.read_csv(tmp_path / "replicates.csv")
        pd.testing.assert_frame_equal(got_rec, want_rec,
                                      check_dtype=False)

    def test_unknown_procedure(self, tmp_path):
        res = invoke(["simulate", "--setup", "I", "--m", "60", "--seed",
                      "1", "--procedures", "bh,magic",
                      "--out", str(tmp_path)])
        assert res.exit_code == 2
        assert "--procedures" in res.output and "magic" in res.output

    def test_q_range_enforced(self, tmp_path):
        res = invoke(self.ARGS + ["--q", "1.5", "--out", str(tmp_path)])
        assert res.exit_code == 2
        assert "--q" in res.output

    def test_config_file_supplies_and_flags_override(self, tmp_path):
        cfgfile = tmp_path / "sim.cfg"
        cfgfile.write_text("setup = I\nsparsity = sparse\ngamma = 4.0\n"
                           "corr = weak\nm = 60\nreps = 2\nseed = 5\n"
                           "procedures = bh\n")
        a = tmp_path / "a"
        res = invoke(["simulate", "--config", str(cfgfile),
                      "--out", str(a)])
        assert res.exit_code == 0, res.output

        b = tmp_path / "b"
        res = invoke(["simulate", "--config", str(cfgfile),
                      "--seed", "7", "--out", str(b)])
        assert res.exit_code == 0, res.output
        rec_a = pd.read_csv(a / "replicates.csv")
        rec_b = pd.read_csv(b / "replicates.csv")
        cfg7 = SetupConfig(setup="I", sparsity="sparse", gamma=4.0,
                           noise="weak", m=60, reps=2, seed=7)
        _, want7 = run_replications(cfg7, ("bh",), 0.1)
        pd.testing.assert_frame_equal(rec_b, want7, check_dtype=False)
        assert not rec_a.equals(rec_b)

    def test_bad_config_line(self, tmp_path):
        cfgfile = tmp_path / "sim.cfg"
        cfgfile.write_text("setup I\n")
        res = invoke(["simulate", "--config", str(cfgfile), "--m", "60",
                      "--seed", "1", "--out", str(tmp_path)])
        assert res.exit_code == 2
        assert "key=value" in res.output


class TestAnalyze:
    def test_direct_with_known_kernel(self, data, tmp_path):
        root = data["root"]
        res = invoke(["analyze", "--locations", str(root / "loc1.csv"),
                      "--observations", str(root / "obs1.csv"),
                      "--kernel", str(root / "kern1.txt"),
                      "--method", "2d-st", "--q", "0.1",
                      "--out", str(tmp_path)])
        assert res.exit_code == 0, res.output
        rej = pd.read_csv(tmp_path / "rejections.csv", dtype={"id": str})
        assert len(rej) == 80
        record = json.loads((tmp_path / "decision.json").read_text())
        assert record["method"] == "2d-st"
        assert record["n_rejected"] == int(rej["rejected"].sum())
        assert record["n_rejected"] > 0
        assert record["fdp_hat"] <= 0.1

    def test_baseline_method(self, data, tmp_path):
        root = data["root"]
        res = invoke(["analyze", "--locations", str(root / "loc1.csv"),
                      "--observations", str(root / "obs1.csv"),
                      "--kernel", str(root / "kern1.txt"),
                      "--method", "st", "--out", str(tmp_path)])
        assert res.exit_code == 0, res.output
        record = json.loads((tmp_path / "decision.json").read_text())
        assert record["method"] == "st"
        assert record["t1_star"] is None

    def test_adaptive_neighborhoods(self, data, tmp_path):
        root = data["root"]
        res = invoke(["analyze", "--locations", str(root / "loc1.csv"),
                      "--observations", str(root / "obs1.csv"),
                      "--kernel", str(root / "kern1.txt"), "--adaptive",
                      "--method", "2d-st", "--out", str(tmp_path)])
        assert res.exit_code == 0, res.output

    def test_fitted_covariance_needs_replicates(self, data, tmp_path):
        root = data["root"]
        res = invoke(["analyze", "--locations", str(root / "loc1.csv"),
                      "--observations", str(root / "obs1.csv"),
                      "--method", "2d-st", "--out", str(tmp_path)])
        assert res.exit_code == 2
        assert "at least 2 replicates" in res.output

    def test_regression_mode(self, data, tmp_path):
        root = data["root"]
        res = invoke(["analyze", "--locations", str(root / "loc3.csv"),
                      "--observations", str(root / "panel3.csv"),
                      "--mode", "regression", "--beta0", "0.3",
                      "--kappa", "2", "--method", "2d-st",
                      "--out", str(tmp_path)])
        assert res.exit_code == 0, res.output
        record = json.loads((tmp_path / "decision.json").read_text())
        assert record["n_rejected"] > 0

    def test_missing_ids_diagnosed(self, data, tmp_path):
        root = data["root"]
        res = invoke(["analyze", "--locations", str(root / "loc2.csv"),
                      "--observations", str(root / "obs1.csv"),
                      "--kernel", str(root / "kern1.txt"),
                      "--method", "st", "--out", str(tmp_path)])
        assert res.exit_code == 2
        assert "no values for location ids" in res.output

    def test_bad_locations_file(self, data, tmp_path):
        bad = tmp_path / "loc.csv"
        bad.write_text("name,pos\na,1\n")
        res = invoke(["analyze", "--locations", str(bad),
                      "--observations", str(data["root"] / "obs1.csv"),
                      "--method", "st", "--out", str(tmp_path)])
        assert res.exit_code == 2
        assert "--locations:" in res.output and "id,x" in res.output

    def test_bad_kernel_file(self, data, tmp_path):
        kern = tmp_path / "kern.txt"
        kern.write_text("family=exponential\n")
        res = invoke(["analyze", "--locations",
                      str(data["root"] / "loc1.csv"),
                      "--observations", str(data["root"] / "obs1.csv"),
                      "--kernel", str(kern),
                      "--method", "st", "--out", str(tmp_path)])
        assert res.exit_code == 2
        assert "--kernel:" in res.output

    def test_bad_q(self, data, tmp_path):
        res = invoke(["analyze", "--locations",
                      str(data["root"] / "loc1.csv"),
                      "--observations", str(data["root"] / "obs1.csv"),
                      "--method", "st", "--q", "0",
                      "--out", str(tmp_path)])
        assert res.exit_code == 2
        assert "--q" in res.output


class TestFitCov:
    def test_fit_then_analyze(self, data, tmp_path):
        root = data["root"]
        kern = tmp_path / "fitted.txt"
        res = invoke(["fit-cov", "--locations", str(root / "loc2.csv"),
                      "--observations", str(root / "obs2.csv"),
                      "--out", str(kern)])
        assert res.exit_code == 0, res.output
        text = kern.read_text()
        pairs = dict(line.split("=", 1)
                     for line in text.strip().splitlines())
        assert pairs["family"] == "exponential"
        assert 0.0 <= float(pairs["r"]) <= 1.0
        assert np.isfinite(float(pairs["range"]))

        res = invoke(["analyze", "--locations", str(root / "loc2.csv"),
                      "--observations", str(root / "obs2.csv"),
                      "--kernel", str(kern), "--method", "2d-st",
                      "--out", str(tmp_path)])
        assert res.exit_code == 0, res.output

    def test_needs_two_replicates(self, data, tmp_path):
        root = data["root"]
        res = invoke(["fit-cov", "--locations", str(root / "loc1.csv"),
                      "--observations", str(root / "obs1.csv"),
                      "--out", str(tmp_path / "k.txt")])
        assert res.exit_code == 2
        assert "at least 2 replicates" in res.output
