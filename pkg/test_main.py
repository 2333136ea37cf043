import json

import pytest

import config
from main import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main


@pytest.fixture(autouse=True)
def output_dir(tmp_path, monkeypatch):
    monkeypatch.setattr(config, "OUTPUT_DIR", str(tmp_path))
    return tmp_path


def generate(output_dir, name="panel.csv", *extra):
    argv = ["generate", "--m", "2", "--n", "100", "--sigma2", "1", "--scheme", "linear:0,1", "--seed", "42", "-o", name]
    return main(argv + list(extra))


def estimate_report(capsys, *argv):
    capsys.readouterr()
    code = main(["estimate", *argv])
    return code, json.loads(capsys.readouterr().out)


class TestGenerate:
    def test_writes_panel_and_sidecar(self, output_dir):
        assert generate(output_dir) == EXIT_OK
        assert (output_dir / "panel.csv").exists()
        meta = json.loads((output_dir / "panel.json").read_text())
        assert meta["seed"] == 42
        assert meta["spec"]["m"] == 2 and meta["spec"]["n"] == 100

    def test_byte_identical_rerun(self, output_dir):
        generate(output_dir, "a.csv")
        generate(output_dir, "b.csv")
        assert (output_dir / "a.csv").read_bytes() == (output_dir / "b.csv").read_bytes()
        assert (output_dir / "a.json").read_bytes() == (output_dir / "b.json").read_bytes()

    def test_single_replicate_is_usage_error(self, output_dir, capsys):
        code = main(["generate", "--m", "1", "--n", "10", "-o", "p.csv"])
        assert code == EXIT_USAGE
        assert "m must be >= 2" in capsys.readouterr().err
        assert not (output_dir / "p.csv").exists()

    def test_bad_scheme_is_usage_error(self):
        assert main(["generate", "--n", "10", "--scheme", "cubic:1", "-o", "p.csv"]) == EXIT_USAGE

    def test_unwritable_output(self, output_dir):
        (output_dir / "blocker").write_text("")
        assert main(["generate", "--n", "10", "-o", "blocker/p.csv"]) == EXIT_RUNTIME


class TestEstimate:
    def test_closed_and_newton_agree(self, output_dir, capsys):
        generate(output_dir)
        path = str(output_dir / "panel.csv")
        code, closed = estimate_report(capsys, path, "--method", "closed")
        assert code == EXIT_OK
        code, newton = estimate_report(capsys, path, "--method", "newton")
        assert code == EXIT_OK
        assert newton["optimizer"]["converged"]
        assert abs(closed["sigma2_hat"] - newton["sigma2_hat"]) <= 1e-8
        assert closed["second_order"]["is_maximum"]
        assert closed["diagnostic"]["warning"]
        assert closed["seed"] == 42

    def test_recast_identity_check(self, output_dir, capsys):
        generate(output_dir)
        code, report = estimate_report(
            capsys, str(output_dir / "panel.csv"), "--method", "recast", "--contrasts-out", "contrasts.csv"
        )
        assert code == EXIT_OK
        assert report["identity_check"]["passed"]
        assert report["recast"]["n_eff"] == 100
        assert report["recast"]["sigma2_hat"] == pytest.approx(2 * report["identity_check"]["naive_sigma2"], rel=1e-12)
        assert (output_dir / "contrasts.csv").exists()

    def test_report_file(self, output_dir, capsys):
        generate(output_dir)
        code, report = estimate_report(capsys, str(output_dir / "panel.csv"), "-o", "report.json")
        assert code == EXIT_OK
        assert json.loads((output_dir / "report.json").read_text()) == report

    def test_non_numeric_cell(self, output_dir, capsys):
        bad = output_dir / "bad.csv"
        bad.write_text("group,replicate,value\n1,1,0.5\n1,2,oops\n")
        assert main(["estimate", str(bad)]) == EXIT_RUNTIME
        assert "line 3" in capsys.readouterr().err

    def test_missing_file(self, output_dir):
        assert main(["estimate", str(output_dir / "nope.csv")]) == EXIT_RUNTIME

    def test_incomplete_sidecar(self, output_dir, capsys):
        generate(output_dir)
        (output_dir / "panel.json").write_text(json.dumps({"spec": {"m": 2}}))
        assert main(["estimate", str(output_dir / "panel.csv")]) == EXIT_RUNTIME
        assert "bad sidecar" in capsys.readouterr().err

    def test_bad_optimizer_flags(self, output_dir):
        generate(output_dir)
        assert main(["estimate", str(output_dir / "panel.csv"), "--step-shrink", "2"]) == EXIT_USAGE


class TestExperiment:
    def test_bias_run_prints_verdicts(self, output_dir, capsys):
        code = main(["experiment", "--kind", "bias", "--n-grid", "200", "-R", "200", "--seed", "3", "-o", "bias.csv"])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "naive bias" in out
        assert (output_dir / "bias.csv").exists()
        report = json.loads((output_dir / "bias.json").read_text())
        assert report["seeds"]["master_seed"] == 3
        assert report["config"]["n_grid"] == [200]

    def test_workers_do_not_change_results(self, output_dir):
        common = ["experiment", "--kind", "sweep", "--n-grid", "10,100,1000", "-R", "40", "--seed", "9"]
        assert main(common + ["--workers", "1", "-o", "w1.csv"]) == EXIT_OK
        assert main(common + ["--workers", "4", "-o", "w4.csv"]) == EXIT_OK
        assert (output_dir / "w1.csv").read_bytes() == (output_dir / "w4.csv").read_bytes()
        assert (output_dir / "w1.json").read_bytes() == (output_dir / "w4.json").read_bytes()

    def test_config_file_with_flag_override(self, output_dir):
        cfg = output_dir / "exp.json"
        cfg.write_text(json.dumps({
            "version": 1, "kind": "bias", "sigma2": 2.0, "m": 3,
            "n_grid": [50], "replications": 30, "master_seed": 5,
        }))
        assert main(["experiment", "--config", str(cfg), "--m", "4", "--format", "json", "-o", "r.json"]) == EXIT_OK
        report = json.loads((output_dir / "r.json").read_text())
        assert report["config"]["m"] == 4
        assert report["config"]["sigma2"] == 2.0

    def test_empty_grid_in_config(self, output_dir):
        cfg = output_dir / "empty.json"
        cfg.write_text(json.dumps({"version": 1, "n_grid": []}))
        assert main(["experiment", "--config", str(cfg)]) == EXIT_USAGE

    def test_wrong_config_version(self, output_dir):
        cfg = output_dir / "v2.json"
        cfg.write_text(json.dumps({"version": 2}))
        assert main(["experiment", "--config", str(cfg)]) == EXIT_USAGE

    def test_null_values_fall_back_to_defaults(self, output_dir):
        cfg = output_dir / "nulls.json"
        cfg.write_text(json.dumps({
            "version": 1, "kind": "path", "n_max": None, "workers": None, "checkpoints": None,
        }))
        argv = ["experiment", "--config", str(cfg), "-o", "path.csv"]
        assert main(argv) == EXIT_OK
        assert (output_dir / "path.csv").exists()

    def test_null_values_in_bias_config(self, output_dir):
        cfg = output_dir / "nulls.json"
        cfg.write_text(json.dumps({
            "version": 1, "kind": "bias", "n_grid": [20], "replications": 10, "workers": None, "m": None,
        }))
        assert main(["experiment", "--config", str(cfg), "-o", "b.csv"]) == EXIT_OK
        report = json.loads((output_dir / "b.json").read_text())
        assert report["config"]["m"] == 2

    def test_non_integer_workers_in_config(self, output_dir, capsys):
        cfg = output_dir / "w.json"
        cfg.write_text(json.dumps({"version": 1, "kind": "bias", "n_grid": [20], "workers": "many"}))
        assert main(["experiment", "--config", str(cfg)]) == EXIT_USAGE
        assert "workers must be an integer" in capsys.readouterr().err

    def test_path_kind(self, output_dir, capsys):
        code = main(["experiment", "--kind", "path", "--n-max", "1000", "--checkpoints", "1,10,100,1000", "-o", "path.csv"])
        assert code == EXIT_OK
        lines = (output_dir / "path.csv").read_text().splitlines()
        assert lines[0] == "n,naive,recast"
        assert len(lines) == 5

    def test_incidental_kind(self, output_dir, capsys):
        argv = ["experiment", "--kind", "incidental", "--n-grid", "5,50", "-R", "400", "--seed", "12", "-o", "mu.csv"]
        assert main(argv) == EXIT_OK
        out = capsys.readouterr().out
        assert "variance of mu_hat_1" in out
        lines = (output_dir / "mu.csv").read_text().splitlines()
        assert [line.split(",")[0] for line in lines[1:]] == ["mu_hat_1", "mu_hat_1"]

    def test_bad_checkpoints(self):
        assert main(["experiment", "--kind", "path", "--n-max", "100", "--checkpoints", "5,1"]) == EXIT_USAGE

    def test_strict_exit_on_failed_verdict(self, output_dir):
        # one replication cannot support the variance claim
        argv = ["experiment", "--kind", "bias", "--n-grid", "1000", "-R", "1", "-o", "one.csv", "--strict"]
        assert main(argv) == EXIT_RUNTIME

    def test_unknown_log_level(self):
        with pytest.raises(SystemExit) as info:
            main(["--log-level", "chatty", "estimate", "x.csv"])
        assert info.value.code == 2
