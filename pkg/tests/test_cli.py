import copy
import csv
from pathlib import Path

import numpy as np
import pytest
import yaml

from adampc import cli

CONFIG_PATH = Path(__file__).resolve().parent.parent / "configs" / "canonical.yaml"


@pytest.fixture()
def small_doc():
    """Canonical config scaled down for fast CLI round trips."""
    doc = cli.load_config(CONFIG_PATH)
    doc = copy.deepcopy(doc)
    doc["run"]["T"] = 25
    doc["run"]["n_initial_states"] = 2
    doc["run"]["n_initial_estimates"] = 1
    doc["reference"] = {"points": [[1.2, 1.2]], "switch_steps": []}
    return doc


def write_doc(doc, tmp_path, name="config.yaml"):
    path = tmp_path / name
    cli.dump_config(doc, path)
    return path


class TestConfigParsing:
    def test_canonical_config_round_trip(self):
        doc = cli.load_config(CONFIG_PATH)
        scenario = cli.scenario_from_config(doc)
        assert scenario.N == 5
        assert scenario.T == 80
        assert scenario.lam == pytest.approx(0.045)
        assert scenario.hull.box_bounds is not None
        assert np.allclose(scenario.plant.A, [[-0.5, 0.0], [0.5, -0.4]])
        assert np.allclose(scenario.theta_hat0[:, 2:], [[1.0, 0.1], [0.1, 0.8]])
        assert scenario.switch_steps == [40]

    def test_interval_hull_flag(self, small_doc):
        small_doc["uncertainty"]["interval_hull"] = False
        scenario = cli.scenario_from_config(small_doc)
        assert scenario.hull.box_bounds is None
        assert scenario.hull.size == 4

    def test_missing_field_names_path(self, small_doc):
        del small_doc["weights"]["Q"]
        with pytest.raises(cli.ConfigError, match="weights.Q"):
            cli.scenario_from_config(small_doc)

    def test_bad_matrix_names_path(self, small_doc):
        small_doc["plant"]["A"] = [[1.0, "x"], [0.0, 1.0]]
        with pytest.raises(cli.ConfigError, match="plant.A"):
            cli.scenario_from_config(small_doc)

    def test_nonpositive_bound_rejected(self, small_doc):
        small_doc["constraints"]["input_bound"] = -1.0
        with pytest.raises(cli.ConfigError, match="input_bound"):
            cli.scenario_from_config(small_doc)

    def test_dimension_mismatch_rejected(self, small_doc):
        small_doc["weights"]["Q"] = [[1.0]]
        with pytest.raises(cli.ConfigError, match="weights.Q"):
            cli.scenario_from_config(small_doc)

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("plant: [unclosed\n")
        with pytest.raises(cli.ConfigError):
            cli.load_config(path)

    def test_nonmapping_root(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(cli.ConfigError):
            cli.load_config(path)


class TestSynthesisHash:
    def test_stable_under_run_changes(self, small_doc):
        h1 = cli.synthesis_hash(small_doc)
        other = copy.deepcopy(small_doc)
        other["run"]["seed"] = 999
        assert cli.synthesis_hash(other) == h1

    def test_changes_with_synthesis_fields(self, small_doc):
        h1 = cli.synthesis_hash(small_doc)
        other = copy.deepcopy(small_doc)
        other["gamma"] = 0.8
        assert cli.synthesis_hash(other) != h1


class TestCommands:
    def test_synthesize_exit_ok(self, small_doc, tmp_path, capsys):
        path = write_doc(small_doc, tmp_path)
        code = cli.main(
            ["synthesize", "--config", str(path), "--out-dir", str(tmp_path / "out")]
        )
        assert code == cli.EXIT_OK
        out = capsys.readouterr().out
        assert "artifact written" in out and "tube radii" in out
        arts = list((tmp_path / "out").glob("artifact-*.txt"))
        assert len(arts) == 1
        assert arts[0].read_text().startswith("adampc-synthesis-artifact v1")

    def test_config_error_exit_code(self, small_doc, tmp_path, capsys):
        del small_doc["horizon"]
        path = write_doc(small_doc, tmp_path)
        code = cli.main(["synthesize", "--config", str(path)])
        assert code == cli.EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_synthesis_rejection_exit_code(self, small_doc, tmp_path, capsys):
        small_doc["tube_scale"] = 1.0  # unscaled tubes empty every tightened set
        path = write_doc(small_doc, tmp_path)
        code = cli.main(["synthesize", "--config", str(path)])
        assert code == cli.EXIT_SYNTHESIS
        assert "synthesis rejected" in capsys.readouterr().err

    def test_run_writes_outputs_and_caches_artifact(self, small_doc, tmp_path, capsys):
        path = write_doc(small_doc, tmp_path)
        out = tmp_path / "out"
        code = cli.main(["run", "--config", str(path), "--out-dir", str(out)])
        assert code == cli.EXIT_OK
        printed = capsys.readouterr().out
        assert "violations: 0" in printed
        runs = sorted(out.glob("run_*.csv"))
        assert len(runs) == 2
        assert (out / "summary.csv").exists()
        arts = list(out.glob("artifact-*.txt"))
        assert len(arts) == 1
        # second invocation reuses the cached artifact (same mtime content)
        before = arts[0].read_bytes()
        code = cli.main(["run", "--config", str(path), "--out-dir", str(out)])
        assert code == cli.EXIT_OK
        assert arts[0].read_bytes() == before

    def test_run_byte_identical_across_invocations(self, small_doc, tmp_path):
        path = write_doc(small_doc, tmp_path)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert cli.main(["run", "--config", str(path), "--out-dir", str(out1)]) == 0
        assert cli.main(["run", "--config", str(path), "--out-dir", str(out2)]) == 0
        for f in sorted(out1.glob("*.csv")):
            assert f.read_bytes() == (out2 / f.name).read_bytes()

    def test_runs_flag_splits_counts(self, small_doc, tmp_path):
        path = write_doc(small_doc, tmp_path)
        out = tmp_path / "out"
        assert cli.main(
            ["run", "--config", str(path), "--out-dir", str(out), "--runs", "4"]
        ) == cli.EXIT_OK
        assert len(list(out.glob("run_*.csv"))) == 4

    def test_overrides_apply(self, small_doc, tmp_path, capsys):
        path = write_doc(small_doc, tmp_path)
        code = cli.main(
            [
                "run",
                "--config",
                str(path),
                "--out-dir",
                str(tmp_path / "out"),
                "--seed",
                "11",
                "--horizon",
                "4",
            ]
        )
        assert code == cli.EXIT_OK

    def test_out_dir_env_fallback(self, small_doc, tmp_path, monkeypatch):
        path = write_doc(small_doc, tmp_path)
        env_out = tmp_path / "envout"
        monkeypatch.setenv(cli.OUT_DIR_ENV, str(env_out))
        assert cli.main(["synthesize", "--config", str(path)]) == cli.EXIT_OK
        assert list(env_out.glob("artifact-*.txt"))


class TestExportPlots:
    def test_tidy_output(self, small_doc, tmp_path):
        path = write_doc(small_doc, tmp_path)
        out = tmp_path / "out"
        assert cli.main(["run", "--config", str(path), "--out-dir", str(out)]) == 0
        assert cli.main(["export-plots", "--out-dir", str(out)]) == cli.EXIT_OK
        plots = out / "plots"
        files = {f.name for f in plots.glob("*.csv")}
        assert files == {f"{k}.csv" for k in cli.PLOT_FAMILIES}
        with open(plots / "states.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["time", "series", "value"]
        series = {r[1] for r in rows[1:]}
        assert "run_000/x1" in series and "run_001/xr2" in series
        T = small_doc["run"]["T"]
        # 2 runs x T steps x 4 channels
        assert len(rows) - 1 == 2 * T * 4

    def test_empty_dir_is_config_error(self, tmp_path, capsys):
        assert (
            cli.main(["export-plots", "--out-dir", str(tmp_path / "nothing")])
            == cli.EXIT_CONFIG
        )
        assert "no run data" in capsys.readouterr().err


def test_dump_config_round_trip(small_doc, tmp_path):
    path = write_doc(small_doc, tmp_path)
    again = cli.load_config(path)
    assert again == small_doc
    assert yaml.safe_dump(again, sort_keys=True) == yaml.safe_dump(
        small_doc, sort_keys=True
    )
