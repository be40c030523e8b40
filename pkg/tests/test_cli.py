"""End-to-end command-line behaviour: outputs, formats, exit codes."""

import json

import numpy as np
import pytest

from lmeffects.cli import main

PANEL_PERIODS = ["2018-01", "2018-02", "2018-03"]


@pytest.fixture
def values_csv(tmp_path):
    def write(name, values, header=False):
        path = tmp_path / name
        lines = (["value"] if header else []) + [repr(float(v)) for v in values]
        path.write_text("\n".join(lines) + "\n")
        return str(path)

    return write


@pytest.fixture
def panel_csv(tmp_path, panel_builder):
    data = panel_builder(PANEL_PERIODS, "2018-03", n_per_arm=60, seed=21)
    path = tmp_path / "panel.csv"
    data.to_csv(path)
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestLmomentsCommand:
    def test_prints_requested_moments(self, capsys, values_csv):
        path = values_csv("v.csv", [0.0, 1.0], header=True)
        code, out, err = run(capsys, "lmoments", "--input", path, "--R", "4")
        assert code == 0 and not err
        lines = out.strip().splitlines()
        assert lines[0].split() == ["order", "lmoment"]
        assert len(lines) == 5
        assert lines[1].split() == ["1", "0.5"]
        assert lines[2].split() == ["2", "0.25"]

    def test_json_matches_table_at_6_digits(self, capsys, values_csv, tmp_path):
        rng = np.random.default_rng(5)
        path = values_csv("v.csv", list(rng.lognormal(size=40)))
        code, table_out, _ = run(capsys, "lmoments", "--input", path, "--R", "3")
        assert code == 0
        code, json_out, _ = run(
            capsys, "lmoments", "--input", path, "--R", "3", "--format", "json"
        )
        assert code == 0
        payload = json.loads(json_out)
        assert payload["schema_version"] == 1
        table_vals = [
            line.split()[1] for line in table_out.strip().splitlines()[1:]
        ]
        for text_val, json_val in zip(table_vals, payload["lmoments"]):
            assert text_val == format(json_val, ".6g")

    def test_output_file(self, capsys, values_csv, tmp_path):
        path = values_csv("v.csv", [1.0, 2.0, 3.0])
        dest = tmp_path / "out.json"
        code, out, _ = run(
            capsys, "lmoments", "--input", path, "--format", "json",
            "--output", str(dest),
        )
        assert code == 0 and out == ""
        assert json.loads(dest.read_text())["n"] == 3

    def test_missing_file_is_data_error(self, capsys, tmp_path):
        code, _, err = run(
            capsys, "lmoments", "--input", str(tmp_path / "nope.csv")
        )
        assert code == 2
        assert "data error" in err

    def test_bad_value_cites_line(self, capsys, tmp_path):
        path = tmp_path / "v.csv"
        path.write_text("1.0\nbanana\n")
        code, _, err = run(capsys, "lmoments", "--input", str(path))
        assert code == 2 and "line 2" in err


class TestFitCommand:
    def test_exact_affine_fixture(self, capsys, values_csv):
        rng = np.random.default_rng(2)
        control = rng.lognormal(size=120)
        treated = 3.0 + 2.0 * control
        tpath = values_csv("t.csv", list(treated))
        cpath = values_csv("c.csv", list(control))
        code, out, _ = run(
            capsys, "fit", "--treated", tpath, "--control", cpath,
            "--R", "6", "--boot", "200", "--format", "json",
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["alpha"] == pytest.approx(3.0, abs=1e-8)
        assert payload["sigma"] == pytest.approx(2.0, abs=1e-8)
        assert payload["j_pvalue"] > 0.99
        assert payload["seed"] == 1729

    def test_prints_effective_seed(self, capsys, values_csv):
        rng = np.random.default_rng(3)
        tpath = values_csv("t.csv", list(rng.lognormal(size=50)))
        cpath = values_csv("c.csv", list(rng.lognormal(size=50)))
        code, out, _ = run(
            capsys, "fit", "--treated", tpath, "--control", cpath,
            "--R", "3", "--boot", "200", "--seed", "99",
        )
        assert code == 0
        assert "seed: 99" in out

    def test_reproducible_byte_for_byte(self, capsys, values_csv):
        rng = np.random.default_rng(4)
        tpath = values_csv("t.csv", list(rng.lognormal(size=60)))
        cpath = values_csv("c.csv", list(rng.lognormal(size=60)))
        argv = ["fit", "--treated", tpath, "--control", cpath, "--R", "4",
                "--boot", "200", "--seed", "7", "--format", "json"]
        _, first, _ = run(capsys, *argv)
        _, second, _ = run(capsys, *argv)
        assert first == second

    def test_numerical_failure_exit_code(self, capsys, values_csv):
        tpath = values_csv("t.csv", [1.0, 2.0, 3.0, 4.0])
        cpath = values_csv("c.csv", [5.0, 5.0, 5.0, 5.0])
        code, _, err = run(
            capsys, "fit", "--treated", tpath, "--control", cpath,
            "--R", "3", "--weighting", "identity", "--boot", "0",
        )
        assert code == 3
        assert "numerical failure" in err

    def test_location_model(self, capsys, values_csv):
        rng = np.random.default_rng(6)
        control = rng.lognormal(size=80)
        tpath = values_csv("t.csv", list(control + 0.5))
        cpath = values_csv("c.csv", list(control))
        code, out, _ = run(
            capsys, "fit", "--treated", tpath, "--control", cpath,
            "--model", "location", "--R", "4", "--boot", "100",
            "--format", "json",
        )
        assert code == 0
        assert json.loads(out)["alpha"] == pytest.approx(0.5, abs=1e-6)


class TestPanelCommand:
    def test_table_and_exit_code(self, capsys, panel_csv):
        code, out, _ = run(
            capsys, "panel", "--input", panel_csv, "--cutover", "2018-03",
            "--R", "3", "--boot", "100", "--seed", "5",
        )
        assert code == 0
        assert out.startswith("seed: 5\n")
        header = out.splitlines()[1].split()
        assert header[:4] == ["outcome_type", "period", "discount", "stratum"]
        assert "combined" in out

    def test_json_rows(self, capsys, panel_csv):
        code, out, _ = run(
            capsys, "panel", "--input", panel_csv, "--cutover", "2018-03",
            "--R", "3", "--boot", "100", "--format", "json",
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["command"] == "panel"
        assert len(payload["rows"]) == 12  # 2 outcomes x 1 period x 2 x 3
        statuses = {row["status"] for row in payload["rows"]}
        assert statuses == {"ok"}

    def test_default_is_tuned(self, capsys, panel_csv):
        code, out, _ = run(
            capsys, "panel", "--input", panel_csv, "--cutover", "2018-03",
            "--max-order", "4", "--boot", "100", "--format", "json",
        )
        assert code == 0
        rows = json.loads(out)["rows"]
        fitted = [r for r in rows if r["stratum"] != "combined"]
        assert all(r["n_moments"] in (2, 3, 4) for r in fitted)

    def test_malformed_panel_is_data_error(self, capsys, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("unit_id,arm,stratum,period,outcome_type,count\n"
                        "u1,control,user,p1,integrated,-1\n")
        code, _, err = run(
            capsys, "panel", "--input", str(path), "--cutover", "p1"
        )
        assert code == 2 and "line 2" in err


class TestTuneCommand:
    def test_reports_chosen_point(self, capsys, panel_csv):
        code, out, _ = run(
            capsys, "tune", "--input", panel_csv, "--cutover", "2018-03",
            "--outcome", "integrated", "--discount", "d50",
            "--stratum", "user", "--min-order", "2", "--max-order", "4",
            "--format", "json",
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["chosen_n_moments"] in (2, 3, 4)
        assert payload["n_pre_periods"] == 2
        assert len(payload["grid"]) == 3
        for entry in payload["grid"]:
            assert entry["feasible"] is True
            assert len(entry["per_period"]) == 2


class TestMcCommand:
    def test_small_study(self, capsys, tmp_path):
        config = {
            "schema_version": 1,
            "population": {"synthetic": {"size": 2000, "seed": 3}},
            "sample_sizes": [60],
            "replications": 6,
            "pre_periods": 3,
            "bootstrap": 60,
            "grid_orders": [2, 3],
            "seed": 11,
            "estimators": ["diff_in_means", "gmlm"],
        }
        path = tmp_path / "mc.json"
        path.write_text(json.dumps(config))
        code, out, _ = run(capsys, "mc", "--config", str(path), "--format", "json")
        assert code == 0
        payload = json.loads(out)
        assert payload["seed"] == 11
        assert len(payload["rows"]) == 2
        for row in payload["rows"]:
            assert row["rmse"] >= 0
            assert 0 <= row["coverage"] <= 1

    def test_table_columns(self, capsys, tmp_path):
        config = {
            "population": {"synthetic": {"size": 1500, "seed": 1}},
            "sample_sizes": [40],
            "replications": 4,
            "pre_periods": 2,
            "bootstrap": 60,
            "grid_orders": [2, 2],
            "estimators": ["diff_in_means"],
        }
        path = tmp_path / "mc.json"
        path.write_text(json.dumps(config))
        code, out, _ = run(capsys, "mc", "--config", str(path))
        assert code == 0
        assert out.startswith("seed: 1729\n")
        assert "rmse" in out and "coverage" in out and "j_rejection" in out

    def test_population_csv(self, capsys, tmp_path):
        pop_path = tmp_path / "pop.csv"
        rng = np.random.default_rng(0)
        pop_path.write_text("\n".join(str(v) for v in rng.lognormal(size=800)))
        config = {
            "population": {"csv": str(pop_path)},
            "sample_sizes": [40],
            "replications": 3,
            "pre_periods": 2,
            "bootstrap": 60,
            "grid_orders": [2, 2],
            "estimators": ["gmlm"],
        }
        path = tmp_path / "mc.json"
        path.write_text(json.dumps(config))
        code, out, _ = run(capsys, "mc", "--config", str(path), "--format", "json")
        assert code == 0
        assert json.loads(out)["population_size"] == 800

    def test_seed_flag_overrides_config(self, capsys, tmp_path):
        config = {
            "population": {"synthetic": {"size": 1500, "seed": 1}},
            "sample_sizes": [40],
            "replications": 3,
            "pre_periods": 2,
            "bootstrap": 60,
            "grid_orders": [2, 2],
            "seed": 5,
            "estimators": ["diff_in_means"],
        }
        path = tmp_path / "mc.json"
        path.write_text(json.dumps(config))
        code, out, _ = run(
            capsys, "mc", "--config", str(path), "--seed", "77",
            "--format", "json",
        )
        assert code == 0
        assert json.loads(out)["seed"] == 77

    def test_invalid_config_is_data_error(self, capsys, tmp_path):
        path = tmp_path / "mc.json"
        path.write_text(json.dumps({"sample_sizes": [41]}))
        code, _, err = run(capsys, "mc", "--config", str(path))
        assert code == 2 and "even" in err

    def test_broken_json_is_data_error(self, capsys, tmp_path):
        path = tmp_path / "mc.json"
        path.write_text("{not json")
        code, _, err = run(capsys, "mc", "--config", str(path))
        assert code == 2 and "JSON" in err


class TestDecomposeCommand:
    CONFIG = {
        "schema_version": 1,
        "prior": {"mu": 0.487, "sigma2": 0.785},
        "tech": {"gamma": 4.055, "phi": 0.514},
        "price_change": -1.0,
        "total_effect": 0.0871,
        "annual_rate": 0.04,
        "units": [
            {"id": "a", "lambda": 9.158563},
            {"id": "b", "income": 1000.0, "target": 100.0},
        ],
    }

    def test_per_unit_and_aggregate(self, capsys, tmp_path):
        path = tmp_path / "cal.json"
        path.write_text(json.dumps(self.CONFIG))
        code, out, _ = run(capsys, "decompose", "--config", str(path),
                           "--format", "json")
        assert code == 0
        payload = json.loads(out)
        assert len(payload["units"]) == 2
        unit_b = payload["units"][1]
        assert unit_b["lambda"] == pytest.approx(19.985, abs=1e-3)
        for row in payload["units"]:
            assert row["direct_effect"] > 0
            assert row["learning_share"] + row["direct_effect"] / 0.0871 == (
                pytest.approx(1.0)
            )
        agg = payload["aggregate"]
        assert agg["learning_share"] == pytest.approx(
            1.0 - agg["mean_direct_effect"] / 0.0871
        )

    def test_missing_field_is_data_error(self, capsys, tmp_path):
        bad = {k: v for k, v in self.CONFIG.items() if k != "total_effect"}
        path = tmp_path / "cal.json"
        path.write_text(json.dumps(bad))
        code, _, err = run(capsys, "decompose", "--config", str(path))
        assert code == 2 and "total_effect" in err

    def test_tech_moments_route(self, capsys, tmp_path):
        config = dict(self.CONFIG)
        del config["tech"]
        config["tech_moments"] = {
            "logmean_quality": 0.487,
            "logvar_quality": 0.785,
            "logmean_bundle": float(np.log(4.055) + 0.514 * 0.487),
            "logvar_bundle": 0.514**2 * 0.785,
        }
        path = tmp_path / "cal.json"
        path.write_text(json.dumps(config))
        code, out, _ = run(capsys, "decompose", "--config", str(path),
                           "--format", "json")
        assert code == 0
        assert json.loads(out)["tech"]["phi"] == pytest.approx(0.514, abs=1e-10)


class TestUsageErrors:
    def test_unknown_flag(self, capsys):
        code, _, err = run(capsys, "lmoments", "--nope")
        assert code == 1 and "error" in err

    def test_unknown_subcommand(self, capsys):
        code, _, err = run(capsys, "frobnicate")
        assert code == 1

    def test_missing_required(self, capsys):
        code, _, err = run(capsys, "fit", "--treated", "a.csv")
        assert code == 1

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert main(["fit", "--help"]) == 0

    def test_bad_trim_is_usage_error(self, capsys, values_csv):
        path = values_csv("v.csv", [1.0, 2.0])
        code, _, err = run(
            capsys, "lmoments", "--input", path, "--trim-lo", "0.9",
            "--trim-hi", "0.1",
        )
        assert code == 1
