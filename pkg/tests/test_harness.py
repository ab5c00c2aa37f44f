import csv
import json

import numpy as np
import pytest
import yaml

from sgpnav.cli import EXIT_CONFIG, EXIT_OK, main
from sgpnav.errors import ScenarioValidationError
from sgpnav.harness import run_and_record, run_batch
from sgpnav.metrics import TrajectoryLog, TrialMetrics
from sgpnav.scenario import load_scenario, scenario_from_dict, terrain_from_spec
from sgpnav.simulator import read_terrain_csv

# goal within the direct-mode radius keeps each trial to a few seconds
SHORT = {
    "name": "short",
    "terrain": {"generator": "flat", "extent_m": [-6, 8, -6, 6], "cell_size_m": 0.25},
    "start_pose": {"x_m": 0.0, "y_m": 0.0, "yaw_rad": 0.0},
    "final_goal": {"x_m": 3.0, "y_m": 0.5},
    "surface": {"azimuth_bins": 120},
    "lidar": {"azimuth_steps": 120},
    "sgp": {"num_inducing": 30, "max_iterations": 10, "max_samples": 600},
    "sim": {"seed": 0},
}


@pytest.fixture
def short_yaml(tmp_path):
    path = tmp_path / "short.yaml"
    path.write_text(yaml.safe_dump(SHORT))
    return path


# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------


class TestScenario:
    def test_shipped_scenarios_load(self):
        from pathlib import Path

        root = Path(__file__).resolve().parents[1] / "scenarios"
        names = sorted(p.stem for p in root.glob("*.yaml"))
        assert names == ["flat", "hill", "ramp", "valley"]
        for p in root.glob("*.yaml"):
            sc = load_scenario(p)
            sc.validate()
            assert sc.name == p.stem

    def test_defaults(self):
        sc = scenario_from_dict(dict(SHORT, surface={}, lidar={}, sgp={}))
        assert sc.surface.azimuth_bins == 360 and sc.sgp.num_inducing == 100

    def test_unknown_top_level_key(self):
        with pytest.raises(ScenarioValidationError):
            scenario_from_dict(dict(SHORT, speed=3))

    def test_unknown_section_key(self):
        with pytest.raises(ScenarioValidationError):
            scenario_from_dict(dict(SHORT, sim={"seed": 0, "sede": 1}))

    def test_missing_goal(self):
        data = dict(SHORT)
        del data["final_goal"]
        with pytest.raises(ScenarioValidationError):
            scenario_from_dict(data)

    def test_goal_outside_terrain(self):
        sc = scenario_from_dict(dict(SHORT, final_goal={"x_m": 50.0, "y_m": 0.0}))
        with pytest.raises(ScenarioValidationError):
            sc.validate()

    def test_bad_yaml(self, tmp_path):
        (tmp_path / "bad.yaml").write_text("name: [unclosed\n")
        with pytest.raises(ScenarioValidationError):
            load_scenario(tmp_path / "bad.yaml")

    def test_yaml_round_trip(self, short_yaml):
        sc = load_scenario(short_yaml)
        again = scenario_from_dict(yaml.safe_load(sc.to_yaml()))
        assert again.to_dict() == sc.to_dict()

    def test_with_seed(self):
        sc = scenario_from_dict(SHORT).with_seed(7)
        assert sc.sim.seed == 7 and sc.name == "short"


class TestTerrainSpec:
    def test_generator(self):
        t = terrain_from_spec({"generator": "flat", "extent_m": [0, 2, 0, 1], "cell_size_m": 0.5})
        assert t.heights.shape == (3, 5) and np.all(t.heights == 0.0)

    def test_hills(self):
        t = terrain_from_spec({
            "generator": "gaussian_hills", "extent_m": [-5, 5, -5, 5], "cell_size_m": 0.25,
            "hills": [{"x_m": 0.0, "y_m": 0.0, "height_m": 1.5, "sigma_m": 2.0}],
        })
        assert float(t.heights_at(0.0, 0.0)) == pytest.approx(1.5, abs=1e-9)

    def test_file_relative_to_scenario(self, tmp_path):
        t = terrain_from_spec({"generator": "flat", "extent_m": [0, 2, 0, 2], "cell_size_m": 0.5})
        from sgpnav.simulator import write_terrain_csv

        write_terrain_csv(t, tmp_path / "t.csv")
        back = terrain_from_spec({"file": "t.csv"}, base_dir=str(tmp_path))
        assert np.array_equal(back.heights, t.heights)

    def test_unknown_key(self):
        with pytest.raises(ScenarioValidationError):
            terrain_from_spec({"generator": "flat", "extnt_m": [0, 1, 0, 1]})

    def test_needs_generator(self):
        with pytest.raises(ScenarioValidationError):
            terrain_from_spec({"extent_m": [0, 1, 0, 1]})


# ---------------------------------------------------------------------------
# Run directories and batches
# ---------------------------------------------------------------------------


class TestHarness:
    def test_run_directory(self, tmp_path):
        sc = scenario_from_dict(SHORT)
        result = run_and_record(sc, tmp_path / "run", trace=True)
        out = tmp_path / "run"
        assert sorted(p.name for p in out.iterdir()) == ["metrics.json", "scenario.yaml", "trace.jsonl", "trajectory.csv"]
        assert TrialMetrics.from_dict(json.loads((out / "metrics.json").read_text())) == result.metrics
        assert np.array_equal(TrajectoryLog.read_csv(out / "trajectory.csv").as_array(), result.log.as_array())
        assert load_scenario(out / "scenario.yaml").to_dict() == sc.to_dict()
        traces = [json.loads(line) for line in (out / "trace.jsonl").read_text().splitlines()]
        assert traces and all("mode" in t for t in traces)

    def test_batch_rows_and_summary(self, tmp_path):
        res = run_batch([scenario_from_dict(SHORT)], repetitions=3, out_dir=tmp_path)
        assert [r.seed for r in res.records] == [0, 1, 2]
        rows = list(csv.DictReader(open(tmp_path / "batch.csv")))
        assert [r["row"] for r in rows] == ["trial", "trial", "trial", "summary"]
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["short"]["trials"] == 3 and summary["short"]["success_rate"] == 1.0
        assert sorted(p.name for p in tmp_path.iterdir() if p.is_dir()) == [
            "short-seed0", "short-seed1", "short-seed2",
        ]

    def test_same_seed_same_row(self):
        sc = scenario_from_dict(SHORT)
        res = run_batch([sc, sc], seeds=[5])
        assert res.records[0].metrics == res.records[1].metrics

    def test_failed_trial_does_not_abort(self, tmp_path):
        bad = scenario_from_dict(dict(SHORT, name="bad", final_goal={"x_m": 50.0, "y_m": 0.0}))
        res = run_batch([bad, scenario_from_dict(SHORT)], out_dir=tmp_path)
        assert res.records[0].metrics is None and "ScenarioValidationError" in res.records[0].error
        assert res.records[1].metrics.success
        rows = list(csv.DictReader(open(tmp_path / "batch.csv")))
        assert rows[0]["outcome_reason"].startswith("error:")

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            run_batch([])


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------


class TestCli:
    def test_run_and_replay(self, short_yaml, tmp_path, capsys):
        assert main(["run", "--scenario", str(short_yaml), "--out", str(tmp_path / "r")]) == EXIT_OK
        ran = json.loads(capsys.readouterr().out)
        code = main(["replay-metrics", "--trajectory", str(tmp_path / "r" / "trajectory.csv"),
                     "--scenario", str(short_yaml), "--out", str(tmp_path / "m.json")])
        assert code == EXIT_OK
        assert json.loads((tmp_path / "m.json").read_text()) == ran

    def test_run_seed_override(self, short_yaml, tmp_path):
        assert main(["run", "--scenario", str(short_yaml), "--seed", "3", "--out", str(tmp_path / "r")]) == EXIT_OK
        assert load_scenario(tmp_path / "r" / "scenario.yaml").sim.seed == 3

    def test_batch(self, short_yaml, tmp_path):
        argv = ["batch", "--scenario", str(short_yaml), "--repetitions", "2", "--out", str(tmp_path / "b")]
        assert main(argv) == EXIT_OK
        assert len(list(csv.DictReader(open(tmp_path / "b" / "batch.csv")))) == 3

    def test_generate_terrain_kind(self, tmp_path):
        out = tmp_path / "t.csv"
        argv = ["generate-terrain", "--kind", "ramp", "--param", "extent_m=[0,4,0,2]",
                "--param", "cell_size_m=0.5", "--param", "slope_rad=0.1", "--out", str(out)]
        assert main(argv) == EXIT_OK
        t = read_terrain_csv(out)
        assert t.heights.shape == (5, 9)

    def test_generate_terrain_scenario(self, short_yaml, tmp_path):
        assert main(["generate-terrain", "--scenario", str(short_yaml), "--out", str(tmp_path / "t.csv")]) == EXIT_OK
        assert read_terrain_csv(tmp_path / "t.csv").bounds == (-6.0, 8.0, -6.0, 6.0)

    def test_dump_surfaces(self, short_yaml, tmp_path):
        out = tmp_path / "s"
        assert main(["dump-surfaces", "--scenario", str(short_yaml), "--pose", "0", "0", "0.5", "--out", str(out)]) == EXIT_OK
        names = sorted(p.name for p in out.iterdir())
        assert names == ["candidates.jsonl", "cloud.xyz", "segments.csv", "surfaces.csv", "surfaces_normalized.csv"]
        cands = [json.loads(line) for line in (out / "candidates.jsonl").read_text().splitlines()]
        assert sum(c["selected"] for c in cands) == 1

    def test_missing_file(self, tmp_path, capsys):
        assert main(["run", "--scenario", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG
        assert "error" in capsys.readouterr().err

    def test_invalid_scenario(self, tmp_path):
        (tmp_path / "bad.yaml").write_text(yaml.safe_dump(dict(SHORT, colour="red")))
        assert main(["run", "--scenario", str(tmp_path / "bad.yaml"), "--out", str(tmp_path / "r")]) == EXIT_CONFIG

    def test_bad_param(self, tmp_path):
        assert main(["generate-terrain", "--kind", "flat", "--param", "oops", "--out", str(tmp_path / "t.csv")]) == EXIT_CONFIG

    def test_replay_needs_goal(self, tmp_path):
        (tmp_path / "t.csv").write_text("t,x,y,z,yaw,roll,pitch,v,omega\n0,0,0,0,0,0,0,0,0\n")
        assert main(["replay-metrics", "--trajectory", str(tmp_path / "t.csv")]) == EXIT_CONFIG
        assert main(["replay-metrics", "--trajectory", str(tmp_path / "t.csv"), "--goal", "0", "0"]) == EXIT_OK
