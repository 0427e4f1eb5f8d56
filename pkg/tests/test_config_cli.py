import csv
import json
import math

import pytest
import yaml

from mhgame.cli import EXIT_CONFIG, EXIT_OK, main, run
from mhgame.config import (
    ConfigError,
    config_to_dict,
    dump_config,
    load_config,
    resolve_config,
    validate_config,
)
from mhgame.trajgames import build_scenario, merging_config


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("kind", ["merging", "target_guarding"])
def test_minimal_config_resolves_and_round_trips(tmp_path, kind):
    cfg = load_config(write_yaml(tmp_path / "c.yaml", {"scenario": {"kind": kind}}))
    echoed = dump_config(cfg)
    again = load_config(write_yaml(tmp_path / "e.yaml", yaml.safe_load(echoed)))
    assert again == cfg
    assert dump_config(again) == echoed
    resolved = config_to_dict(cfg)
    assert set(resolved) == {"scenario", "solver", "run"}
    assert resolved["solver"]["tol"] == 1e-6 and resolved["solver"]["max_iters"] == 100


def test_overrides_are_applied():
    cfg = resolve_config(
        {"scenario": {"kind": "merging", "hierarchy": "chain", "horizon": 6}, "solver": {"max_iters": 50}, "run": {"runs": 3}}
    )
    assert cfg.scenario.hierarchy == "chain" and cfg.scenario.horizon == 6
    assert cfg.solver.max_iters == 50 and cfg.run.runs == 3


def test_errors_are_aggregated(tmp_path):
    bad = {
        "scenario": {"kind": "merging", "collision_distance": -1.0, "horizon": 0, "colour": "red"},
        "solver": {"tol": "tiny"},
        "run": {"mode": "dance"},
        "extra": 1,
    }
    cfg, errors = validate_config(write_yaml(tmp_path / "bad.yaml", bad))
    assert cfg is None
    joined = "\n".join(errors)
    for needle in ("collision_distance", "horizon", "colour", "tol", "mode", "extra"):
        assert needle in joined, needle


def test_negative_safety_distance_rejected():
    with pytest.raises(ConfigError) as exc:
        resolve_config({"scenario": {"kind": "merging", "collision_distance": -2.0}})
    assert any("collision_distance" in e for e in exc.value.errors)


def test_two_leaders_rejected():
    with pytest.raises(ConfigError) as exc:
        resolve_config({"scenario": {"kind": "merging", "hierarchy": [[1, 3], [2, 3]]}})
    assert any("hierarchy" in e for e in exc.value.errors)


def test_validate_subcommand_echoes(tmp_path, capsys):
    path = write_yaml(tmp_path / "c.yaml", {"scenario": {"kind": "target_guarding"}})
    assert main(["validate", "--config", str(path)]) == EXIT_OK
    echoed = yaml.safe_load(capsys.readouterr().out)
    assert echoed["scenario"]["kind"] == "target_guarding"


def test_unknown_hierarchy_is_a_config_error(tmp_path):
    out = tmp_path / "out"
    code = main(["solve", "--scenario", "merging", "--hierarchy", "pyramid", "--out", str(out)])
    assert code == EXIT_CONFIG
    record = json.loads((out / "errors.json").read_text())
    assert record["errors"] and all(e["kind"] == "config" for e in record["errors"])


def test_solve_artifacts(tmp_path):
    out = tmp_path / "out"
    assert main(["solve", "--scenario", "merging", "--hierarchy", "mixed_a", "--out", str(out)]) == EXIT_OK
    for name in ("trajectory.csv", "distances.csv", "convergence.csv", "metadata.json"):
        assert (out / name).exists(), name
    assert not (out / "errors.json").exists()
    dist = read_csv(out / "distances.csv")
    assert len({(r["robot_a"], r["robot_b"]) for r in dist}) == 6
    values = [float(r["distance"]) for r in dist]
    assert all(math.isfinite(v) and v >= 0 for v in values)
    traj = read_csv(out / "trajectory.csv")
    assert list(traj[0])[:4] == ["run_id", "step", "robot", "t"]
    conv = read_csv(out / "convergence.csv")
    assert list(conv[0]) == ["run_id", "solve", "iter", "residual_norm", "step_size", "consensus_gap", "min_pivot"]
    meta = json.loads((out / "metadata.json").read_text())
    expected = build_scenario(merging_config(hierarchy="mixed_a")).game.graph.edges
    assert meta["all_converged"]
    assert sorted(meta["runs"][0]["edges"]) == sorted(list(e) for e in expected)


def test_converge_summary_and_byte_identical_csv(tmp_path):
    cfg = resolve_config({"scenario": {"kind": "target_guarding"}, "run": {"runs": 3, "seed": 7}})
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(cfg, a, "converge") == EXIT_OK
    assert run(cfg, b, "converge") == EXIT_OK
    assert (a / "convergence.csv").read_bytes() == (b / "convergence.csv").read_bytes()
    summary = read_csv(a / "convergence_summary.csv")
    assert summary[0]["iter"] == "0" and summary[0]["runs"] == "3"
    meta = json.loads((a / "metadata.json").read_text())
    assert meta["seed"] == 7 and len(meta["runs"]) == 3
    starts = {json.dumps(r["initial_states"]) for r in meta["runs"]}
    assert len(starts) == 3


def test_receding_mode_writes_every_step(tmp_path):
    cfg = resolve_config({"scenario": {"kind": "target_guarding"}, "run": {"steps": 4}})
    assert run(cfg, tmp_path, "receding") == EXIT_OK
    traj = read_csv(tmp_path / "trajectory.csv")
    assert {int(r["step"]) for r in traj} == set(range(5))
    conv = read_csv(tmp_path / "convergence.csv")
    assert {int(r["solve"]) for r in conv} == set(range(4))


def test_sweep_visits_each_hierarchy(tmp_path):
    cfg = resolve_config({"scenario": {"kind": "merging", "horizon": 5}, "run": {"hierarchies": ["nash", "chain"]}})
    assert run(cfg, tmp_path, "sweep") == EXIT_OK
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert [r["hierarchy"] for r in meta["runs"]] == ["nash", "chain"]
