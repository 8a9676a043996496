import json
from pathlib import Path

import pytest

from ridematch.cli import main
from ridematch.config import config_to_json, load_config_file, validate_config
from ridematch.errors import ConfigError
from ridematch.values import restore

DATA = Path(__file__).parent / "data"
EDGES = str(DATA / "four_edge_instance.tsv")

TINY_SIM = {
    "scenario": {
        "bbox": {"min_lat": 37.75, "min_lon": -122.45, "max_lat": 37.78, "max_lon": -122.42},
        "horizon_s": 1800.0,
        "cycle_s": 30.0,
        "rng_seed": 5,
        "demand": {"base_per_hour": 12.0},
        "supply": {"initial_drivers": 3, "logins_per_hour": 1.0},
    }
}

EMPTY_SWITCHBACK = {
    "scenario": {
        "horizon_s": 1209600.0,
        "cycle_s": 14400.0,
        "demand": {"base_per_hour": 0.0},
        "supply": {"initial_drivers": 0, "logins_per_hour": 0.0},
    }
}


def write_config(tmp_path, doc, name="config.json") -> str:
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


# ------------------------------------------------------------------ config


def test_empty_config_round_trips():
    cfg = validate_config("{}")
    text = config_to_json(cfg)
    again = validate_config(text)
    assert again == cfg
    assert config_to_json(again) == text


def test_resolved_config_omits_output_dir():
    doc = json.loads(config_to_json(validate_config("{}")))
    assert "output_dir" not in doc
    assert list(doc) == ["policy", "scenario", "coding", "learner", "filter", "burn", "experiment"]


def test_every_violation_reported_at_once():
    doc = {"scenario": {"bogus": 1, "cycle_s": -2}, "learner": {"gamma": 1.5}}
    with pytest.raises(ConfigError) as excinfo:
        validate_config(json.dumps(doc))
    msg = str(excinfo.value)
    assert msg.startswith("config error:")
    assert "scenario.bogus" in msg
    assert "scenario.cycle_s" in msg
    assert "learner.gamma" in msg
    assert len(excinfo.value.violations) == 3


def test_gamma_error_names_the_permitted_interval():
    with pytest.raises(ConfigError) as excinfo:
        validate_config(json.dumps({"learner": {"gamma": 1.5}}))
    (field, message), = excinfo.value.violations
    assert field == "learner.gamma"
    assert "(0, 1)" in message


def test_burn_exceeding_bucket_names_both_fields():
    doc = {"experiment": {"bucket_len_s": 7200}, "burn": {"burn_in_s": 4000.0, "burn_out_s": 4000.0}}
    with pytest.raises(ConfigError) as excinfo:
        validate_config(json.dumps(doc))
    (field, message), = excinfo.value.violations
    assert field == "burn.burn_in_s"
    assert "burn_out_s" in message


def test_missing_config_file(tmp_path):
    path = str(tmp_path / "nope.json")
    with pytest.raises(ConfigError) as excinfo:
        load_config_file(path)
    assert path in str(excinfo.value)


def test_invalid_json_is_a_config_error():
    with pytest.raises(ConfigError):
        validate_config("{")
    with pytest.raises(ConfigError):
        validate_config("[1, 2]")


# ------------------------------------------------------------------- solve


def test_solve_picks_the_globally_best_pairs(capsys):
    assert main(["solve", "--edges", EDGES]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "# solver=optimal"
    assert lines[1] == "# edges=4"
    assert lines[2] == "# objective=-480.000000"
    assert lines[3] == "# matched=2"
    assert lines[4] == "pair\t1\tA"
    assert lines[5] == "pair\t2\tB"


def test_solve_baseline_is_sequential_nearest(capsys):
    assert main(["solve", "--edges", EDGES, "--baseline"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "# solver=greedy"
    assert lines[2] == "# objective=-720.000000"
    assert "pair\t1\tB" in lines
    assert "pair\t2\tA" in lines


def test_solve_threshold_drops_edges_and_reports_unmatched(capsys):
    assert main(["solve", "--edges", EDGES, "--threshold", "-200"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert "pair\t1\tB" in lines
    assert "unmatched_rider\t2" in lines
    assert "unmatched_driver\tA" in lines


def test_solve_writes_plan_file(tmp_path, capsys):
    out = tmp_path / "plans"
    assert main(["solve", "--edges", EDGES, "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert (out / "plan.tsv").read_text() == text
    assert not list(out.glob(".*.tmp"))


def test_solve_reports_bad_lines_with_line_numbers(tmp_path, capsys):
    bad = tmp_path / "edges.tsv"
    bad.write_text("1\tA\t-5\t10\n1\tB\tzap\t10\n2\tC\t-5\n")
    assert main(["solve", "--edges", str(bad)]) == 2
    err = capsys.readouterr().err
    assert f"{bad}:2" in err
    assert f"{bad}:3" in err


def test_solve_missing_edge_file_exits_2(tmp_path, capsys):
    assert main(["solve", "--edges", str(tmp_path / "ghost.tsv")]) == 2
    assert "ghost.tsv" in capsys.readouterr().err


# ---------------------------------------------------------------- simulate


def test_simulate_same_seed_writes_identical_bytes(tmp_path, capsys):
    cfg = write_config(tmp_path, TINY_SIM)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--seed", "7", "--out", str(a)]) == 0
    assert main(["simulate", "--config", cfg, "--seed", "7", "--out", str(b)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == ["config_resolved.json", "events.tsv", "hourly.tsv", "value_table.rlvt"]
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    resolved = json.loads((a / "config_resolved.json").read_text())
    assert resolved["scenario"]["rng_seed"] == 7


def test_simulate_greedy_does_not_learn_by_default(tmp_path, capsys):
    cfg = write_config(tmp_path, TINY_SIM)
    out = tmp_path / "greedy"
    assert main(["simulate", "--config", cfg, "--policy", "greedy", "--out", str(out)]) == 0
    table = restore((out / "value_table.rlvt").read_bytes())
    assert len(table) == 0


def test_simulate_rl_learns_by_default(tmp_path, capsys):
    cfg = write_config(tmp_path, TINY_SIM)
    out = tmp_path / "rl"
    assert main(["simulate", "--config", cfg, "--policy", "rl", "--out", str(out)]) == 0
    table = restore((out / "value_table.rlvt").read_bytes())
    assert len(table) > 0


def test_simulate_learn_flag_overrides_policy_default(tmp_path, capsys):
    cfg = write_config(tmp_path, TINY_SIM)
    out = tmp_path / "greedy-learn"
    assert main(["simulate", "--config", cfg, "--policy", "greedy", "--learn", "--out", str(out)]) == 0
    table = restore((out / "value_table.rlvt").read_bytes())
    assert len(table) > 0


def test_simulate_invalid_config_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, {"learner": {"gamma": 1.5}})
    assert main(["simulate", "--config", cfg]) == 2
    assert "learner.gamma" in capsys.readouterr().err


def test_simulate_missing_config_exits_2(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "absent.json")]) == 2
    assert "absent.json" in capsys.readouterr().err


# -------------------------------------------------------------- experiment


def test_experiment_cli_smoke(tmp_path, capsys):
    cfg = write_config(tmp_path, EMPTY_SWITCHBACK)
    out = tmp_path / "exp"
    assert main(["experiment", "--config", cfg, "--seed", "9", "--out", str(out)]) == 0
    captured = capsys.readouterr().out
    assert "insufficient" in captured
    assert "seed=9" in captured
    for name in ("plan.tsv", "buckets.tsv", "effects.tsv", "events.tsv", "hourly.tsv"):
        assert (out / name).exists()
    assert (out / "plan.tsv").read_text().splitlines()[0] == "# seed=9"


# ------------------------------------------------------------ export-heatmap


def test_export_heatmap_reads_simulation_snapshot(tmp_path, capsys):
    cfg = write_config(tmp_path, TINY_SIM)
    sim_out = tmp_path / "sim"
    assert main(["simulate", "--config", cfg, "--policy", "rl", "--out", str(sim_out)]) == 0
    heat_out = tmp_path / "heat"
    rc = main(
        [
            "export-heatmap",
            "--config", cfg,
            "--snapshot", str(sim_out / "value_table.rlvt"),
            "--time", "900",
            "--out", str(heat_out),
        ]
    )
    assert rc == 0
    lines = (heat_out / "heatmap.tsv").read_text().splitlines()
    assert lines[0] == "# seed=5"
    assert lines[3] == "cell\tcenter_lat\tcenter_lon\tvalue"
    cells = [line.split("\t")[0] for line in lines[4:]]
    assert cells == sorted(cells)
    assert len(cells) == len(set(cells)) > 0
    for line in lines[4:]:
        assert len(line.split("\t")) == 4


def test_export_heatmap_corrupt_snapshot_exits_1(tmp_path, capsys):
    blob = tmp_path / "broken.rlvt"
    blob.write_bytes(b"RLVT\x01\x00garbage")
    assert main(["export-heatmap", "--snapshot", str(blob), "--time", "0"]) == 1
    assert capsys.readouterr().err.startswith("runtime error:")


# -------------------------------------------------------------- exit codes


def test_unknown_subcommand_exits_2(capsys):
    assert main(["frobnicate"]) == 2


def test_solve_without_edges_exits_2(capsys):
    assert main(["solve"]) == 2
