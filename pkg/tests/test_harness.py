from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from fedmanip.cli import main
from fedmanip.config import ExperimentConfig, serialize_toml
from fedmanip.harness import run_experiment, run_sweep


def tiny_config(**overrides) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.agents = 3
    cfg.adversaries = 1
    cfg.rounds = 3
    cfg.train_per_class = 20
    cfg.test_per_class = 10
    cfg.select_dim = 8
    cfg.vgae_epochs = 4
    cfg.inner_steps = 5
    for key, value in overrides.items():
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


def read_rows(path: Path) -> list[dict]:
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def test_run_writes_metrics_and_summary(tmp_path):
    cfg = tiny_config(attack="augmp")
    summary = run_experiment(cfg, tmp_path)
    assert (tmp_path / "metrics.csv").exists()
    assert (tmp_path / "summary.json").exists()
    rows = read_rows(tmp_path / "metrics.csv")
    assert len(rows) == cfg.rounds
    assert summary["rounds_completed"] == cfg.rounds
    assert summary["config"]["attack"] == "augmp"
    assert 0.0 <= summary["final_global_accuracy"] <= 1.0


def test_metrics_schema_stable_across_attack_kinds(tmp_path):
    headers = []
    for attack in ("none", "augmp", "alie", "rmp"):
        out = tmp_path / attack
        run_experiment(tiny_config(attack=attack), out)
        headers.append((out / "metrics.csv").read_text().splitlines()[0])
    assert len(set(headers)) == 1


def test_metrics_numeric_format_is_compact(tmp_path):
    run_experiment(tiny_config(), tmp_path)
    rows = read_rows(tmp_path / "metrics.csv")
    value = rows[0]["global_accuracy"]
    assert len(value) <= 12  # %.9g formatting
    float(value)  # parses


def test_benign_run_leaves_malicious_columns_empty(tmp_path):
    run_experiment(tiny_config(attack="none"), tmp_path)
    rows = read_rows(tmp_path / "metrics.csv")
    assert rows[0]["dist_a3"] == ""
    assert rows[0]["audit_dist_ok_a3"] == ""


def test_determinism_byte_identical(tmp_path):
    cfg = tiny_config(attack="augmp")
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    assert (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()
    sa = json.loads((tmp_path / "a/summary.json").read_text())
    sb = json.loads((tmp_path / "b/summary.json").read_text())
    sa.pop("wall_time_s")
    sb.pop("wall_time_s")
    assert sa == sb


def test_defense_filters_rmp_updates(tmp_path):
    cfg = tiny_config(attack="rmp", rmp_scale=25.0, defense="distance",
                      defense_threshold_mode="oracle", rounds=4)
    summary = run_experiment(cfg, tmp_path)
    assert summary["flag_rates"]["distance"]["malicious"] >= 0.75
    assert summary["flag_rates"]["distance"]["benign"] == 0.0


def test_config_file_not_mutated_by_run(tmp_path):
    cfg = tiny_config()
    path = tmp_path / "config.toml"
    path.write_text(serialize_toml(cfg))
    before = path.read_bytes()
    run_experiment(cfg, tmp_path / "out")
    assert path.read_bytes() == before


def test_debug_flag_emits_attack_trace(tmp_path):
    cfg = tiny_config(attack="augmp", debug=True)
    run_experiment(cfg, tmp_path)
    payload = json.loads((tmp_path / "debug" / "attack_trace.json").read_text())
    assert payload and "objective_trace" in payload[0]
    assert "elbo_trace" in payload[0]
    assert "reconstructed_adjacency" in payload[0]


def test_benign_run_learns_substantially(tmp_path):
    # The untrained global model sits at chance; a full benign run must end
    # at least 20 accuracy points above that starting state.
    import numpy as np

    from fedmanip import fedsim
    from fedmanip.mathcore import SeededRng

    cfg = ExperimentConfig()
    cfg.adversaries = 0
    summary = run_experiment(cfg, tmp_path)
    root = SeededRng(cfg.seed)
    test_set = fedsim.synth_dataset(
        cfg.classes, cfg.input_dim, cfg.test_per_class, cfg.separation,
        root.split("test-data"), name="server-test",
    )
    backbone = fedsim.make_backbone(
        cfg.input_dim, cfg.classes, cfg.lora_rank, cfg.lora_alpha,
        cfg.lora_dropout, root.split("backbone"),
    )
    initial_accuracy = fedsim.evaluate(fedsim.init_global(backbone, cfg.server_lr), test_set)
    assert summary["final_global_accuracy"] - initial_accuracy >= 0.20
    rows = read_rows(tmp_path / "metrics.csv")
    accs = [float(r["global_accuracy"]) for r in rows]
    # Monotone trend: the second half of the run never falls far below the first.
    assert np.mean(accs[len(accs) // 2 :]) >= np.mean(accs[: len(accs) // 2])


# -- sweep ---------------------------------------------------------------------

def test_sweep_attack_axis(tmp_path):
    cfg = tiny_config()
    index = run_sweep(cfg, "attack", ["none", "augmp", "alie", "rmp"], tmp_path)
    assert len(index["runs"]) == 4
    listed = json.loads((tmp_path / "index.json").read_text())
    assert [r["value"] for r in listed["runs"]] == ["none", "augmp", "alie", "rmp"]
    for entry in index["runs"]:
        assert (tmp_path / entry["dir"] / "metrics.csv").exists()


def test_sweep_rank_axis_clamps_infeasible_ranks(tmp_path):
    cfg = tiny_config()
    index = run_sweep(cfg, "lora_rank", [2, 4, 8], tmp_path)
    assert len(index["runs"]) == 3
    for value in (2, 4, 8):
        summary = json.loads((tmp_path / f"lora_rank={value}" / "summary.json").read_text())
        assert summary["effective_rank"] == min(value, 2)


def test_sweep_rejects_unknown_axis(tmp_path):
    with pytest.raises(ValueError):
        run_sweep(tiny_config(), "rounds", [1, 2], tmp_path)


# -- CLI ------------------------------------------------------------------------

def test_cli_run_and_verify(tmp_path, capsys):
    config_path = tmp_path / "cfg.toml"
    config_path.write_text(serialize_toml(tiny_config()))
    code = main([
        "run", "--config", str(config_path), "--out", str(tmp_path / "out"),
        "--set", "run.rounds=2",
    ])
    assert code == 0
    assert (tmp_path / "out" / "metrics.csv").exists()
    rows = read_rows(tmp_path / "out" / "metrics.csv")
    assert len(rows) == 2  # --set override applied

    code = main(["verify", "--suite", "duals"])
    out = capsys.readouterr().out
    assert code == 0
    assert "PASS" in out


def test_cli_sweep(tmp_path):
    config_path = tmp_path / "cfg.toml"
    config_path.write_text(serialize_toml(tiny_config()))
    code = main([
        "sweep", "--config", str(config_path), "--axis", "visibility",
        "--values", "0.5,1.0", "--out", str(tmp_path / "sweep"),
    ])
    assert code == 0
    assert (tmp_path / "sweep" / "index.json").exists()


def test_cli_bad_config_returns_typed_error(tmp_path, capsys):
    config_path = tmp_path / "cfg.toml"
    config_path.write_text("[run]\nattack = \"meteor\"\n")
    code = main(["run", "--config", str(config_path), "--out", str(tmp_path / "out")])
    assert code == 2
    assert "run.attack" in capsys.readouterr().err


def test_cli_out_dir_env_override(tmp_path, monkeypatch):
    config_path = tmp_path / "cfg.toml"
    config_path.write_text(serialize_toml(tiny_config(rounds=1)))
    monkeypatch.setenv("FEDMANIP_OUT", str(tmp_path / "from-env"))
    code = main(["run", "--config", str(config_path)])
    assert code == 0
    assert (tmp_path / "from-env" / "metrics.csv").exists()
