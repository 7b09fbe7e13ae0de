"""
Tests de extremo a extremo de los subcomandos sobre la configuración de humo.
"""
import json
import math
from pathlib import Path

import pytest

import main
from app.cli import commands
from app.core.errors import MissingPrerequisiteError, NumericDomainError
from app.services.reports import MANIFEST_FILE, read_csv_rows

SMOKE = Path(__file__).resolve().parents[1] / "configs" / "smoke.json"


def test_attack_without_protection_has_no_distortion(smoke_config, variant, tmp_path):
    config = variant(smoke_config, mechanism={"kind": "identity", "noise_scale": 0.0})
    result = commands.cmd_attack(config, tmp_path)
    assert {"traces.jsonl", "rounds.jsonl", "complexity.csv"} <= set(result.outputs)
    row = read_csv_rows(tmp_path / "complexity.csv")[0]
    assert float(row["delta_k"]) == 0.0
    assert float(row["protection_c"]) == 0.0
    assert row["replicates"] == "2"
    assert (tmp_path / MANIFEST_FILE).exists()


def test_attack_outputs(smoke_config, tmp_path):
    commands.cmd_attack(smoke_config, tmp_path, trace_stride=10)
    lines = (tmp_path / "traces.jsonl").read_text().splitlines()
    assert len(lines) == smoke_config.replicates
    first = json.loads(lines[0])
    assert first["replicate"] == 0
    assert first["iterations"] == [1, 11, 21]
    rounds = (tmp_path / "rounds.jsonl").read_text().splitlines()
    assert len(rounds) == smoke_config.federated.rounds
    manifest = json.loads((tmp_path / MANIFEST_FILE).read_text())
    assert [entry["replicate"] for entry in manifest["seed_plan"]] == [0, 1]


def test_attack_is_byte_identical_across_workers(smoke_config, tmp_path):
    commands.cmd_attack(smoke_config, tmp_path / "a", workers=1)
    commands.cmd_attack(smoke_config, tmp_path / "b", workers=2)
    for name in ("traces.jsonl", "rounds.jsonl", "complexity.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


BOUND_FIXTURE = {
    "m": 10, "epsilon": 0.5, "epsilon_hat": 0.5, "zeta": 0.0, "tau": 1.0, "epsilon_p": 0.5,
    "delta_k": 0.0, "dataset_size": 100, "c_a": 1.0, "c_b": 1.0, "c2": 1.0, "p": 0.5,
}


def test_bounds_from_overrides(smoke_config, variant, tmp_path):
    commands.cmd_bounds(variant(smoke_config, bounds=BOUND_FIXTURE), tmp_path)
    rows = {r["formula_id"]: r for r in read_csv_rows(tmp_path / "bounds.csv")}
    assert len(rows) == 7
    assert float(rows["thm54"]["value"]) == 40.0
    assert rows["thm63_T_upper"]["feasible"] == "false"
    assert rows["thm63_T_upper"]["value"] == "infeasible"
    interval = json.loads(rows["thm56_interval"]["detail"])
    assert interval["lower_rate"] == interval["upper_rate"]


def test_bounds_without_estimates_names_prerequisite(smoke_config, tmp_path):
    with pytest.raises(MissingPrerequisiteError, match="fedleak attack"):
        commands.cmd_bounds(smoke_config, tmp_path)
    assert not (tmp_path / "bounds.csv").exists()


def test_bounds_from_prior_runs(smoke_config, variant, tmp_path):
    commands.cmd_attack(smoke_config, tmp_path)
    commands.cmd_estimate_mbp(smoke_config, tmp_path)
    config = variant(smoke_config, bounds={
        "estimates_dir": str(tmp_path), "c_a": 0.5, "c_b": 1.0, "c2": 1.0, "p": 0.5,
    })
    inputs, delta_k = commands.resolve_bound_inputs(config)
    mbp_json = json.loads((tmp_path / "mbp.json").read_text())
    assert inputs.epsilon == mbp_json["epsilon_hat"]
    assert inputs.m == config.model.to_spec().param_dim
    assert delta_k > 0
    commands.cmd_bounds(config, tmp_path)
    assert len(read_csv_rows(tmp_path / "bounds.csv")) == 7


def test_estimate_mbp_vacuous_threshold(smoke_config, variant, tmp_path):
    config = variant(smoke_config, mbp={"omega": 1e9})
    commands.cmd_estimate_mbp(config, tmp_path)
    payload = json.loads((tmp_path / "mbp.json").read_text())
    # every count saturates; the clamp at 1 - 1/(2 * 5) sets epsilon_hat against the 1/2 prior
    assert payload["epsilon_hat"] == pytest.approx(math.log(0.9 / 0.5))
    assert payload["success_counts"] == [5, 5]
    assert payload["privacy_level"] == {
        "ldp_epsilon": 2.0 * payload["epsilon_hat"],
        "mbp_epsilon": payload["epsilon_hat"],
        "source": "estimated",
    }
    assert payload["refined_zeta"] == pytest.approx(payload["zeta"] / math.sqrt(0.9))
    assert payload["nominal_privacy"] is None


def test_estimate_mbp_reports_nominal_level(smoke_config, variant, tmp_path):
    config = variant(smoke_config, mechanism={"nominal_mbp_epsilon": 0.5})
    commands.cmd_estimate_mbp(config, tmp_path)
    payload = json.loads((tmp_path / "mbp.json").read_text())
    assert payload["nominal_privacy"] == {"ldp_epsilon": 1.0, "mbp_epsilon": 0.5, "source": "nominal"}
    assert payload["precision"] > 0
    assert payload["kappa_error"] > 0


def test_estimate_mbp_is_deterministic(smoke_config, tmp_path):
    commands.cmd_estimate_mbp(smoke_config, tmp_path / "a")
    commands.cmd_estimate_mbp(smoke_config, tmp_path / "b", workers=2)
    assert (tmp_path / "a" / "mbp.json").read_bytes() == (tmp_path / "b" / "mbp.json").read_bytes()


def test_estimate_mbp_over_rounds(smoke_config, variant, tmp_path):
    commands.cmd_estimate_mbp(variant(smoke_config, mbp={"over_rounds": True}), tmp_path)
    payload = json.loads((tmp_path / "mbp.json").read_text())
    assert len(payload["per_round_epsilon"]) == smoke_config.federated.rounds
    assert payload["epsilon_hat"] == max(payload["per_round_epsilon"])


def test_sweep_table(smoke_config, tmp_path):
    commands.cmd_sweep(smoke_config, tmp_path)
    text = (tmp_path / "sweep.csv").read_text()
    assert text.splitlines()[0] == ",".join(commands.SWEEP_COLUMNS)
    rows = read_csv_rows(tmp_path / "sweep.csv")
    assert len(rows) == 6
    ranks = [r["rank"] for r in rows if r["pruned"] == "false"]
    assert ranks == [str(i) for i in range(1, len(ranks) + 1)]


def test_main_exit_codes(tmp_path):
    out = str(tmp_path / "out")
    assert main.run(["sweep", "--config", str(SMOKE), "--out", out]) == 0
    assert (tmp_path / "out" / "sweep.csv").exists()
    assert main.run(["bounds", "--config", str(SMOKE), "--out", out]) == 2
    assert main.run(["attack", "--config", str(tmp_path / "missing.json")]) == 2
    assert main.run(["attack", "--config", str(SMOKE), "--out", out, "--trace-stride", "0"]) == 2
    assert main.run(["validate", "--config", str(SMOKE), "--out", out, "--checks", "nope"]) == 2


def test_main_numeric_error_exit(monkeypatch, tmp_path):
    def broken(*args, **kwargs):
        raise NumericDomainError("non-finite gradient")
    monkeypatch.setattr(main, "cmd_sweep", broken)
    assert main.run(["sweep", "--config", str(SMOKE), "--out", str(tmp_path)]) == 3


def test_main_malformed_environment_is_config_error(monkeypatch, tmp_path):
    monkeypatch.setenv("FEDLEAK_WORKERS", "many")
    assert main.run(["sweep", "--config", str(SMOKE), "--out", str(tmp_path)]) == 2
    assert not (tmp_path / "sweep.csv").exists()


def test_main_rejects_unknown_command():
    with pytest.raises(SystemExit) as info:
        main.run(["plot"])
    assert info.value.code == 2
