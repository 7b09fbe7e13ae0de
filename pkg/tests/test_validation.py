"""
Tests de la batería de comprobaciones de aceptación.
"""
import math

import pytest
from pydantic import ValidationError

from app.cli import commands
from app.cli.models import ExitCode
from app.core.errors import ConfigError
from app.services import validation
from app.services.complexity import ConstantEstimates
from app.services.reports import read_csv_rows


def test_select_checks_keeps_canonical_order():
    assert validation.select_checks(["conversion_identities", "bound_calculators"]) == [
        "bound_calculators", "conversion_identities",
    ]
    assert validation.select_checks(None) == list(validation.CHECKS)

def test_unknown_check_is_config_error():
    with pytest.raises(ConfigError):
        validation.select_checks(["bound_calculators", "nope"])

def test_exact_checks_pass(smoke_config):
    results = validation.run_checks(smoke_config, ["bound_calculators", "conversion_identities"])
    assert [r.name for r in results] == ["bound_calculators", "conversion_identities"]
    assert all(r.passed for r in results)
    assert all(r.seconds >= 0 for r in results)

def test_statistical_checks_pass_at_smoke_scale(smoke_config):
    results = validation.run_checks(smoke_config, ["gradient_correctness", "protection_complexity_oracle"])
    assert {r.name: r.passed for r in results} == {
        "gradient_correctness": True,
        "protection_complexity_oracle": True,
    }

def test_protection_rate_levels_are_estimated(smoke_config):
    result = validation.run_checks(smoke_config, ["protection_rate"])[0]
    detail = result.detail
    assert detail["m"] == smoke_config.validate_.rate_dim
    assert len(detail["levels"]) == len(detail["costs"]) == len(detail["etas"])
    # 4 points, 4 trials: clamped kappa in [1/8, 7/8] caps epsilon_hat at log(3.5)
    assert all(0 < level <= math.log(3.5) + 1e-12 for level in detail["levels"])

def test_rate_dim_must_be_even(smoke_config, variant):
    with pytest.raises(ValidationError):
        variant(smoke_config, validate={"rate_dim": 9})

def test_zero_tolerance_fails_scaling_checks(smoke_config, variant):
    config = variant(smoke_config, validate={"tolerance": 0.0})
    results = validation.run_checks(config, ["protection_complexity_oracle", "protection_rate"])
    assert not any(r.passed for r in results)
    assert results[0].detail["trials"] == config.validate_.oracle_trials

def test_attack_monotonicity_passes_on_rising_table(smoke_config, variant, monkeypatch):
    config = variant(smoke_config, validate={"monotonicity_seeds": 6, "monotonicity_sigmas": [0.0, 0.5, 2.0]})
    monkeypatch.setattr(validation, "_paired_complexity", lambda c, sigma, rng: 1 + int(100 * sigma))
    result = validation.run_checks(config, ["attack_monotonicity"])[0]
    assert result.passed, result.measured
    assert result.detail["table"][0] == [1, 51, 201]

def test_attack_monotonicity_rejects_flat_medians(smoke_config, variant, monkeypatch):
    config = variant(smoke_config, validate={"monotonicity_seeds": 6})
    monkeypatch.setattr(validation, "_paired_complexity", lambda c, sigma, rng: 1)
    result = validation.run_checks(config, ["attack_monotonicity"])[0]
    assert not result.passed
    assert "medians [1, 1, 1]" in result.measured

def test_attack_monotonicity_rejects_dip(smoke_config, variant, monkeypatch):
    config = variant(smoke_config, validate={"monotonicity_seeds": 6, "monotonicity_sigmas": [0.0, 0.5, 2.0]})
    table = {0.0: 5, 0.5: 2, 2.0: 50}
    monkeypatch.setattr(validation, "_paired_complexity", lambda c, sigma, rng: table[sigma])
    result = validation.run_checks(config, ["attack_monotonicity"])[0]
    assert not result.passed

def test_attack_monotonicity_on_real_attacks(smoke_config, variant):
    config = variant(smoke_config, validate={"monotonicity_seeds": 2, "monotonicity_sigmas": [0.0, 2.0]})
    result = validation.run_checks(config, ["attack_monotonicity"])[0]
    assert len(result.detail["table"]) == 2
    assert all(1 <= s <= config.attack.max_iters + 1 for row in result.detail["table"] for s in row)

def test_mbp_convergence_compares_spreads(smoke_config, monkeypatch):
    small = smoke_config.validate_.mbp_t_sim_small
    monkeypatch.setattr(validation, "_epsilon_spread", lambda c, t, rng, w: 1.0 if t == small else 0.5)
    assert validation.run_checks(smoke_config, ["mbp_convergence"])[0].passed
    monkeypatch.setattr(validation, "_epsilon_spread", lambda c, t, rng, w: 1.0 if t == small else 0.9)
    result = validation.run_checks(smoke_config, ["mbp_convergence"])[0]
    assert not result.passed
    assert result.detail["t_sim"] == [small, smoke_config.validate_.mbp_t_sim_large]

def test_mbp_convergence_spread_is_non_negative(smoke_config):
    result = validation.run_checks(smoke_config, ["mbp_convergence"])[0]
    assert result.detail["replicates"] == 2
    assert result.measured.startswith("spread ")

FIXED_CONSTANTS = ConstantEstimates(c_a_hat=0.5, c_b_hat=1.0, p_hat=0.5, c0_hat=0.1, c2_hat=1.0, sample_count=20)

def test_bound_sandwich_unattained_is_not_a_pass(smoke_config, variant, monkeypatch):
    monkeypatch.setattr(validation, "estimate_constants", lambda *args, **kwargs: FIXED_CONSTANTS)
    config = variant(smoke_config, validate={"sandwich_tau": 1e-12})
    result = validation.run_checks(config, ["bound_sandwich"])[0]
    assert not result.passed
    assert result.detail["unattained"] is True
    assert "not evaluated" in result.measured

def test_bound_sandwich_default_threshold_is_attained(smoke_config, monkeypatch):
    monkeypatch.setattr(validation, "estimate_constants", lambda *args, **kwargs: FIXED_CONSTANTS)
    result = validation.run_checks(smoke_config, ["bound_sandwich"])[0]
    assert result.detail["tau_source"] == "halfway"
    assert result.detail["unattained"] is False
    assert result.measured.startswith("S_k=")

@pytest.mark.slow
def test_shipped_config_check_battery(default_config):
    results = {r.name: r for r in validation.run_checks(default_config, workers=2,
                                                         attack_runner=commands.cmd_attack)}
    assert list(results) == list(validation.CHECKS)
    # protection_rate reports whatever slopes the estimated levels give
    failed = [name for name, r in results.items() if not r.passed and name != "protection_rate"]
    assert not failed, {name: results[name].measured for name in failed}
    assert results["protection_rate"].detail["m"] == default_config.validate_.rate_dim

def test_determinism_check(smoke_config):
    result = validation.run_checks(smoke_config, ["determinism"], attack_runner=commands.cmd_attack)[0]
    assert result.passed, result.detail

def test_determinism_needs_runner(smoke_config):
    with pytest.raises(ConfigError):
        validation.run_checks(smoke_config, ["determinism"])

def test_hoeffding_check_on_reference_run(smoke_config):
    result = validation.run_checks(smoke_config, ["hoeffding_concentration"])[0]
    assert result.name == "hoeffding_concentration"
    assert "half_width" in result.detail

def test_validate_command_exit_status(smoke_config, variant, tmp_path):
    config = variant(smoke_config, validate={"tolerance": 0.0})
    result = commands.cmd_validate(config, tmp_path, checks=["protection_complexity_oracle", "bound_calculators"])
    assert result.exit_code is ExitCode.CHECK_FAILED
    rows = read_csv_rows(tmp_path / "validation.csv")
    assert [(r["name"], r["passed"]) for r in rows] == [
        ("protection_complexity_oracle", "false"),
        ("bound_calculators", "true"),
    ]

def test_validate_command_uses_configured_subset(smoke_config, variant, tmp_path):
    config = variant(smoke_config, validate={"checks": ["conversion_identities"]})
    result = commands.cmd_validate(config, tmp_path)
    assert result.exit_code is ExitCode.SUCCESS
    assert [c.name for c in result.checks] == ["conversion_identities"]
