"""Tests for the command-line commands."""

import math
from types import SimpleNamespace

import pytest

import cli
import mc_engine
from cli import (
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    _round3,
    cmd_mc,
    cmd_oracle,
    cmd_price,
    cmd_smile,
    cmd_table1,
    main,
)
from errors import ConfigurationError, ValidationError
from run_config import parse_config

SABR_TEXT = """
model.kind = sabr
model.sigma = 2
model.rho = -0.7
market.s0 = 1
market.v0 = 0.1
"""

TABLE1_ROWS = [
    ("SABR", "-0.7", "0.183", "-0.224", "0.085"),
    ("SABR", "0.0", "0.183", "0.018", "0.389"),
    ("SABR", "+0.7", "0.183", "0.261", "0.141"),
    ("Heston", "-0.7", "0.115", "-0.110", "-0.061"),
    ("Heston", "0.0", "0.115", "0.012", "0.153"),
    ("Heston", "+0.7", "0.115", "0.133", "-0.033"),
    ("Tanh", "-0.7", "0.183", "-0.279", "0.089"),
    ("Tanh", "0.0", "0.183", "-0.037", "0.379"),
    ("Tanh", "+0.7", "0.183", "0.206", "0.116"),
]


def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestTable:
    def test_rows(self):
        result = cmd_table1()
        assert result.header == ("model", "rho", "sigma_atm", "skew", "convexity")
        assert [tuple(row) for row in result.rows] == TABLE1_ROWS

    @pytest.mark.parametrize("value, expected", [
        (0.0845, "0.085"),
        (-0.0845, "-0.085"),
        (-0.0004, "0.000"),
        (0.18257418583505536, "0.183"),
    ])
    def test_round_half_away_from_zero(self, value, expected):
        assert _round3(value) == expected


class TestAsymptoticCommands:
    def test_smile(self):
        result = cmd_smile(parse_config(SABR_TEXT + "request.x_grid = -0.05, 0, 0.05\n"))
        assert [row[0] for row in result.rows] == [-0.05, 0.0, 0.05]
        x, strike, sigma = result.rows[1]
        assert strike == 1.0
        assert sigma == pytest.approx(1.0 / math.sqrt(30.0), rel=1e-14)
        assert result.rows[0][2] > result.rows[2][2]

    def test_price_both_sides(self):
        config = parse_config(SABR_TEXT + "market.r = 0.02\nrequest.strikes = 0.98, 1.03\nrequest.maturity = 0.02\n")
        result = cmd_price(config)
        assert len(result.rows) == 4
        for call_row, put_row in zip(result.rows[::2], result.rows[1::2]):
            strike = call_row[0]
            assert (call_row[2], put_row[2]) == ("call", "put")
            forward = math.expm1(0.02 * 0.02) / (0.02 * 0.02)
            parity = math.exp(-0.02 * 0.02) * (forward - strike)
            assert call_row[3] - put_row[3] == pytest.approx(parity, abs=1e-14)
            assert call_row[5] is False

    def test_price_otm_side(self):
        result = cmd_price(parse_config(SABR_TEXT + "request.x_grid = -0.05, 0.05\nrequest.side = otm\n"))
        assert [row[2] for row in result.rows] == ["put", "call"]


class TestNumericalCommands:
    MC_TEXT = SABR_TEXT + "request.x_grid = -0.02, 0.02\nmc.seed = 42\nmc.n_paths = 2000\nmc.n_steps = 10\nmc.block_size = 500\n"

    def test_mc_is_reproducible(self):
        first = cmd_mc(parse_config(self.MC_TEXT))
        second = cmd_mc(parse_config(self.MC_TEXT))
        assert first.rows == second.rows
        assert [row[2] for row in first.rows] == ["put", "call"]

    def test_mc_seed_flag_overrides(self):
        base = cmd_mc(parse_config(self.MC_TEXT))
        other = cmd_mc(parse_config(self.MC_TEXT), seed=43)
        assert base.rows[0][3] != other.rows[0][3]

    def test_mc_floating(self):
        text = SABR_TEXT + "request.kappas = 0.98, 1.02\nmc.seed = 1\nmc.n_paths = 1000\nmc.n_steps = 10\n"
        result = cmd_mc(parse_config(text), mode="floating")
        assert [row[1] for row in result.rows] == ["call", "put"]
        assert all(row[2] > 0.0 for row in result.rows)

    def test_mc_simulates_once_per_ladder(self, monkeypatch):
        calls = []
        simulate = mc_engine.simulate_batch

        def counting(*args, **kwargs):
            calls.append(args)
            return simulate(*args, **kwargs)

        monkeypatch.setattr(mc_engine, "simulate_batch", counting)
        text = self.MC_TEXT.replace("request.x_grid = -0.02, 0.02", "request.x_grid = -0.05, -0.02, 0, 0.02, 0.05")
        result = cmd_mc(parse_config(text))
        assert len(result.rows) == 5
        assert len(calls) == 1
        calls.clear()
        floating = SABR_TEXT + "request.kappas = 0.98, 1.0, 1.02\nmc.seed = 1\nmc.n_paths = 1000\nmc.n_steps = 10\n"
        cmd_mc(parse_config(floating), mode="floating")
        assert len(calls) == 1

    def test_oracle_row_validation_failure_keeps_the_rest(self, monkeypatch):
        def solve(model, market, strike, options):
            if strike < 1.0:
                raise ValidationError("sigma vanishes on the explored side")
            return SimpleNamespace(rate=0.125, converged=True, constraint_residual=0.0, stationarity=0.0)

        monkeypatch.setattr(cli, "solve_fixed", solve)
        result = cmd_oracle(parse_config(SABR_TEXT + "request.x_grid = -0.05, 0.05\n"))
        assert result.exit_code == EXIT_NUMERICAL
        failed, solved = result.rows
        assert failed[0] == -0.05
        assert failed[2:] == (None, None, False)
        assert solved[2] == 0.125
        assert solved[3] == pytest.approx(abs(0.125 - solved[1]))

    def test_mc_rejects_oracle_modes(self):
        with pytest.raises(ConfigurationError):
            cmd_mc(parse_config(self.MC_TEXT), mode="rho-pm")

    def test_oracle_grid_must_skip_the_money(self):
        with pytest.raises(ConfigurationError):
            cmd_oracle(parse_config(SABR_TEXT + "request.x_grid = 0, 0.05\n"))

    def test_rho_pm_needs_sign(self):
        with pytest.raises(ConfigurationError):
            cmd_oracle(parse_config(SABR_TEXT + "request.x_grid = 0.05\n"), mode="rho-pm")

    @pytest.mark.slow
    def test_oracle_fixed(self):
        text = SABR_TEXT + "request.x_grid = 0.05\noracle.grids = 101, 201\n"
        result = cmd_oracle(parse_config(text))
        x, expected, rate, diff, converged = result.rows[0]
        assert rate == pytest.approx(expected, rel=2e-3)
        assert diff == pytest.approx(abs(rate - expected))


class TestMain:
    def test_table1_to_file(self, tmp_path):
        out = tmp_path / "table.csv"
        assert main(["table1", "--out", str(out)]) == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0] == "model,rho,sigma_atm,skew,convexity"
        assert lines[1] == "SABR,-0.7,0.183,-0.224,0.085"
        assert len(lines) == 10

    def test_smile_to_file(self, tmp_path):
        cfg = _write(tmp_path, SABR_TEXT + "request.x_grid = 0\n")
        out = tmp_path / "smile.csv"
        assert main(["smile", "--config", cfg, "--out", str(out)]) == EXIT_OK
        assert out.read_text().splitlines() == ["x,K,sigma_asym", "0,1,0.182574185835"]

    def test_missing_config_file(self, tmp_path):
        assert main(["smile", "--config", str(tmp_path / "absent.cfg")]) == EXIT_CONFIG

    def test_invalid_config(self, tmp_path):
        cfg = _write(tmp_path, "model.kind = sabr\nmarket.s0 = 1\n")
        assert main(["price", "--config", cfg]) == EXIT_CONFIG

    def test_oracle_at_the_money_is_a_config_error(self, tmp_path):
        cfg = _write(tmp_path, SABR_TEXT + "request.x_grid = 0\n")
        assert main(["oracle", "--config", cfg]) == EXIT_CONFIG

    def test_unknown_mode_is_rejected_by_the_parser(self, tmp_path):
        cfg = _write(tmp_path, SABR_TEXT)
        with pytest.raises(SystemExit) as info:
            main(["mc", "--config", cfg, "--mode", "rho-pm"])
        assert info.value.code == 2
