"""Command line behavior: outputs, exit codes, determinism."""

import subprocess
import sys

import pytest

from drainguard.cli import main

SMALL = """
[deployment]
requesters = 5

[simulation]
days = 30
seed = 7

[attack]
kind = "chained_bursts"
requester_id = 5
start_day = 2
days = 28
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestParametrize:
    def test_prints_table_and_passes_checks(self, capsys, tmp_path):
        out_dir = tmp_path / "out"
        code, out, err = run_cli(
            capsys, "parametrize", "--out", str(out_dir), "--check"
        )
        assert code == 0
        assert "bucket_threshold_j" in out
        assert "checks passed" in err
        assert (out_dir / "parametrize.csv").read_text().startswith("parameter,value")

    def test_distorted_deployment_fails_check(self, capsys, tmp_path):
        config = tmp_path / "big.toml"
        config.write_text("[deployment]\nbattery_j = 10000.0\n")
        code, _, err = run_cli(capsys, "parametrize", "--config", str(config), "--check")
        assert code == 3
        assert "check failed" in err

    def test_without_check_distortion_still_prints(self, capsys, tmp_path):
        config = tmp_path / "big.toml"
        config.write_text("[deployment]\nbattery_j = 10000.0\n")
        code, out, _ = run_cli(capsys, "parametrize", "--config", str(config))
        assert code == 0
        assert "service_budget_j" in out


class TestSeverity:
    def test_check_passes_and_output_is_stable(self, capsys, tmp_path):
        out_dir = tmp_path / "out"
        code, out, _ = run_cli(capsys, "severity", "--out", str(out_dir), "--check")
        assert code == 0
        assert "days_to_exhaustion" in out
        first = (out_dir / "severity.csv").read_bytes()
        assert run_cli(capsys, "severity", "--out", str(out_dir))[0] == 0
        assert (out_dir / "severity.csv").read_bytes() == first


class TestDetect:
    def test_seed_sweep_writes_one_file_per_seed(self, capsys, small_config, tmp_path):
        out_dir = tmp_path / "out"
        code, out, _ = run_cli(
            capsys,
            "detect", "--config", str(small_config), "--limiter", "ewma",
            "--seeds", "1", "2", "--out", str(out_dir),
        )
        assert code == 0
        assert "algorithm=ewma" in out
        assert (out_dir / "detect_ewma_seed1.csv").exists()
        assert (out_dir / "detect_ewma_seed2.csv").exists()
        header = (out_dir / "detect_ewma_seed1.csv").read_text().splitlines()[0]
        assert header == "day,requester_id,served,dropped,level_j"

    def test_check_runs_both_algorithms_and_agrees(self, capsys, small_config):
        code, out, err = run_cli(
            capsys, "detect", "--config", str(small_config), "--check"
        )
        assert code == 0
        assert "algorithm=lb" in out and "algorithm=ewma" in out
        assert "checks passed" in err

    def test_rerun_is_byte_identical(self, capsys, small_config, tmp_path):
        out_dir = tmp_path / "out"
        args = ("detect", "--config", str(small_config), "--out", str(out_dir))
        run_cli(capsys, *args)
        first = (out_dir / "detect_lb_seed7.csv").read_bytes()
        run_cli(capsys, *args)
        assert (out_dir / "detect_lb_seed7.csv").read_bytes() == first

    def test_seed_flag_changes_traffic(self, capsys, small_config):
        _, one, _ = run_cli(capsys, "detect", "--config", str(small_config), "--seed", "1")
        _, two, _ = run_cli(capsys, "detect", "--config", str(small_config), "--seed", "2")
        assert one != two

    def test_attack_start_beyond_horizon_is_config_error(self, capsys, tmp_path):
        config = tmp_path / "late.toml"
        config.write_text(
            SMALL.replace("start_day = 2", "start_day = 40").replace("days = 28", "days = 1")
        )
        code, _, err = run_cli(capsys, "detect", "--config", str(config))
        assert code == 2
        assert "config error" in err


class TestLatency:
    def test_reference_rows_pass_check(self, capsys, tmp_path):
        out_dir = tmp_path / "out"
        code, out, _ = run_cli(capsys, "latency", "--out", str(out_dir), "--check")
        assert code == 0
        assert "asym" in out
        assert "26.6" in out
        assert (out_dir / "latency.csv").exists()

    def test_slower_radio_fails_check(self, capsys, tmp_path):
        config = tmp_path / "slow.toml"
        config.write_text("[links]\nprovider_bytes_per_second = 10.0\n")
        code, _, err = run_cli(capsys, "latency", "--config", str(config), "--check")
        assert code == 3
        assert "outside [25, 28]" in err


class TestInjectionDrain:
    def test_all_schemes_by_default(self, capsys):
        code, out, _ = run_cli(capsys, "injection-drain")
        assert code == 0
        assert out.count("scheme=") == 3

    def test_single_scheme_and_rate(self, capsys):
        code, out, _ = run_cli(capsys, "injection-drain", "--protocol", "p2", "--rate", "2.0")
        assert code == 0
        assert out.count("scheme=") == 1
        assert "scheme=p2" in out
        assert f"attempted={2 * 365 * 86400}" in out

    def test_reference_check_passes(self, capsys):
        assert run_cli(capsys, "injection-drain", "--check")[0] == 0

    def test_costlier_verification_fails_check(self, capsys, tmp_path):
        config = tmp_path / "cost.toml"
        config.write_text("[protocol]\nverify_energy_p1_j = 2e-6\n")
        code, _, err = run_cli(
            capsys, "injection-drain", "--config", str(config), "--check"
        )
        assert code == 3
        assert "38.2" in err


class TestRun:
    def test_full_stack_outputs_and_check(self, capsys, tmp_path):
        config = tmp_path / "tiny.toml"
        config.write_text(
            "[deployment]\nrequesters = 4\n\n[simulation]\ndays = 2\nseed = 3\n"
        )
        out_dir = tmp_path / "out"
        code, out, err = run_cli(
            capsys, "run", "--config", str(config), "--out", str(out_dir), "--check"
        )
        assert code == 0
        assert out.startswith("days=2 ")
        assert "checks passed" in err
        for name in ("grants.csv", "energy.csv", "limiter.csv", "summary.txt"):
            assert (out_dir / name).exists()
        first = (out_dir / "grants.csv").read_bytes()
        run_cli(capsys, "run", "--config", str(config), "--out", str(out_dir))
        assert (out_dir / "grants.csv").read_bytes() == first

    def test_protocol_and_limiter_overrides(self, capsys, tmp_path):
        config = tmp_path / "tiny.toml"
        config.write_text(
            "[deployment]\nrequesters = 2\n\n[simulation]\ndays = 1\n"
        )
        code, out, _ = run_cli(
            capsys,
            "run", "--config", str(config),
            "--protocol", "p2", "--limiter", "ewma", "--check",
        )
        assert code == 0
        assert out.startswith("days=1 ")


class TestErrors:
    def test_missing_config_exits_2(self, capsys, tmp_path):
        code, _, err = run_cli(
            capsys, "parametrize", "--config", str(tmp_path / "none.toml")
        )
        assert code == 2
        assert "config error" in err

    def test_unknown_key_exits_2(self, capsys, tmp_path):
        config = tmp_path / "typo.toml"
        config.write_text("[limiter]\nalgorithmn = \"lb\"\n")
        code, _, err = run_cli(capsys, "severity", "--config", str(config))
        assert code == 2
        assert "unknown keys" in err

    def test_module_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "drainguard.cli", "latency", "--check"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "p2" in proc.stdout
