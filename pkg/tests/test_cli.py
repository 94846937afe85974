import json
import re

from dist_alm.cli import main


def run_cli(args):
    return main(args)


class TestSolve:
    def test_small_instance_converges(self, capsys, tmp_path):
        out = tmp_path / "trace.jsonl"
        code = run_cli(["solve", "--toy", "--n", "2", "--d", "1", "--seed", "1",
                        "--eta", "1e-6", "--out", str(out)])
        captured = capsys.readouterr().out
        assert code == 0
        feas = float(re.search(r"feasibility_inf=([0-9.e+-]+)", captured).group(1))
        assert feas <= 1e-6
        rows = [json.loads(line) for line in out.read_text().splitlines()]
        assert rows and rows[0]["k"] == 0

    def test_unsolvable_budget_returns_one(self, capsys):
        code = run_cli(["solve", "--toy", "--n", "2", "--d", "1", "--seed", "1",
                        "--eta", "1e-6", "--max-outer", "1", "--max-sweeps", "1"])
        assert code == 1


class TestBench:
    def test_csv_output_and_determinism(self, tmp_path, capsys):
        out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
        base = ["bench", "--n", "4", "--d", "2", "--r", "2", "--instances", "2",
                "--seed", "7", "--budgets", "5,10", "--tolerances", "1e-2,1e-3"]
        assert run_cli(base + ["--out", str(out_a)]) == 0
        assert run_cli(base + ["--out", str(out_b)]) == 0
        assert out_a.read_bytes() == out_b.read_bytes()
        lines = out_a.read_text().strip().split("\n")
        assert lines[0] == "budget,tolerance,fraction,instances"
        assert len(lines) == 1 + 2 * 2

    def test_paper_style_invocation(self, tmp_path):
        out = tmp_path / "stats.csv"
        code = run_cli(["bench", "--n", "6", "--d", "3", "--r", "2",
                        "--rho0", "0.1", "--beta", "100", "--instances", "3",
                        "--seed", "7", "--budgets", "10,30",
                        "--tolerances", "1e-3,1e-4,1e-6", "--out", str(out)])
        assert code == 0
        assert out.read_text().startswith("budget,tolerance,fraction,instances\n")


class TestVerify:
    def test_fresh_checkout_passes(self, capsys):
        assert run_cli(["verify"]) == 0
        out = capsys.readouterr().out
        assert out.count("[PASS]") == 3 and "[FAIL]" not in out


class TestConfigHandling:
    def test_config_file_supplies_values(self, tmp_path, capsys):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"n": 2, "d": 1, "seed": 1, "eta": 1e-6}))
        assert run_cli(["solve", "--config", str(cfg)]) == 0

    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"instances": 3, "n": 4, "d": 2,
                                   "budgets": "5", "tolerances": "1e-2"}))
        out = tmp_path / "s.csv"
        assert run_cli(["bench", "--config", str(cfg), "--instances", "2",
                        "--out", str(out)]) == 0
        assert out.read_text().strip().endswith(",2")

    def test_unknown_config_key_exits_two(self, tmp_path, capsys):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"nope": 1}))
        assert run_cli(["solve", "--config", str(cfg)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_malformed_json_reports_line(self, tmp_path, capsys):
        cfg = tmp_path / "run.json"
        cfg.write_text("{\n  broken\n}")
        assert run_cli(["solve", "--config", str(cfg)]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_unknown_flag_exits_two(self, capsys):
        assert run_cli(["solve", "--nope"]) == 2

    def test_invalid_numeric_field_exits_two(self, capsys):
        assert run_cli(["solve", "--toy", "--beta", "0.5"]) == 2
        assert "config error" in capsys.readouterr().err


class TestEnvironment:
    def test_thread_cap_parsed_from_env(self, monkeypatch):
        from dist_alm.cli import _threads

        monkeypatch.setenv("DIST_ALM_THREADS", "3")
        assert _threads() == 3
        monkeypatch.setenv("DIST_ALM_THREADS", "0")
        assert _threads() == 0
        monkeypatch.delenv("DIST_ALM_THREADS")
        assert _threads() == 0

    def test_bad_thread_env_is_config_error(self, monkeypatch, capsys, tmp_path):
        monkeypatch.setenv("DIST_ALM_THREADS", "many")
        out = tmp_path / "s.csv"
        code = run_cli(["bench", "--n", "4", "--d", "2", "--instances", "1",
                        "--budgets", "2", "--tolerances", "1e-2",
                        "--out", str(out)])
        assert code == 2
