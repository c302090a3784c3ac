import subprocess
import sys

import pytest

from nsbfgs import cli, problems
from nsbfgs.mpnum import Precision


def parse(*argv):
    return cli.config_from_args(cli.build_parser().parse_args(list(argv)))


def run_ok(*argv):
    assert cli.main(list(argv)) == 0


class TestConfig:
    def test_example_defaults(self):
        c1 = parse("example1")
        assert (c1.n, c1.m, c1.runs, c1.iters, c1.c1, c1.c2, c1.digits) == (10, 6, 10, 1000, 1e-4, 0.5, 520)
        c2 = parse("example2")
        assert (c2.points, c2.log10_range, c2.digits) == (100, (-30.0, 2.0), 520)
        c3 = parse("example3")
        assert (c3.n, c3.m, c3.periods, c3.c1, c3.c2, c3.digits) == (100, 80, 18, 0.5, 0.75, None)

    def test_flags(self):
        cfg = parse("example2", "--n", "4", "--m", "3", "--points", "7", "--log10-range", "-5", "1",
                    "--machine-precision", "--seed", "3", "--out", "x")
        assert (cfg.n, cfg.m, cfg.points, cfg.log10_range, cfg.digits, cfg.seed, cfg.out) == (
            4, 3, 7, (-5.0, 1.0), None, 3, "x")
        assert parse("example1", "--digits", "64").precision == Precision(64)

    def test_config_file_then_flags(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("# scaled run\nn = 6\nm = 4  # pieces\nlog10-range = -3 0\nmachine_precision = yes\n"
                        "restart_period = 5\n")
        cfg = parse("example3", "--config", str(path), "--m", "5")
        assert (cfg.n, cfg.m, cfg.log10_range, cfg.digits, cfg.restart_period) == (6, 5, (-3.0, 0.0), None, 5)

    @pytest.mark.parametrize("text", ["bogus = 1\n", "n = abc\n", "just words\n"])
    def test_bad_config_file(self, tmp_path, text):
        path = tmp_path / "bad.cfg"
        path.write_text(text)
        assert cli.main(["run", "--config", str(path), "--out", str(tmp_path)]) == 2

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["run", "--config", str(tmp_path / "none.cfg")]) == 1

    @pytest.mark.parametrize("argv", [
        ["example1", "--n", "3", "--m", "5"],
        ["example1", "--c1", "0.6", "--c2", "0.5"],
        ["example1", "--digits", "10"],
        ["example2", "--log10-range", "1", "1"],
        ["example2", "--points", "1"],
        ["example3", "--restart-period", "0"],
    ])
    def test_invalid_configuration_exit_code(self, argv, tmp_path):
        assert cli.main(argv + ["--out", str(tmp_path)]) == 2

    def test_io_error_exit_code(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert cli.main(["run", "--problem", "abs", "--out", str(blocker / "sub")]) == 1


class TestExample1:
    def test_schema(self, tmp_path):
        run_ok("example1", "--n", "4", "--m", "3", "--iters", "200", "--runs", "2",
               "--machine-precision", "--out", str(tmp_path))
        meta, rows = cli.read_csv(tmp_path / "example1_seed0.csv")
        assert list(rows[0]) == ["k", "fgap", "lambda_1", "lambda_2", "lambda_3", "lambda_4",
                                 "t_k", "active_index", "memory_metric"]
        assert [int(r["k"]) for r in rows] == list(range(len(rows)))
        assert "c1: 0.0001" in meta and "c2: 0.5" in meta
        _, summary = cli.read_csv(tmp_path / "example1_summary.csv")
        assert [r["seed"] for r in summary] == ["0", "1"]
        assert all(float(r["sigma_L"]) <= float(r["sigma_U"]) for r in summary)

    def test_row_count_and_extended_format(self, tmp_path):
        run_ok("example1", "--n", "3", "--m", "2", "--iters", "12", "--runs", "1", "--digits", "40",
               "--out", str(tmp_path))
        meta, rows = cli.read_csv(tmp_path / "example1_seed0.csv")
        assert len(rows) == 12 and all(r["t_k"] for r in rows)
        assert "precision: 40 digits" in meta

    def test_deterministic_and_parallel_identical(self, tmp_path):
        args = ["example1", "--n", "4", "--m", "3", "--iters", "40", "--runs", "2", "--machine-precision"]
        run_ok(*args, "--out", str(tmp_path / "a"))
        run_ok(*args, "--out", str(tmp_path / "b"), "--jobs", "2")
        for name in ("example1_seed0.csv", "example1_seed1.csv", "example1_summary.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestExample2:
    def test_scaled_sweep(self, tmp_path):
        run_ok("example2", "--points", "5", "--log10-range", "-5", "1", "--machine-precision",
               "--out", str(tmp_path))
        _, rows = cli.read_csv(tmp_path / "example2.csv")
        assert len(rows) == 5
        assert list(rows[0])[:6] == ["log10_dist", "min_partition_eig", "max_eig",
                                     "exploration_metric", "explored_all", "visit_order"]
        for r in rows:
            if float(r["log10_dist"]) <= -5:
                assert r["explored_all"] == "true"
                assert sorted(map(int, r["visit_order"].split())) == list(range(6))

    def test_deterministic(self, tmp_path):
        args = ["example2", "--points", "3", "--log10-range", "-4", "0", "--machine-precision"]
        run_ok(*args, "--out", str(tmp_path / "a"))
        run_ok(*args, "--out", str(tmp_path / "b"))
        assert (tmp_path / "a" / "example2.csv").read_bytes() == (tmp_path / "b" / "example2.csv").read_bytes()


class TestExample3:
    def test_scaled_restarts(self, tmp_path):
        run_ok("example3", "--n", "12", "--m", "8", "--periods", "10", "--compare-shorter",
               "--out", str(tmp_path))
        _, trace = cli.read_csv(tmp_path / "example3_trace_r8.csv")
        assert len(trace) == 80
        assert [int(r["restarted"]) for r in trace[:17]] == [0] * 8 + [1] + [0] * 7 + [1]
        _, periods = cli.read_csv(tmp_path / "example3_periods_r8.csv")
        gaps = [float(r["end_of_period_fgap"]) for r in periods]
        assert len(gaps) == 10 and all(b < a for a, b in zip(gaps, gaps[1:]))
        assert (tmp_path / "example3_periods_r7.csv").exists()

    def test_restart_every_iteration(self, tmp_path):
        run_ok("example3", "--n", "6", "--m", "4", "--periods", "5", "--restart-period", "1",
               "--out", str(tmp_path))
        _, trace = cli.read_csv(tmp_path / "example3_trace_r1.csv")
        assert len(trace) == 20 and all(r["restarted"] == "1" for r in trace[1:])
        _, periods = cli.read_csv(tmp_path / "example3_periods_r1.csv")
        assert all(r["unique_selection_count"] == "1" for r in periods)


class TestRun:
    def test_sphere_one_step(self, tmp_path):
        run_ok("run", "--problem", "sphere", "--n", "3", "--x0", "1,2,3", "--out", str(tmp_path))
        meta, rows = cli.read_csv(tmp_path / "run_sphere.csv")
        assert "termination: gradient" in meta
        assert float(rows[0]["t_k"]) == 1.0 and float(rows[1]["fval"]) == 0.0 and rows[1]["t_k"] == ""

    def test_abs_convergence(self, tmp_path):
        run_ok("run", "--problem", "abs", "--x0", "0.9", "--iters", "60", "--out", str(tmp_path))
        _, rows = cli.read_csv(tmp_path / "run_abs.csv")
        assert float(rows[-1]["fval"]) <= 1e-12

    def test_quad_plus_abs_heads_to_origin(self, tmp_path):
        run_ok("run", "--problem", "quad_plus_abs", "--x0", "0.7,-0.4", "--iters", "100",
               "--out", str(tmp_path))
        _, rows = cli.read_csv(tmp_path / "run_quad_plus_abs.csv")
        assert float(rows[-1]["fval"]) < 1e-8 < float(rows[0]["fval"])

    def test_instance_file(self, tmp_path):
        path = tmp_path / "inst.txt"
        problems.write_instance(problems.generate_max_instance(5, 3, 2), path)
        run_ok("run", "--problem", "max", "--n", "5", "--instance", str(path), "--iters", "20",
               "--out", str(tmp_path))
        _, rows = cli.read_csv(tmp_path / "run_max.csv")
        assert len(rows) >= 2

    def test_instance_precision_mismatch(self, tmp_path):
        path = tmp_path / "inst.txt"
        problems.write_instance(problems.generate_max_instance(3, 2, 2), path)
        assert cli.main(["run", "--problem", "max", "--n", "3", "--instance", str(path),
                         "--digits", "40", "--out", str(tmp_path)]) == 2

    def test_broken_instance_file(self, tmp_path):
        path = tmp_path / "inst.txt"
        path.write_text("maxinstance v1 2 1 0 0\n1 2\n")
        assert cli.main(["run", "--problem", "max", "--n", "2", "--instance", str(path),
                         "--out", str(tmp_path)]) == 2

    def test_x0_length_checked(self, tmp_path):
        assert cli.main(["run", "--problem", "abs", "--x0", "1,2", "--out", str(tmp_path)]) == 2

    def test_module_entry_point(self, tmp_path):
        out = subprocess.run([sys.executable, "-m", "nsbfgs", "run", "--problem", "abs",
                              "--x0", "0.5", "--iters", "5", "--out", str(tmp_path)],
                             capture_output=True, text=True)
        assert out.returncode == 0 and "run_abs.csv" in out.stdout
