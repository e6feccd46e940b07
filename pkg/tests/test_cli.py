import argparse
import csv
import json
import math
import subprocess
import sys

import pytest

from routedbell.cli import (EXIT_INPUT, EXIT_OK, main, parse_angle, parse_constraint,
                            parse_grid)
from routedbell.errors import RoutedBellError


def run(tmp_path, *argv, name="out.csv"):
    path = tmp_path / name
    code = main([*argv, "--out", str(path)])
    rows = list(csv.DictReader(path.open())) if path.exists() else []
    return code, rows, path


class TestParsers:
    @pytest.mark.parametrize("text, value", [("pi/8", math.pi / 8), ("3pi/8", 3 * math.pi / 8),
                                             ("0.5*pi", math.pi / 2), ("-pi/4", -math.pi / 4),
                                             ("0.3927", 0.3927), ("pi", math.pi)])
    def test_angles(self, text, value):
        assert parse_angle(text) == pytest.approx(value)

    def test_bad_angle(self):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_angle("half a turn")

    def test_grids(self):
        assert parse_grid("0.9:1.0:3") == pytest.approx([0.9, 0.95, 1.0])
        assert parse_grid("1, 0.97") == [1.0, 0.97]

    def test_constraints(self):
        e, rel, v = parse_constraint("CS>=2.5")
        assert rel == ">=" and v == 2.5 and e.name
        with pytest.raises(RoutedBellError):
            parse_constraint("CS~2")
        with pytest.raises(RoutedBellError):
            parse_constraint("CX=2")


class TestBound:
    def test_tsirelson(self, tmp_path):
        code, rows, path = run(tmp_path, "bound", "--expr", "chshS", "--class", "q", "--level", "1 + AB")
        assert code == EXIT_OK
        assert float(rows[0]["value"]) == pytest.approx(2 * math.sqrt(2), abs=1e-6)
        meta = json.loads((tmp_path / "out.csv.meta.json").read_text())
        assert meta["level"] == "1 + AB"
        assert {"seed", "runtime_s", "gap_tol"} <= set(meta)

    def test_long_path_with_short_path_pinned(self, tmp_path):
        code, rows, _ = run(tmp_path, "bound", "--expr", "chshL", "--constrain", "CS=2.4")
        assert code == EXIT_OK
        assert float(rows[0]["value"]) == pytest.approx(2.0, abs=1e-5)

    def test_stdout(self, capsys):
        assert main(["bound", "--expr", "jtheta", "--theta", "pi/8"]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.startswith("expression,class,level,value,rigorous,status")

    @pytest.mark.parametrize("argv", [["bound", "--expr", "nope"],
                                      ["bound", "--expr", "chshS", "--level", "AC"],
                                      ["bound", "--expr", "jpm"],
                                      ["bound"],
                                      ["critical-eta", "--eta-s", "0"]])
    def test_invalid_input(self, argv, capsys):
        assert main(argv) == EXIT_INPUT


class TestVerify:
    @pytest.mark.parametrize("what", ["sos", "table1", "bounds"])
    def test_checks_pass(self, tmp_path, what):
        code, rows, _ = run(tmp_path, "verify", what, "--grid", "20")
        assert code == EXIT_OK
        assert rows and all(r["result"] in ("PASS", "CONJECTURE") for r in rows)


class TestCriticalAndFigures:
    def test_critical_eta(self, tmp_path):
        code, rows, _ = run(tmp_path, "critical-eta", "--family", "chsh", "--eta-s", "1.0",
                            "--level", "1 + AB")
        assert code == EXIT_OK
        assert float(rows[0]["eta_L_upper"]) == pytest.approx(2 - math.sqrt(2), abs=1e-4)

    def test_table1_reruns_are_identical(self, tmp_path):
        c1, rows, p1 = run(tmp_path, "fig", "table1", "--light", name="a.csv")
        c2, _, p2 = run(tmp_path, "fig", "table1", "--light", name="b.csv")
        assert c1 == c2 == EXIT_OK
        assert p1.read_bytes() == p2.read_bytes()
        assert len(rows) == 6
        statuses = {(r["row"], r["column"]): r["status"] for r in rows}
        assert statuses[("general", "routed-not-binned")] == "conjecture-consistent"

    def test_tradeoff(self, tmp_path):
        code, rows, _ = run(tmp_path, "tradeoff", "--grid", "4")
        assert code == EXIT_OK and len(rows) == 4


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "routedbell.cli", "--version"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()
