import csv
import json
import math

import pytest

from robust_streaming.adversary import ObliviousAlgorithm, f2_probe_attack, play_game, random_stream
from robust_streaming.cli import derive_int, main
from robust_streaming.robust import epsilon0, lambda_bound, required_k
from robust_streaming.sketches import AmsF2Sketch, StreamModel, TAU_BOUNDED
from robust_streaming.streamio import write_stream


@pytest.fixture
def hand_stream(tmp_path):
    path = tmp_path / "hand.txt"
    path.write_text("1,+1\n1,+1\n2,-1\n")
    return str(path)


@pytest.fixture
def random_file(tmp_path):
    path = tmp_path / "rand.txt"
    write_stream(path, random_stream("insertion_only", 200, 600, 4))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestRun:
    def test_exact_echo(self, hand_stream, tmp_path, capsys):
        out = tmp_path / "o.csv"
        assert main(["run", hand_stream, "--mode", "exact", "--out", str(out)]) == 0
        rows = read_csv(out)
        assert [r["exact"] for r in rows] == ["1", "4", "5"]
        assert [r["within_alpha"] for r in rows] == ["1", "1", "1"]
        summary = json.loads(capsys.readouterr().out)
        assert summary["rounds"] == 3 and summary["max_rel_error"] == 0

    def test_header(self, hand_stream, tmp_path):
        out = tmp_path / "o.csv"
        main(["run", hand_stream, "--mode", "exact", "--out", str(out)])
        assert out.read_text().splitlines()[0] == "i,estimate,exact,within_alpha"

    def test_empty(self, tmp_path, capsys):
        src, out = tmp_path / "e.txt", tmp_path / "e.csv"
        src.write_text("# nothing\n")
        assert main(["run", str(src), "--out", str(out)]) == 0
        assert out.read_text() == "i,estimate,exact,within_alpha\n"
        assert json.loads(capsys.readouterr().out)["rounds"] == 0

    def test_robust_deterministic(self, random_file, tmp_path, capsys):
        args = ["run", random_file, "--eps", "200", "--C", "40", "--seed", "5"]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(args + ["--out", str(a)]) == 0
        first = capsys.readouterr()
        assert main(args + ["--out", str(b)]) == 0
        second = capsys.readouterr()
        assert a.read_bytes() == b.read_bytes()
        one, two = json.loads(first.out), json.loads(second.out)
        assert one.pop("csv_path") != two.pop("csv_path")
        assert one == two
        assert "lambda=" in first.err and "k=" in first.err
        assert one["recomputations"] <= one["config"]["lam"]
        assert one["rounds"] == 600

    def test_summary_derivable_from_csv(self, random_file, tmp_path, capsys):
        out = tmp_path / "o.csv"
        main(["run", random_file, "--mode", "oblivious", "--out", str(out)])
        summary = json.loads(capsys.readouterr().out)
        rows = read_csv(out)
        worst = max(abs(float(r["estimate"]) - int(r["exact"])) / int(r["exact"]) for r in rows)
        assert summary["max_rel_error"] == worst

    def test_distinct_oblivious(self, random_file, tmp_path):
        out = tmp_path / "o.csv"
        assert main(["run", random_file, "--mode", "oblivious", "--functionality", "distinct",
                     "--out", str(out)]) == 0
        assert len(read_csv(out)) == 600

    def test_timing_flag(self, hand_stream, capsys):
        main(["run", hand_stream, "--mode", "exact", "--timing"])
        assert "wall_time_s" in capsys.readouterr().err

    def test_format_error(self, tmp_path, capsys):
        src = tmp_path / "bad.txt"
        src.write_text("1,1\n2;1\n")
        assert main(["run", str(src)]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_model_violation(self, hand_stream):
        assert main(["run", hand_stream, "--mode", "robust"]) == 3
        assert main(["run", hand_stream, "--mode", "exact", "--model", "insertion_only"]) == 3

    def test_budget_exhausted(self, random_file, tmp_path, capsys):
        out = tmp_path / "o.csv"
        code = main(["run", random_file, "--eps", "50", "--lambda", "1", "--k", "8",
                     "--out", str(out)])
        assert code == 4
        assert json.loads(capsys.readouterr().out)["halted"] is True

    def test_turnstile_auto_is_input_error(self, hand_stream):
        assert main(["run", hand_stream, "--model", "turnstile"]) == 2

    def test_missing_file(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.txt")]) == 2


class TestAttack:
    def test_single_trial_matches_direct_game(self, tmp_path):
        out = tmp_path / "a.json"
        assert main(["attack", "--target", "ams", "--n", "400", "--m", "300", "--trials", "1",
                     "--seed", "3", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        row = doc["trials"][0]
        seed = derive_int(3, 0)
        assert row["seed"] == seed
        adv = f2_probe_attack(400, 300, 1, derive_int(seed, 1), 16)
        tr = play_game(ObliviousAlgorithm(AmsF2Sketch(derive_int(seed, 0), 0.3, 400)), adv, 300,
                       n=400, alpha=0.3)
        assert row["failure_round"] == tr.failure_round
        assert row["max_rel_error"] == tr.max_rel_error
        assert doc["failure_rate"] == (tr.failure_round is not None)

    def test_zero_trials(self, capsys):
        assert main(["attack", "--target", "ams", "--trials", "0"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["trials"] == [] and doc["failure_rate"] is None

    def test_deterministic_and_parallel(self, tmp_path):
        args = ["attack", "--target", "robust", "--n", "300", "--m", "200", "--trials", "2",
                "--eps", "100", "--C", "30", "--seed", "1"]
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        main(args + ["--out", str(a)])
        main(args + ["--jobs", "2", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()
        doc = json.loads(a.read_text())
        assert all(r["recomputations"] <= doc["config"]["lam"] for r in doc["trials"])


class TestParams:
    def test_passthrough(self, capsys):
        main(["params", "--alpha", "0.3", "--eps", "0.5", "--delta", "0.01", "--m", "5000",
              "--format", "json"])
        (row,) = json.loads(capsys.readouterr().out)
        lam = lambda_bound("insertion_only", 0.03, 5000)
        assert row["lambda"] == lam
        assert row["eps0"] == epsilon0(0.5, lam, 0.01)
        assert row["k"] == required_k(0.5, 0.01, lam, 5000, 0.3)

    def test_composed_below_eps(self, capsys):
        main(["params", "--alpha", "0.1", "0.5", "--eps", "0.01", "0.3", "1", "--delta", "1e-6",
              "0.1", "--m", "100", "100000", "--format", "json"])
        rows = json.loads(capsys.readouterr().out)
        assert len(rows) == 24
        assert all(r["eps_composed"] < r["eps"] for r in rows)

    def test_tau_doubling(self, capsys):
        main(["params", "--model", "tau_bounded", "--tau", "2", "4", "--format", "json"])
        a, b = json.loads(capsys.readouterr().out)
        assert b["lambda"] in (2 * a["lambda"] - 1, 2 * a["lambda"])
        assert a["lambda"] == lambda_bound(StreamModel(TAU_BOUNDED, 2), 0.03, 10_000)

    def test_csv_and_table(self, tmp_path, capsys):
        out = tmp_path / "p.csv"
        main(["params", "--format", "csv", "--out", str(out)])
        assert read_csv(out)[0]["model"] == "insertion_only"
        main(["params"])
        assert "grid_size" in capsys.readouterr().out

    def test_turnstile_rejected(self):
        assert main(["params", "--model", "turnstile"]) == 2


class TestFlipnum:
    def test_doublings(self, tmp_path, capsys):
        src = tmp_path / "d.txt"
        src.write_text("1,1\n1,1\n1,1\n")
        main(["flipnum", str(src), "--alpha", "0.5"])
        doc = json.loads(capsys.readouterr().out)
        assert doc["flip_number"] == 2 and doc["flip_rounds"] == [2, 3]

    def test_distinct(self, hand_stream, capsys):
        main(["flipnum", hand_stream, "--functionality", "distinct", "--alpha", "0.5"])
        assert json.loads(capsys.readouterr().out)["flip_rounds"] == [3]

    def test_insertion_bound(self, random_file, capsys):
        main(["flipnum", random_file, "--alpha", "0.25"])
        assert json.loads(capsys.readouterr().out)["flip_number"] <= 16 * math.log(600)


def test_gen(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    for p in (a, b):
        assert main(["gen", str(p), "--n", "50", "--m", "100", "--model", "tau_bounded",
                     "--tau", "3", "--deletion-prob", "0.3", "--seed", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 101
