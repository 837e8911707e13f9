import csv
import io
import json
import shutil

import pytest

from probprog.cli import main
from probprog.metrics import corpus_path
from probprog.oracles import load_golden, write_golden

CORPUS = ["hmm", "dp-mixture", "branching", "marsaglia"]


def run_cli(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def jsonl(text):
    return [json.loads(line) for line in text.splitlines()]


def test_run_branching_jsonl(capsys):
    code, out, err = run_cli(["run", str(corpus_path("branching")), "--engine", "pg",
                              "--particles", "100", "--sweeps", "3", "--seed", "7"], capsys)
    assert code == 0
    recs = jsonl(out)
    assert len(recs) == 300
    assert set(recs[0]) == {"sweep", "sim", "label", "value", "applies", "t_ns"}
    assert {r["label"] for r in recs} == {"r"}
    assert [r["sim"] for r in recs[::100]] == [100, 200, 300]
    assert "simulations=300" in err and "log_evidence=" in err


def test_run_bundled_name_resolves(capsys):
    code, out, _ = run_cli(["run", "branching.ang", "--sweeps", "1", "--particles", "2"], capsys)
    assert code == 0 and len(jsonl(out)) == 2


def test_run_hmm_rdb_labels(capsys):
    code, out, _ = run_cli(["run", "hmm.ang", "--engine", "rdb", "--sweeps", "20"], capsys)
    assert code == 0
    recs = jsonl(out)
    by_sweep = {}
    for r in recs:
        by_sweep.setdefault(r["sweep"], []).append(r["label"])
    assert len(by_sweep) == 21
    assert all(len(set(labels)) == 17 for labels in by_sweep.values())


def test_run_missing_file(capsys, tmp_path):
    code, _, err = run_cli(["run", str(tmp_path / "nope.ang")], capsys)
    assert code == 1 and "no such program" in err


def test_run_parse_error(capsys, tmp_path):
    p = tmp_path / "bad.ang"
    p.write_text("[assume x (+ 1 2]")
    code, _, err = run_cli(["run", str(p)], capsys)
    assert code == 1 and "error" in err


def test_run_validation_error(capsys, tmp_path):
    p = tmp_path / "bad.ang"
    p.write_text("[predict y]\n[observe (+ 1 2) 3]")
    code, _, err = run_cli(["run", str(p)], capsys)
    assert code == 1
    assert err.count("error:") == 2


def test_run_degenerate_exit_2(capsys, tmp_path):
    p = tmp_path / "degenerate.ang"
    p.write_text("[assume a (flip 0.5)]\n[observe (poisson 3) 0.5]\n[predict a]")
    code, _, err = run_cli(["run", str(p), "--particles", "5", "--sweeps", "2"], capsys)
    assert code == 2 and "observe 0" in err


def test_run_csv_format(tmp_path, capsys):
    out = tmp_path / "out.csv"
    code, _, _ = run_cli(["run", "marsaglia.ang", "--engine", "rdb", "--sweeps", "4",
                          "--format", "csv", "-o", str(out)], capsys)
    assert code == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["sweep", "sim", "label", "value", "applies", "t_ns"]
    assert len(rows) == 6 and all(r[2] == "mu" for r in rows[1:])


@pytest.mark.parametrize("engine", ["smc", "pg", "rdb", "pimh"])
def test_run_byte_identical(engine, tmp_path, capsys):
    paths = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
    for p in paths:
        assert main(["run", "hmm.ang", "--engine", engine, "--particles", "10",
                     "--sweeps", "5", "--seed", "3", "-o", str(p)]) == 0
    capsys.readouterr()
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_trace_seed_overrides(monkeypatch, capsys):
    _, direct, _ = run_cli(["run", "branching.ang", "--particles", "5", "--sweeps", "3",
                            "--seed", "42"], capsys)
    monkeypatch.setenv("TRACE_SEED", "42")
    _, via_env, err = run_cli(["run", "branching.ang", "--particles", "5", "--sweeps", "3",
                               "--seed", "1"], capsys)
    assert via_env == direct and "seed=42" in err


def test_wall_clock_flag(capsys):
    _, out, _ = run_cli(["run", "branching.ang", "--engine", "rdb", "--sweeps", "3",
                         "--wall-clock"], capsys)
    assert jsonl(out)[-1]["t_ns"] > 0


@pytest.mark.parametrize("engine", ["smc", "pg", "rdb", "pimh"])
@pytest.mark.parametrize("name", CORPUS)
def test_every_corpus_program_runs(engine, name, capsys):
    code, out, _ = run_cli(["run", f"{name}.ang", "--engine", engine, "--particles", "5",
                            "--sweeps", "3"], capsys)
    assert code == 0 and out


def test_fork_every_directive_flag(capsys):
    code, out, _ = run_cli(["run", "branching.ang", "--particles", "4", "--sweeps", "2",
                            "--fork-every-directive"], capsys)
    assert code == 0 and len(jsonl(out)) == 8


# --- test subcommand ----------------------------------------------------------------

def test_test_unit_tier(capsys):
    code, out, _ = run_cli(["test", "--tier", "unit"], capsys)
    assert code == 0
    assert "== unit tier: PASS" in out
    assert "measure" not in out and "conditional" not in out


def _golden_dir(tmp_path):
    d = tmp_path / "golden"
    d.mkdir()
    for name in ("hmm", "dp-mixture", "branching"):
        rows = [(label, value, p) for label, dist in load_golden(name).items()
                for value, p in dist.items()]
        write_golden(d / f"{name}.csv", rows)
    return d


def test_test_conditional_with_corrupted_oracle(tmp_path, capsys):
    d = _golden_dir(tmp_path)
    # move all of the branching posterior onto r = 0
    write_golden(d / "branching.csv", [("r", 0.0, 1.0)])
    code, out, _ = run_cli(["test", "--tier", "conditional", "--golden-dir", str(d),
                            "--scale", "0.01"], capsys)
    assert code != 0
    line = next(line for line in out.splitlines() if "branching" in line)
    assert "[FAIL]" in line and "inf" in line


def test_test_conditional_reads_golden_dir(tmp_path, capsys):
    d = _golden_dir(tmp_path)
    shutil.copy(d / "branching.csv", d / "unused.csv")
    code, out, _ = run_cli(["test", "--tier", "conditional", "--golden-dir", str(d),
                            "--scale", "0.01"], capsys)
    assert "== conditional tier" in out
    assert sum("conditional/" in line for line in out.splitlines()) == 4


# --- bench subcommand -----------------------------------------------------------------

def test_bench_figure_1(capsys):
    code, out, err = run_cli(["bench", "--figure", "1", "--program", "branching", "--seeds", "2",
                              "--simulations", "200"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert {r["engine"] for r in rows} == {"pg-100", "rdb"}
    assert {r["seed"] for r in rows} == {"0", "1"}
    assert all(r["wall_clock_ns"] == "0" for r in rows)
    assert "median final" in err


def test_bench_figure_3_ladder(capsys):
    code, out, _ = run_cli(["bench", "--figure", "3", "--program", "hmm", "--seeds", "1",
                            "--simulations", "10"], capsys)
    assert code == 0
    engines = {r["engine"] for r in csv.DictReader(io.StringIO(out))}
    assert engines == {f"pg-{L}" for L in (2, 5, 10, 20, 50, 100, 200, 500)}


def test_bench_figure_2_permutations(capsys):
    code, out, _ = run_cli(["bench", "--figure", "2", "--program", "dp-mixture", "--seeds", "1",
                            "--simulations", "20", "--permutations", "4"], capsys)
    assert code == 0
    programs = {r["program"] for r in csv.DictReader(io.StringIO(out))}
    assert programs == {"dp-mixture#identity", "dp-mixture#reversed", "dp-mixture#perm2",
                        "dp-mixture#perm3"}


def test_bench_reproducible(tmp_path, capsys):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        main(["bench", "--figure", "1", "--program", "marsaglia", "--seeds", "2",
              "--simulations", "300", "-o", str(p)])
    capsys.readouterr()
    assert paths[0].read_bytes() == paths[1].read_bytes()
