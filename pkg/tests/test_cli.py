"""Command-line client: exit codes and files written."""

import json

import pytest
from click.testing import CliRunner

from palps import corpus_text
from palps.cli import main


@pytest.fixture
def model_file(tmp_path):
    def write(name, text=None):
        p = tmp_path / f"{name}.palps"
        p.write_text(text if text is not None else corpus_text(name))
        return str(p)
    return write


def run(*args):
    return CliRunner().invoke(main, list(args), catch_exceptions=False)


def test_parse_ok_and_canonical(model_file):
    f = model_file("example4")
    assert run("parse", f).exit_code == 0
    r = run("parse", "--canonical", f)
    assert r.exit_code == 0 and r.output.startswith("habitat")


def test_parse_invalid_is_exit_1(model_file):
    f = model_file("bad", "habitat { locations: l1; }\nsystem { 1 of s.P at l1; }\n")
    assert run("parse", f).exit_code == 1


def test_missing_file_is_exit_2(tmp_path):
    r = run("parse", str(tmp_path / "nope.palps"))
    assert r.exit_code == 2


def test_unknown_option_is_exit_2(model_file):
    assert run("explore", "--policy", "maybe", model_file("tick_loop")).exit_code == 2


def test_explore_and_dump(model_file, tmp_path):
    out = tmp_path / "m.json"
    r = run("explore", model_file("example1_pair"), "--dump-mdp", str(out))
    assert r.exit_code == 0 and "states=59" in r.output
    assert len(json.loads(out.read_text())["states"]) == 59


def test_explore_truncated_is_exit_3(model_file):
    assert run("explore", model_file("example4"), "--max-states", "5").exit_code == 3


def test_check_prints_values(model_file):
    r = run("check", model_file("extinction"), "--query", "Pmax=? [ F pop=0 ]", "--query", "Pmin=? [ F pop=0 ]")
    assert r.exit_code == 0 and r.output.count("Pm") == 2


def test_check_bad_query_is_exit_1(model_file):
    assert run("check", model_file("tick_loop"), "--query", "Pmax=?").exit_code == 1


def test_simulate_files_are_reproducible(model_file, tmp_path):
    f = model_file("example4")
    outs = []
    for d in ("a", "b"):
        r = run("simulate", f, "--runs", "3", "--ticks", "6", "--seed", "11", "--out-dir", str(tmp_path / d))
        assert r.exit_code == 0
        outs.append({p.name: p.read_bytes() for p in sorted((tmp_path / d).iterdir())})
    assert outs[0] == outs[1]
    assert set(outs[0]) == {"run_000.csv", "run_001.csv", "run_002.csv", "summary.csv", "mean.csv"}


def test_simulate_threads_do_not_change_output(model_file, tmp_path):
    f = model_file("example4")
    for d, t in (("one", "1"), ("four", "4")):
        run("simulate", f, "--runs", "4", "--ticks", "5", "--no-traces", "--threads", t, "--out-dir", str(tmp_path / d))
    assert (tmp_path / "one" / "mean.csv").read_bytes() == (tmp_path / "four" / "mean.csv").read_bytes()


def test_translate_writes_files(model_file, tmp_path):
    nm, props = tmp_path / "m.nm", tmp_path / "m.props"
    r = run("translate", model_file("example4"), "--out", str(nm), "--props", str(props), "--query", "Pmax=? [ F pop=0 ]")
    assert r.exit_code == 0
    assert nm.read_text() == corpus_text("example4", ".nm")
    assert props.read_text().strip()


def test_translate_invalid_model_writes_nothing(model_file, tmp_path):
    nm = tmp_path / "m.nm"
    f = model_file("bad", "habitat { locations: l1; }\nsystem { 1 of s.P at l1; }\n")
    assert run("translate", f, "--out", str(nm)).exit_code == 1
    assert not nm.exists()


def test_props_without_query_is_usage_error(model_file, tmp_path):
    assert run("translate", model_file("example4"), "--props", str(tmp_path / "p")).exit_code == 2


def test_verify_and_fault(model_file, tmp_path):
    f = model_file("example4")
    rep = tmp_path / "r.json"
    r = run("verify", f, "--report", str(rep))
    assert r.exit_code == 0 and r.output.startswith("ok")
    assert json.loads(rep.read_text())["ok"]
    assert run("verify", f, "--inject-fault").exit_code == 1
    assert run("verify", f, "--max-states", "10").exit_code == 3


def test_console_script_installed(model_file):
    import shutil
    import subprocess

    exe = shutil.which("palps")
    if exe is None:
        pytest.skip("console script not on PATH")
    p = subprocess.run([exe, "parse", model_file("tick_loop")], capture_output=True, text=True)
    assert p.returncode == 0 and "ok" in p.stdout
