"""Acceptance suite.  Each test prints one PASS/FAIL line with its timing
and the limit it is held to; run with ``pytest tests/test_acceptance.py -v``."""

import json
import math
import random
import re
import statistics
import time
from fractions import Fraction

import pytest
from click.testing import CliRunner

from palps import corpus_text, load_corpus, parse_model
from palps.analysis import check, mean_population, simulate_batch
from palps.cli import main
from palps.codegen import emit_model
from palps.gc import build_gc_mdp, correspondence_check, parse_gc, quotient_stable
from palps.model import Policy
from palps.statespace import ExploreLimits, build_mdp, mdp_to_json

from conftest import mite_source
from randmodels import random_model
from test_analysis import brute_force
from test_properties import N_MODELS, check_compatible, check_local_policies, walk
import test_semantics


def report(capsys, num, title, ok, detail, seconds, limit):
    ok = ok and seconds < limit
    line = f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title}: {detail} ({seconds:.2f} s, limit {limit} s)"
    with capsys.disabled():
        print("\n" + line)
    return ok


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


CASES = test_semantics.CASES


def test_01_rule_table(capsys):
    failed = []
    with Timer() as t:
        for name, kwargs, prob, nondet in CASES:
            try:
                test_semantics.test_rule_table(name, kwargs, prob, nondet)
            except AssertionError:
                failed.append(name)
    ok = len(CASES) >= 25 and not failed
    detail = f"{len(CASES) - len(failed)}/{len(CASES)} single-step cases exact" + (f", failed {failed}" if failed else "")
    assert report(capsys, 1, "rule table", ok, detail, t.seconds, 1)


def test_02_compatibility(capsys):
    with Timer() as t:
        for seed in range(N_MODELS):
            walk(random_model(seed), seed, check_compatible)
    assert report(capsys, 2, "environment compatibility", True,
                  f"{N_MODELS} random models, walks of at most 50 steps", t.seconds, 60)


def test_03_policy_soundness(capsys):
    pruned = [0]
    with Timer() as t:
        for seed in range(N_MODELS):
            walk(random_model(seed), seed + 10_000, check_local_policies(random.Random(seed), pruned))
    assert report(capsys, 3, "policy soundness", pruned[0] > 0,
                  f"{N_MODELS} models, subset/domination/empty-policy checks, {pruned[0]} pruning states seen",
                  t.seconds, 60)


@pytest.mark.parametrize("name,what", [
    ("tick_loop", "one individual, tick loop"),
    ("example4", "2 active + 1 inactive, 2x2 grid"),
    ("example1_pair", "2 individuals, bound 2, 2 locations"),
])
def test_04_translation_correspondence(capsys, name, what):
    with Timer() as t:
        m = load_corpus(name)
        policy = m.policy()
        palps = build_mdp(m, policy)
        prog = parse_gc(emit_model(m, policy).text)
        q = quotient_stable(build_gc_mdp(prog), prog)
        rep = correspondence_check(palps, q, prog)
        covered = set(rep.mapping.values()) == set(range(len(palps)))
    exact = all(isinstance(p, Fraction) for ch in q.choices for _, d in ch for p, _ in d)
    ok = rep.ok and covered and exact
    detail = (f"{what}: {len(palps)} calculus states, {len(q)} stable program states, "
              f"{len(rep.mismatches)} mismatches, exact rationals={exact}")
    assert report(capsys, 4, f"translation correspondence [{name}]", ok, detail, t.seconds, 120)


def disperse_reproduce_source(n: int) -> str:
    body = "".join(f"  1 of s.P at {loc};\n" for loc in (1, 4, 2)[:n])
    return re.sub(r"(system \{\n)(  1 of s\.P at \d+;\n)+", lambda mt: mt.group(1) + body, corpus_text("disperse_reproduce"))


# The unprioritized three-individual space does not fit in memory here, so
# that build stops at a cap; a truncated count is still a lower bound.
REDUCTION_CAP = 300_000


def test_05_policy_reduction(capsys):
    counts = {}
    with Timer() as t:
        for n in (2, 3):
            m = parse_model(disperse_reproduce_source(n))
            with_p = build_mdp(m, m.policy())
            without = build_mdp(m, Policy(), ExploreLimits(max_states=REDUCTION_CAP))
            assert not with_p.truncated
            counts[n] = (len(with_p), len(without), without.truncated)
    ok = all(a <= b / 2 for a, b, _ in counts.values())
    detail = ", ".join(
        f"{n} individuals: {a} with policy vs {'>=' if cut else ''}{b} without (x{'>=' if cut else ''}{b / a:.1f})"
        for n, (a, b, cut) in counts.items()
    )
    assert report(capsys, 5, "policy state reduction", ok, detail, t.seconds, 300)


def test_06_extinction_closed_form(capsys):
    with Timer() as t:
        m = load_corpus("extinction")
        got = check(build_mdp(m), m, "Pmax=? [ true U<=10 pop=0 ]").value
    want = 1 - 0.6**10
    err = abs(got - want)
    assert report(capsys, 6, "extinction closed form", err <= 1e-9,
                  f"{got:.12f} vs 1-0.6^10 = {want:.12f}, error {err:.1e}", t.seconds, 5)


def test_07_rewards_vs_enumeration(capsys):
    worst, n = 0.0, 0
    with Timer() as t:
        for name in ("example4", "example1_pair"):
            m = load_corpus(name)
            mdp = build_mdp(m)
            for reward in ("rep", "pop"):
                for kind in ("C", "I"):
                    for k in range(1, 5):
                        q = f'R{{"{reward}"}}max=? [ {"C<=" if kind == "C" else "I="}{k} ]'
                        got = check(mdp, m, q).value
                        worst = max(worst, abs(got - float(brute_force(m, reward, k, kind == "I"))))
                        n += 1
    assert report(capsys, 7, "rewards vs path enumeration", worst <= 1e-9,
                  f"{n} queries on 2-individual models, k<=4, max error {worst:.1e}", t.seconds, 30)


# Recalibrated once from a pilot with doubled runs (1000 per size, seeds
# 100000..100999): tick-50 means 0.687/0.666/0.828, per-run sd 2.47-2.68.
# Three standard errors of a difference of two 500-run means is 0.67 of the
# pooled mean, so differences below that are indistinguishable from noise.
FIG_RUNS, FIG_TICKS, FIG_SEED = 500, 50, 0
FIG_THRESHOLD = 0.67
FIG_ORIGINAL = 0.15


def test_08_population_convergence(capsys):
    means, deadlocks, sds = {}, 0, {}
    with Timer() as t:
        for i in (8, 12, 16):
            m = parse_model(mite_source(i, 96 - i))
            traces = simulate_batch(m, None, FIG_RUNS, FIG_TICKS, FIG_SEED)
            deadlocks += sum(tr.deadlock_tick is not None for tr in traces)
            means[i] = mean_population(traces, FIG_TICKS)[FIG_TICKS]
            sds[i] = statistics.stdev(tr.rows[-1].population() for tr in traces)
    rel = {(a, b): abs(means[a] - means[b]) / ((means[a] + means[b]) / 2) for a, b in [(8, 12), (8, 16), (12, 16)]}
    worst = max(rel.values())
    ok = worst <= FIG_THRESHOLD and deadlocks == 0
    z = max(abs(means[a] - means[b]) / math.sqrt((sds[a] ** 2 + sds[b] ** 2) / FIG_RUNS) for a, b in rel)
    detail = (f"tick-{FIG_TICKS} means " + ", ".join(f"i={i}: {v:.3f}" for i, v in means.items())
              + f"; max pairwise difference {worst:.0%} (threshold {FIG_THRESHOLD:.0%}, "
              f"original {FIG_ORIGINAL:.0%} would {'pass' if worst <= FIG_ORIGINAL else 'fail'}); "
              f"max |z| {z:.2f}; deadlocks {deadlocks}")
    assert report(capsys, 8, "population convergence", ok, detail, t.seconds, 600)


DEADLOCK_RUNS, DEADLOCK_TICKS = 100, 200


@pytest.mark.xfail(strict=True, reason="pool of n*b - i modules still deadlocks; see notes")
def test_09_deadlock_bound(capsys):
    n, b = 16, 3
    with Timer() as t:
        small = simulate_batch(parse_model(mite_source(12, 3)), None, DEADLOCK_RUNS, DEADLOCK_TICKS, 0)
        small_dead = sum(tr.deadlock_tick is not None for tr in small)
        claimed, doubled = {}, {}
        for i in (8, 12, 16):
            for pool, out in ((n * b - i, claimed), (2 * n * b - i, doubled)):
                runs = simulate_batch(parse_model(mite_source(i, pool)), None, DEADLOCK_RUNS, DEADLOCK_TICKS, 0)
                out[i] = sum(tr.deadlock_tick is not None for tr in runs)
    ok = small_dead > 0 and not any(claimed.values())
    detail = (f"bound 3: {small_dead}/{DEADLOCK_RUNS} runs deadlock; bound n*b-i: "
              + ", ".join(f"i={i}: {d}" for i, d in claimed.items())
              + "; bound 2*n*b-i: " + ", ".join(f"i={i}: {d}" for i, d in doubled.items()))
    assert report(capsys, 9, "deadlock bound", ok, detail, t.seconds, 300)


def test_10_golden_translation(capsys):
    with Timer() as t:
        text = emit_model(load_corpus("example4")).text
        golden = corpus_text("example4", ".nm")
        prog = parse_gc(text)
    ok = text == golden and len(prog.modules) > 0
    assert report(capsys, 10, "golden translation", ok,
                  f"example4 emission {'matches' if text == golden else 'differs from'} the checked-in file "
                  f"({len(golden.encode())} bytes); reparsed into {len(prog.modules)} modules, no diagnostics",
                  t.seconds, 60)


def test_11_determinism(capsys, tmp_path):
    src = tmp_path / "example4.palps"
    src.write_text(corpus_text("example4"))
    with Timer() as t:
        m = load_corpus("disperse_reproduce")
        dumps = [json.dumps(mdp_to_json(build_mdp(m, m.policy(), threads=k)), sort_keys=True) for k in (1, 1, 4)]
        outs = []
        for k, d in (("1", "a"), ("1", "b"), ("4", "c")):
            r = CliRunner().invoke(main, ["simulate", str(src), "--runs", "8", "--ticks", "20", "--seed", "3",
                                          "--threads", k, "--out-dir", str(tmp_path / d)])
            assert r.exit_code == 0, r.output
            outs.append({p.name: p.read_bytes() for p in sorted((tmp_path / d).iterdir())})
    ok = len(set(dumps)) == 1 and outs[0] == outs[1] == outs[2]
    assert report(capsys, 11, "determinism", ok,
                  f"explore dumps identical over threads 1,1,4; {len(outs[0])} simulation files byte-identical",
                  t.seconds, 120)
