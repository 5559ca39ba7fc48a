import random
from fractions import Fraction
from functools import lru_cache

import pytest

from palps import load_corpus
from palps.analysis import (
    QueryError,
    bounded_until,
    check,
    expected_reward_cumul,
    expected_reward_instant,
    max_reach_prob,
    mean_population,
    min_reach_prob,
    named_reward,
    parse_query,
    simulate,
    simulate_batch,
    summary_csv,
    trace_csv,
)
from palps.model import TICK
from palps.semantics import Engine
from palps.statespace import Mdp, build_mdp, canonicalize

from conftest import mite_source, small_model
from palps import parse_model


def toy(choices, goal):
    """Hand-built MDP over abstract states."""
    mdp = Mdp(list(range(len(choices))), [None] * len(choices), 0, choices)
    return mdp, goal


def test_goal_at_start():
    mdp, goal = toy([[]], [True])
    assert max_reach_prob(mdp, goal).value == 1.0


def test_dirac_chain():
    mdp, goal = toy([[("x", ((1, 1),))], []], [False, True])
    assert max_reach_prob(mdp, goal).value == 1.0


def test_one_step_branch():
    mdp, goal = toy([[("prob", ((Fraction(2, 5), 1), (Fraction(3, 5), 2)))], [], []], [False, True, False])
    assert max_reach_prob(mdp, goal).value == pytest.approx(0.4, abs=1e-12)


def test_min_le_max():
    # the scheduler picks between a sure goal and a sure sink
    mdp, goal = toy([[("a", ((1, 1),)), ("b", ((1, 2),))], [], []], [False, True, False])
    assert min_reach_prob(mdp, goal).value == 0.0
    assert max_reach_prob(mdp, goal).value == 1.0


def test_bounded_counts_ticks_only():
    # two internal steps then one tick reach the goal
    ch = [[("x", ((1, 1),))], [("y", ((1, 2),))], [(TICK, ((1, 3),))], []]
    mdp, goal = toy(ch, [False, False, False, True])
    safe = [True] * 4
    assert bounded_until(mdp, safe, goal, 0).value == 0.0
    assert bounded_until(mdp, safe, goal, 1).value == 1.0


def test_bounded_zero_with_goal_at_start():
    mdp, goal = toy([[]], [True])
    assert bounded_until(mdp, [True], goal, 0).value == 1.0


def test_extinction_closed_form():
    m = load_corpus("extinction")
    mdp = build_mdp(m)
    r = check(mdp, m, "Pmax=? [ true U<=10 pop=0 ]")
    assert r.value == pytest.approx(1 - 0.6**10, abs=1e-9)


def test_bounded_until_monotone_and_converges():
    m = load_corpus("extinction")
    mdp = build_mdp(m)
    vals = [check(mdp, m, f"Pmax=? [ true U<={k} pop=0 ]").value for k in range(0, 60, 5)]
    assert vals == sorted(vals)
    assert check(mdp, m, "Pmax=? [ F pop=0 ]").value == pytest.approx(vals[-1], abs=1e-9)


def test_unreachable_goal():
    m = load_corpus("tick_loop")
    mdp = build_mdp(m)
    assert check(mdp, m, "Pmax=? [ true U<=5 pop=0 ]").value == 0.0


def test_reward_trivia():
    m = load_corpus("tick_loop")
    mdp = build_mdp(m)
    assert check(mdp, m, 'R{"ticks"}max=? [ C<=7 ]').value == 7
    assert check(mdp, m, 'R{"pop"}=? [ C<=4 ]').value == 4
    assert check(mdp, m, 'R{"pop"}=? [ I=0 ]').value == 1
    assert check(mdp, m, 'R{"go"}=? [ C<=3 ]').value == 0


def test_instant_reward_absorbing():
    m = small_model("5 of s.tick.P at l1;", procs="process P = tick.P; init P;")
    mdp = build_mdp(m)
    for k in range(1, 5):
        assert check(mdp, m, f'R{{"pop"}}=? [ I={k} ]').value == 5


def test_bad_queries():
    m = load_corpus("tick_loop")
    for q in ["Pmax=? [ G pop=0 ]", 'R{"pop"}=? [ S ]', "nonsense", 'R{"%%"}=? [ C<=1 ]']:
        with pytest.raises(QueryError):
            check(build_mdp(m), m, q)


# -- brute-force oracle straight from the step relation


def brute_force(model, reward, k, instant):
    e = Engine(model)
    pol = model.policy()
    r = named_reward(reward, model)

    def sr(c):
        return Fraction(r.state(c.env)).limit_denominator(10**6)

    @lru_cache(maxsize=None)
    def go(key, ticks):
        c = configs[key]
        if instant and ticks == 0:
            return sr(c)
        if not instant and ticks == 0:
            return Fraction(0)
        probs = e.prob_steps(c)
        if probs:
            return sum(p.weight * go(remember(p.next), ticks) for p in probs)
        steps = e.prioritized_steps(c, pol)
        if not steps:
            return sr(c) if instant else Fraction(0)
        best = None
        for s in steps:
            t = ticks - 1 if s.label == TICK else ticks
            v = go(remember(s.next), t)
            if not instant:
                v += Fraction(r.action(s.label)).limit_denominator(10**6)
                if s.label == TICK:
                    v += sr(c)
            best = v if best is None else max(best, v)
        return best

    configs = {}

    def remember(c):
        key = canonicalize(e, c)
        configs.setdefault(key, c)
        return key

    return go(remember(e.initial()), k)


CASES = [("example4", "rep", "C"), ("example4", "pop", "I"), ("example1_pair", "rep", "C"),
         ("example1_pair", "pop", "I"), ("example4", "ticks", "C"), ("example4", "reproduce", "C")]


@pytest.mark.parametrize("name,reward,kind", CASES)
@pytest.mark.parametrize("k", [1, 2, 4])
def test_rewards_match_enumeration(name, reward, kind, k):
    m = load_corpus(name)
    mdp = build_mdp(m)
    got = check(mdp, m, f'R{{"{reward}"}}max=? [ {"C<=" if kind == "C" else "I="}{k} ]').value
    assert got == pytest.approx(float(brute_force(m, reward, k, kind == "I")), abs=1e-9)


# -- simulation


def test_tick_loop_trace():
    m = load_corpus("tick_loop")
    t = simulate(m, seed=1, max_ticks=20)
    assert [r.tick for r in t.rows] == list(range(21))
    assert all(r.population() == 1 for r in t.rows)
    assert t.termination == "max_ticks"


def test_same_seed_same_trace():
    m = load_corpus("example4")
    a, b = simulate(m, seed=7, max_ticks=30), simulate(m, seed=7, max_ticks=30)
    assert a.rows == b.rows


def test_ordered_scheduler_is_deterministic_given_seed():
    m = load_corpus("example1")
    a = simulate(m, seed=3, max_ticks=10, scheduler="ordered")
    b = simulate(m, seed=3, max_ticks=10, scheduler="ordered")
    assert a.rows == b.rows


def test_mite_without_pool_deadlocks():
    m = parse_model(mite_source(1, 0))
    t = simulate(m, seed=0, max_ticks=10)
    # if the mite survives and breeds it needs a free module
    assert t.termination in ("deadlock", "max_ticks")
    deadlocked = [simulate(m, seed=s, max_ticks=10).deadlock_tick for s in range(20)]
    assert any(d == 0 for d in deadlocked)


def test_coin_frequency():
    m = small_model("1 of s.(1/2: tick.0 (+) 1/2: tick.tick.0) at l1;")
    runs = simulate_batch(m, runs=10_000, max_ticks=1, seed=0)
    alive = sum(t.final_population() for t in runs)
    assert abs(alive - 5000) <= 3 * (10_000 * 0.25) ** 0.5


def test_csv_outputs():
    m = load_corpus("extinction")
    traces = simulate_batch(m, runs=3, max_ticks=4, seed=5)
    text = trace_csv(traces[0], m)
    assert text.splitlines()[0] == "tick,l1:s"
    assert summary_csv(traces).splitlines()[0] == "run,seed,final_population,deadlock_tick"
    assert [t.seed for t in traces] == [5, 6, 7]
    assert len(mean_population(traces, 4)) == 5


def test_batch_threads_identical():
    m = load_corpus("example4")
    a = simulate_batch(m, runs=6, max_ticks=15, seed=11)
    b = simulate_batch(m, runs=6, max_ticks=15, seed=11, threads=4)
    assert [t.rows for t in a] == [t.rows for t in b]
