"""Single-step rule table for the calculus.  Every row fixes one configuration
and lists the complete expected set of steps."""

from fractions import Fraction

import pytest

from palps.expr import Environment
from palps.model import Label, policy_closure
from palps.semantics import Engine, compatible

from conftest import small_model, summarize

E0 = ()


def one(l="l1", n=1, sp="s"):
    return ((l, sp, n),)


THREE = "locations: l1, l2, l3; neighbors: (l1, l2), (l2, l3);"
STAR = "locations: l1, l2, l3; neighbors: (l1, l2), (l1, l3);"
OTHER = "species t { process Q = a!.0; process R = a?.tick.0; init Q; }"
REP = "bound 1; process T = tick.0; init T;"

# (id, model kwargs, expected probabilistic steps, expected nondeterministic steps)
# steps are summarized as (label or weight, environment, sorted individuals)
CASES = [
    ("tick-to-nil-removes", dict(system="1 of s.tick.0 at l1;"),
     [], [("tick", E0, (("s", "l1", "0"),))]),
    ("tick-keeps-active", dict(system="1 of s.tick.tick.0 at l1;"),
     [], [("tick", one(), (("s", "l1", "tick.0"),))]),
    ("nil-lets-time-pass", dict(system="1 of s.0 at l1;"),
     [], [("tick", E0, (("s", "l1", "0"),))]),
    ("nil-alongside-ticker", dict(system="1 of s.0 at l1; 1 of s.tick.tick.0 at l2;"),
     [], [("tick", one("l2"), (("s", "l1", "0"), ("s", "l2", "tick.0")))]),
    ("output-visible", dict(system="1 of s.a!.tick.0 at l1;"),
     [], [("out(a, l1, s)", one(), (("s", "l1", "tick.0"),))]),
    ("input-visible", dict(system="1 of s.a?.tick.0 at l2;"),
     [], [("in(a, l2, s)", one("l2"), (("s", "l2", "tick.0"),))]),
    ("output-to-nil-removes", dict(system="1 of s.a!.0 at l1;"),
     [], [("out(a, l1, s)", E0, (("s", "l1", "0"),))]),
    ("go-to-neighbour", dict(system="1 of s.go l2.tick.0 at l1;"),
     [], [("tau(go, l1, s)", one("l2"), (("s", "l2", "tick.0"),))]),
    ("go-to-non-neighbour-blocked", dict(system="1 of s.go l3.tick.0 at l1;", habitat=THREE),
     [], []),
    ("go-to-nil-removes", dict(system="1 of s.go l2.0 at l1;"),
     [], [("tau(go, l1, s)", E0, (("s", "l2", "0"),))]),
    ("choice-offers-both", dict(system="1 of s.(a!.tick.0 + go l2.tick.0) at l1;"),
     [], [("out(a, l1, s)", one(), (("s", "l1", "tick.0"),)),
          ("tau(go, l1, s)", one("l2"), (("s", "l2", "tick.0"),))]),
    ("choice-with-tick-branch", dict(system="1 of s.(tick.0 + a?.tick.0) at l1;"),
     [], [("in(a, l1, s)", one(), (("s", "l1", "tick.0"),)),
          ("tick", E0, (("s", "l1", "0"),))]),
    ("probabilistic-removal", dict(system="1 of s.(1/4: 0 (+) 3/4: tick.0) at l1;"),
     [("1/4", E0, (("s", "l1", "0"),)), ("3/4", one(), (("s", "l1", "tick.0"),))], []),
    ("probabilistic-merge", dict(system="2 of s.(1/2: 0 (+) 1/2: tick.0) at l1;"),
     [("1/4", E0, (("s", "l1", "0"), ("s", "l1", "0"))),
      ("1/4", one(), (("s", "l1", "0"), ("s", "l1", "tick.0"))),
      ("1/4", one(), (("s", "l1", "0"), ("s", "l1", "tick.0"))),
      ("1/4", one(n=2), (("s", "l1", "tick.0"), ("s", "l1", "tick.0")))], []),
    ("probabilistic-precedence", dict(system="1 of s.(1/2: 0 (+) 1/2: tick.0) at l1; 1 of s.go l2.tick.0 at l1;"),
     [("1/2", one(), (("s", "l1", "0"), ("s", "l1", "go l2.tick.0"))),
      ("1/2", one(n=2), (("s", "l1", "go l2.tick.0"), ("s", "l1", "tick.0")))], []),
    ("uniform-dispersal", dict(system="1 of s.disperse uniform nb(myloc) then tick.0 at l1;", habitat=STAR),
     [("1/2", one(), (("s", "l1", "go l2.tick.0"),)), ("1/2", one(), (("s", "l1", "go l3.tick.0"),))], []),
    ("cond-first-guard", dict(system="1 of s.cond(s@myloc = 1 -> a!.tick.0; true -> tick.0) at l1;"),
     [], [("out(a, l1, s)", one(), (("s", "l1", "tick.0"),))]),
    ("cond-fallback-guard", dict(system="2 of s.cond(s@myloc = 1 -> a!.tick.0; true -> tick.tick.0) at l1;"),
     [], [("tick", one(n=2), (("s", "l1", "tick.0"), ("s", "l1", "tick.0")))]),
    ("cond-selecting-nil", dict(system="1 of s.cond(s@myloc = 1 -> 0; true -> tick.0) at l1;"),
     [], [("tick", E0, (("s", "l1", "0"),))]),
    ("constant-unfolds", dict(system="1 of s.P at l1;", procs="process P = tick.P; init P;"),
     [], [("tick", one(), (("s", "l1", "tick.P"),))]),
    ("interleaving", dict(system="1 of s.a!.tick.0 at l1; 1 of s.go l2.tick.0 at l1;"),
     [], [("out(a, l1, s)", one(n=2), (("s", "l1", "go l2.tick.0"), ("s", "l1", "tick.0"))),
          ("tau(go, l1, s)", (("l1", "s", 1), ("l2", "s", 1)), (("s", "l1", "a!.tick.0"), ("s", "l2", "tick.0")))]),
    ("sync-unrestricted", dict(system="1 of s.a!.tick.0 at l1; 1 of s.a?.tick.0 at l1;"),
     [], [("in(a, l1, s)", one(n=2), (("s", "l1", "a!.tick.0"), ("s", "l1", "tick.0"))),
          ("out(a, l1, s)", one(n=2), (("s", "l1", "a?.tick.0"), ("s", "l1", "tick.0"))),
          ("tau(a, l1, s)", one(n=2), (("s", "l1", "tick.0"), ("s", "l1", "tick.0")))]),
    ("restriction-keeps-tau-only", dict(system="1 of s.a!.tick.0 at l1; 1 of s.a?.tick.0 at l1; restrict { a };"),
     [], [("tau(a, l1, s)", one(n=2), (("s", "l1", "tick.0"), ("s", "l1", "tick.0")))]),
    ("restriction-hides-lone-input", dict(system="1 of s.a?.tick.0 at l1; restrict { a };"),
     [], []),
    ("no-sync-across-locations", dict(system="1 of s.a!.0 at l1; 1 of s.a?.0 at l2; restrict { a };"),
     [], []),
    ("tau-names-outputter-species", dict(system="1 of t.Q at l1; 1 of s.a?.tick.0 at l1; restrict { a };", extra=OTHER),
     [], [("tau(a, l1, t)", one(), (("s", "l1", "tick.0"), ("t", "l1", "0")))]),
    ("tick-synchronises-all", dict(system="1 of s.tick.0 at l1; 1 of s.tick.tick.0 at l1;"),
     [], [("tick", one(), (("s", "l1", "0"), ("s", "l1", "tick.0")))]),
    ("tick-blocked-by-busy-individual", dict(system="1 of s.tick.0 at l1; 1 of s.go l2.0 at l1;"),
     [], [("tau(go, l1, s)", one(), (("s", "l1", "tick.0"), ("s", "l2", "0")))]),
    ("replication-creates-individual", dict(system="1 of s.rep!.tick.0 at l1; !s; restrict { rep };", procs=REP),
     [], [("tau(rep, l1, s)", one(n=2), (("s", "l1", "tick.0"), ("s", "l1", "tick.0")))]),
    ("replication-bound-exhausted", dict(system="1 of s.rep!.tick.0 at l1; !s; restrict { rep };",
                                         procs="bound 0; process T = tick.0; init T;"),
     [], []),
]


@pytest.mark.parametrize("name,kwargs,prob,nondet", CASES, ids=[c[0] for c in CASES])
def test_rule_table(name, kwargs, prob, nondet):
    m = small_model(**kwargs)
    e = Engine(m)
    c = e.initial()
    assert compatible(c.env, c.individuals, e)
    got_p = summarize(e, e.prob_steps(c))
    got_n = summarize(e, e.nondet_steps(c))
    assert got_p == sorted(prob)
    assert got_n == sorted(nondet)
    assert sum((Fraction(w) for w, _, _ in got_p), Fraction(0)) in (0, 1)


def test_table_is_large_enough():
    assert len(CASES) >= 25


def test_replicator_counts_down():
    m = small_model("1 of s.rep!.rep!.tick.0 at l1; !s; restrict { rep };",
                    procs="bound 2; process T = tick.0; init T;")
    e = Engine(m)
    c = e.initial()
    assert c.replicators[0].remaining == 2
    (step,) = e.nondet_steps(c)
    assert step.next.replicators[0].remaining == 1
    (step2,) = e.nondet_steps(step.next)
    assert step2.next.replicators[0].remaining == 0
    assert step2.next.env.count("l1", "s") == 3
    assert [s.label for s in e.nondet_steps(step2.next)] == [Label("tick")]


def test_policy_prunes_lower_label():
    kw = dict(system="1 of s.(a!.tick.0 + go l2.tick.0) at l1;")
    pol = "out(a, l1, s) < tau(go, l1, s);"
    m = small_model(**kw, policy=pol)
    e = Engine(m)
    c = e.initial()
    steps = e.prioritized_steps(c, m.policy())
    assert [str(s.label) for s in steps] == ["tau(go, l1, s)"]
    assert len(e.nondet_steps(c)) == 2


def test_policy_needs_enabled_dominator():
    # the dominating go is not a neighbour move here, so nothing is pruned
    m = small_model("1 of s.(a!.tick.0 + go l3.tick.0) at l1;", habitat=THREE,
                    policy="out(a, l1, s) < tau(go, l1, s);")
    e = Engine(m)
    c = e.initial()
    assert [str(s.label) for s in e.prioritized_steps(c, m.policy())] == ["out(a, l1, s)"]


def test_policy_compares_across_individuals():
    m = small_model("1 of s.a!.tick.0 at l1; 1 of s.go l1.tick.0 at l2;",
                    policy="out(a, l1, s) < tau(go, l2, s);")
    e = Engine(m)
    got = [str(s.label) for s in e.prioritized_steps(e.initial(), m.policy())]
    assert got == ["tau(go, l2, s)"]


def test_empty_policy_is_identity():
    m = small_model("1 of s.a!.tick.0 at l1; 1 of s.a?.tick.0 at l1;")
    e = Engine(m)
    c = e.initial()
    assert summarize(e, e.prioritized_steps(c, policy_closure([]))) == summarize(e, e.nondet_steps(c))


def test_initial_environment_ignores_nil():
    m = small_model("1 of s.0 at l1; 2 of s.tick.0 at l2;")
    assert Engine(m).initial().env == Environment({("l2", "s"): 2})
