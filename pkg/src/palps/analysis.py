"""Reachability, tick-bounded until and reward queries on an MDP, plus a
seeded trace simulator working directly on the semantics."""

from __future__ import annotations

import csv
import io
import random
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .expr import eval_arith, eval_bool
from .model import ALL, TICK, AttributeTable, CountAt, Label, Model, Policy, TotalAt
from .parser import DslSyntaxError, parse_arith, parse_predicate
from .semantics import Engine
from .statespace import Mdp

EPS = 1e-10
MAX_ITERS = 1_000_000


class QueryError(ValueError):
    pass


@dataclass(frozen=True)
class Result:
    value: float
    iterations: int = 0
    converged: bool = True
    bound: bool = False  # the MDP was truncated, so the value is only a bound

    def __float__(self):
        return self.value


def _is_tick(label) -> bool:
    return label == TICK or label == "tick"


def state_mask(mdp: Mdp, pred, attrs: AttributeTable = AttributeTable()) -> list[bool]:
    return [eval_bool(mdp.env(i), attrs, pred) for i in range(len(mdp))]


def _opt(mode):
    if mode not in ("min", "max"):
        raise QueryError(f"mode must be min or max, not {mode!r}")
    return max if mode == "max" else min


# --------------------------------------------------------------------------
# unbounded reachability


def until_prob(mdp: Mdp, safe: list[bool], goal: list[bool], mode: str = "max") -> Result:
    """Optimal probability of ``safe U goal`` by value iteration from below."""
    opt = _opt(mode)
    n = len(mdp)
    x = [1.0 if goal[i] else 0.0 for i in range(n)]
    active = [i for i in range(n) if not goal[i] and safe[i] and mdp.choices[i]]
    fchoices = {i: [[(float(p), j) for p, j in d] for _, d in mdp.choices[i]] for i in active}
    it = 0
    converged = False
    while it < MAX_ITERS:
        it += 1
        delta = 0.0
        for i in active:
            v = opt(sum(p * x[j] for p, j in d) for d in fchoices[i])
            if abs(v - x[i]) > delta:
                delta = abs(v - x[i])
            x[i] = v  # in-place (Gauss-Seidel) sweeps
        if delta < EPS:
            converged = True
            break
    return Result(x[mdp.initial], it, converged, mdp.truncated)


def reach_prob(mdp: Mdp, goal: list[bool], mode: str = "max") -> Result:
    return until_prob(mdp, [True] * len(mdp), goal, mode)


def max_reach_prob(mdp, goal):
    return reach_prob(mdp, goal, "max")


def min_reach_prob(mdp, goal):
    return reach_prob(mdp, goal, "min")


# --------------------------------------------------------------------------
# tick-indexed dynamic programs


class _Levels:
    """Splits choices into tick and non-tick parts and orders the non-tick
    graph so one backward sweep per level suffices when it is acyclic."""

    def __init__(self, mdp: Mdp):
        self.mdp = mdp
        n = len(mdp)
        self.choices = [
            [(_is_tick(label), label, [(float(p), j) for p, j in d]) for label, d in mdp.choices[i]] for i in range(n)
        ]
        self.order, self.acyclic = self._topo()

    def _topo(self):
        n = len(self.mdp)
        succ = [set() for _ in range(n)]
        for i in range(n):
            for tick, _, d in self.choices[i]:
                if not tick:
                    for _, j in d:
                        succ[i].add(j)
        # iterative DFS post-order; a back edge means a cycle
        color = [0] * n
        order = []
        acyclic = True
        for root in range(n):
            if color[root]:
                continue
            stack = [(root, iter(sorted(succ[root])))]
            color[root] = 1
            while stack:
                v, it = stack[-1]
                for w in it:
                    if color[w] == 0:
                        color[w] = 1
                        stack.append((w, iter(sorted(succ[w]))))
                        break
                    if color[w] == 1:
                        acyclic = False
                else:
                    color[v] = 2
                    order.append(v)
                    stack.pop()
        return order, acyclic  # successors come before predecessors

    def run(self, k: int, init, fixed, step_value, opt, dead_value):
        """Generic level recursion.

        ``init(i)`` gives level-0 values of non-fixed states; ``fixed(i, t)``
        returns a value or None; ``step_value(i, tick, label, d, prev, cur)``
        evaluates one choice."""
        n = len(self.mdp)
        prev = None
        iters = 0
        converged = True
        for t in range(k + 1):
            cur = [0.0] * n
            for i in range(n):
                f = fixed(i, t)
                if f is not None:
                    cur[i] = f
            free = [i for i in self.order if fixed(i, t) is None]

            def update(i):
                ch = self.choices[i]
                if not ch:
                    return dead_value(i, t)
                return opt(step_value(i, tick, label, d, prev, cur, t) for tick, label, d in ch)

            if self.acyclic:
                for i in free:
                    cur[i] = update(i)
                iters += 1
            else:
                done = False
                while iters < MAX_ITERS:
                    iters += 1
                    delta = 0.0
                    for i in free:
                        v = update(i)
                        delta = max(delta, abs(v - cur[i]))
                        cur[i] = v
                    if delta < EPS:
                        done = True
                        break
                converged = converged and done
            prev = cur
        return prev, iters, converged


def bounded_until(mdp: Mdp, safe: list[bool], goal: list[bool], k: int, mode: str = "max", levels=None) -> Result:
    """Optimal probability that ``goal`` is reached within ``k`` ticks while
    ``safe`` holds before. Only tick transitions consume time."""
    if k < 0:
        raise QueryError("bound must be non-negative")
    opt = _opt(mode)
    lv = levels or _Levels(mdp)

    def fixed(i, t):
        if goal[i]:
            return 1.0
        if not safe[i]:
            return 0.0
        return None

    def step(i, tick, label, d, prev, cur, t):
        if tick:
            if t == 0:
                return 0.0
            return sum(p * prev[j] for p, j in d)
        return sum(p * cur[j] for p, j in d)

    vals, iters, conv = lv.run(k, None, fixed, step, opt, lambda i, t: 0.0)
    return Result(vals[mdp.initial], iters, conv, mdp.truncated)


@dataclass(frozen=True)
class RewardStructure:
    """Action rewards match labels by pattern; ``*`` fields match anything.
    State rewards are arithmetic expressions over the environment."""

    action_rewards: tuple = ()  # ((Label pattern, value), ...)
    state_rewards: tuple = ()  # ((ArithExpr, value multiplier), ...)

    def action(self, label) -> float:
        total = 0.0
        for pat, v in self.action_rewards:
            if _label_match(pat, label):
                total += float(v)
        return total

    def state(self, env, attrs=AttributeTable()) -> float:
        return float(sum(float(eval_arith(env, attrs, w)) * float(v) for w, v in self.state_rewards))


def _label_match(pat: Label, label) -> bool:
    if not isinstance(label, Label):
        return False
    for a, b in ((pat.kind, label.kind), (pat.channel, label.channel), (pat.loc, label.loc), (pat.species, label.species)):
        if a != "*" and a != b:
            return False
    return True


def named_reward(name: str, model: Optional[Model] = None, attrs=AttributeTable()) -> RewardStructure:
    """Built-in reward structures: ``pop``, ``pop_<species>``, ``ticks``,
    ``<channel>`` (one per transition on that channel), or any arithmetic
    expression over counts as a state reward."""
    species = model.species_names() if model else ()
    if name == "pop":
        return RewardStructure(state_rewards=((TotalAt(ALL), 1),))
    if name.startswith("pop_") and name[4:] in species:
        return RewardStructure(state_rewards=((CountAt(name[4:], ALL), 1),))
    if name == "ticks":
        return RewardStructure(action_rewards=((Label("tick", "*", "*", "*"), 1),))
    channels = set(model.all_channels()) | {"go"} if model else {"go"}
    if name in channels:
        return RewardStructure(
            action_rewards=tuple((Label(kind, name, "*", "*"), 1) for kind in ("in", "out", "tau"))
        )
    try:
        w = parse_arith(name, species, attrs.names() if attrs else ())
    except DslSyntaxError as exc:
        raise QueryError(f"unknown reward structure {name!r}") from exc
    return RewardStructure(state_rewards=((w, 1),))


def _state_rewards(mdp, r: RewardStructure, attrs):
    return [r.state(mdp.env(i), attrs) for i in range(len(mdp))]


def expected_reward_cumul(mdp: Mdp, r: RewardStructure, k: int, mode: str = "max", attrs=AttributeTable(), levels=None) -> Result:
    """Expected reward accumulated during the first ``k`` ticks: every
    transition earns its action reward and each tick additionally earns the
    state reward of the state it leaves."""
    if k < 0:
        raise QueryError("bound must be non-negative")
    opt = _opt(mode)
    lv = levels or _Levels(mdp)
    sr = _state_rewards(mdp, r, attrs)
    arew = {}

    def act(label):
        if label not in arew:
            arew[label] = r.action(label)
        return arew[label]

    def fixed(i, t):
        return 0.0 if t == 0 else None

    def step(i, tick, label, d, prev, cur, t):
        if tick:
            return act(label) + sr[i] + sum(p * prev[j] for p, j in d)
        return act(label) + sum(p * cur[j] for p, j in d)

    vals, iters, conv = lv.run(k, None, fixed, step, opt, lambda i, t: 0.0)
    return Result(vals[mdp.initial], iters, conv, mdp.truncated)


def expected_reward_instant(mdp: Mdp, r: RewardStructure, k: int, mode: str = "max", attrs=AttributeTable(), levels=None) -> Result:
    """Expected state reward right after the ``k``-th tick. A deadlocked run
    keeps the reward of the state it is stuck in."""
    if k < 0:
        raise QueryError("bound must be non-negative")
    opt = _opt(mode)
    lv = levels or _Levels(mdp)
    sr = _state_rewards(mdp, r, attrs)

    def fixed(i, t):
        return sr[i] if t == 0 else None

    def step(i, tick, label, d, prev, cur, t):
        return sum(p * (prev if tick else cur)[j] for p, j in d)

    vals, iters, conv = lv.run(k, None, fixed, step, opt, lambda i, t: sr[i])
    return Result(vals[mdp.initial], iters, conv, mdp.truncated)


# --------------------------------------------------------------------------
# query mini-language

_P_RE = re.compile(r"^\s*P(min|max)\s*=\s*\?\s*\[(.*)\]\s*$", re.S)
_R_RE = re.compile(r'^\s*R(min|max)?\s*\{\s*"?([^}"]+)"?\s*\}\s*(min|max)?\s*=\s*\?\s*\[(.*)\]\s*$', re.S)
_U_RE = re.compile(r"\bU\b\s*(?:<=\s*(\d+))?")


@dataclass(frozen=True)
class Query:
    kind: str  # "reach" | "until" | "bounded" | "cumul" | "instant"
    mode: str
    safe: object = None
    goal: object = None
    bound: int = 0
    reward: str = ""

    def to_prism(self, fmt) -> str:
        """Render in PRISM property syntax; ``fmt`` turns a predicate into
        an expression over the model's variables."""
        if self.kind == "reach":
            return f"P{self.mode}=? [ F {fmt(self.goal)} ]"
        if self.kind in ("until", "bounded"):
            safe = "true" if self.safe is None else fmt(self.safe)
            op = "U" if self.kind == "until" else f"U<={self.bound}"
            return f"P{self.mode}=? [ {safe} {op} {fmt(self.goal)} ]"
        body = f"C<={self.bound}" if self.kind == "cumul" else f"I={self.bound}"
        return f'R{{"{self.reward}"}}{self.mode}=? [ {body} ]'


def parse_query(text: str, model: Model) -> Query:
    species = model.species_names()
    attrs = model.attributes.names()

    def pred(s):
        try:
            return parse_predicate(s.strip(), species, attrs)
        except DslSyntaxError as exc:
            raise QueryError(f"bad predicate {s.strip()!r}: {exc}") from exc

    m = _P_RE.match(text)
    if m:
        mode, body = m.group(1), m.group(2).strip()
        if body.startswith("F ") or body.startswith("F("):
            return Query("reach", mode, None, pred(body[1:]))
        u = _U_RE.search(body)
        if not u:
            raise QueryError("expected F or U inside P query")
        safe, goal = pred(body[: u.start()]), pred(body[u.end():])
        if u.group(1) is None:
            return Query("until", mode, safe, goal)
        return Query("bounded", mode, safe, goal, int(u.group(1)))
    m = _R_RE.match(text)
    if m:
        mode = m.group(1) or m.group(3) or "max"
        name, body = m.group(2).strip(), m.group(4).strip()
        c = re.fullmatch(r"C\s*<=\s*(\d+)", body)
        if c:
            return Query("cumul", mode, bound=int(c.group(1)), reward=name)
        i = re.fullmatch(r"I\s*=\s*(\d+)", body)
        if i:
            return Query("instant", mode, bound=int(i.group(1)), reward=name)
        raise QueryError("reward queries support [ C<=k ] and [ I=k ]")
    raise QueryError(f"cannot parse query {text!r}")


def check(mdp: Mdp, model: Model, text: str) -> Result:
    q = parse_query(text, model)
    attrs = model.attributes
    if q.kind in ("reach", "until", "bounded"):
        goal = state_mask(mdp, q.goal, attrs)
        safe = state_mask(mdp, q.safe, attrs) if q.safe is not None else [True] * len(mdp)
        if q.kind == "bounded":
            return bounded_until(mdp, safe, goal, q.bound, q.mode)
        return until_prob(mdp, safe, goal, q.mode)
    r = named_reward(q.reward, model, attrs)
    if q.kind == "cumul":
        return expected_reward_cumul(mdp, r, q.bound, q.mode, attrs)
    return expected_reward_instant(mdp, r, q.bound, q.mode, attrs)


# --------------------------------------------------------------------------
# simulation


class Deadlock(RuntimeError):
    def __init__(self, tick):
        self.tick = tick
        super().__init__(f"deadlock at tick {tick}")


@dataclass(frozen=True)
class TraceRow:
    tick: int
    counts: tuple  # ((loc, species, n), ...)
    fired: tuple  # labels since the previous tick

    def population(self) -> int:
        return sum(n for _, _, n in self.counts)


@dataclass
class Trace:
    seed: int
    rows: list = field(default_factory=list)
    termination: str = "max_ticks"  # | "deadlock" | "step_limit"
    deadlock_tick: Optional[int] = None

    def final_population(self) -> int:
        return self.rows[-1].population() if self.rows else 0


SCHEDULERS = ("uniform", "ordered")


def simulate(
    model: Model,
    policy: Optional[Policy] = None,
    seed: int = 0,
    max_ticks: int = 100,
    scheduler: str = "uniform",
    engine: Optional[Engine] = None,
    max_steps_per_tick: int = 100_000,
    raise_on_deadlock: bool = False,
) -> Trace:
    if scheduler not in SCHEDULERS:
        raise ValueError(f"unknown scheduler {scheduler!r}")
    engine = engine or Engine(model)
    policy = model.policy() if policy is None else policy
    rng = random.Random(seed)
    c = engine.initial()
    trace = Trace(seed, [TraceRow(0, c.env.triples(), ())])
    tick = 0
    fired: list = []
    steps = 0
    while tick < max_ticks:
        heads = [(ind, engine.head(ind, c.env)) for ind in c.individuals]
        comps = [(ind, h[1]) for ind, h in heads if h[0] == "psum"]
        if comps:
            c = engine.sample_prob_step(c, comps, rng)
            continue
        cands = engine.prioritized_candidates(c, policy, heads)
        if not cands:
            trace.termination = "deadlock"
            trace.deadlock_tick = tick
            if raise_on_deadlock:
                raise Deadlock(tick)
            break
        if scheduler == "uniform":
            k = cands[rng.randrange(len(cands))]
        else:
            k = min(cands, key=lambda k: (min(k.participants, default=-1), k.label))
        c = k.build()
        if k.label == TICK:
            tick += 1
            trace.rows.append(TraceRow(tick, c.env.triples(), tuple(fired)))
            fired = []
            steps = 0
        else:
            fired.append(str(k.label))
            steps += 1
            if steps > max_steps_per_tick:
                trace.termination = "step_limit"
                break
    return trace


def simulate_batch(model, policy=None, runs=1, max_ticks=100, seed=0, scheduler="uniform", threads=1) -> list[Trace]:
    engine = Engine(model)
    seeds = [seed + i for i in range(runs)]

    def one(s):
        return simulate(model, policy, s, max_ticks, scheduler, engine)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, seeds))
    return [one(s) for s in seeds]


def trace_columns(model: Model) -> list[tuple[str, str]]:
    return [(l, s) for l in model.habitat.locations for s in model.species_names()]


def trace_csv(trace: Trace, model: Model) -> str:
    cols = trace_columns(model)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tick"] + [f"{l}:{s}" for l, s in cols])
    for row in trace.rows:
        counts = {(l, s): n for l, s, n in row.counts}
        w.writerow([row.tick] + [counts.get(c, 0) for c in cols])
    return buf.getvalue()


def summary_csv(traces: list[Trace]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "seed", "final_population", "deadlock_tick"])
    for i, t in enumerate(traces):
        w.writerow([i, t.seed, t.final_population(), "" if t.deadlock_tick is None else t.deadlock_tick])
    return buf.getvalue()


def mean_population(traces: list[Trace], max_ticks: int) -> list[float]:
    """Mean population per tick; a run that stopped early keeps its last value."""
    out = []
    for t in range(max_ticks + 1):
        total = 0
        for tr in traces:
            row = tr.rows[min(t, len(tr.rows) - 1)]
            total += row.population()
        out.append(total / len(traces) if traces else 0.0)
    return out


def mean_csv(traces: list[Trace], max_ticks: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tick", "mean_population"])
    for t, v in enumerate(mean_population(traces, max_ticks)):
        w.writerow([t, f"{v:.6f}"])
    return buf.getvalue()
