"""Compilation of a PALPS model into the PRISM guarded-command language.

Each initial individual becomes a module with a process-position variable
``st<x>`` and a location variable ``loc<x>``; each replicator contributes
``bound`` inactive modules (``st=0``) that are activated in index order.
Bookkeeping (environment counts, priority counters, ``pact``) lives in
global variables, which synchronised commands may not write, so every
multi-party step is split into a committing command, the synchronisation
itself and a fix-up command, with ``atomic`` locking out everything else.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .expr import Environment, eval_bool
from .model import (
    ALL,
    GO,
    MYLOC,
    TICK,
    And,
    AttrAt,
    Binary,
    BTrue,
    Compare,
    Cond,
    ConstRef,
    Const,
    CountAt,
    Go,
    In,
    Label,
    Model,
    Nil,
    Not,
    NSum,
    Out,
    Policy,
    PSum,
    Tick,
    TotalAt,
    Unary,
    Uniform,
    bind_neighbor,
    env_dependent,
)
from .semantics import Engine


class UnsupportedTerm(ValueError):
    """The model uses a feature the translation does not cover."""


NIL_KEY = "0"


def _num(x) -> str:
    x = Fraction(x)
    if x.denominator == 1:
        return str(x.numerator)
    return f"{x.numerator}/{x.denominator}"


def _ident(text: str) -> str:
    out = "".join(ch if ch.isalnum() or ch == "_" else "_" for ch in str(text))
    return out if not out[:1].isdigit() else out


# ---------------------------------------------------------------- expressions


class _ExprWriter:
    def __init__(self, model: Model, locs, env_var):
        self.model = model
        self.locs = locs
        self.env_var = env_var
        self.species = model.species_names()

    def arith(self, w, here) -> str:
        if isinstance(w, Const):
            v = w.value
            return _num(v) if v >= 0 else f"(-{_num(-v)})"
        if isinstance(w, AttrAt):
            loc = here if w.loc == MYLOC else w.loc
            v = self.model.attributes.get(w.attr, loc)
            if v is None:
                raise UnsupportedTerm(f"attribute {w.attr!r} undefined at {loc!r}")
            return _num(v) if v >= 0 else f"(-{_num(-v)})"
        if isinstance(w, CountAt):
            locs = self.locs if w.loc == ALL else [here if w.loc == MYLOC else w.loc]
            return "(" + "+".join(self.env_var(w.species, l) for l in locs) + ")"
        if isinstance(w, TotalAt):
            locs = self.locs if w.loc == ALL else [here if w.loc == MYLOC else w.loc]
            return "(" + "+".join(self.env_var(s, l) for l in locs for s in self.species) + ")"
        if isinstance(w, Unary):
            a = self.arith(w.arg, here)
            return f"(-{a})" if w.op == "-" else f"max({a},-{a})"
        if isinstance(w, Binary):
            a, b = self.arith(w.left, here), self.arith(w.right, here)
            if w.op in ("min", "max"):
                return f"{w.op}({a},{b})"
            return f"({a}{w.op}{b})"
        raise UnsupportedTerm(f"arithmetic expression {w!r}")

    def boolean(self, e, here) -> str:
        if isinstance(e, BTrue):
            return "true"
        if isinstance(e, Not):
            return f"!({self.boolean(e.arg, here)})"
        if isinstance(e, And):
            return f"({self.boolean(e.left, here)} & {self.boolean(e.right, here)})"
        if isinstance(e, Compare):
            return f"{self.arith(e.expr, here)}{e.op}{_num(e.value) if e.value >= 0 else '(-' + _num(-e.value) + ')'}"
        raise UnsupportedTerm(f"boolean expression {e!r}")


# ---------------------------------------------------------------- context


@dataclass
class ModuleInfo:
    index: int
    species: str
    scope: int
    pool: bool
    term: object = None  # initial process term; None for inactive modules
    loc: Optional[str] = None

    @property
    def name(self) -> str:
        return f"{self.species}{self.index}"

    @property
    def st(self) -> str:
        return f"st{self.index}"

    @property
    def lv(self) -> str:
        return f"loc{self.index}"


@dataclass
class SpeciesPlan:
    name: str
    positions: dict = field(default_factory=dict)  # term key -> number
    terms: list = field(default_factory=list)  # index number-1 -> representative term
    transient: dict = field(default_factory=dict)  # tag tuple -> number

    @property
    def top(self) -> int:
        return len(self.terms)

    def pos(self, key: str) -> int:
        return self.positions[key]

    def state(self, tag: tuple) -> int:
        n = self.transient.get(tag)
        if n is None:
            n = self.top + len(self.transient) + 1
            self.transient[tag] = n
        return n

    @property
    def max_state(self) -> int:
        return self.top + len(self.transient)


@dataclass
class Case:
    conds: tuple  # PRISM boolean strings that must all hold
    head: tuple  # ("nil",) | ("nsum", branches) | ("psum", branches)


class GenContext:
    """Everything the command templates need about one model and policy."""

    def __init__(self, model: Model, policy: Policy):
        self.model = model
        self.policy = policy
        self.engine = Engine(model)
        self.locs = list(model.habitat.locations)
        self.loc_index = {l: i + 1 for i, l in enumerate(self.locs)}
        self.nbset = model.habitat.neighbors
        self.species = {s.name: s for s in model.species}
        init = self.engine.initial()

        scopes = {ind.scope for ind in init.individuals} | {r.scope for r in init.replicators}
        if len(scopes) > 1:
            raise UnsupportedTerm("individuals in different restriction scopes")
        self.scope = scopes.pop() if scopes else 0
        self.restricted = set()
        for s in self.engine._chains[self.scope]:
            self.restricted |= set(self.engine.scopes[s][1])

        self.modules: list[ModuleInfo] = []
        for ind in init.individuals:
            self.modules.append(ModuleInfo(len(self.modules) + 1, ind.species, ind.scope, False, ind.term, ind.loc))
        self.pool_of: dict[str, list[ModuleInfo]] = {}
        for r in init.replicators:
            if r.species in self.pool_of:
                raise UnsupportedTerm(f"more than one replicator for species {r.species!r}")
            mods = []
            for _ in range(r.remaining):
                m = ModuleInfo(len(self.modules) + 1, r.species, r.scope, True)
                self.modules.append(m)
                mods.append(m)
            self.pool_of[r.species] = mods
        self.replicated = {s for s in self.pool_of}
        # modules that can be (re)activated: recycling species return
        # terminated individuals to the inactive pool
        self.activatable = {
            s: [m for m in self.modules if m.species == s] if self.species[s].recycle else mods
            for s, mods in self.pool_of.items()
        }
        self.rep_species = {}  # channel -> replicated species
        for s in self.replicated:
            self.rep_species.setdefault(self.species[s].rep_channel, []).append(s)

        self.writer = _ExprWriter(model, self.locs, self.env_var)
        self.tracked = self._tracked_labels()
        self._case_cache: dict = {}
        self.plans: dict[str, SpeciesPlan] = {}
        self._number_positions()
        self.av_channels = self._av_channels()
        self._check_terms()
        self._collect_dynamic()

    # -- naming
    def env_var(self, species, loc) -> str:
        return f"{_ident(species)}_{_ident(loc)}"

    def pool_var(self, species) -> str:
        return f"i_{_ident(species)}"

    def counter_var(self, label: Label) -> str:
        if label.kind == "tau" and label.channel == GO:
            return f"n_go_{_ident(label.loc)}_{_ident(label.species)}"
        if label.kind == "tau":
            return f"nout_{_ident(label.channel)}_{_ident(label.loc)}_{_ident(label.species)}"
        return f"n_{label.kind}_{_ident(label.channel)}_{_ident(label.loc)}_{_ident(label.species)}"

    def av_var(self, channel, loc) -> str:
        return f"av_{_ident(channel)}_{_ident(loc)}"

    def visible(self, channel) -> bool:
        return channel not in self.restricted

    # -- policy
    def _tracked_labels(self) -> set:
        out = set()
        for _, hi in self.policy.pairs:
            if hi == TICK:
                raise UnsupportedTerm("tick as a higher-priority action")
            if hi.kind in ("in", "out") and not self.visible(hi.channel):
                continue  # a restricted stand-alone action is never enabled
            out.add(hi)
        return out

    # -- process positions
    def cases(self, species, term, loc) -> list[Case]:
        key = (species, self.engine.term_key(species, term), loc)
        got = self._case_cache.get(key)
        if got is None:
            got = self._resolve(species, term, loc, ())
            self._case_cache[key] = got
        return got

    def _resolve(self, species, term, loc, conds) -> list[Case]:
        t = self.engine._unfold(species, term)
        if isinstance(t, Nil):
            return [Case(conds, ("nil",))]
        if isinstance(t, NSum):
            return [Case(conds, ("nsum", t.branches))]
        if isinstance(t, PSum):
            return [Case(conds, ("psum", t.branches))]
        if isinstance(t, Uniform):
            nbs = self.engine._nb[loc]
            if not nbs:
                return []
            w = Fraction(1, len(nbs))
            return [Case(conds, ("psum", tuple((w, bind_neighbor(t.body, l)) for l in nbs)))]
        if isinstance(t, Cond):
            out: list[Case] = []
            negs: list[str] = []
            for guard, branch in t.branches:
                if not env_dependent(guard):
                    if eval_bool(Environment(), self.model.attributes, guard, loc):
                        out.extend(self._resolve(species, branch, loc, conds + tuple(negs)))
                        return out
                    continue
                g = self.writer.boolean(guard, loc)
                out.extend(self._resolve(species, branch, loc, conds + tuple(negs) + (g,)))
                negs.append(f"!({g})")
            return out
        raise UnsupportedTerm(f"process term {t!r}")

    def successors(self, species, term, loc):
        """Terms an individual at ``term`` can hold after one step."""
        for case in self.cases(species, term, loc):
            kind = case.head[0]
            if kind == "nil":
                yield Nil()
            else:
                for _, cont in case.head[1]:
                    yield cont

    def _number_positions(self):
        for name in self.species:
            self.plans[name] = SpeciesPlan(name)
        roots: dict[str, list] = {name: [] for name in self.species}
        for m in self.modules:
            if not m.pool:
                roots[m.species].append(m.term)
        for s in self.pool_of:
            roots[s].append(ConstRef(self.species[s].init))
        for name, terms in roots.items():
            plan = self.plans[name]
            for t in terms:
                self._dfs(plan, t)
            if terms:
                self._dfs(plan, Nil())

    def _dfs(self, plan: SpeciesPlan, term):
        stack = [term]
        while stack:
            t = stack.pop()
            key = self.engine.term_key(plan.name, t)
            if key in plan.positions:
                continue
            plan.terms.append(t)
            plan.positions[key] = len(plan.terms)
            succ = []
            for loc in self.locs:
                succ.extend(self.successors(plan.name, t, loc))
            stack.extend(reversed(succ))

    def key(self, species, term) -> str:
        return self.engine.term_key(species, term)

    def pos(self, species, term) -> int:
        return self.plans[species].pos(self.key(species, term))

    def is_nil(self, species, term) -> bool:
        return self.engine.is_nil(species, term)

    def _av_channels(self) -> set:
        ins, outs = set(), set()
        for name, plan in self.plans.items():
            for t in plan.terms:
                for loc in self.locs:
                    for case in self.cases(name, t, loc):
                        if case.head[0] != "nsum":
                            continue
                        for pre, _ in case.head[1]:
                            if isinstance(pre, In):
                                ins.add(pre.channel)
                            elif isinstance(pre, Out):
                                outs.add(pre.channel)
        for ch in ins & set(self.rep_species):
            raise UnsupportedTerm(f"inputs on replication channel {ch!r}")
        return ins & outs

    def _check_terms(self):
        for name, plan in self.plans.items():
            for t in plan.terms:
                for loc in self.locs:
                    cs = self.cases(name, t, loc)
                    for case in cs:
                        if case.head[0] != "nsum":
                            continue
                        seen_in = [p.channel for p, _ in case.head[1] if isinstance(p, In)]
                        seen_out = {p.channel for p, _ in case.head[1] if isinstance(p, Out)}
                        if len(seen_in) != len(set(seen_in)):
                            raise UnsupportedTerm("two inputs on one channel in a single choice")
                        if set(seen_in) & seen_out & self.av_channels:
                            raise UnsupportedTerm("input and output on one channel in a single choice")
                    ins = [p.channel for c in cs if c.head[0] == "nsum" for p, _ in c.head[1] if isinstance(p, In)]
                    if len(ins) != len(set(ins)):
                        raise UnsupportedTerm("inputs on one channel under several guards")
                    # static contribution; raises for env-dependent ones
                    self.contrib(name, t, loc)

    # -- enabled sets and counter contributions
    def enabled_sets(self, species, term, loc) -> dict:
        """First-action summary of ``term`` at ``loc`` (all guard cases)."""
        inputs, actions, taus = set(), set(), set()
        is_prob = False
        for case in self.cases(species, term, loc):
            if case.head[0] == "psum":
                is_prob = True
            if case.head[0] != "nsum":
                continue
            for pre, _ in case.head[1]:
                if isinstance(pre, In):
                    inputs.add((pre.channel, loc))
                    lab = Label("in", pre.channel, loc, species)
                    if lab in self.tracked:
                        actions.add(lab)
                elif isinstance(pre, Out):
                    lab = Label("out", pre.channel, loc, species)
                    if lab in self.tracked:
                        actions.add(lab)
                    lab = Label("tau", pre.channel, loc, species)
                    if lab in self.tracked:
                        taus.add(lab)
                elif isinstance(pre, Go):
                    lab = Label("tau", GO, loc, species)
                    if lab in self.tracked and (loc, pre.target) in self.nbset:
                        taus.add(lab)
        return {"inputs": inputs, "policy_actions": actions, "policy_taus": taus, "is_prob": is_prob}

    def _case_contrib(self, species, case: Case, loc) -> dict:
        out: dict = {}

        def bump(var):
            out[var] = out.get(var, 0) + 1

        kind = case.head[0]
        if kind == "psum":
            bump("pact")
        elif kind == "nsum":
            for pre, _ in case.head[1]:
                if isinstance(pre, Go):
                    lab = Label("tau", GO, loc, species)
                    if lab in self.tracked and (loc, pre.target) in self.nbset:
                        bump(self.counter_var(lab))
                elif isinstance(pre, In):
                    lab = Label("in", pre.channel, loc, species)
                    if lab in self.tracked:
                        bump(self.counter_var(lab))
                    if pre.channel in self.av_channels:
                        bump(self.av_var(pre.channel, loc))
                elif isinstance(pre, Out):
                    lab = Label("out", pre.channel, loc, species)
                    if lab in self.tracked:
                        bump(self.counter_var(lab))
                    lab = Label("tau", pre.channel, loc, species)
                    if lab in self.tracked:
                        bump(self.counter_var(lab))
        return out

    def contrib(self, species, term, loc) -> dict:
        """Counter contribution of an individual at ``term``.  Positions
        whose first actions depend on the environment contribute nothing;
        they are covered by guard formulas instead (see ``positive``)."""
        cs = self.cases(species, term, loc)
        if any(c.conds for c in cs):
            return {}
        return self._case_contrib(species, cs[0], loc) if cs else {}

    def _collect_dynamic(self):
        self.dynamic: dict = {}  # counter -> [(species, position, loc, conds)]
        self.dynamic_positions = set()
        for name, plan in self.plans.items():
            for n, t in enumerate(plan.terms, 1):
                for loc in self.locs:
                    cs = self.cases(name, t, loc)
                    if not any(c.conds for c in cs):
                        continue
                    for c in cs:
                        d = self._case_contrib(name, c, loc)
                        if d:
                            self.dynamic_positions.add((name, n, loc))
                        for var in sorted(d):
                            self.dynamic.setdefault(var, []).append((name, n, loc, c.conds))

    def dyn_terms(self, var) -> list[str]:
        out = []
        for sp, n, loc, conds in self.dynamic.get(var, ()):
            for m in self.modules:
                if m.species == sp:
                    out.append(" & ".join([f"{m.st}={n}", f"{m.lv}={self.loc_index[loc]}", *conds]))
        return out

    def positive(self, var) -> Optional[str]:
        """Formula for "the quantity counted by ``var`` is non-zero"."""
        parts = [f"{var}>0"] if var in self.counters else []
        parts += [f"({d})" for d in self.dyn_terms(var)]
        if not parts:
            return None
        return parts[0] if len(parts) == 1 else "(" + " | ".join(parts) + ")"

    def no_prob(self) -> list[str]:
        out = ["pact=0"]
        out += [f"!({d})" for d in self.dyn_terms("pact")]
        return out

    def some_prob(self) -> str:
        parts = ["pact>0"] + [f"({d})" for d in self.dyn_terms("pact")]
        return parts[0] if len(parts) == 1 else "(" + " | ".join(parts) + ")"

    def target(self, species, cont) -> tuple[int, dict]:
        """State value for continuing as ``cont`` and extra global deltas:
        terminated individuals of recycling species return to the pool."""
        if self.is_nil(species, cont) and species in self.pool_of and self.species[species].recycle:
            return 0, {self.pool_var(species): 1}
        return self.pos(species, cont), {}

    # -- priority guards
    def enabled_expr(self, beta: Label) -> Optional[str]:
        var = self.counter_var(beta)
        own = self.positive(var)
        if beta.kind in ("in", "out") or (beta.kind == "tau" and beta.channel == GO) or own is None:
            return own
        partners = []
        if beta.channel in self.av_channels:
            av = self.positive(self.av_var(beta.channel, beta.loc))
            if av is not None:
                partners.append(av)
        for s in self.rep_species.get(beta.channel, []):
            partners.append(f"{self.pool_var(s)}>0")
        if not partners:
            return None
        if len(partners) == 1:
            return f"{own} & {partners[0]}"
        return f"{own} & ({' | '.join(partners)})"

    def prune(self, alpha: Label) -> list[str]:
        out = []
        for beta in sorted(self.policy.higher_than(alpha)):
            e = self.enabled_expr(beta)
            if e is None:
                continue
            if e.endswith(">0") and " " not in e:
                out.append(e[:-2] + "=0")
            else:
                out.append(f"!({e})")
        return out


# ---------------------------------------------------------------- commands


@dataclass
class Command:
    label: str
    guard: list
    updates: list  # [(prob or None, {var: expr})]
    comment: str = ""


def _delta_updates(delta: dict) -> dict:
    out = {}
    for var in sorted(delta):
        d = delta[var]
        if d > 0:
            out[var] = f"{var}+{d}"
        elif d < 0:
            out[var] = f"{var}-{-d}"
    return out


def _sub(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0) - v
    return {k: v for k, v in out.items() if v}


def _add(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0) + v
    return {k: v for k, v in out.items() if v}


def updates_delta(ctx: GenContext, species, P, Q, loc, dest=None) -> dict:
    """Integer deltas of the globals when an individual leaves ``P`` at
    ``loc`` for ``Q`` (at ``dest`` when it moves)."""
    dest = loc if dest is None else dest
    delta = _sub(ctx.contrib(species, Q, dest), ctx.contrib(species, P, loc))
    if dest != loc:
        delta = _add(delta, {ctx.env_var(species, loc): -1, ctx.env_var(species, dest): 1})
    if ctx.is_nil(species, Q) and not ctx.is_nil(species, P):
        delta = _add(delta, {ctx.env_var(species, dest): -1})
    return _add(delta, ctx.target(species, Q)[1])


def updates_expr(ctx: GenContext, species, P, Q, loc, dest=None) -> dict:
    """The same as :func:`updates_delta`, rendered as ``{variable: expression}``."""
    return _delta_updates(updates_delta(ctx, species, P, Q, loc, dest))


class _Emitter:
    def __init__(self, ctx: GenContext):
        self.ctx = ctx
        self.cmds: dict[int, list[Command]] = {m.index: [] for m in ctx.modules}
        self.seen: dict[int, set] = {m.index: set() for m in ctx.modules}
        self.tick_guard = ctx.prune(TICK)

    def add(self, m: ModuleInfo, cmd: Command):
        key = (cmd.label, tuple(cmd.guard), repr(cmd.updates))
        if key in self.seen[m.index]:
            return
        self.seen[m.index].add(key)
        self.cmds[m.index].append(cmd)

    def loc_eq(self, m, loc) -> str:
        return f"{m.lv}={self.ctx.loc_index[loc]}"

    def st_eq(self, m, n) -> str:
        return f"{m.st}={n}"

    # the partner side of a synchronisation: is module y ready to input on
    # ``chan`` at ``loc``?  Used inside the outputter's commit guard.
    def input_ready(self, y: ModuleInfo, chan, loc) -> list[str]:
        ctx = self.ctx
        plan = ctx.plans[y.species]
        out = []
        for n, t in enumerate(plan.terms, 1):
            for case in ctx.cases(y.species, t, loc):
                if case.head[0] == "nsum" and any(isinstance(p, In) and p.channel == chan for p, _ in case.head[1]):
                    parts = [self.st_eq(y, n), self.loc_eq(y, loc), *case.conds]
                    out.append(" & ".join(parts))
        return out

    def gen_module(self, m: ModuleInfo):
        ctx = self.ctx
        plan = ctx.plans[m.species]
        sp = m.species
        reusable = m in ctx.activatable.get(m.species, ())
        if reusable:
            self.add(m, Command("tick", [self.st_eq(m, 0)], [(None, {})], "inactive"))
            self.add(m, Command("tick2", [self.st_eq(m, 0)], [(None, {})]))
        prob_guards = []
        for n, t in enumerate(plan.terms, 1):
            if ctx.is_nil(sp, t):
                self.add(m, Command("tick", [self.st_eq(m, n)], [(None, {})], "terminated"))
                self.add(m, Command("tick2", [self.st_eq(m, n)], [(None, {})]))
                continue
            for loc in ctx.locs:
                for case in ctx.cases(sp, t, loc):
                    base = [self.st_eq(m, n), self.loc_eq(m, loc), *case.conds]
                    kind = case.head[0]
                    if kind == "nil":
                        self.gen_tick(m, n, t, Nil(), base)
                    elif kind == "psum":
                        prob_guards.append(" & ".join(base))
                        self.gen_prob(m, n, t, case.head[1], base, loc)
                    else:
                        for pre, cont in case.head[1]:
                            if isinstance(pre, Tick):
                                self.gen_tick(m, n, t, cont, base)
                            elif isinstance(pre, Go):
                                self.gen_go(m, t, cont, base, loc, pre.target)
                            elif isinstance(pre, In):
                                self.gen_in(m, t, cont, base, loc, pre.channel)
                            elif isinstance(pre, Out):
                                self.gen_out(m, t, cont, base, loc, pre.channel)
            # input side of every synchronisation (guard cases were checked
            # by the partner's commit, so only position and location here)
            for loc in ctx.locs:
                for case in ctx.cases(sp, t, loc):
                    if case.head[0] != "nsum":
                        continue
                    for pre, cont in case.head[1]:
                        if isinstance(pre, In) and pre.channel in ctx.av_channels:
                            self.gen_in_sync(m, n, t, cont, loc, pre.channel)
        if reusable:
            self.gen_activation(m)
        self.gen_fixups(m)
        if ctx.uses_prob:
            guard = ["atomic=0", ctx.some_prob(), f"{m.st}<={plan.top}"]
            guard += [f"!({g})" for g in prob_guards]
            self.add(m, Command("prob", guard, [(None, {})], "not at a probabilistic choice"))

    # -- templates
    def _lock(self, label: Label) -> list[str]:
        g = ["atomic=0"]
        if self.ctx.uses_prob:
            g += self.ctx.no_prob()
        return g + self.ctx.prune(label)

    def gen_tick(self, m, n, t, cont, base):
        plan = self.ctx.plans[m.species]
        tk = plan.state(("tick", n, self.ctx.key(m.species, cont)))
        self.add(m, Command("tick", base + self._lock(TICK), [(None, {m.st: str(tk)})]))

    def gen_prob(self, m, n, t, branches, base, loc):
        plan = self.ctx.plans[m.species]
        merged: dict = {}
        for w, cont in branches:
            s = plan.state(("land", n, self.ctx.key(m.species, cont)))
            merged[s] = merged.get(s, 0) + w
        ups = [(w, {m.st: str(s)}) for s, w in merged.items()]
        self.add(m, Command("prob", base + ["atomic=0"], ups))

    def gen_go(self, m, t, cont, base, loc, target):
        ctx = self.ctx
        if (loc, target) not in ctx.nbset:
            return
        ups = {m.lv: str(ctx.loc_index[target]), m.st: str(ctx.target(m.species, cont)[0])}
        ups.update(updates_expr(ctx, m.species, t, cont, loc, target))
        self.add(m, Command("", base + self._lock(Label("tau", GO, loc, m.species)), [(None, ups)], f"go {target}"))

    def gen_in(self, m, t, cont, base, loc, chan):
        ctx = self.ctx
        if not ctx.visible(chan):
            return
        ups = {m.st: str(ctx.target(m.species, cont)[0])}
        ups.update(updates_expr(ctx, m.species, t, cont, loc))
        lab = f"{_ident(chan)}_{m.index}"
        self.add(m, Command(lab, base + self._lock(Label("in", chan, loc, m.species)), [(None, ups)]))

    def gen_out(self, m, t, cont, base, loc, chan):
        ctx = self.ctx
        plan = ctx.plans[m.species]
        own_delta = updates_delta(ctx, m.species, t, cont, loc)
        own = _delta_updates(own_delta)
        key = ctx.key(m.species, cont)
        nxt = str(ctx.target(m.species, cont)[0])
        if ctx.visible(chan):
            ups = {m.st: nxt, **own}
            lab = f"{_ident(chan)}bar_{m.index}"
            self.add(m, Command(lab, base + self._lock(Label("out", chan, loc, m.species)), [(None, ups)]))
        tau = Label("tau", chan, loc, m.species)
        if chan in ctx.av_channels:
            for y in ctx.modules:
                if y.index == m.index:
                    continue
                ready = self.input_ready(y, chan, loc)
                if not ready:
                    continue
                partner = ready[0] if len(ready) == 1 else "(" + " | ".join(f"({r})" for r in ready) + ")"
                wait = plan.state(("out", key, y.index))
                ups = {"atomic": "1", m.st: str(wait), **own}
                self.add(m, Command("", base + self._lock(tau) + [partner], [(None, ups)], f"commit {chan} with {y.name}"))
                self.add(m, Command(f"{_ident(chan)}_{m.index}_{y.index}", [self.st_eq(m, wait)],
                                    [(None, {m.st: nxt})]))
        for s2 in ctx.rep_species.get(chan, []):
            pool = ctx.activatable[s2]
            if not pool:
                continue
            wait = plan.state(("rep", key, s2))
            pv = ctx.pool_var(s2)
            ups = {"atomic": "1", m.st: str(wait), **_delta_updates(_add(own_delta, {pv: -1}))}
            self.add(m, Command("", base + self._lock(tau) + [f"{pv}>0"], [(None, ups)], f"commit {chan}"))
            for j in pool:
                self.add(m, Command(f"{_ident(chan)}_{m.index}_{j.index}", [self.st_eq(m, wait)],
                                    [(None, {m.st: nxt})]))

    def gen_in_sync(self, m, n, t, cont, loc, chan):
        ctx = self.ctx
        plan = ctx.plans[m.species]
        got = plan.state(("in", n, ctx.key(m.species, cont)))
        for y in ctx.modules:
            if y.index == m.index:
                continue
            if not self._may_output(y, chan):
                continue
            lab = f"{_ident(chan)}_{y.index}_{m.index}"
            self.add(m, Command(lab, [self.st_eq(m, n), self.loc_eq(m, loc)], [(None, {m.st: str(got)})]))

    def _may_output(self, y: ModuleInfo, chan) -> bool:
        ctx = self.ctx
        for t in ctx.plans[y.species].terms:
            for loc in ctx.locs:
                for case in ctx.cases(y.species, t, loc):
                    if case.head[0] == "nsum" and any(isinstance(p, Out) and p.channel == chan for p, _ in case.head[1]):
                        return True
        return False

    def gen_activation(self, j: ModuleInfo):
        ctx = self.ctx
        sp = ctx.species[j.species]
        plan = ctx.plans[j.species]
        born = plan.state(("born",))
        lower = [f"{k.st}!=0" for k in ctx.activatable[j.species] if k.index < j.index]
        chan = sp.rep_channel
        for x in ctx.modules:
            if x.index == j.index or not self._may_output(x, chan):
                continue
            self.add(j, Command(f"{_ident(chan)}_{x.index}_{j.index}", [self.st_eq(j, 0), *lower],
                                [(None, {j.st: str(born), j.lv: x.lv})], f"activated by {x.name}"))

    def gen_fixups(self, m: ModuleInfo):
        """Bookkeeping commands for the transient states allocated so far.
        Allocation may continue while emitting (wait states), so iterate."""
        ctx = self.ctx
        plan = ctx.plans[m.species]
        sp = m.species
        done = set()
        while True:
            todo = [(tag, n) for tag, n in plan.transient.items() if tag not in done]
            if not todo:
                break
            for tag, n in todo:
                done.add(tag)
                kind = tag[0]
                if kind == "tick":
                    src = plan.terms[tag[1] - 1]
                    cont = self._term_of(sp, tag[2], src)
                    wait = plan.state(("wait", tag[2]))
                    for loc in ctx.locs:
                        ups = {m.st: str(wait), **updates_expr(ctx, sp, src, cont, loc)}
                        self.add(m, Command("", [self.st_eq(m, n), self.loc_eq(m, loc)], [(None, ups)]))
                elif kind == "wait":
                    self.add(m, Command("tick2", [self.st_eq(m, n)], [(None, {m.st: str(ctx.target(sp, plan.terms[plan.pos(tag[1]) - 1])[0])})]))
                elif kind == "land":
                    src = plan.terms[tag[1] - 1]
                    cont = self._term_of(sp, tag[2], src)
                    for loc in ctx.locs:
                        ups = {m.st: str(ctx.target(sp, cont)[0]), **updates_expr(ctx, sp, src, cont, loc)}
                        self.add(m, Command("", [self.st_eq(m, n), self.loc_eq(m, loc)], [(None, ups)]))
                elif kind == "in":
                    src = plan.terms[tag[1] - 1]
                    cont = self._term_of(sp, tag[2], src)
                    for loc in ctx.locs:
                        ups = {"atomic": "0", m.st: str(ctx.target(sp, cont)[0]), **updates_expr(ctx, sp, src, cont, loc)}
                        self.add(m, Command("", [self.st_eq(m, n), self.loc_eq(m, loc)], [(None, ups)]))
                elif kind == "born":
                    init = ConstRef(ctx.species[sp].init)
                    for loc in ctx.locs:
                        delta = dict(ctx.contrib(sp, init, loc))
                        if not ctx.is_nil(sp, init):
                            delta[ctx.env_var(sp, loc)] = 1
                        ups = {"atomic": "0", m.st: str(ctx.pos(sp, init)), **_delta_updates(delta)}
                        self.add(m, Command("", [self.st_eq(m, n), self.loc_eq(m, loc)], [(None, ups)]))
                # "out" and "rep" waits are left by their synchronising commands

    def _term_of(self, species, key, src):
        plan = self.ctx.plans[species]
        return plan.terms[plan.pos(key) - 1]


# ---------------------------------------------------------------- emission


@dataclass
class Emitted:
    text: str
    state_map: dict
    context: GenContext = field(repr=False, default=None)


def _render_updates(updates) -> str:
    parts = []
    for p, ups in updates:
        body = " & ".join(f"({v}'={e})" for v, e in ups.items()) if ups else "true"
        parts.append(body if p is None else f"{_num(p)}:{body}")
    return " + ".join(parts)


def _declare(name, lo, hi, init) -> str:
    return f"global {name} : [{lo}..{hi}] init {init};"


def emit_model(model: Model, policy: Optional[Policy] = None, rewards=()) -> Emitted:
    policy = model.policy() if policy is None else policy
    ctx = GenContext(model, policy)
    init = ctx.engine.initial()

    # counters: initial values and upper bounds
    per_module_max: dict = {}
    for m in ctx.modules:
        best: dict = {}
        for t in ctx.plans[m.species].terms:
            for loc in ctx.locs:
                for k, v in ctx.contrib(m.species, t, loc).items():
                    best[k] = max(best.get(k, 0), v)
        for k, v in best.items():
            per_module_max[k] = per_module_max.get(k, 0) + v
    counter_init: dict = {}
    for m in ctx.modules:
        if not m.pool:
            for k, v in ctx.contrib(m.species, m.term, m.loc).items():
                counter_init[k] = counter_init.get(k, 0) + v
    ctx.counters = {k for k in per_module_max if k != "pact"}
    ctx.uses_prob = "pact" in per_module_max or "pact" in ctx.dynamic
    ctx.counter_info = {}
    for lab in ctx.tracked:
        ctx.counter_info[ctx.counter_var(lab)] = [lab.kind, lab.channel, lab.loc, lab.species]
    for chan in ctx.av_channels:
        for loc in ctx.locs:
            ctx.counter_info[ctx.av_var(chan, loc)] = ["avail", chan, loc, ""]

    em = _Emitter(ctx)
    for m in ctx.modules:
        em.gen_module(m)

    n_of = {s: sum(1 for m in ctx.modules if m.species == s) for s in ctx.species}
    lines = ["mdp", ""]
    state_map = _state_map(ctx)
    lines.append("// palps-map " + json.dumps(state_map, sort_keys=True, separators=(",", ":")))
    lines.append("")
    lines.append(_declare("atomic", 0, 1, 0))
    if ctx.uses_prob:
        lines.append(_declare("pact", 0, len(ctx.modules), counter_init.get("pact", 0)))
    for s in ctx.species:
        for loc in ctx.locs:
            lines.append(_declare(ctx.env_var(s, loc), 0, max(n_of[s], 1), init.env.count(loc, s)))
    for s, pool in ctx.pool_of.items():
        lines.append(_declare(ctx.pool_var(s), 0, len(ctx.activatable[s]), len(pool)))
    for k in sorted(ctx.counters):
        lines.append(_declare(k, 0, per_module_max[k], counter_init.get(k, 0)))

    for m in ctx.modules:
        plan = ctx.plans[m.species]
        lines.append("")
        kind = "inactive" if m.pool else "individual"
        lines.append(f"module {m.name}")
        st0 = 0 if m.pool else ctx.pos(m.species, m.term)
        loc0 = ctx.loc_index[m.loc] if m.loc else 1
        lines.append(f"  // {kind} of species {m.species}")
        lines.append(f"  {m.st} : [0..{plan.max_state}] init {st0};")
        lines.append(f"  {m.lv} : [1..{len(ctx.locs)}] init {loc0};")
        lines.append("")
        for c in em.cmds[m.index]:
            guard = " & ".join(c.guard) if c.guard else "true"
            text = f"  [{c.label}] {guard} -> {_render_updates(c.updates)};"
            if c.comment:
                text += f" // {c.comment}"
            lines.append(text)
        lines.append("endmodule")

    lines.extend(_reward_blocks(ctx, em, rewards))
    lines.append("")
    return Emitted("\n".join(lines), state_map, ctx)


def _state_map(ctx: GenContext) -> dict:
    return {
        "locations": ctx.locs,
        "species": {
            s: {"positions": [ctx.key(s, t) for t in plan.terms]}
            for s, plan in ctx.plans.items()
        },
        "modules": [
            {"index": m.index, "species": m.species, "scope": m.scope, "pool": m.pool}
            for m in ctx.modules
        ],
        "env": {ctx.env_var(s, l): [l, s] for s in ctx.species for l in ctx.locs},
        "pools": {s: ctx.pool_var(s) for s in ctx.pool_of},
        "replicator_scope": {s: ctx.pool_of[s][0].scope if ctx.pool_of[s] else ctx.scope for s in ctx.pool_of},
        "counters": {k: v for k, v in sorted(ctx.counter_info.items()) if k in ctx.counters},
        "dynamic": sorted([sp, n, loc] for sp, n, loc in ctx.dynamic_positions),
    }


def _reward_blocks(ctx: GenContext, em: _Emitter, channels) -> list[str]:
    out = ["", 'rewards "ticks"', "  [tick] true : 1;", "endrewards", "", 'rewards "pop"']
    pop = "+".join(ctx.env_var(s, l) for s in ctx.species for l in ctx.locs)
    out += [f"  true : {pop};", "endrewards"]
    for chan in channels:
        ident = _ident(chan)
        for m in ctx.modules:
            labels = []
            for c in em.cmds[m.index]:
                lab = c.label
                if lab.startswith(f"{ident}_{m.index}_") or lab in (f"{ident}_{m.index}", f"{ident}bar_{m.index}"):
                    if lab not in labels:
                        labels.append(lab)
            if not labels:
                continue
            out += ["", f'rewards "{ident}{m.index}"']
            out += [f"  [{lab}] true : 1;" for lab in labels]
            out.append("endrewards")
    return out


# ---------------------------------------------------------------- properties


def _pred_prism(ctx_model: Model, locs, pred, env_var) -> str:
    writer = _ExprWriter(ctx_model, locs, env_var)
    return writer.boolean(pred, None)


def props_text(model: Model, queries) -> str:
    """PRISM property file for queries in the analysis mini-language.
    Predicates are rewritten over the count variables; bounds are copied
    verbatim although the calculus counts ticks where PRISM counts steps."""
    from .analysis import parse_query

    locs = list(model.habitat.locations)

    def env_var(s, l):
        return f"{_ident(s)}_{_ident(l)}"

    lines = ["// bounds count ticks in the calculus and steps in PRISM"]
    for q in queries:
        parsed = parse_query(q, model)
        lines.append(parsed.to_prism(lambda p: _pred_prism(model, locs, p, env_var)))
    return "\n".join(lines) + "\n"


__all__ = ["Emitted", "GenContext", "UnsupportedTerm", "emit_model", "props_text", "updates_expr"]
