"""Operational semantics: configurations, nondeterministic and probabilistic
steps, and the policy-pruned (prioritized) step relation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Optional

from .expr import Bottom, Environment, env_add, env_merge, env_remove, eval_bool
from .model import (
    GO,
    TICK,
    Cond,
    ConstRef,
    Go,
    In,
    Label,
    Located,
    Model,
    ModelError,
    Nil,
    NSum,
    Out,
    Parallel,
    Policy,
    PSum,
    Restrict,
    SpeciesProc,
    Tick,
    Uniform,
    bind_neighbor,
)


@dataclass(frozen=True)
class Individual:
    id: int
    species: str
    loc: str
    term: object
    scope: int = 0


@dataclass(frozen=True)
class Replicator:
    species: str
    remaining: int
    scope: int = 0


@dataclass(frozen=True)
class Configuration:
    env: Environment
    individuals: tuple[Individual, ...]
    replicators: tuple[Replicator, ...] = ()
    next_id: int = 0

    def individual(self, ident: int) -> Individual:
        for ind in self.individuals:
            if ind.id == ident:
                return ind
        raise KeyError(ident)


@dataclass(frozen=True)
class NondetStep:
    label: Label
    next: Configuration
    participants: frozenset


@dataclass(frozen=True)
class ProbStep:
    weight: Fraction
    next: Configuration


class ConfigurationError(RuntimeError):
    """Evaluating a configuration failed (e.g. a missing attribute in a guard)."""


# Heads are what an individual can immediately do in the current environment.
_NIL = ("nil",)
_STUCK = ("stuck",)


@dataclass
class _Candidate:
    label: Label
    participants: tuple
    build: Callable[[], Configuration]


class Engine:
    """Semantics of one model. Stateless apart from caches, so it may be
    shared by threads."""

    def __init__(self, model: Model):
        self.model = model
        self.habitat = model.habitat
        self.attrs = model.attributes
        self._species = {s.name: s for s in model.species}
        self._nb = {l: model.habitat.nb(l) for l in model.habitat.locations}
        self._nbset = model.habitat.neighbors
        # scope 0 is the top level; each Restrict node opens a new scope
        self.scopes: list[tuple[Optional[int], frozenset]] = [(None, frozenset())]
        self._initial = self._build_initial()
        self._chains = [self._chain(i) for i in range(len(self.scopes))]
        self._term_key = lru_cache(maxsize=None)(self._term_key_uncached)
        self._unfold = lru_cache(maxsize=None)(self._unfold_uncached)

    # -- set-up
    def _chain(self, scope: int) -> tuple[int, ...]:
        out = []
        s = scope
        while s is not None:
            out.append(s)
            s = self.scopes[s][0]
        return tuple(out)

    def _build_initial(self) -> Configuration:
        inds: list[Individual] = []
        reps: list[Replicator] = []
        env: dict = {}

        def visit(s, scope):
            if isinstance(s, Restrict):
                self.scopes.append((scope, frozenset(s.channels)))
                visit(s.inner, len(self.scopes) - 1)
            elif isinstance(s, Parallel):
                for item in s.items:
                    visit(item, scope)
            elif isinstance(s, Located):
                for _ in range(s.count):
                    inds.append(Individual(len(inds), s.species, s.loc, s.term, scope))
                    if not self.model.is_nil(s.species, s.term):
                        env[(s.loc, s.species)] = env.get((s.loc, s.species), 0) + 1
            elif isinstance(s, SpeciesProc):
                reps.append(Replicator(s.species, self._species[s.species].bound, scope))
            else:
                raise ModelError(f"unexpected system term {s!r}")

        visit(self.model.system, 0)
        return Configuration(Environment(env), tuple(inds), tuple(reps), len(inds))

    def initial(self) -> Configuration:
        return self._initial

    # -- terms
    def _unfold_uncached(self, species, term):
        return self.model.unfold(species, term)

    def is_nil(self, species, term) -> bool:
        return isinstance(self._unfold(species, term), Nil)

    def _term_key_uncached(self, species, term) -> str:
        from .parser import format_term

        return format_term(self._unfold(species, term))

    def term_key(self, species, term) -> str:
        return self._term_key(species, term)

    def head(self, ind: Individual, env: Environment):
        return self._head(ind.species, ind.term, ind.loc, env)

    def _head(self, species, term, loc, env):
        t = self._unfold(species, term)
        if isinstance(t, Nil):
            return _NIL
        if isinstance(t, NSum):
            return ("nsum", t.branches)
        if isinstance(t, PSum):
            return ("psum", t.branches)
        if isinstance(t, Uniform):
            nbs = self._nb[loc]
            if not nbs:
                return _STUCK
            w = Fraction(1, len(nbs))
            return ("psum", tuple((w, bind_neighbor(t.body, l)) for l in nbs))
        if isinstance(t, Cond):
            for guard, branch in t.branches:
                try:
                    ok = eval_bool(env, self.attrs, guard, loc)
                except (LookupError, ArithmeticError) as exc:
                    raise ConfigurationError(f"cannot evaluate guard at {loc}: {exc}") from exc
                if ok:
                    return self._head(species, branch, loc, env)
            return _STUCK
        raise ModelError(f"unexpected process term {t!r}")

    # -- visibility of channels across restriction scopes
    def visible(self, scope: int, channel: str) -> bool:
        return not any(channel in self.scopes[s][1] for s in self._chains[scope])

    def can_sync(self, s1: int, s2: int, channel: str) -> bool:
        c1, c2 = self._chains[s1], self._chains[s2]
        common = set(c1) & set(c2)
        for chain in (c1, c2):
            for s in chain:
                if s in common:
                    break
                if channel in self.scopes[s][1]:
                    return False
        return True

    # -- environment updates for a single individual
    def _moved(self, env: Environment, ind: Individual, cont, dest=None) -> dict:
        """Environment delta for ``ind`` continuing as ``cont`` (at ``dest``)."""
        delta: dict = {}
        here = ind.loc
        if dest is not None and dest != here:
            delta[(here, ind.species)] = -1
            delta[(dest, ind.species)] = delta.get((dest, ind.species), 0) + 1
            here = dest
        if self.is_nil(ind.species, cont):
            delta[(here, ind.species)] = delta.get((here, ind.species), 0) - 1
        return delta

    @staticmethod
    def _add(d1: dict, d2: dict) -> dict:
        out = dict(d1)
        for k, v in d2.items():
            out[k] = out.get(k, 0) + v
        return out

    def _finish(self, c: Configuration, delta: dict, changed: dict, new=(), reps=None, next_id=None):
        env = c.env.apply(delta)
        inds = []
        reps = list(reps if reps is not None else c.replicators)
        for ind in c.individuals:
            ind = changed.get(ind.id, ind)
            inds.append(ind)
        inds.extend(new)
        # recycling species hand terminated individuals back to their pool
        kept = []
        for ind in inds:
            sp = self._species[ind.species]
            if sp.recycle and self.is_nil(ind.species, ind.term):
                for i, r in enumerate(reps):
                    if r.species == ind.species and r.scope == ind.scope:
                        reps[i] = Replicator(r.species, r.remaining + 1, r.scope)
                        break
                else:
                    kept.append(ind)
                    continue
                continue
            kept.append(ind)
        return Configuration(env, tuple(kept), tuple(reps), c.next_id if next_id is None else next_id)

    # -- probabilistic steps
    def prob_components(self, c: Configuration):
        """[(individual, branches)] for every individual at a probabilistic choice."""
        out = []
        for ind in c.individuals:
            h = self.head(ind, c.env)
            if h[0] == "psum":
                out.append((ind, h[1]))
        return out

    def prob_steps(self, c: Configuration) -> list[ProbStep]:
        comps = self.prob_components(c)
        if not comps:
            return []
        steps = []
        for combo in itertools.product(*(b for _, b in comps)):
            weight = Fraction(1)
            delta: dict = {}
            changed = {}
            for (ind, _), (p, cont) in zip(comps, combo):
                weight *= p
                delta = self._add(delta, self._moved(c.env, ind, cont))
                changed[ind.id] = Individual(ind.id, ind.species, ind.loc, cont, ind.scope)
            steps.append(ProbStep(weight, self._finish(c, delta, changed)))
        return steps

    def sample_prob_step(self, c: Configuration, comps, rng) -> Configuration:
        delta: dict = {}
        changed = {}
        for ind, branches in comps:
            r = rng.random()
            acc = 0.0
            cont = branches[-1][1]
            for p, t in branches:
                acc += float(p)
                if r < acc:
                    cont = t
                    break
            delta = self._add(delta, self._moved(c.env, ind, cont))
            changed[ind.id] = Individual(ind.id, ind.species, ind.loc, cont, ind.scope)
        return self._finish(c, delta, changed)

    # -- nondeterministic steps
    def candidates(self, c: Configuration, heads=None) -> list[_Candidate]:
        """Unprioritized nondeterministic steps with lazily built successors.
        Empty when some component is probabilistic."""
        env = c.env
        if heads is None:
            heads = [(ind, self.head(ind, env)) for ind in c.individuals]
        if any(h[0] == "psum" for _, h in heads):
            return []
        out: list[_Candidate] = []
        outputs, inputs = [], []
        tick_options = []
        all_tick = True
        for ind, h in heads:
            kind = h[0]
            if kind == "nil":
                if self.is_nil(ind.species, ind.term):
                    tick_options.append((ind, ((None, ind.term),)))
                else:
                    # a guard selected 0: terminate at the tick
                    tick_options.append((ind, (("drop", Nil()),)))
                continue
            if kind == "stuck":
                all_tick = False
                continue
            ticks = []
            for pre, cont in h[1]:
                if isinstance(pre, Tick):
                    ticks.append((pre, cont))
                elif isinstance(pre, Go):
                    if (ind.loc, pre.target) in self._nbset:
                        out.append(self._go(c, ind, pre.target, cont))
                elif isinstance(pre, In):
                    inputs.append((ind, pre.channel, cont))
                    if self.visible(ind.scope, pre.channel):
                        out.append(self._solo(c, ind, Label("in", pre.channel, ind.loc, ind.species), cont))
                elif isinstance(pre, Out):
                    outputs.append((ind, pre.channel, cont))
                    if self.visible(ind.scope, pre.channel):
                        out.append(self._solo(c, ind, Label("out", pre.channel, ind.loc, ind.species), cont))
            if ticks:
                tick_options.append((ind, tuple(ticks)))
            else:
                all_tick = False
        for x, chan, xcont in outputs:
            for y, ychan, ycont in inputs:
                if y.id != x.id and ychan == chan and y.loc == x.loc and self.can_sync(x.scope, y.scope, chan):
                    out.append(self._sync(c, x, xcont, y, ycont, chan))
            for ri, r in enumerate(c.replicators):
                if r.remaining > 0 and self._species[r.species].rep_channel == chan and self.can_sync(x.scope, r.scope, chan):
                    out.append(self._rep(c, x, xcont, ri, r, chan))
        if all_tick:
            for combo in itertools.product(*(opts for _, opts in tick_options)):
                out.append(self._tick(c, [ind for ind, _ in tick_options], combo))
        return out

    def _go(self, c, ind, dest, cont):
        def build():
            d = self._moved(c.env, ind, cont, dest)
            return self._finish(c, d, {ind.id: Individual(ind.id, ind.species, dest, cont, ind.scope)})

        return _Candidate(Label("tau", GO, ind.loc, ind.species), (ind.id,), build)

    def _solo(self, c, ind, label, cont):
        def build():
            d = self._moved(c.env, ind, cont)
            return self._finish(c, d, {ind.id: Individual(ind.id, ind.species, ind.loc, cont, ind.scope)})

        return _Candidate(label, (ind.id,), build)

    def _sync(self, c, x, xcont, y, ycont, chan):
        def build():
            d = self._add(self._moved(c.env, x, xcont), self._moved(c.env, y, ycont))
            changed = {
                x.id: Individual(x.id, x.species, x.loc, xcont, x.scope),
                y.id: Individual(y.id, y.species, y.loc, ycont, y.scope),
            }
            return self._finish(c, d, changed)

        return _Candidate(Label("tau", chan, x.loc, x.species), (x.id, y.id), build)

    def _rep(self, c, x, xcont, ri, r, chan):
        def build():
            body = ConstRef(self._species[r.species].init)
            child = Individual(c.next_id, r.species, x.loc, body, r.scope)
            d = self._moved(c.env, x, xcont)
            if not self.is_nil(r.species, body):
                d = self._add(d, {(x.loc, r.species): 1})
            reps = list(c.replicators)
            reps[ri] = Replicator(r.species, r.remaining - 1, r.scope)
            changed = {x.id: Individual(x.id, x.species, x.loc, xcont, x.scope)}
            return self._finish(c, d, changed, new=(child,), reps=reps, next_id=c.next_id + 1)

        return _Candidate(Label("tau", chan, x.loc, x.species), (x.id,), build)

    def _tick(self, c, inds, combo):
        def build():
            delta: dict = {}
            changed = {}
            for ind, (pre, cont) in zip(inds, combo):
                if pre is None:
                    continue  # rule (Nil): unchanged
                delta = self._add(delta, self._moved(c.env, ind, cont))
                changed[ind.id] = Individual(ind.id, ind.species, ind.loc, cont, ind.scope)
            return self._finish(c, delta, changed)

        return _Candidate(TICK, tuple(ind.id for ind in c.individuals), build)

    def nondet_steps(self, c: Configuration) -> list[NondetStep]:
        return [NondetStep(k.label, k.build(), frozenset(k.participants)) for k in self.candidates(c)]

    def prioritized_candidates(self, c: Configuration, policy: Policy, heads=None) -> list[_Candidate]:
        cands = self.candidates(c, heads)
        if not policy.pairs or not cands:
            return cands
        enabled = {k.label for k in cands}
        return [k for k in cands if not (policy.higher_than(k.label) & enabled)]

    def prioritized_steps(self, c: Configuration, policy: Policy) -> list[NondetStep]:
        return [
            NondetStep(k.label, k.build(), frozenset(k.participants))
            for k in self.prioritized_candidates(c, policy)
        ]

    def compatible(self, c: Configuration) -> bool:
        return compatible(c.env, c.individuals, self)


def compatible(env: Environment, individuals, engine: Engine) -> bool:
    counts: dict = {}
    for ind in individuals:
        if not engine.is_nil(ind.species, ind.term):
            counts[(ind.loc, ind.species)] = counts.get((ind.loc, ind.species), 0) + 1
    return dict(env.items()) == counts


def initial_configuration(model: Model) -> Configuration:
    return Engine(model).initial()


__all__ = [
    "Bottom",
    "Configuration",
    "ConfigurationError",
    "Engine",
    "Individual",
    "NondetStep",
    "ProbStep",
    "Replicator",
    "compatible",
    "env_add",
    "env_merge",
    "env_remove",
    "initial_configuration",
]
