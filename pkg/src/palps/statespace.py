"""Breadth-first exploration of a step relation into a finite MDP."""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Hashable, Optional

from .model import Model, Policy
from .semantics import Configuration, Engine

PROB = "prob"


class LimitExceeded(RuntimeError):
    def __init__(self, mdp: "Mdp", reason: str):
        self.mdp = mdp
        self.reason = reason
        super().__init__(f"exploration truncated: {reason}")


@dataclass(frozen=True)
class ExploreLimits:
    max_states: int = 1_000_000
    max_depth: Optional[int] = None
    time_budget: Optional[float] = None  # seconds

    def __post_init__(self):
        for v in (self.max_states, self.max_depth, self.time_budget):
            if v is not None and v <= 0:
                raise ValueError("limits must be positive")


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("PALPS_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class Mdp:
    keys: list
    configs: list
    initial: int
    choices: list  # per state: [(label, ((Fraction, succ), ...)), ...]
    env_of: Callable = field(repr=False, default=None)
    truncated_states: frozenset = frozenset()
    truncation_reason: str = ""

    @property
    def truncated(self) -> bool:
        return bool(self.truncated_states)

    def __len__(self):
        return len(self.keys)

    def env(self, i):
        return self.env_of(self.configs[i])

    def index(self, key) -> Optional[int]:
        if not hasattr(self, "_index"):
            self._index = {k: i for i, k in enumerate(self.keys)}
        return self._index.get(key)


def explore(initial, key_fn, successors, limits: ExploreLimits = ExploreLimits(), threads: int = 1, env_of=None) -> Mdp:
    """``successors(config)`` returns ``[(label, [(prob, config), ...]), ...]``.
    Layers are expanded in order; successor computation may run on a thread
    pool but indices are always assigned sequentially, so results do not
    depend on ``threads``."""
    started = time.monotonic()
    keys = [key_fn(initial)]
    configs = [initial]
    index = {keys[0]: 0}
    choices: list = [None]
    frontier = [0]
    depth = 0
    reason = ""

    def expand(i):
        out = []
        for label, dist in successors(configs[i]):
            out.append((label, [(p, key_fn(c), c) for p, c in dist]))
        return out

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        while frontier:
            if limits.max_depth is not None and depth >= limits.max_depth:
                reason = f"depth limit {limits.max_depth}"
                break
            if limits.time_budget is not None and time.monotonic() - started > limits.time_budget:
                reason = f"time budget {limits.time_budget}s"
                break
            results = list(pool.map(expand, frontier)) if pool else [expand(i) for i in frontier]
            nxt = []
            full = False
            for i, res in zip(frontier, results):
                seen_choices = set()
                state_choices = []
                for label, dist in res:
                    merged: dict = {}
                    for p, k, c in dist:
                        j = index.get(k)
                        if j is None:
                            if len(keys) >= limits.max_states:
                                full = True
                                break
                            j = len(keys)
                            index[k] = j
                            keys.append(k)
                            configs.append(c)
                            choices.append(None)
                            nxt.append(j)
                        merged[j] = merged.get(j, 0) + p
                    if full:
                        break
                    d = tuple(sorted(merged.items()))
                    d = tuple((p, j) for j, p in d)
                    if (label, d) not in seen_choices:
                        seen_choices.add((label, d))
                        state_choices.append((label, d))
                if full:
                    reason = f"state limit {limits.max_states}"
                    break
                choices[i] = state_choices
            if full:
                break
            frontier = nxt
            depth += 1
    finally:
        if pool:
            pool.shutdown()
    truncated = frozenset(i for i, ch in enumerate(choices) if ch is None)
    choices = [ch if ch is not None else [] for ch in choices]
    return Mdp(keys, configs, 0, choices, env_of, truncated, reason if truncated else "")


# --------------------------------------------------------------------------
# PALPS configurations


def canonicalize(engine: Engine, c: Configuration):
    """Key invariant under component order and individual identities."""
    inds = tuple(sorted((i.species, i.loc, engine.term_key(i.species, i.term), i.scope) for i in c.individuals))
    reps = tuple(sorted((r.species, r.remaining, r.scope) for r in c.replicators))
    return (c.env.triples(), inds, reps)


def palps_successors(engine: Engine, policy: Policy):
    def successors(c: Configuration):
        probs = engine.prob_steps(c)
        if probs:
            return [(PROB, [(s.weight, s.next) for s in probs])]
        return [(k.label, [(Fraction(1), k.build())]) for k in engine.prioritized_candidates(c, policy)]

    return successors


def build_mdp(
    model: Model,
    policy: Optional[Policy] = None,
    limits: ExploreLimits = ExploreLimits(),
    threads: int = 1,
    engine: Optional[Engine] = None,
) -> Mdp:
    engine = engine or Engine(model)
    policy = model.policy() if policy is None else policy
    return explore(
        engine.initial(),
        lambda c: canonicalize(engine, c),
        palps_successors(engine, policy),
        limits,
        threads,
        env_of=lambda c: c.env,
    )


def stats(mdp: Mdp) -> dict:
    n_choices = sum(len(ch) for ch in mdp.choices)
    n_trans = sum(len(d) for ch in mdp.choices for _, d in ch)
    return {"states": len(mdp), "choices": n_choices, "transitions": n_trans, "truncated": mdp.truncated}


def _fmt_prob(p) -> str:
    p = Fraction(p)
    return str(p.numerator) if p.denominator == 1 else f"{p.numerator}/{p.denominator}"


def mdp_to_json(mdp: Mdp) -> dict:
    states = []
    for i in range(len(mdp)):
        env = mdp.env(i)
        states.append(
            {
                "id": i,
                "counts": {f"{l}:{s}": n for (l, s), n in env.items()},
                "truncated": i in mdp.truncated_states,
                "choices": [
                    {"label": str(label), "distribution": [[_fmt_prob(p), j] for p, j in dist]}
                    for label, dist in mdp.choices[i]
                ],
            }
        )
    return {"initial": mdp.initial, "stats": stats(mdp), "states": states}


def dump_mdp(mdp: Mdp, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(mdp_to_json(mdp), fh, indent=1)
        fh.write("\n")
