"""Environments and evaluation of logical/arithmetic expressions."""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Mapping

from .model import (
    ALL,
    MYLOC,
    And,
    AttrAt,
    AttributeTable,
    Binary,
    BTrue,
    Compare,
    Const,
    CountAt,
    Not,
    TotalAt,
    Unary,
)


class MissingAttribute(LookupError):
    def __init__(self, attr, loc):
        self.attr, self.loc = attr, loc
        super().__init__(f"attribute {attr!r} has no value at {loc!r}")


class Bottom(ArithmeticError):
    """An environment count would become negative."""


class Environment:
    """Immutable multiset of (location, species) -> positive count."""

    __slots__ = ("_counts", "_hash")

    def __init__(self, counts: Mapping | Iterable = ()):
        items = dict(counts)
        for k, v in items.items():
            if v < 1:
                raise ValueError(f"non-positive count {v} for {k}")
        self._counts = dict(sorted(items.items()))
        self._hash = None

    @classmethod
    def from_triples(cls, triples):
        return cls({(l, s): n for l, s, n in triples})

    def count(self, loc, species) -> int:
        return self._counts.get((loc, species), 0)

    def total(self, loc) -> int:
        return sum(n for (l, _), n in self._counts.items() if l == loc)

    def items(self):
        return self._counts.items()

    def triples(self):
        return tuple((l, s, n) for (l, s), n in self._counts.items())

    def add(self, species, loc) -> "Environment":
        c = dict(self._counts)
        c[(loc, species)] = c.get((loc, species), 0) + 1
        return Environment(c)

    def remove(self, species, loc) -> "Environment":
        n = self._counts.get((loc, species), 0)
        if n == 0:
            raise Bottom(f"no individual of {species!r} at {loc!r} to remove")
        c = dict(self._counts)
        if n == 1:
            del c[(loc, species)]
        else:
            c[(loc, species)] = n - 1
        return Environment(c)

    def apply(self, delta: Mapping) -> "Environment":
        c = dict(self._counts)
        for k, d in delta.items():
            v = c.get(k, 0) + d
            if v < 0:
                raise Bottom(f"count for {k} would be {v}")
            if v == 0:
                c.pop(k, None)
            else:
                c[k] = v
        return Environment(c)

    def delta_from(self, base: "Environment") -> dict:
        keys = set(self._counts) | set(base._counts)
        return {k: self._counts.get(k, 0) - base._counts.get(k, 0) for k in keys}

    def __eq__(self, other):
        return isinstance(other, Environment) and self._counts == other._counts

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(tuple(self._counts.items()))
        return self._hash

    def __len__(self):
        return len(self._counts)

    def __repr__(self):
        inner = ", ".join(f"({l},{s},{n})" for (l, s), n in self._counts.items())
        return "{" + inner + "}"


def env_add(E: Environment, species, loc) -> Environment:
    return E.add(species, loc)


def env_remove(E: Environment, species, loc) -> Environment:
    return E.remove(species, loc)


def env_merge(E: Environment, E1: Environment, E2: Environment) -> Environment:
    """Apply both environment changes made by two simultaneous transitions."""
    d1, d2 = E1.delta_from(E), E2.delta_from(E)
    delta = {k: d1.get(k, 0) + d2.get(k, 0) for k in set(d1) | set(d2)}
    return E.apply(delta)


def _loc(loc, here):
    return here if loc == MYLOC else loc


def eval_arith(E: Environment, A: AttributeTable, w, here=None, species=()) -> Fraction:
    """``species`` is only consulted for ``@*`` style totals; per-location
    totals sum whatever the environment holds, which is the same thing."""
    if isinstance(w, Const):
        return w.value
    if isinstance(w, AttrAt):
        loc = _loc(w.loc, here)
        v = A.get(w.attr, loc)
        if v is None:
            raise MissingAttribute(w.attr, loc)
        return v
    if isinstance(w, CountAt):
        if w.loc == ALL:
            return Fraction(sum(n for (l, s), n in E.items() if s == w.species))
        return Fraction(E.count(_loc(w.loc, here), w.species))
    if isinstance(w, TotalAt):
        if w.loc == ALL:
            return Fraction(sum(n for _, n in E.items()))
        return Fraction(E.total(_loc(w.loc, here)))
    if isinstance(w, Unary):
        v = eval_arith(E, A, w.arg, here)
        return -v if w.op == "-" else abs(v)
    if isinstance(w, Binary):
        a = eval_arith(E, A, w.left, here)
        b = eval_arith(E, A, w.right, here)
        if w.op == "+":
            return a + b
        if w.op == "-":
            return a - b
        if w.op == "*":
            return a * b
        if w.op == "/":
            if b == 0:
                raise ZeroDivisionError("division by zero in arithmetic expression")
            return a / b
        if w.op == "min":
            return min(a, b)
        if w.op == "max":
            return max(a, b)
    raise TypeError(f"not an arithmetic expression: {w!r}")


def eval_bool(E: Environment, A: AttributeTable, e, here=None) -> bool:
    if isinstance(e, BTrue):
        return True
    if isinstance(e, Not):
        return not eval_bool(E, A, e.arg, here)
    if isinstance(e, And):
        return eval_bool(E, A, e.left, here) and eval_bool(E, A, e.right, here)
    if isinstance(e, Compare):
        v = eval_arith(E, A, e.expr, here)
        if e.op == "=":
            return v == e.value
        if e.op == "<=":
            return v <= e.value
        if e.op == ">=":
            return v >= e.value
        raise ValueError(f"unknown comparison {e.op!r}")
    raise TypeError(f"not a logical expression: {e!r}")


def substitute_myloc(x, here):
    """Replace myloc by ``here`` throughout an expression."""
    from dataclasses import fields, is_dataclass, replace

    if not is_dataclass(x):
        return x
    changes = {}
    for f in fields(x):
        v = getattr(x, f.name)
        if f.name == "loc" and v == MYLOC:
            changes[f.name] = here
        elif is_dataclass(v):
            changes[f.name] = substitute_myloc(v, here)
    return replace(x, **changes) if changes else x
