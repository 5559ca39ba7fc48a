"""Abstract syntax for PALPS models: habitat, expressions, process terms,
species, systems, action labels and policies, plus static validation."""

from __future__ import annotations

import itertools
from functools import cached_property
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Optional, Union

MYLOC = "myloc"
ALL = "*"  # all locations; only meaningful in analysis predicates
NB = "nb"  # the neighbour bound by an enclosing ``uniform nb(myloc)``
GO = "go"
PROB_TOL = Fraction(1, 10**9)


class ModelError(ValueError):
    pass


class CycleError(ModelError):
    """A policy whose transitive closure relates some action to itself."""

    def __init__(self, cycle):
        self.cycle = tuple(cycle)
        super().__init__("policy is cyclic: " + " < ".join(str(l) for l in self.cycle))


# --------------------------------------------------------------------------
# habitat and attributes


@dataclass(frozen=True)
class Habitat:
    locations: tuple[str, ...]
    neighbors: frozenset[tuple[str, str]]

    @classmethod
    def build(cls, locations: Iterable[str], pairs: Iterable[tuple[str, str]]) -> "Habitat":
        """Symmetric closure of ``pairs`` over the given locations."""
        nb = set()
        for a, b in pairs:
            nb.add((a, b))
            nb.add((b, a))
        return cls(tuple(locations), frozenset(nb))

    def nb(self, loc: str) -> tuple[str, ...]:
        # declaration order keeps every downstream enumeration stable
        return tuple(l for l in self.locations if (loc, l) in self.neighbors)

    def index(self, loc: str) -> int:
        return self.locations.index(loc) + 1


@dataclass(frozen=True)
class AttributeTable:
    entries: tuple[tuple[tuple[str, str], Fraction], ...] = ()

    @classmethod
    def build(cls, mapping: dict) -> "AttributeTable":
        return cls(tuple(sorted((k, Fraction(v)) for k, v in mapping.items())))

    def get(self, name: str, loc: str) -> Optional[Fraction]:
        for k, v in self.entries:
            if k == (name, loc):
                return v
        return None

    def names(self) -> set[str]:
        return {k[0] for k, _ in self.entries}


# --------------------------------------------------------------------------
# expressions


@dataclass(frozen=True)
class Const:
    value: Fraction


@dataclass(frozen=True)
class AttrAt:
    attr: str
    loc: str


@dataclass(frozen=True)
class CountAt:
    species: str
    loc: str


@dataclass(frozen=True)
class TotalAt:
    loc: str


@dataclass(frozen=True)
class Unary:
    op: str  # "-" | "abs"
    arg: "ArithExpr"


@dataclass(frozen=True)
class Binary:
    op: str  # "+" | "-" | "*" | "/" | "min" | "max"
    left: "ArithExpr"
    right: "ArithExpr"


ArithExpr = Union[Const, AttrAt, CountAt, TotalAt, Unary, Binary]


@dataclass(frozen=True)
class BTrue:
    pass


@dataclass(frozen=True)
class Not:
    arg: "BoolExpr"


@dataclass(frozen=True)
class And:
    left: "BoolExpr"
    right: "BoolExpr"


@dataclass(frozen=True)
class Compare:
    expr: ArithExpr
    op: str  # "=" | "<=" | ">="
    value: Fraction


BoolExpr = Union[BTrue, Not, And, Compare]

COMPARE_OPS = ("=", "<=", ">=")


def arith_children(w) -> tuple:
    if isinstance(w, Unary):
        return (w.arg,)
    if isinstance(w, Binary):
        return (w.left, w.right)
    return ()


def walk_arith(w) -> Iterator:
    yield w
    for c in arith_children(w):
        yield from walk_arith(c)


def walk_bool(e) -> Iterator:
    """Every arithmetic leaf reachable from a logical expression."""
    if isinstance(e, Not):
        yield from walk_bool(e.arg)
    elif isinstance(e, And):
        yield from walk_bool(e.left)
        yield from walk_bool(e.right)
    elif isinstance(e, Compare):
        yield from walk_arith(e.expr)


def env_dependent(e) -> bool:
    return any(isinstance(w, (CountAt, TotalAt)) for w in walk_bool(e))


# --------------------------------------------------------------------------
# process terms


@dataclass(frozen=True)
class In:
    channel: str


@dataclass(frozen=True)
class Out:
    channel: str


@dataclass(frozen=True)
class Go:
    target: str  # a location, or NB inside a uniform dispersal body


@dataclass(frozen=True)
class Tick:
    pass


Prefix = Union[In, Out, Go, Tick]


@dataclass(frozen=True)
class Nil:
    pass


@dataclass(frozen=True)
class NSum:
    branches: tuple[tuple[Prefix, "ProcessTerm"], ...]


@dataclass(frozen=True)
class PSum:
    branches: tuple[tuple[Fraction, "ProcessTerm"], ...]


@dataclass(frozen=True)
class Cond:
    branches: tuple[tuple[BoolExpr, "ProcessTerm"], ...]


@dataclass(frozen=True)
class ConstRef:
    name: str


@dataclass(frozen=True)
class Uniform:
    """Equiprobable choice of a neighbour of the current location; ``go nb``
    inside ``body`` refers to the chosen neighbour."""

    body: "ProcessTerm"


ProcessTerm = Union[Nil, NSum, PSum, Cond, ConstRef, Uniform]


def prefixed(prefix, cont) -> NSum:
    return NSum(((prefix, cont),))


def term_children(t) -> tuple:
    if isinstance(t, NSum):
        return tuple(c for _, c in t.branches)
    if isinstance(t, (PSum, Cond)):
        return tuple(c for _, c in t.branches)
    if isinstance(t, Uniform):
        return (t.body,)
    return ()


def walk_term(t) -> Iterator:
    yield t
    for c in term_children(t):
        yield from walk_term(c)


def bind_neighbor(t, target: str):
    """Substitute ``target`` for ``nb`` in go prefixes not under a nested Uniform."""
    if isinstance(t, NSum):
        return NSum(
            tuple(
                (Go(target) if isinstance(p, Go) and p.target == NB else p, bind_neighbor(c, target))
                for p, c in t.branches
            )
        )
    if isinstance(t, PSum):
        return PSum(tuple((p, bind_neighbor(c, target)) for p, c in t.branches))
    if isinstance(t, Cond):
        return Cond(tuple((e, bind_neighbor(c, target)) for e, c in t.branches))
    return t


# --------------------------------------------------------------------------
# species and systems


@dataclass(frozen=True)
class SpeciesDef:
    name: str
    processes: tuple[tuple[str, ProcessTerm], ...]
    init: str
    bound: int = 0
    rep_channel: str = "rep"
    recycle: bool = False

    def definition(self, name: str) -> Optional[ProcessTerm]:
        for n, t in self.processes:
            if n == name:
                return t
        return None


@dataclass(frozen=True)
class Located:
    term: ProcessTerm
    species: str
    loc: str
    count: int = 1


@dataclass(frozen=True)
class SpeciesProc:
    species: str


@dataclass(frozen=True)
class Parallel:
    items: tuple["SystemTerm", ...]


@dataclass(frozen=True)
class Restrict:
    inner: "SystemTerm"
    channels: frozenset[str]


SystemTerm = Union[Located, SpeciesProc, Parallel, Restrict]


def walk_system(s) -> Iterator:
    yield s
    if isinstance(s, Parallel):
        for i in s.items:
            yield from walk_system(i)
    elif isinstance(s, Restrict):
        yield from walk_system(s.inner)


# --------------------------------------------------------------------------
# action labels and policies


@dataclass(frozen=True, order=True)
class Label:
    kind: str  # "in" | "out" | "tau" | "tick"
    channel: str = ""
    loc: str = ""
    species: str = ""

    def __str__(self):
        if self.kind == "tick":
            return "tick"
        return f"{self.kind}({self.channel}, {self.loc}, {self.species})"


TICK = Label("tick")


def is_wild(x: str) -> bool:
    return x == "*" or x.startswith("$")


@dataclass(frozen=True)
class PolicyPattern:
    lower: Label
    higher: Label


@dataclass(frozen=True)
class Policy:
    pairs: frozenset[tuple[Label, Label]] = frozenset()
    patterns: tuple[PolicyPattern, ...] = ()

    @cached_property
    def _above(self) -> dict:
        idx: dict = {}
        for l, h in self.pairs:
            idx.setdefault(l, set()).add(h)
        return idx

    def higher_than(self, label: Label) -> set[Label]:
        return self._above.get(label, set())

    def dominated(self) -> set[Label]:
        return set(self._above)

    def __len__(self):
        return len(self.pairs)

    def __contains__(self, pair):
        return pair in self.pairs


def policy_closure(raw: Iterable[tuple[Label, Label]], patterns=()) -> Policy:
    """Transitive closure of ``raw``; raises CycleError on (a, a) pairs."""
    pairs = set(raw)
    for l, h in pairs:
        if l == TICK and h == TICK:
            raise CycleError([l, h])
    succ: dict = {}
    for l, h in pairs:
        succ.setdefault(l, set()).add(h)
    closed = set()
    for start in list(succ):
        # DFS keeping parents so a cycle can be reported
        parent = {start: None}
        stack = [start]
        while stack:
            x = stack.pop()
            for y in sorted(succ.get(x, ())):
                if y == start:
                    path = [y]
                    z = x
                    while z is not None:
                        path.append(z)
                        z = parent[z]
                    raise CycleError(list(reversed(path)))
                if y not in parent:
                    parent[y] = x
                    stack.append(y)
                closed.add((start, y))
    return Policy(frozenset(closed), tuple(patterns))


def instantiate_wildcards(patterns: Iterable[PolicyPattern], habitat: Habitat, species: Iterable[str]) -> Policy:
    """Expand ``*`` and ``$name`` placeholders. ``*`` in a location slot is one
    shared location variable per pair (likewise for species); ``$name`` slots
    are independent variables."""
    species = tuple(species)
    patterns = tuple(patterns)
    pairs = set()
    for pat in patterns:
        for lab in (pat.lower, pat.higher):
            if lab.kind != "tick":
                if not is_wild(lab.loc) and lab.loc not in habitat.locations:
                    raise ModelError(f"policy references unknown location {lab.loc!r}")
                if not is_wild(lab.species) and lab.species not in species:
                    raise ModelError(f"policy references undeclared species {lab.species!r}")
        loc_vars, sp_vars = [], []
        for lab in (pat.lower, pat.higher):
            if lab.kind == "tick":
                continue
            lv = "*loc" if lab.loc == "*" else lab.loc
            sv = "*sp" if lab.species == "*" else lab.species
            if is_wild(lab.loc) and lv not in loc_vars:
                loc_vars.append(lv)
            if is_wild(lab.species) and sv not in sp_vars:
                sp_vars.append(sv)
        for lvals in itertools.product(habitat.locations, repeat=len(loc_vars)):
            for svals in itertools.product(species, repeat=len(sp_vars)):
                env = dict(zip(loc_vars, lvals))
                env.update(zip(sp_vars, svals))

                def inst(lab):
                    if lab.kind == "tick":
                        return lab
                    loc = env["*loc" if lab.loc == "*" else lab.loc] if is_wild(lab.loc) else lab.loc
                    sp = env["*sp" if lab.species == "*" else lab.species] if is_wild(lab.species) else lab.species
                    return Label(lab.kind, lab.channel, loc, sp)

                pairs.add((inst(pat.lower), inst(pat.higher)))
    return policy_closure(pairs, patterns)


# --------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class Model:
    habitat: Habitat
    attributes: AttributeTable
    channels: tuple[str, ...]
    species: tuple[SpeciesDef, ...]
    system: SystemTerm
    policy_patterns: tuple[PolicyPattern, ...] = ()

    def species_def(self, name: str) -> SpeciesDef:
        for s in self.species:
            if s.name == name:
                return s
        raise KeyError(name)

    def species_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.species)

    def all_channels(self) -> tuple[str, ...]:
        chans = list(self.channels)
        for s in self.species:
            if s.rep_channel not in chans:
                chans.append(s.rep_channel)
        return tuple(chans)

    def policy(self) -> Policy:
        return instantiate_wildcards(self.policy_patterns, self.habitat, self.species_names())

    def with_policy(self, patterns) -> "Model":
        return Model(self.habitat, self.attributes, self.channels, self.species, self.system, tuple(patterns))

    def unfold(self, species: str, t):
        """Follow constant references until a non-constant term."""
        seen = set()
        sp = self.species_def(species)
        while isinstance(t, ConstRef):
            if t.name in seen:
                raise ModelError(f"unguarded recursion through {t.name!r}")
            seen.add(t.name)
            d = sp.definition(t.name)
            if d is None:
                raise ModelError(f"undefined process {t.name!r} in species {species!r}")
            t = d
        return t

    def is_nil(self, species: str, t) -> bool:
        return isinstance(self.unfold(species, t), Nil)

    def restricted_channels(self) -> set[str]:
        out = set()
        for s in walk_system(self.system):
            if isinstance(s, Restrict):
                out |= s.channels
        return out


# --------------------------------------------------------------------------
# validation


@dataclass
class Finding:
    severity: str  # "error" | "warning"
    message: str
    where: str = ""

    def __str__(self):
        loc = f" [{self.where}]" if self.where else ""
        return f"{self.severity}: {self.message}{loc}"


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    @property
    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "error"]

    @property
    def warnings(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def error(self, msg, where=""):
        self.findings.append(Finding("error", msg, where))

    def warn(self, msg, where=""):
        self.findings.append(Finding("warning", msg, where))


def _fmt_frac(x: Fraction) -> str:
    if x.denominator == 1:
        return str(x.numerator)
    return str(float(x)) if len(str(float(x))) < 12 else f"{x.numerator}/{x.denominator}"


def _check_arith(w, m: Model, rep: ValidationReport, where: str, allow_all=False):
    for node in walk_arith(w):
        loc = getattr(node, "loc", None)
        if loc is not None and loc != MYLOC and loc not in m.habitat.locations:
            if not (allow_all and loc == ALL):
                rep.error(f"unknown location {loc!r}", where)
        if isinstance(node, CountAt) and node.species not in m.species_names():
            rep.error(f"unknown species {node.species!r}", where)
        if isinstance(node, AttrAt):
            if node.attr not in m.attributes.names():
                rep.error(f"unknown attribute {node.attr!r}", where)
            else:
                locs = m.habitat.locations if node.loc == MYLOC else (node.loc,)
                for l in locs:
                    if m.attributes.get(node.attr, l) is None:
                        rep.error(f"attribute {node.attr!r} has no value at {l!r}", where)
        if isinstance(node, Unary) and node.op not in ("-", "abs"):
            rep.error(f"unknown unary operator {node.op!r}", where)
        if isinstance(node, Binary) and node.op not in ("+", "-", "*", "/", "min", "max"):
            rep.error(f"unknown binary operator {node.op!r}", where)


def _check_bool(e, m, rep, where, allow_all=False):
    if isinstance(e, Compare):
        if e.op not in COMPARE_OPS:
            rep.error(f"unknown comparison {e.op!r}", where)
        _check_arith(e.expr, m, rep, where, allow_all)
    elif isinstance(e, Not):
        _check_bool(e.arg, m, rep, where, allow_all)
    elif isinstance(e, And):
        _check_bool(e.left, m, rep, where, allow_all)
        _check_bool(e.right, m, rep, where, allow_all)


def _check_term(t, sp: SpeciesDef, m: Model, rep: ValidationReport, where: str, in_uniform=False):
    chans = m.all_channels()
    if isinstance(t, NSum):
        if not t.branches:
            rep.error("empty nondeterministic sum", where)
        for p, c in t.branches:
            if isinstance(p, (In, Out)) and p.channel not in chans:
                rep.error(f"undeclared channel {p.channel!r}", where)
            if isinstance(p, Go):
                if p.target == NB:
                    if not in_uniform:
                        rep.error("'go nb' outside a uniform dispersal", where)
                elif p.target not in m.habitat.locations:
                    rep.error(f"unknown location {p.target!r}", where)
            _check_term(c, sp, m, rep, where, in_uniform)
    elif isinstance(t, PSum):
        if not t.branches:
            rep.error("empty probabilistic sum", where)
        total = sum((p for p, _ in t.branches), Fraction(0))
        for p, c in t.branches:
            if not (0 < p <= 1):
                rep.error(f"probability {_fmt_frac(p)} outside (0,1]", where)
            _check_term(c, sp, m, rep, where, in_uniform)
        if abs(total - 1) > PROB_TOL:
            rep.error(f"probabilities sum to {_fmt_frac(total)}", where)
    elif isinstance(t, Cond):
        if not t.branches:
            rep.error("empty conditional", where)
        for e, c in t.branches:
            _check_bool(e, m, rep, where)
            _check_term(c, sp, m, rep, where, in_uniform)
        if t.branches and not isinstance(t.branches[-1][0], BTrue):
            rep.warn("last guard of cond is not literally true; coverage not checked", where)
    elif isinstance(t, ConstRef):
        if sp.definition(t.name) is None:
            rep.error(f"undefined process {t.name!r}", where)
    elif isinstance(t, Uniform):
        _check_term(t.body, sp, m, rep, where, True)


def validate_model(m: Model) -> ValidationReport:
    rep = ValidationReport()
    hab = m.habitat
    if len(set(hab.locations)) != len(hab.locations):
        rep.error("duplicate location")
    for a, b in sorted(hab.neighbors):
        if a == b:
            rep.error(f"self-loop in neighbour relation at {a!r}")
        if a not in hab.locations or b not in hab.locations:
            rep.error(f"neighbour pair ({a}, {b}) names an unknown location")
        if (b, a) not in hab.neighbors:
            rep.error(f"neighbour relation not symmetric at ({a}, {b})")
    for (name, loc), v in m.attributes.entries:
        if loc not in hab.locations:
            rep.error(f"attribute {name!r} given at unknown location {loc!r}")

    names = [s.name for s in m.species]
    if len(set(names)) != len(names):
        rep.error("duplicate species")
    for sp in m.species:
        if sp.bound < 0:
            rep.error(f"negative replication bound", sp.name)
        defs = [n for n, _ in sp.processes]
        if len(set(defs)) != len(defs):
            rep.error("duplicate process definition", sp.name)
        if sp.definition(sp.init) is None:
            rep.error(f"init process {sp.init!r} undefined", sp.name)
        for n, t in sp.processes:
            _check_term(t, sp, m, rep, f"{sp.name}.{n}")
            try:
                m.unfold(sp.name, t)
            except ModelError as exc:
                rep.error(str(exc), f"{sp.name}.{n}")

    restricted = set()
    procs = set()
    for s in walk_system(m.system):
        if isinstance(s, Located):
            where = f"system {s.species}@{s.loc}"
            if s.count < 1:
                rep.error("multiplicity must be at least 1", where)
            if s.loc not in hab.locations:
                rep.error(f"unknown location {s.loc!r}", where)
            if s.species not in names:
                rep.error(f"unknown species {s.species!r}", where)
            else:
                _check_term(s.term, m.species_def(s.species), m, rep, where)
        elif isinstance(s, SpeciesProc):
            if s.species not in names:
                rep.error(f"unknown species {s.species!r}", "system")
            procs.add(s.species)
        elif isinstance(s, Restrict):
            for c in s.channels:
                if c not in m.all_channels():
                    rep.error(f"restricted channel {c!r} is not declared", "system")
            restricted |= s.channels
    for sname in procs:
        ch = m.species_def(sname).rep_channel
        if ch not in restricted:
            rep.error(f"replication channel {ch!r} of species {sname!r} must be restricted", "system")

    try:
        pol = m.policy()
    except CycleError as exc:
        rep.error(str(exc), "policy")
    except ModelError as exc:
        rep.error(str(exc), "policy")
    else:
        for lo, hi in pol.pairs:
            for lab in (lo, hi):
                if lab.kind in ("in", "out") and lab.channel in restricted:
                    rep.warn(f"{lab} names a restricted channel and can never be enabled", "policy")
                if lab.kind in ("in", "out", "tau") and lab.channel != GO and lab.channel not in m.all_channels():
                    rep.error(f"policy names undeclared channel {lab.channel!r}", "policy")
    return rep
