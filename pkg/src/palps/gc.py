"""Interpreter for the guarded-command subset emitted by :mod:`palps.codegen`.

Used as an oracle: the program's MDP is built with exact rationals, the
bookkeeping steps of the encoding are collapsed by :func:`quotient_stable`
and the result is compared with the calculus MDP state by state.
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from fractions import Fraction
from typing import Callable, Optional

from .statespace import ExploreLimits, Mdp, explore


class GcSyntaxError(ValueError):
    def __init__(self, message, line=0):
        self.line = line
        self.diagnostics = [f"line {line}: {message}"]
        super().__init__(self.diagnostics[0])


class RangeViolation(RuntimeError):
    def __init__(self, variable, value):
        self.variable, self.value = variable, value
        super().__init__(f"{variable} := {value} is outside its declared range")


class ConflictingWrite(RuntimeError):
    def __init__(self, variable, label):
        self.variable = variable
        super().__init__(f"variable {variable} written twice by [{label}]")


class NonConfluentChain(RuntimeError):
    def __init__(self, start, endpoints):
        self.start, self.endpoints = start, endpoints
        super().__init__(f"bookkeeping from state {start} reaches {len(endpoints)} stable states")


# ---------------------------------------------------------------- program


@dataclass
class Variable:
    name: str
    low: int
    high: int
    init: int
    module: Optional[str] = None


@dataclass
class GcCommand:
    module: int
    label: str
    guard_src: str
    guard: Callable = field(repr=False)
    branches: list  # [(Fraction, [(var index, fn)])]
    bucket: Optional[tuple] = None  # (var index, value) when the guard pins it
    line: int = 0


@dataclass
class GcModule:
    name: str
    variables: list
    commands: list = field(default_factory=list)

    @property
    def alphabet(self) -> set:
        return {c.label for c in self.commands if c.label}


@dataclass
class RewardItem:
    label: Optional[str]
    guard: Callable = field(repr=False)
    value: Callable = field(repr=False)


@dataclass
class GcProgram:
    variables: list
    modules: list
    rewards: dict
    constants: dict
    state_map: Optional[dict] = None

    def __post_init__(self):
        self.index = {v.name: i for i, v in enumerate(self.variables)}
        self.alphabet: dict[str, list[int]] = {}
        for mi, m in enumerate(self.modules):
            for lab in sorted(m.alphabet):
                self.alphabet.setdefault(lab, []).append(mi)
        # per module: bucketed and free commands
        self._buckets = []
        for m in self.modules:
            by: dict = {}
            free = []
            for c in m.commands:
                if c.bucket is None:
                    free.append(c)
                else:
                    by.setdefault(c.bucket, []).append(c)
            keys = sorted({var for var, _ in by})
            self._buckets.append((keys, by, free))

    def initial(self) -> tuple:
        return tuple(v.init for v in self.variables)

    def value(self, state, name):
        return state[self.index[name]]


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?)|(?P<id>[A-Za-z_][A-Za-z0-9_]*'?)|(?P<str>\"[^\"]*\")"
    r"|(?P<sym><=|>=|!=|->|\.\.|[\[\](){};:=<>&|!+\-*/,']))"
)


class _Lexer:
    def __init__(self, text: str):
        self.toks = []
        self.comments = []
        for ln, raw in enumerate(text.splitlines(), 1):
            line = raw
            if "//" in line:
                cut = line.index("//")
                self.comments.append((ln, line[cut + 2:].strip()))
                line = line[:cut]
            line = line.rstrip()
            pos, end = 0, len(line)
            while pos < end:
                m = _TOKEN.match(line, pos)
                if not m or m.end() == pos:
                    raise GcSyntaxError(f"unexpected character {line[pos:].strip()[:1]!r}", ln)
                kind = m.lastgroup
                self.toks.append((kind, m.group(kind), ln))
                pos = m.end()
        # padding so lookahead never runs off the end
        self.toks.extend([("eof", "", len(text.splitlines()) + 1)] * 4)
        self.i = 0

    def peek(self, k=0):
        return self.toks[self.i + k]

    def next(self):
        t = self.toks[self.i]
        if t[0] != "eof":
            self.i += 1
        return t

    def at(self, text) -> bool:
        t = self.toks[self.i]
        return t[1] == text and t[0] != "str"

    def accept(self, text) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text):
        t = self.next()
        if t[1] != text:
            raise GcSyntaxError(f"expected {text!r}, found {t[1] or 'end of input'!r}", t[2])
        return t

    def ident(self):
        t = self.next()
        if t[0] != "id":
            raise GcSyntaxError(f"expected identifier, found {t[1]!r}", t[2])
        return t[1]


def _div(a, b):
    return Fraction(a) / b


class _ExprCompiler:
    """Recursive-descent parser producing Python source over ``v[i]``."""

    def __init__(self, lx: _Lexer, prog_vars: dict, constants: dict):
        self.lx = lx
        self.vars = prog_vars
        self.consts = constants
        self.used: set = set()

    def expr(self) -> str:
        return self.disj()

    def disj(self):
        parts = [self.conj()]
        while self.lx.accept("|"):
            parts.append(self.conj())
        return parts[0] if len(parts) == 1 else "(" + " or ".join(parts) + ")"

    def conj(self):
        parts = [self.neg()]
        while self.lx.accept("&"):
            parts.append(self.neg())
        return parts[0] if len(parts) == 1 else "(" + " and ".join(parts) + ")"

    def neg(self):
        if self.lx.accept("!"):
            return f"(not {self.neg()})"
        return self.rel()

    _REL = {"=": "==", "!=": "!=", "<": "<", "<=": "<=", ">": ">", ">=": ">="}

    def rel(self):
        left = self.add()
        op = self.lx.peek()[1]
        if op in self._REL and self.lx.peek()[0] == "sym":
            self.lx.next()
            right = self.add()
            return f"({left} {self._REL[op]} {right})"
        return left

    def add(self):
        out = self.mul()
        while self.lx.peek()[1] in ("+", "-") and self.lx.peek()[0] == "sym":
            op = self.lx.next()[1]
            out = f"({out} {op} {self.mul()})"
        return out

    def mul(self):
        out = self.unary()
        while self.lx.peek()[1] in ("*", "/") and self.lx.peek()[0] == "sym":
            op = self.lx.next()[1]
            rhs = self.unary()
            out = f"({out} * {rhs})" if op == "*" else f"_div({out}, {rhs})"
        return out

    def unary(self):
        if self.lx.accept("-"):
            return f"(-{self.unary()})"
        return self.atom()

    def atom(self):
        kind, text, ln = self.lx.next()
        if kind == "num":
            if "." in text:
                return f"Fraction('{text}')"
            return text
        if kind == "id":
            if text in ("true", "false"):
                return "True" if text == "true" else "False"
            if text in ("min", "max"):
                self.lx.expect("(")
                args = [self.expr()]
                while self.lx.accept(","):
                    args.append(self.expr())
                self.lx.expect(")")
                return f"{text}({', '.join(args)})"
            if text in self.consts:
                return repr(self.consts[text]) if not isinstance(self.consts[text], Fraction) else f"Fraction({self.consts[text].numerator}, {self.consts[text].denominator})"
            if text in self.vars:
                self.used.add(text)
                return f"v[{self.vars[text]}]"
            raise GcSyntaxError(f"unknown identifier {text!r}", ln)
        if text == "(":
            inner = self.expr()
            self.lx.expect(")")
            return inner
        raise GcSyntaxError(f"unexpected {text!r} in expression", ln)


_ENV = {"Fraction": Fraction, "_div": _div, "min": min, "max": max}


@lru_cache(maxsize=None)
def _compile(src: str):
    return eval(f"lambda v: {src}", dict(_ENV))  # noqa: S307 - source produced by our own parser


def _const_value(src: str, line):
    try:
        return eval(src, dict(_ENV))  # noqa: S307
    except Exception as exc:  # pragma: no cover - defensive
        raise GcSyntaxError(f"not a constant expression: {exc}", line)


_BUCKET = re.compile(r"^\(v\[(\d+)\] == (\d+)\)$")


def _find_bucket(guard_src: str):
    """Extract a top-level ``var == const`` conjunct for command indexing."""
    text = guard_src
    if text.startswith("(") and " and " in text:
        # split the outermost conjunction
        depth, parts, cur = 0, [], ""
        inner = text[1:-1]
        i = 0
        while i < len(inner):
            ch = inner[i]
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
            if depth == 0 and inner.startswith(" and ", i):
                parts.append(cur)
                cur = ""
                i += 5
                continue
            cur += ch
            i += 1
        parts.append(cur)
        if depth == 0 and "".join(parts) and all(parts):
            for p in parts:
                m = _BUCKET.match(p)
                if m:
                    return int(m.group(1)), int(m.group(2))
        return None
    m = _BUCKET.match(text)
    return (int(m.group(1)), int(m.group(2))) if m else None


def parse_gc(text: str) -> GcProgram:
    lx = _Lexer(text)
    state_map = None
    for _, c in lx.comments:
        if c.startswith("palps-map "):
            try:
                state_map = json.loads(c[len("palps-map "):])
            except json.JSONDecodeError as exc:
                raise GcSyntaxError(f"bad state map: {exc}")
    variables: list[Variable] = []
    var_index: dict = {}
    constants: dict = {}
    modules: list[GcModule] = []
    rewards: dict = {}
    pending_cmds = []  # (module idx, label, lexer position) parsed after all declarations

    def declare(name, low, high, init, module, ln):
        if name in var_index or name in constants:
            raise GcSyntaxError(f"duplicate name {name!r}", ln)
        if not low <= init <= high:
            raise GcSyntaxError(f"initial value of {name} outside [{low}..{high}]", ln)
        var_index[name] = len(variables)
        variables.append(Variable(name, low, high, init, module))

    def int_const():
        neg = lx.accept("-")
        t = lx.next()
        if t[0] == "num":
            v = int(t[1])
        elif t[0] == "id" and t[1] in constants:
            v = int(constants[t[1]])
        else:
            raise GcSyntaxError(f"expected integer, found {t[1]!r}", t[2])
        return -v if neg else v

    def var_decl(module):
        ln = lx.peek()[2]
        name = lx.ident()
        lx.expect(":")
        lx.expect("[")
        low = int_const()
        lx.expect("..")
        high = int_const()
        lx.expect("]")
        init = low
        if lx.accept("init"):
            init = int_const()
        lx.expect(";")
        declare(name, low, high, init, module, ln)

    # first pass: declarations; command bodies are remembered by position
    if lx.at("mdp"):
        lx.next()
    elif lx.peek()[1] in ("dtmc", "ctmc", "pta"):
        raise GcSyntaxError(f"unsupported model type {lx.peek()[1]!r}", lx.peek()[2])
    while lx.peek()[0] != "eof":
        t = lx.peek()
        if t[1] == "const":
            lx.next()
            if lx.peek()[1] in ("int", "double", "bool"):
                lx.next()
            name = lx.ident()
            lx.expect("=")
            ec = _ExprCompiler(lx, {}, constants)
            src = ec.expr()
            lx.expect(";")
            constants[name] = _const_value(src, t[2])
        elif t[1] == "global":
            lx.next()
            var_decl(None)
        elif t[1] == "module":
            lx.next()
            name = lx.ident()
            mod = GcModule(name, [])
            modules.append(mod)
            while not lx.at("endmodule"):
                if lx.peek()[0] == "eof":
                    raise GcSyntaxError(f"module {name} not closed", lx.peek()[2])
                if lx.at("["):
                    start = lx.i
                    while not lx.at(";"):
                        if lx.peek()[0] == "eof":
                            raise GcSyntaxError("unterminated command", lx.peek()[2])
                        lx.next()
                    lx.next()
                    pending_cmds.append((len(modules) - 1, start))
                else:
                    before = len(variables)
                    var_decl(name)
                    mod.variables.extend(v.name for v in variables[before:])
            lx.next()
        elif t[1] == "rewards":
            lx.next()
            st = lx.next()
            if st[0] != "str":
                raise GcSyntaxError("expected reward name", st[2])
            rname = st[1].strip('"')
            start = lx.i
            while not lx.at("endrewards"):
                if lx.peek()[0] == "eof":
                    raise GcSyntaxError("rewards block not closed", lx.peek()[2])
                lx.next()
            rewards[rname] = (start, lx.i)
            lx.next()
        else:
            raise GcSyntaxError(f"unsupported construct {t[1]!r}", t[2])

    # second pass: commands and reward items, now that every name is known
    for mi, start in pending_cmds:
        lx.i = start
        ln = lx.peek()[2]
        lx.expect("[")
        label = ""
        if not lx.at("]"):
            label = lx.ident()
        lx.expect("]")
        ec = _ExprCompiler(lx, var_index, constants)
        gsrc = ec.expr()
        lx.expect("->")
        branches = []
        while True:
            prob = Fraction(1)
            # optional "p:" prefix, recognised by a top-level colon
            depth, has_colon, j = 0, False, lx.i
            while True:
                k, tx, _ = lx.toks[j]
                if k == "eof" or (k == "id" and tx.endswith("'")):
                    break
                if k == "sym":
                    if tx == "(":
                        depth += 1
                    elif tx == ")":
                        depth -= 1
                    elif depth == 0 and tx == ":":
                        has_colon = True
                        break
                    elif depth == 0 and tx in ("+", ";"):
                        break
                j += 1
            if has_colon:
                pc = _ExprCompiler(lx, {}, constants)
                prob = Fraction(_const_value(pc.expr(), ln))
                lx.expect(":")
            assigns = []
            if lx.accept("true"):
                pass
            else:
                while True:
                    lx.expect("(")
                    vt = lx.next()
                    if vt[0] != "id" or not vt[1].endswith("'"):
                        raise GcSyntaxError("expected primed variable", vt[2])
                    vname = vt[1][:-1]
                    if vname not in var_index:
                        raise GcSyntaxError(f"unknown variable {vname!r}", vt[2])
                    lx.expect("=")
                    ec2 = _ExprCompiler(lx, var_index, constants)
                    src = ec2.expr()
                    lx.expect(")")
                    assigns.append((var_index[vname], _compile(src)))
                    if not lx.accept("&"):
                        break
            branches.append((prob, assigns))
            if not lx.accept("+"):
                break
        lx.expect(";")
        total = sum(p for p, _ in branches)
        if total != 1:
            raise GcSyntaxError(f"probabilities sum to {total}", ln)
        cmd = GcCommand(mi, label, gsrc, _compile(gsrc), branches, _find_bucket(gsrc), ln)
        modules[mi].commands.append(cmd)

    reward_items: dict = {}
    for rname, (start, end) in rewards.items():
        lx.i = start
        items = []
        while lx.i < end:
            label = None
            if lx.accept("["):
                label = "" if lx.at("]") else lx.ident()
                lx.expect("]")
            ec = _ExprCompiler(lx, var_index, constants)
            g = ec.expr()
            lx.expect(":")
            ec2 = _ExprCompiler(lx, var_index, constants)
            val = ec2.expr()
            lx.expect(";")
            items.append(RewardItem(label, _compile(g), _compile(val)))
        reward_items[rname] = items
    return GcProgram(variables, modules, reward_items, constants, state_map)


# ---------------------------------------------------------------- semantics


def _enabled(prog: GcProgram, mi: int, state):
    keys, by, free = prog._buckets[mi]
    out = [c for c in free if c.guard(state)]
    for var in keys:
        for c in by.get((var, state[var]), ()):
            if c.guard(state):
                out.append(c)
    return out


def _apply(prog: GcProgram, state, writes: list, label: str):
    new = list(state)
    seen = set()
    for var, fn in writes:
        if var in seen:
            raise ConflictingWrite(prog.variables[var].name, label)
        seen.add(var)
        val = fn(state)
        if isinstance(val, Fraction):
            if val.denominator != 1:
                raise RangeViolation(prog.variables[var].name, val)
            val = val.numerator
        v = prog.variables[var]
        if not v.low <= val <= v.high:
            raise RangeViolation(v.name, val)
        new[var] = int(val)
    return tuple(new)


def gc_steps(prog: GcProgram, state) -> list:
    """``[(label, [(prob, successor), ...]), ...]`` with exact probabilities."""
    out = []
    per_module = [_enabled(prog, mi, state) for mi in range(len(prog.modules))]
    labelled: dict = {}
    for mi, cmds in enumerate(per_module):
        for c in cmds:
            if not c.label:
                dist = [(p, _apply(prog, state, w, "")) for p, w in c.branches]
                out.append(("", dist))
            else:
                labelled.setdefault(c.label, {}).setdefault(mi, []).append(c)
    for label in sorted(labelled):
        parts = labelled[label]
        mods = prog.alphabet[label]
        if any(mi not in parts for mi in mods):
            continue
        for combo in itertools.product(*(parts[mi] for mi in mods)):
            dist = []
            for branch in itertools.product(*(c.branches for c in combo)):
                p = Fraction(1)
                writes = []
                for bp, w in branch:
                    p *= bp
                    writes.extend(w)
                dist.append((p, _apply(prog, state, writes, label)))
            out.append((label, dist))
    return out


def build_gc_mdp(prog: GcProgram, limits: ExploreLimits = ExploreLimits(), threads: int = 1) -> Mdp:
    return explore(prog.initial(), lambda s: s, lambda s: gc_steps(prog, s), limits, threads, env_of=lambda s: s)


# ---------------------------------------------------------------- quotient


def _stable_fn(prog: GcProgram):
    sm = prog.state_map
    if sm is None:
        raise ValueError("program carries no state map")
    atomic = prog.index["atomic"]
    checks = []
    for m in sm["modules"]:
        top = len(sm["species"][m["species"]]["positions"])
        checks.append((prog.index[f"st{m['index']}"], top))

    def stable(s) -> bool:
        if s[atomic] != 0:
            return False
        return all(s[i] <= top for i, top in checks)

    return stable


def quotient_stable(mdp: Mdp, prog: GcProgram) -> Mdp:
    """Collapse bookkeeping chains: every edge into an unstable state is
    redirected to the unique stable state its chain reaches."""
    stable = _stable_fn(prog)
    is_st = [stable(k) for k in mdp.keys]
    if not is_st[mdp.initial]:
        raise NonConfluentChain(mdp.initial, [])
    memo: dict[int, int] = {}

    def endpoint(j: int) -> int:
        if is_st[j]:
            return j
        got = memo.get(j)
        if got is not None:
            return got
        found, seen, stack = set(), {j}, [j]
        while stack:
            u = stack.pop()
            if u in mdp.truncated_states:
                raise NonConfluentChain(j, ["truncated"])
            for _, dist in mdp.choices[u]:
                for _, w in dist:
                    if is_st[w]:
                        found.add(w)
                    elif w not in seen:
                        seen.add(w)
                        stack.append(w)
        if len(found) != 1:
            raise NonConfluentChain(j, sorted(found))
        memo[j] = found.pop()
        return memo[j]

    order = [mdp.initial]
    new_index = {mdp.initial: 0}
    choices = []
    k = 0
    while k < len(order):
        i = order[k]
        k += 1
        out = []
        seen = set()
        for label, dist in mdp.choices[i]:
            merged: dict = {}
            for p, j in dist:
                e = endpoint(j)
                if e not in new_index:
                    new_index[e] = len(order)
                    order.append(e)
                merged[new_index[e]] = merged.get(new_index[e], 0) + p
            d = tuple((p, j) for j, p in sorted(merged.items()))
            if d not in seen:
                seen.add(d)
                out.append((label, d))
        choices.append(out)
    truncated = frozenset(new_index[i] for i in order if i in mdp.truncated_states)
    return Mdp(
        [mdp.keys[i] for i in order],
        [mdp.configs[i] for i in order],
        0,
        choices,
        mdp.env_of,
        truncated,
        mdp.truncation_reason,
    )


# ---------------------------------------------------------------- correspondence


def state_key(prog: GcProgram, s) -> tuple:
    """The calculus canonical key of a stable program state."""
    sm = prog.state_map
    locs = sm["locations"]
    env = {}
    for var, (loc, sp) in sm["env"].items():
        n = s[prog.index[var]]
        if n:
            env[(loc, sp)] = n
    triples = tuple((l, sp, n) for (l, sp), n in sorted(env.items()))
    inds = []
    for m in sm["modules"]:
        st = s[prog.index[f"st{m['index']}"]]
        if st == 0:
            continue
        loc = locs[s[prog.index[f"loc{m['index']}"]] - 1]
        key = sm["species"][m["species"]]["positions"][st - 1]
        inds.append((m["species"], loc, key, m["scope"]))
    reps = tuple(
        sorted((sp, s[prog.index[var]], sm["replicator_scope"][sp]) for sp, var in sm["pools"].items())
    )
    return (triples, tuple(sorted(inds)), reps)


@dataclass
class CorrespondenceReport:
    mapping: dict  # stable program state index -> calculus state index
    mismatches: list
    gc_states: int = 0
    stable_states: int = 0
    palps_states: int = 0

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "gc_states": self.gc_states,
            "stable_states": self.stable_states,
            "palps_states": self.palps_states,
            "mismatches": self.mismatches,
        }


def _fmt(p) -> str:
    p = Fraction(p)
    return str(p.numerator) if p.denominator == 1 else f"{p.numerator}/{p.denominator}"


def correspondence_check(mdp_palps: Mdp, quotient: Mdp, prog: GcProgram, limit: int = 50) -> CorrespondenceReport:
    mismatches: list = []
    keys = [state_key(prog, s) for s in quotient.keys]
    mapping = {}

    def dists_palps(i):
        return {frozenset((mdp_palps.keys[j], p) for p, j in d) for _, d in mdp_palps.choices[i]}

    def dists_gc(i):
        out = set()
        for _, d in quotient.choices[i]:
            merged: dict = {}
            for p, j in d:
                merged[keys[j]] = merged.get(keys[j], 0) + p
            out.add(frozenset((k, p) for k, p in merged.items()))
        return out

    for i, key in enumerate(keys):
        j = mdp_palps.index(key)
        if j is None:
            mismatches.append({"kind": "unmapped", "gc_state": i, "key": repr(key)})
            continue
        mapping[i] = j
        if i in quotient.truncated_states or j in mdp_palps.truncated_states:
            continue
        a, b = dists_palps(j), dists_gc(i)
        if a != b:
            mismatches.append(
                {
                    "kind": "transitions",
                    "gc_state": i,
                    "palps_state": j,
                    "missing_in_gc": len(a - b),
                    "extra_in_gc": len(b - a),
                    "example": [[_fmt(p), repr(k)] for k, p in sorted(next(iter(a ^ b)), key=repr)][:4],
                }
            )
        if len(mismatches) >= limit:
            break
    covered = set(mapping.values())
    missing = [j for j in range(len(mdp_palps)) if j not in covered]
    if missing and len(mismatches) < limit:
        mismatches.append({"kind": "uncovered", "count": len(missing), "first": repr(mdp_palps.keys[missing[0]])})
    return CorrespondenceReport(mapping, mismatches, 0, len(quotient), len(mdp_palps))


def counter_soundness(quotient: Mdp, prog: GcProgram, engine) -> list:
    """Compare counter variables with the calculus in every stable state
    with ``pact=0``.  Returns a list of discrepancies."""
    from .model import GO, Go, In, Out, Label
    from .semantics import Configuration, Individual, Replicator
    from .expr import Environment

    sm = prog.state_map
    info = sm.get("counters", {})
    if not info:
        return []
    from .parser import parse_term

    model = engine.model
    names, attrs = model.species_names(), model.attributes.names()
    # position keys are printed terms, so they parse back
    terms = {sp: [parse_term(k, names, attrs) for k in data["positions"]] for sp, data in sm["species"].items()}
    dynamic = {tuple(x) for x in sm.get("dynamic", [])}
    bad = []
    pact = prog.index.get("pact")
    for i, s in enumerate(quotient.keys):
        if pact is not None and s[pact] != 0:
            continue
        key = state_key(prog, s)
        env = Environment.from_triples(key[0])
        inds = []
        locs = sm["locations"]
        for m in sm["modules"]:
            st = s[prog.index[f"st{m['index']}"]]
            if st == 0:
                continue
            loc = locs[s[prog.index[f"loc{m['index']}"]] - 1]
            inds.append(Individual(len(inds), m["species"], loc, terms[m["species"]][st - 1], m["scope"]))
        reps = tuple(
            Replicator(sp, s[prog.index[var]], sm["replicator_scope"][sp]) for sp, var in sm["pools"].items()
        )
        conf = Configuration(env, tuple(inds), reps, len(inds))
        heads = [(ind, engine.head(ind, env)) for ind in conf.individuals]
        cands = engine.candidates(conf, heads)
        # individuals at environment-dependent positions are not counted
        skip = {
            ind.id
            for ind, m in zip(conf.individuals, [m for m in sm["modules"] if s[prog.index[f"st{m['index']}"]] != 0])
            if (m["species"], s[prog.index[f"st{m['index']}"]], ind.loc) in dynamic
        }
        heads = [(ind, h) for ind, h in heads if ind.id not in skip]
        cands = [c for c in cands if not set(c.participants) & skip]
        for var, (kind, chan, loc, sp) in info.items():
            val = s[prog.index[var]]
            if kind == "avail":
                want = sum(
                    1
                    for ind, h in heads
                    if h[0] == "nsum" and ind.loc == loc
                    for p, _ in h[1]
                    if isinstance(p, In) and p.channel == chan
                )
            elif kind == "tau" and chan != GO:
                want = sum(
                    1
                    for ind, h in heads
                    if h[0] == "nsum" and ind.loc == loc and ind.species == sp
                    for p, _ in h[1]
                    if isinstance(p, Out) and p.channel == chan
                )
            else:
                lab = Label(kind, chan, loc, sp)
                want = sum(1 for c in cands if c.label == lab)
            if val != want:
                bad.append({"state": i, "counter": var, "value": val, "expected": want})
    return bad


def inject_fault(text: str) -> str:
    """Negate the guard of the first locked command of the first module."""
    lines = text.splitlines()
    for i, line in enumerate(lines):
        m = re.match(r"^(\s*\[[^\]]*\]\s*)(.*?atomic=0.*?)(\s*->.*)$", line)
        if m:
            lines[i] = f"{m.group(1)}!({m.group(2)}){m.group(3)}"
            return "\n".join(lines) + ("\n" if text.endswith("\n") else "")
    raise ValueError("no guarded command to corrupt")


__all__ = [
    "ConflictingWrite",
    "CorrespondenceReport",
    "GcProgram",
    "GcSyntaxError",
    "NonConfluentChain",
    "RangeViolation",
    "build_gc_mdp",
    "correspondence_check",
    "counter_soundness",
    "gc_steps",
    "inject_fault",
    "parse_gc",
    "quotient_stable",
    "state_key",
]
