"""Concrete syntax for ``.palps`` model files: tokenizer, recursive-descent
parser and a formatter that the parser reads back to the same AST.

Grammar outline::

    model    := item*
    item     := habitat | channels | const | attribute | species | system | policy
    habitat  := 'habitat' '{' 'locations' ':' loc (',' loc)* ';'
                          ['neighbors' ':' '(' loc ',' loc ')' (',' ...)* ';'] '}'
    species  := 'species' NAME '{' ('bound' INT ';' | 'rep' NAME ';' | 'recycle' ';'
                          | 'process' NAME '=' term ';' | 'init' NAME ';')* '}'
    system   := 'system' '{' sysitem* '}'
    sysitem  := INT 'of' NAME '.' pterm 'at' loc ';' | '!' NAME ';'
              | 'group' '{' sysitem* '}' | 'restrict' '{' NAME (',' NAME)* '}' ';'
    policy   := 'policy' '{' (label '<' label ';')* '}'
    term     := prob ':' nsum ('(+)' prob ':' nsum)* | nsum
    nsum     := pterm ('+' pterm)*
    pterm    := prefix '.' pterm | atom
    prefix   := NAME '?' | NAME '!' | 'go' loc | 'tick'
    atom     := '0' | NAME | '(' term ')' | 'cond' '(' bexpr '->' term (';' ...)* ')'
              | ['disperse'] 'uniform' 'nb' '(' 'myloc' ')' 'then' pterm
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .model import (
    ALL,
    GO,
    MYLOC,
    NB,
    And,
    AttrAt,
    AttributeTable,
    Binary,
    BTrue,
    Compare,
    Cond,
    Const,
    ConstRef,
    CountAt,
    Go,
    Habitat,
    In,
    Label,
    Located,
    Model,
    Nil,
    Not,
    NSum,
    Out,
    Parallel,
    PolicyPattern,
    PSum,
    Restrict,
    SpeciesDef,
    SpeciesProc,
    Tick,
    TotalAt,
    Unary,
    Uniform,
)


@dataclass(frozen=True)
class SourceSpan:
    begin: int
    end: int
    line: int
    column: int

    def __str__(self):
        return f"{self.line}:{self.column}"


@dataclass(frozen=True)
class Diagnostic:
    span: SourceSpan
    message: str

    def __str__(self):
        return f"{self.span}: {self.message}"


class DslSyntaxError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class Token:
    kind: str  # "id" | "num" | "sym" | "eof"
    text: str
    span: SourceSpan


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<num>\d+(?:\.\d+)?)
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<sym>\(\+\)|->|<=|>=|!=|[{}()\[\],;:.+\-*/?!@=<>&|$])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            span = SourceSpan(pos, pos + 1, line, pos - line_start + 1)
            raise DslSyntaxError([Diagnostic(span, f"unexpected character {text[pos]!r}")])
        kind = m.lastgroup
        tok_text = m.group()
        span = SourceSpan(pos, m.end(), line, pos - line_start + 1)
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, tok_text, span))
        nl = tok_text.count("\n")
        if nl:
            line += nl
            line_start = pos + tok_text.rfind("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", SourceSpan(pos, pos, line, pos - line_start + 1)))
    return tokens


@dataclass(frozen=True)
class _At:
    """``name@loc`` before we know whether name is a species or an attribute."""

    name: str
    loc: str


class _Backtrack(Exception):
    pass


class Parser:
    def __init__(self, text: str, predicate_mode: bool = False):
        self.toks = tokenize(text)
        self.i = 0
        self.params: dict[str, Fraction] = {}
        self.predicate_mode = predicate_mode

    # -- token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k=1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, msg, tok=None):
        tok = tok or self.tok
        shown = tok.text or "end of input"
        raise DslSyntaxError([Diagnostic(tok.span, f"{msg} (found {shown!r})")])

    def at(self, text) -> bool:
        return self.tok.text == text and self.tok.kind in ("sym", "id")

    def accept(self, text) -> Optional[Token]:
        if self.at(text):
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, text) -> Token:
        t = self.accept(text)
        if t is None:
            self.error(f"expected {text!r}")
        return t

    def ident(self, what="identifier") -> str:
        if self.tok.kind != "id":
            self.error(f"expected {what}")
        t = self.tok
        self.i += 1
        return t.text

    def loc(self) -> str:
        if self.tok.kind in ("id", "num") and re.fullmatch(r"[A-Za-z0-9_]+", self.tok.text):
            t = self.tok.text
            self.i += 1
            return t
        if self.predicate_mode and self.accept("*"):
            return ALL
        self.error("expected location")

    def integer(self) -> int:
        if self.tok.kind != "num" or not self.tok.text.isdigit():
            self.error("expected integer")
        v = int(self.tok.text)
        self.i += 1
        return v

    def number(self) -> Fraction:
        neg = bool(self.accept("-"))
        if self.tok.kind != "num":
            self.error("expected number")
        v = Fraction(self.tok.text)
        self.i += 1
        if self.accept("/"):
            if self.tok.kind != "num":
                self.error("expected denominator")
            d = Fraction(self.tok.text)
            self.i += 1
            if d == 0:
                self.error("zero denominator")
            v = v / d
        return -v if neg else v

    # -- model
    def parse_model(self) -> Model:
        habitat = None
        channels: list[str] = []
        attrs: dict = {}
        species: list[SpeciesDef] = []
        system = None
        policy: list[PolicyPattern] = []
        while self.tok.kind != "eof":
            if self.accept("habitat"):
                if habitat is not None:
                    self.error("duplicate habitat block")
                habitat = self.parse_habitat()
            elif self.accept("channels"):
                self.expect(":")
                channels.append(self.ident("channel"))
                while self.accept(","):
                    channels.append(self.ident("channel"))
                self.expect(";")
            elif self.accept("const"):
                name = self.ident("parameter name")
                self.expect("=")
                self.params[name] = self.prob_expr()
                self.expect(";")
            elif self.accept("attribute"):
                name = self.ident("attribute name")
                self.expect("{")
                while not self.accept("}"):
                    l = self.loc()
                    self.expect(":")
                    attrs[(name, l)] = self.number()
                    if not self.accept(","):
                        self.accept(";")
            elif self.accept("species"):
                species.append(self.parse_species())
            elif self.accept("system"):
                if system is not None:
                    self.error("duplicate system block")
                system = self.parse_system_block()
            elif self.accept("policy"):
                self.expect("{")
                while not self.accept("}"):
                    lo = self.parse_label()
                    self.expect("<")
                    hi = self.parse_label()
                    self.expect(";")
                    policy.append(PolicyPattern(lo, hi))
            else:
                self.error("expected habitat, channels, const, attribute, species, system or policy")
        if habitat is None:
            self.error("missing habitat block")
        if system is None:
            self.error("missing system block")
        sp_names = {s.name for s in species}
        attr_names = {k[0] for k in attrs}
        species = [
            SpeciesDef(
                s.name,
                tuple((n, _resolve_term(t, sp_names, attr_names)) for n, t in s.processes),
                s.init,
                s.bound,
                s.rep_channel,
                s.recycle,
            )
            for s in species
        ]
        system = _resolve_system(system, sp_names, attr_names)
        return Model(habitat, AttributeTable.build(attrs), tuple(channels), tuple(species), system, tuple(policy))

    def parse_habitat(self) -> Habitat:
        self.expect("{")
        self.expect("locations")
        self.expect(":")
        locs = [self.loc()]
        while self.accept(","):
            locs.append(self.loc())
        self.expect(";")
        pairs = []
        if self.accept("neighbors"):
            self.expect(":")
            while True:
                self.expect("(")
                a = self.loc()
                self.expect(",")
                b = self.loc()
                self.expect(")")
                pairs.append((a, b))
                if not self.accept(","):
                    break
            self.expect(";")
        self.expect("}")
        return Habitat.build(locs, pairs)

    def parse_species(self) -> SpeciesDef:
        name = self.ident("species name")
        self.expect("{")
        bound, rep, recycle, init = 0, "rep", False, None
        procs = []
        while not self.accept("}"):
            if self.accept("bound"):
                bound = self.integer()
            elif self.accept("rep"):
                rep = self.ident("channel")
            elif self.accept("recycle"):
                recycle = True
            elif self.accept("process"):
                pname = self.ident("process name")
                self.expect("=")
                procs.append((pname, self.term()))
            elif self.accept("init"):
                init = self.ident("process name")
            else:
                self.error("expected bound, rep, recycle, process or init")
            self.expect(";")
        if init is None:
            if not procs:
                self.error("species without processes")
            init = procs[0][0]
        return SpeciesDef(name, tuple(procs), init, bound, rep, recycle)

    def parse_system_block(self):
        self.expect("{")
        items, restrict = [], None
        while not self.accept("}"):
            if self.accept("restrict"):
                self.expect("{")
                chans = [self.ident("channel")]
                while self.accept(","):
                    chans.append(self.ident("channel"))
                self.expect("}")
                self.expect(";")
                restrict = (restrict or frozenset()) | frozenset(chans)
            elif self.accept("!"):
                items.append(SpeciesProc(self.ident("species")))
                self.expect(";")
            elif self.accept("group"):
                items.append(self.parse_system_block())
            else:
                count = self.integer()
                self.expect("of")
                sp = self.ident("species")
                self.expect(".")
                t = self.pterm()
                self.expect("at")
                l = self.loc()
                self.expect(";")
                items.append(Located(t, sp, l, count))
        par = Parallel(tuple(items))
        return Restrict(par, restrict) if restrict else par

    def parse_label(self) -> Label:
        if self.accept("tick"):
            return Label("tick")
        kind = self.ident("label kind")
        if kind not in ("in", "out", "tau"):
            self.error("expected in, out, tau or tick", self.toks[self.i - 1])
        self.expect("(")
        if self.accept("go"):
            if kind != "tau":
                self.error("go only appears in tau labels")
            chan = GO
        else:
            chan = self.ident("channel")
        self.expect(",")
        loc = self._wild(self.loc_or_wild)
        self.expect(",")
        sp = self._wild(lambda: self.ident("species"))
        self.expect(")")
        return Label(kind, chan, loc, sp)

    def loc_or_wild(self):
        return self.loc()

    def _wild(self, inner):
        if self.accept("*"):
            return "*"
        if self.accept("$"):
            return "$" + self.ident("variable")
        return inner()

    # -- probabilities (evaluated at parse time)
    def prob_expr(self) -> Fraction:
        v = self.prob_term()
        while self.at("+") or self.at("-"):
            op = self.tok.text
            self.i += 1
            r = self.prob_term()
            v = v + r if op == "+" else v - r
        return v

    def prob_term(self) -> Fraction:
        v = self.prob_atom()
        while self.at("*") or self.at("/"):
            op = self.tok.text
            self.i += 1
            r = self.prob_atom()
            if op == "/" and r == 0:
                self.error("division by zero")
            v = v * r if op == "*" else v / r
        return v

    def prob_atom(self) -> Fraction:
        if self.tok.kind == "num":
            v = Fraction(self.tok.text)
            self.i += 1
            return v
        if self.tok.kind == "id" and self.tok.text in self.params:
            v = self.params[self.tok.text]
            self.i += 1
            return v
        if self.accept("("):
            v = self.prob_expr()
            self.expect(")")
            return v
        raise _Backtrack()

    # -- process terms
    def try_prob_colon(self) -> Optional[Fraction]:
        save = self.i
        try:
            p = self.prob_expr()
        except (_Backtrack, DslSyntaxError):
            self.i = save
            return None
        if self.accept(":"):
            return p
        self.i = save
        return None

    def term(self):
        p = self.try_prob_colon()
        if p is None:
            return self.nsum()
        branches = [(p, self.nsum())]
        while self.accept("(+)"):
            q = self.try_prob_colon()
            if q is None:
                self.error("expected 'probability :' after (+)")
            branches.append((q, self.nsum()))
        return PSum(tuple(branches))

    def nsum(self):
        first_tok = self.tok
        parts = [self.pterm()]
        while self.accept("+"):
            parts.append(self.pterm())
        if len(parts) == 1:
            return parts[0]
        branches = []
        for part in parts:
            if not isinstance(part, NSum):
                self.error("every branch of a nondeterministic choice must be action-prefixed", first_tok)
            branches.extend(part.branches)
        return NSum(tuple(branches))

    def prefix(self):
        t = self.tok
        if self.accept("tick"):
            return Tick()
        if self.accept("go"):
            if self.accept(NB):
                return Go(NB)
            return Go(self.loc())
        if t.kind == "id" and self.peek().text in ("?", "!") and t.text not in _KEYWORDS:
            self.i += 2
            return In(t.text) if self.toks[self.i - 1].text == "?" else Out(t.text)
        return None

    def pterm(self):
        save = self.i
        pre = self.prefix()
        if pre is not None:
            if not self.accept("."):
                self.i = save
                self.error("expected '.' after action")
            return NSum(((pre, self.pterm()),))
        return self.atom()

    def atom(self):
        t = self.tok
        if t.kind == "num" and t.text == "0":
            self.i += 1
            return Nil()
        if self.accept("("):
            inner = self.term()
            self.expect(")")
            return inner
        if self.accept("cond"):
            self.expect("(")
            branches = []
            while True:
                e = self.bexpr()
                self.expect("->")
                branches.append((e, self.term()))
                if not self.accept(";"):
                    break
            self.expect(")")
            return Cond(tuple(branches))
        if t.text == "disperse" and self.peek().text == "uniform":
            self.i += 1
            body = self._uniform_tail()
            return Uniform(NSum(((Go(NB), body),)))
        if self.at("uniform"):
            return Uniform(self._uniform_tail())
        if t.kind == "id" and t.text not in _KEYWORDS:
            self.i += 1
            return ConstRef(t.text)
        self.error("expected a process term")

    def _uniform_tail(self):
        self.expect("uniform")
        self.expect(NB)
        self.expect("(")
        self.expect(MYLOC)
        self.expect(")")
        self.expect("then")
        return self.pterm()

    # -- logical / arithmetic expressions
    def bexpr(self):
        e = self.bconj()
        while self.accept("|"):
            r = self.bconj()
            e = Not(And(Not(e), Not(r)))
        return e

    def bconj(self):
        e = self.bunary()
        while self.accept("&"):
            e = And(e, self.bunary())
        return e

    def bunary(self):
        if self.accept("!"):
            return Not(self.bunary())
        if self.accept("true"):
            return BTrue()
        if self.accept("false"):
            return Not(BTrue())
        if self.at("("):
            save = self.i
            try:
                self.i += 1
                e = self.bexpr()
                self.expect(")")
                return e
            except DslSyntaxError:
                self.i = save
        w = self.aexpr()
        op = self.tok.text
        if op not in ("=", "<=", ">=", "<", ">", "!="):
            self.error("expected comparison operator")
        self.i += 1
        c = self.number()
        if op == "<":
            return Not(Compare(w, ">=", c))
        if op == ">":
            return Not(Compare(w, "<=", c))
        if op == "!=":
            return Not(Compare(w, "=", c))
        return Compare(w, op, c)

    def aexpr(self):
        w = self.aterm()
        while self.at("+") or self.at("-"):
            op = self.tok.text
            self.i += 1
            w = Binary(op, w, self.aterm())
        return w

    def aterm(self):
        w = self.afactor()
        while self.at("*") or self.at("/"):
            op = self.tok.text
            self.i += 1
            w = Binary(op, w, self.afactor())
        return w

    def afactor(self):
        t = self.tok
        if self.accept("-"):
            if self.tok.kind == "num":
                return Const(-self.number())
            return Unary("-", self.afactor())
        if t.kind == "num":
            return Const(self.number())
        if self.accept("@"):
            return TotalAt(self.loc())
        if self.accept("("):
            w = self.aexpr()
            self.expect(")")
            return w
        if t.kind == "id":
            if t.text in ("abs",) and self.peek().text == "(":
                self.i += 2
                w = self.aexpr()
                self.expect(")")
                return Unary("abs", w)
            if t.text in ("min", "max") and self.peek().text == "(":
                self.i += 2
                a = self.aexpr()
                self.expect(",")
                b = self.aexpr()
                self.expect(")")
                return Binary(t.text, a, b)
            if self.peek().text == "@":
                self.i += 2
                return _At(t.text, self.loc())
            if t.text in self.params:
                self.i += 1
                return Const(self.params[t.text])
            if self.predicate_mode and t.text == "pop":
                self.i += 1
                return TotalAt(ALL)
        self.error("expected arithmetic expression")


_KEYWORDS = {
    "cond", "uniform", "then", "go", "tick", "true", "false", "myloc", "nb",
    "at", "of", "habitat", "species", "system", "policy", "process", "init",
    "bound", "restrict", "group", "channels", "const", "attribute", "recycle",
}


def _resolve_expr(x, species, attrs):
    if isinstance(x, _At):
        if x.name in species:
            return CountAt(x.name, x.loc)
        if x.name in attrs:
            return AttrAt(x.name, x.loc)
        raise DslSyntaxError([Diagnostic(SourceSpan(0, 0, 0, 0), f"{x.name!r} is neither a species nor an attribute")])
    if isinstance(x, Unary):
        return Unary(x.op, _resolve_expr(x.arg, species, attrs))
    if isinstance(x, Binary):
        return Binary(x.op, _resolve_expr(x.left, species, attrs), _resolve_expr(x.right, species, attrs))
    if isinstance(x, Compare):
        return Compare(_resolve_expr(x.expr, species, attrs), x.op, x.value)
    if isinstance(x, Not):
        return Not(_resolve_expr(x.arg, species, attrs))
    if isinstance(x, And):
        return And(_resolve_expr(x.left, species, attrs), _resolve_expr(x.right, species, attrs))
    return x


def _resolve_term(t, species, attrs):
    if isinstance(t, NSum):
        return NSum(tuple((p, _resolve_term(c, species, attrs)) for p, c in t.branches))
    if isinstance(t, PSum):
        return PSum(tuple((p, _resolve_term(c, species, attrs)) for p, c in t.branches))
    if isinstance(t, Cond):
        return Cond(tuple((_resolve_expr(e, species, attrs), _resolve_term(c, species, attrs)) for e, c in t.branches))
    if isinstance(t, Uniform):
        return Uniform(_resolve_term(t.body, species, attrs))
    return t


def _resolve_system(s, species, attrs):
    if isinstance(s, Located):
        return Located(_resolve_term(s.term, species, attrs), s.species, s.loc, s.count)
    if isinstance(s, Parallel):
        return Parallel(tuple(_resolve_system(i, species, attrs) for i in s.items))
    if isinstance(s, Restrict):
        return Restrict(_resolve_system(s.inner, species, attrs), s.channels)
    return s


def parse_model(text: str) -> Model:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DslSyntaxError([Diagnostic(SourceSpan(exc.start, exc.end, 1, 1), "input is not UTF-8")])
    return Parser(text).parse_model()


def parse_predicate(text: str, species=(), attrs=()):
    """Parse a state predicate (no myloc; ``s@*``, ``@*`` and ``pop`` allowed)."""
    p = Parser(text, predicate_mode=True)
    e = p.bexpr()
    if p.tok.kind != "eof":
        p.error("trailing input after predicate")
    return _resolve_expr(e, set(species), set(attrs))


def parse_arith(text: str, species=(), attrs=()):
    p = Parser(text, predicate_mode=True)
    w = p.aexpr()
    if p.tok.kind != "eof":
        p.error("trailing input after expression")
    return _resolve_expr(w, set(species), set(attrs))


def parse_term(text: str, species=(), attrs=()):
    p = Parser(text)
    t = p.term()
    if p.tok.kind != "eof":
        p.error("trailing input after term")
    return _resolve_term(t, set(species), set(attrs))


# --------------------------------------------------------------------------
# formatting


def fmt_num(x: Fraction) -> str:
    x = Fraction(x)
    if x.denominator == 1:
        return str(x.numerator)
    if x < 0:
        return "-" + fmt_num(-x)
    return f"{x.numerator}/{x.denominator}"


def format_arith(w) -> str:
    if isinstance(w, Const):
        return fmt_num(w.value)
    if isinstance(w, (AttrAt, CountAt)):
        name = w.attr if isinstance(w, AttrAt) else w.species
        return f"{name}@{w.loc}"
    if isinstance(w, TotalAt):
        return f"@{w.loc}"
    if isinstance(w, Unary):
        return f"-({format_arith(w.arg)})" if w.op == "-" else f"abs({format_arith(w.arg)})"
    if isinstance(w, Binary):
        if w.op in ("min", "max"):
            return f"{w.op}({format_arith(w.left)}, {format_arith(w.right)})"
        return f"({format_arith(w.left)} {w.op} {format_arith(w.right)})"
    raise TypeError(w)


def format_bool(e) -> str:
    if isinstance(e, BTrue):
        return "true"
    if isinstance(e, Not):
        return f"!({format_bool(e.arg)})"
    if isinstance(e, And):
        left = format_bool(e.left)
        right = format_bool(e.right)
        if isinstance(e.right, And):
            right = f"({right})"
        return f"{left} & {right}"
    if isinstance(e, Compare):
        return f"{format_arith(e.expr)} {e.op} {fmt_num(e.value)}"
    raise TypeError(e)


def _fmt_prefix(p) -> str:
    if isinstance(p, Tick):
        return "tick"
    if isinstance(p, Go):
        return f"go {p.target}"
    if isinstance(p, In):
        return f"{p.channel}?"
    return f"{p.channel}!"


def format_term(t, level: str = "term") -> str:
    """``level`` is the grammar position: term > nsum > pterm."""
    if isinstance(t, Nil):
        return "0"
    if isinstance(t, ConstRef):
        return t.name
    if isinstance(t, PSum):
        s = " (+) ".join(f"{fmt_num(p)}: {format_term(c, 'nsum')}" for p, c in t.branches)
        return s if level == "term" else f"({s})"
    if isinstance(t, NSum):
        parts = [f"{_fmt_prefix(p)}.{format_term(c, 'pterm')}" for p, c in t.branches]
        s = " + ".join(parts)
        return s if len(parts) == 1 or level in ("term", "nsum") else f"({s})"
    if isinstance(t, Cond):
        inner = "; ".join(f"{format_bool(e)} -> {format_term(c)}" for e, c in t.branches)
        return f"cond({inner})"
    if isinstance(t, Uniform):
        b = t.body
        if isinstance(b, NSum) and len(b.branches) == 1 and b.branches[0][0] == Go(NB):
            return f"disperse uniform nb(myloc) then {format_term(b.branches[0][1], 'pterm')}"
        return f"uniform nb(myloc) then {format_term(b, 'pterm')}"
    raise TypeError(t)


def format_label(l: Label) -> str:
    if l.kind == "tick":
        return "tick"
    return f"{l.kind}({l.channel}, {l.loc}, {l.species})"


def _format_system(s, indent, out):
    pad = "  " * indent
    if isinstance(s, Restrict):
        inner = s.inner if isinstance(s.inner, Parallel) else Parallel((s.inner,))
        for i in inner.items:
            _format_item(i, indent, out)
        out.append(f"{pad}restrict {{ {', '.join(sorted(s.channels))} }};")
    elif isinstance(s, Parallel):
        for i in s.items:
            _format_item(i, indent, out)
    else:
        _format_item(s, indent, out)


def _format_item(i, indent, out):
    pad = "  " * indent
    if isinstance(i, Located):
        out.append(f"{pad}{i.count} of {i.species}.{format_term(i.term, 'pterm')} at {i.loc};")
    elif isinstance(i, SpeciesProc):
        out.append(f"{pad}!{i.species};")
    else:
        out.append(f"{pad}group {{")
        _format_system(i, indent + 1, out)
        out.append(f"{pad}}}")


def format_model(m: Model) -> str:
    out = []
    hab = m.habitat
    out.append("habitat {")
    out.append(f"  locations: {', '.join(hab.locations)};")
    pairs = sorted(
        {(a, b) for a, b in hab.neighbors if hab.locations.index(a) < hab.locations.index(b)},
        key=lambda p: (hab.locations.index(p[0]), hab.locations.index(p[1])),
    )
    if pairs:
        out.append(f"  neighbors: {', '.join(f'({a}, {b})' for a, b in pairs)};")
    out.append("}")
    if m.channels:
        out.append(f"channels: {', '.join(m.channels)};")
    by_attr: dict = {}
    for (name, loc), v in m.attributes.entries:
        by_attr.setdefault(name, []).append((loc, v))
    for name, vals in by_attr.items():
        inner = ", ".join(f"{l}: {fmt_num(v)}" for l, v in vals)
        out.append(f"attribute {name} {{ {inner} }}")
    for sp in m.species:
        out.append("")
        out.append(f"species {sp.name} {{")
        out.append(f"  bound {sp.bound};")
        if sp.rep_channel != "rep":
            out.append(f"  rep {sp.rep_channel};")
        if sp.recycle:
            out.append("  recycle;")
        for n, t in sp.processes:
            out.append(f"  process {n} = {format_term(t)};")
        out.append(f"  init {sp.init};")
        out.append("}")
    out.append("")
    out.append("system {")
    _format_system(m.system, 1, out)
    out.append("}")
    if m.policy_patterns:
        out.append("")
        out.append("policy {")
        for p in m.policy_patterns:
            out.append(f"  {format_label(p.lower)} < {format_label(p.higher)};")
        out.append("}")
    return "\n".join(out) + "\n"
