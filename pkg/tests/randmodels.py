"""Seeded generator of small random models for property tests."""

import random

from palps import parse_model

LOCS = ["l1", "l2", "l3", "l4"]
PREFIXES = ["tick", "a?", "a!", "b?", "b!", "rep!"]


class Gen:
    def __init__(self, seed: int):
        self.r = random.Random(seed)
        self.nloc = self.r.randint(1, 4)
        self.locs = LOCS[: self.nloc]
        self.consts = [f"P{i}" for i in range(self.r.randint(1, 3))]
        self.species = ["s"] if self.r.random() < 0.6 else ["s", "t"]

    def prefix(self):
        r = self.r
        if self.nloc > 1 and r.random() < 0.2:
            return f"go {r.choice(self.locs)}"
        return r.choice(PREFIXES)

    def cont(self, depth):
        """Term that may appear after a prefix (constants allowed)."""
        if depth <= 0 or self.r.random() < 0.3:
            return self.r.choice(["0", "tick.0"] + self.consts)
        return f"({self.term(depth - 1)})"

    def prefixed(self, depth):
        return f"{self.prefix()}.{self.cont(depth)}"

    def term(self, depth):
        r = self.r
        k = r.random()
        if depth <= 0 or k < 0.35:
            return self.prefixed(depth)
        if k < 0.55:
            return " + ".join(self.prefixed(depth - 1) for _ in range(r.randint(2, 3)))
        if k < 0.7:
            return f"1/3: {self.atom(depth - 1)} (+) 2/3: {self.atom(depth - 1)}"
        if k < 0.85:
            sp = r.choice(self.species)
            op = r.choice(["=", "<=", ">="])
            return f"cond({sp}@myloc {op} {r.randint(0, 2)} -> {self.atom(depth - 1)}; true -> {self.atom(depth - 1)})"
        if self.nloc > 1:
            return f"disperse uniform nb(myloc) then {self.atom(depth - 1)}"
        return self.prefixed(depth)

    def atom(self, depth):
        return f"({self.term(depth)})"

    def source(self, with_policy=True) -> str:
        r = self.r
        locs = self.locs
        nbs = [(locs[i], locs[j]) for i in range(len(locs)) for j in range(i + 1, len(locs)) if r.random() < 0.6]
        if not nbs and len(locs) > 1:
            nbs = [(locs[0], locs[1])]
        hab = f"locations: {', '.join(locs)};"
        if nbs:
            hab += " neighbors: " + ", ".join(f"({a}, {b})" for a, b in nbs) + ";"
        lines = [f"habitat {{ {hab} }}", "channels: a, b;"]
        for sp in self.species:
            body = [f"bound {r.randint(0, 2)};"]
            if sp != "s":
                body.append("rep rept;")
            for c in self.consts:
                body.append(f"process {c} = {self.term(2)};")
            body.append(f"init {r.choice(self.consts)};")
            lines.append(f"species {sp} {{ {' '.join(body)} }}")
        n_ind = r.randint(1, 4)
        sysl = []
        for _ in range(n_ind):
            sp = r.choice(self.species)
            start = r.choice(self.consts + [self.term(1)])
            sysl.append(f"1 of {sp}.{start if start in self.consts else '(' + start + ')'} at {r.choice(locs)};")
        sysl += [f"!{sp};" for sp in self.species]
        hidden = ["rep"] + (["rept"] if "t" in self.species else [])
        hidden += [c for c in ("a", "b") if r.random() < 0.5]
        sysl.append(f"restrict {{ {', '.join(hidden)} }};")
        lines.append("system { " + " ".join(sysl) + " }")
        if with_policy:
            pats = self.policy_patterns()
            if pats:
                lines.append("policy { " + " ".join(f"{lo} < {hi};" for lo, hi in pats) + " }")
        return "\n".join(lines) + "\n"

    def policy_patterns(self):
        r = self.r
        classes = []
        for _ in range(r.randint(0, 5)):
            kind = r.choice(["in", "out", "tau", "tau"])
            chan = r.choice(["a", "b"]) if kind != "tau" else r.choice(["a", "b", "go", "rep"])
            classes.append((kind, chan, r.choice(self.species)))
        classes = list(dict.fromkeys(classes))
        # pairs only go up the class list, so no cycle is possible
        pairs = []
        for i in range(len(classes)):
            for j in range(i + 1, len(classes)):
                if r.random() < 0.6:
                    lo, hi = classes[i], classes[j]
                    lloc, hloc = (r.choice(self.locs + ["$x", "$y"]) for _ in range(2))
                    pairs.append((f"{lo[0]}({lo[1]}, {lloc}, {lo[2]})", f"{hi[0]}({hi[1]}, {hloc}, {hi[2]})"))
        return pairs


def random_model(seed: int, with_policy=True):
    return parse_model(Gen(seed).source(with_policy))
