import re

import pytest

from palps import corpus_text, parse_model
from palps.semantics import Engine

TWO_SITES = "locations: l1, l2; neighbors: (l1, l2);"


def small_model(system, procs="process Z = 0; init Z;", habitat=TWO_SITES, extra="", species_extra="", policy=""):
    """A one-species model with channels a and b around the given system body."""
    src = (
        f"habitat {{ {habitat} }}\nchannels: a, b;\n"
        f"species s {{ {species_extra} {procs} }}\n{extra}\n"
        f"system {{ {system} }}\n"
    )
    if policy:
        src += f"policy {{ {policy} }}\n"
    return parse_model(src)


def summarize(engine, steps):
    """Order-independent view of a step list: labels, environments, located terms."""
    out = []
    for s in steps:
        c = s.next
        inds = tuple(sorted((i.species, i.loc, engine.term_key(i.species, i.term)) for i in c.individuals))
        head = str(s.weight) if hasattr(s, "weight") else str(s.label)
        out.append((head, c.env.triples(), inds))
    return sorted(out)


def mite_source(initial: int, bound: int | None = None) -> str:
    """The bundled mite model with ``initial`` individuals on sites 1..initial."""
    src = corpus_text("mite")
    bound = 48 - initial if bound is None else bound
    body = "".join(f"  1 of s.P at {l};\n" for l in range(1, initial + 1))
    src = re.sub(r"(system \{\n)(  1 of s\.P at \d+;\n)+", lambda m: m.group(1) + body, src)
    return re.sub(r"bound \d+;", f"bound {bound};", src)


@pytest.fixture
def engine_for():
    def make(model):
        e = Engine(model)
        return e, e.initial()

    return make
