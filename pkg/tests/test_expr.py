from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from palps.expr import Bottom, Environment, env_add, env_merge, env_remove, eval_arith, eval_bool, substitute_myloc
from palps.model import AttributeTable
from palps.parser import parse_arith, parse_predicate

NO_ATTRS = AttributeTable()
SP = ("s", "t")


def env(*triples):
    return Environment.from_triples(triples)


def test_add_fresh_entry():
    assert env_add(env(), "s", "l1") == env(("l1", "s", 1))


def test_add_existing_entry():
    assert env_add(env(("l1", "s", 2)), "s", "l1") == env(("l1", "s", 3))


def test_add_keeps_species_apart():
    assert env_add(env(("l1", "s", 1)), "t", "l1") == env(("l1", "s", 1), ("l1", "t", 1))


def test_remove_last_deletes_entry():
    assert env_remove(env(("l1", "s", 1)), "s", "l1") == env()


def test_remove_decrements():
    assert env_remove(env(("l1", "s", 3)), "s", "l1") == env(("l1", "s", 2))


def test_remove_absent_is_bottom():
    with pytest.raises(Bottom):
        env_remove(env(), "s", "l1")


def test_merge_cancels():
    assert env_merge(env(("l", "s", 2)), env(("l", "s", 1)), env(("l", "s", 3))) == env(("l", "s", 2))


def test_merge_single_removal():
    assert env_merge(env(("l", "s", 1)), env(), env(("l", "s", 1))) == env()


def test_merge_double_removal_is_bottom():
    with pytest.raises(Bottom):
        env_merge(env(("l", "s", 1)), env(), env())


def test_zero_counts_rejected():
    with pytest.raises(ValueError):
        env(("l", "s", 0))


def arith(text):
    return parse_arith(text, SP)


def test_count_lookup():
    assert eval_arith(env(("l1", "s", 2)), NO_ATTRS, arith("s@l1")) == 2


def test_absent_count_is_zero():
    assert eval_arith(env(("l1", "s", 2)), NO_ATTRS, arith("s@l2")) == 0


def test_total_at_myloc():
    assert eval_arith(env(("l1", "s", 2), ("l1", "t", 3)), NO_ATTRS, arith("@myloc"), "l1") == 5


def test_attribute_lookup():
    attrs = AttributeTable.build({("theta", "l1"): Fraction(3, 2)})
    w = parse_arith("theta@myloc * 2", SP, {"theta"})
    assert eval_arith(env(), attrs, w, "l1") == 3


def test_bool_examples():
    E = env(("l1", "s", 2))
    assert eval_bool(E, NO_ATTRS, parse_predicate("true", SP))
    assert not eval_bool(E, NO_ATTRS, parse_predicate("s@l1 = 1", SP))
    assert eval_bool(E, NO_ATTRS, parse_predicate("!(s@l1 >= 3) & s@l1 <= 2", SP))


LOCS = ["l1", "l2", "l3"]
envs = st.dictionaries(st.tuples(st.sampled_from(LOCS), st.sampled_from(SP)), st.integers(1, 5)).map(Environment)


@given(envs, st.sampled_from(LOCS))
def test_total_is_sum_over_species(E, loc):
    total = eval_arith(E, NO_ATTRS, arith(f"@{loc}"))
    assert total == sum(eval_arith(E, NO_ATTRS, arith(f"{s}@{loc}")) for s in SP)


@given(envs, st.sampled_from(LOCS), st.sampled_from(LOCS))
def test_myloc_substitution(E, here, elsewhere):
    w = arith("s@myloc + 2 * t@myloc - @myloc")
    assert eval_arith(E, NO_ATTRS, w, here) == eval_arith(E, NO_ATTRS, substitute_myloc(w, here), elsewhere)


@given(envs, envs)
def test_merge_with_self_is_identity(E, F):
    assert env_merge(E, E, F) == F
