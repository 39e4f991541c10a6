import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuralblock.oracle import enumerate_marginals
from neuralblock.uai import (
    UaiParseError,
    parse_uai,
    parse_uai_evidence,
    serialize_uai,
    serialize_uai_evidence,
)

from .helpers import random_binary_bn

MINIMAL_BAYES = """BAYES
1
2
1
1 0

2
 0.4 0.6
"""


def test_parse_minimal_bayes():
    model = parse_uai(MINIMAL_BAYES)
    assert model.kind == "directed"
    assert model.num_vars == 1
    assert model.factors[0].values.tolist() == [0.4, 0.6]


def test_parse_accepts_bytes():
    model = parse_uai(MINIMAL_BAYES.encode())
    assert model.num_vars == 1


def test_parse_markov():
    text = "MARKOV\n2\n2 2\n1\n2 0 1\n\n4\n1 2 3 4\n"
    model = parse_uai(text)
    assert model.kind == "undirected"
    assert model.factors[0].values.tolist() == [[1, 2], [3, 4]]


def test_round_trip_marginals_identical():
    rng = np.random.default_rng(11)
    from .helpers import grid_bn

    model = grid_bn(3, 3, rng)
    again = parse_uai(serialize_uai(model))
    a = enumerate_marginals(model)
    b = enumerate_marginals(again)
    for pa, pb in zip(a.probs, b.probs):
        assert np.abs(pa - pb).max() < 1e-12


@given(seed=st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_round_trip_tables_lossless(seed):
    rng = np.random.default_rng(seed)
    model = random_binary_bn(int(rng.integers(1, 8)), rng, p_determ=0.3)
    again = parse_uai(serialize_uai(model))
    assert again.kind == model.kind
    assert again.cards == model.cards
    for fa, fb in zip(model.factors, again.factors):
        assert fa.scope == fb.scope
        assert np.abs(fa.values - fb.values).max() == 0.0  # %.17g is exact


def test_evidence_round_trip():
    assert parse_uai_evidence("1 2 0") == {2: 0}
    ev = {3: 1, 0: 1}
    assert parse_uai_evidence(serialize_uai_evidence(ev)) == ev
    assert parse_uai_evidence("") == {}


def test_parse_error_reports_position():
    with pytest.raises(UaiParseError) as err:
        parse_uai("BAYES\n1\n2\n1\n1 0\n2\n0.4 oops\n")
    assert err.value.line == 7
    assert "oops" in str(err.value)


def test_bad_preamble():
    with pytest.raises(UaiParseError):
        parse_uai("MRF\n1\n2\n0\n")


def test_table_length_mismatch():
    with pytest.raises(UaiParseError) as err:
        parse_uai("BAYES\n1\n2\n1\n1 0\n3\n0.1 0.2 0.7\n")
    assert "implies 2" in str(err.value)


def test_unknown_scope_variable():
    with pytest.raises(UaiParseError):
        parse_uai("MARKOV\n1\n2\n1\n1 4\n2\n0.5 0.5\n")


def test_truncated_input():
    with pytest.raises(UaiParseError):
        parse_uai("BAYES\n2\n2 2\n2\n1 0\n")
