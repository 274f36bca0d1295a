import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sublayer_lab import arch_dsl as dsl
from sublayer_lab.arch_dsl import (
    HalfCounts,
    OrderingError,
    SublayerKind,
    format_ordering,
    half_counts,
    load_table_records,
    parse_ordering,
    sample_budgeted,
    sample_permutation,
    sandwich,
    sandwich_decoder,
    split_halves,
    sublayer_param_count,
    total_units,
)

S, F, C = (
    SublayerKind.SELF_ATTENTION,
    SublayerKind.FEEDFORWARD,
    SublayerKind.CROSS_ATTENTION,
)


# -- parsing and formatting --------------------------------------------------


def test_parse_basic():
    assert parse_ordering("sfsfsf").kinds == (S, F, S, F, S, F)
    assert parse_ordering("s").kinds == (S,)
    assert parse_ordering("scf", decoder_mode=True).kinds == (S, C, F)


def test_parse_errors_carry_index():
    with pytest.raises(OrderingError) as e:
        parse_ordering("sfx")
    assert e.value.index == 2 and "x" in str(e.value)

    with pytest.raises(OrderingError) as e:
        parse_ordering("scf")  # encoder mode
    assert e.value.index == 1

    with pytest.raises(OrderingError) as e:
        parse_ordering("cf", decoder_mode=True)  # c not after s
    assert e.value.index == 0

    with pytest.raises(OrderingError) as e:
        parse_ordering("sfc f".replace(" ", ""), decoder_mode=True)  # c after f
    assert e.value.index == 2

    with pytest.raises(OrderingError):
        parse_ordering("")


def test_format_round_trip_examples():
    assert format_ordering(parse_ordering("sf")) == "sf"
    assert format_ordering(parse_ordering("scf", True)) == "scf"


def test_sandwich_16_6_exact_string():
    expected = "s" * 6 + "sf" * 10 + "f" * 6
    got = format_ordering(sandwich(16, 6))
    assert got == expected
    assert re.fullmatch(r"s{6}(?:sf){10}f{6}", got)


@given(st.text(alphabet="sf", min_size=1, max_size=64))
def test_round_trip_property_encoder(text):
    assert format_ordering(parse_ordering(text)) == text


@given(st.lists(st.sampled_from(["s", "sc", "f"]), min_size=1, max_size=32))
def test_round_trip_property_decoder(units):
    text = "".join(units)
    assert format_ordering(parse_ordering(text, decoder_mode=True)) == text


# -- parameter accounting ----------------------------------------------------


def test_sublayer_param_count_values():
    assert sublayer_param_count(S, 1024) == 4_194_304
    assert sublayer_param_count(F, 1024) == 8_388_608
    assert sublayer_param_count(S, 1) == 4
    assert sublayer_param_count(C, 1024) == 4_194_304
    with pytest.raises(ValueError):
        sublayer_param_count(S, 0)


def test_total_units():
    assert total_units(parse_ordering("sfsfsf")) == 9
    assert total_units(parse_ordering("sf" * 16)) == 48
    assert total_units(parse_ordering("ssssff")) == 8


# -- sandwich construction ---------------------------------------------------


def test_sandwich_examples():
    assert format_ordering(sandwich(16, 0)) == "sf" * 16
    assert format_ordering(sandwich(16, 15)) == "s" * 16 + "f" * 16
    assert format_ordering(sandwich(3, 1)) == "ssfsff"
    with pytest.raises(ValueError):
        sandwich(4, 4)
    with pytest.raises(ValueError):
        sandwich(4, -1)


@given(st.integers(1, 64), st.data())
def test_sandwich_counts_and_regex(n, data):
    k = data.draw(st.integers(0, n - 1))
    spec = sandwich(n, k)
    assert spec.count(S) == n and spec.count(F) == n and len(spec) == 2 * n
    assert total_units(spec) == 3 * n
    pattern = rf"s{{{k}}}(?:sf){{{n - k}}}f{{{k}}}"
    assert re.fullmatch(pattern, format_ordering(spec))


def test_sandwich_decoder_examples():
    assert format_ordering(sandwich_decoder(3, 1)) == "scscfscff"
    assert format_ordering(sandwich_decoder(3, 0)) == "scfscfscf"
    assert format_ordering(sandwich_decoder(2, 1)) == "scscff"


@given(st.integers(1, 32), st.data())
def test_sandwich_decoder_projects_to_sandwich(n, data):
    k = data.draw(st.integers(0, n - 1))
    spec = sandwich_decoder(n, k)
    assert spec.count(S) == n and spec.count(C) == n and spec.count(F) == n
    stripped = format_ordering(spec).replace("c", "")
    assert stripped == format_ordering(sandwich(n, k))


# -- samplers -----------------------------------------------------------------


def test_sample_permutation_counts_and_determinism():
    spec = sample_permutation(16, 16, rng_seed=5)
    assert len(spec) == 32 and spec.count(S) == 16 and spec.count(F) == 16
    assert format_ordering(sample_permutation(16, 16, 5)) == format_ordering(spec)
    assert format_ordering(sample_permutation(1, 0, 123)) == "s"
    with pytest.raises(ValueError):
        sample_permutation(0, 0, 1)


def test_sample_permutation_uniform_over_three():
    counts = {"ssf": 0, "sfs": 0, "fss": 0}
    n = 1000
    for seed in range(n):
        counts[format_ordering(sample_permutation(2, 1, seed))] += 1
    for v in counts.values():
        # p=1/3, sigma ~ 0.0149; 5 sigma tolerance
        assert abs(v / n - 1 / 3) < 0.075


def test_sample_budgeted_exact_exhaustion():
    for seed in range(200):
        spec = sample_budgeted(48, seed)
        assert total_units(spec) == 48
        assert 24 <= len(spec) <= 48
    assert format_ordering(sample_budgeted(1, 9)) == "s"
    with pytest.raises(ValueError):
        sample_budgeted(0, 1)


def test_sample_budgeted_budget_two_decision_tree():
    outcomes = {format_ordering(sample_budgeted(2, seed)) for seed in range(64)}
    assert outcomes == {"ss", "f"}


# -- half splits ---------------------------------------------------------------


def test_split_halves_examples():
    cases = {
        "ssssff": ("ssss", "ff"),
        "sf": ("s", "f"),
        "fs": ("", "fs"),  # straddling sublayer goes to the top half
    }
    for text, (b, t) in cases.items():
        bottom, top = split_halves(parse_ordering(text))
        assert (format_ordering(bottom), format_ordering(top)) == (b, t)


def test_split_halves_rejects_decoder():
    with pytest.raises(ValueError):
        split_halves(parse_ordering("scf", True))


def test_half_counts_examples():
    assert half_counts(parse_ordering("ssssff")) == HalfCounts(4, 0, 0, 2)
    # independent hand tally of the first bundled table row
    row1 = "fsfsfffsffsfsssffsfssfssssffsffs"
    assert half_counts(parse_ordering(row1)) == HalfCounts(7, 8, 9, 8)


@given(st.text(alphabet="sf", min_size=1, max_size=48))
def test_split_concat_identity_and_conservation(text):
    spec = parse_ordering(text)
    bottom, top = split_halves(spec)
    assert format_ordering(bottom) + format_ordering(top) == text
    assert 2 * total_units(bottom) <= total_units(spec)
    hc = half_counts(spec)
    assert hc.bottom_s + hc.top_s == spec.count(S)
    assert hc.bottom_f + hc.top_f == spec.count(F)


# -- fixture ---------------------------------------------------------------------


def test_table_fixture_structure():
    rows = load_table_records()
    assert len(rows) == 50
    t1 = [r for r in rows if r["source"] == "table1"]
    t2 = [r for r in rows if r["source"] == "table2"]
    assert len(t1) == 25 and len(t2) == 25
    assert sum(r["baseline"] for r in rows) == 10
    interleaved = "sf" * 16
    for r in t1:
        spec = parse_ordering(r["ordering"])
        assert len(spec) == 32 and spec.count(S) == 16 and spec.count(F) == 16
    for r in t2:
        assert total_units(parse_ordering(r["ordering"])) == 48
    for r in rows:
        if r["baseline"]:
            assert r["ordering"] == interleaved
    # the five baseline dev perplexities average to the documented 18.65
    base = sorted({r["dev_ppl"] for r in rows if r["baseline"]})
    assert base == [18.25, 18.49, 18.54, 18.83, 19.13]
    assert abs(sum(base) / 5 - 18.648) < 1e-9
