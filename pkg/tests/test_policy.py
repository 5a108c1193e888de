import pytest
from hypothesis import given
from hypothesis import strategies as st

from kychain.errors import PolicyParseError, ValidationError
from kychain.model import BASE_TYPES, Doc, Evidence, Timestamp
from kychain.policy import (
    Clause,
    Policy,
    format_duration,
    parse_duration,
    parse_policy,
    policy_digest,
    policy_evaluate,
    policy_select,
)
from kychain.protocol import commit, update

from conftest import DAY, START_MS

NOW = START_MS
KYC = Policy.of(Clause("passport", 365 * DAY), Clause("bill", 90 * DAY, "min_size:64"))


def ev(t, age_days=0, data=b"x" * 100):
    return Evidence(t, Timestamp(NOW - age_days * DAY, 0), data)


@pytest.mark.parametrize("evidence,expected", [
    ([ev("passport", 10), ev("bill", 10)], True),
    ([ev("passport", 10)], False),
    ([ev("passport", 400), ev("bill", 10)], False),
    ([ev("passport", 10), ev("bill", 91)], False),
    ([ev("passport", 10), ev("bill", 90)], True),
    ([ev("passport", 10), ev("bill", 10, b"x" * 63)], False),
    ([ev("passport", 10), ev("bill", 10, b"x" * 63), ev("bill", 50)], True),
    ([ev("id_card"), ev("bill")], False),
])
def test_kyc_policy_cases(evidence, expected):
    assert policy_evaluate(KYC, evidence, NOW) is expected
    assert KYC(evidence, Timestamp(NOW, 3)) is expected


def test_empty_evidence_never_satisfies():
    assert not policy_evaluate(Policy.of(Clause("bill")), [], NOW)


def test_non_empty_predicate():
    p = Policy.of(Clause("bill", None, "non_empty"))
    assert not p([ev("bill", data=b"")], NOW)
    assert p([ev("bill", data=b"a")], NOW)


def test_future_evidence_counts_as_fresh():
    assert Policy.of(Clause("bill", DAY))([ev("bill", -5)], NOW)


evidence_st = st.lists(st.builds(
    Evidence, st.sampled_from(BASE_TYPES),
    st.builds(Timestamp, st.integers(NOW - 400 * DAY, NOW), st.just(0)),
    st.binary(max_size=100)), max_size=6)
clause_st = st.builds(Clause, st.sampled_from(BASE_TYPES),
                      st.one_of(st.none(), st.integers(1, 400 * DAY)),
                      st.one_of(st.none(), st.just("non_empty"), st.integers(0, 100).map(lambda n: f"min_size:{n}")))
policy_st = st.lists(clause_st, min_size=1, max_size=4).map(lambda cs: Policy(tuple(cs)))


@given(policy_st, evidence_st, evidence_st)
def test_adding_evidence_never_breaks_satisfaction(policy, a, extra):
    if policy(a, NOW):
        assert policy(a + extra, NOW)


@given(policy_st, evidence_st)
def test_evaluation_matches_brute_force(policy, evidence):
    want = bool(evidence) and all(
        any(e.doc_type == c.required_type
            and (c.max_age is None or NOW - e.etime.ms <= c.max_age)
            and (c.predicate is None or (len(e.data) > 0 if c.predicate == "non_empty"
                                         else len(e.data) >= int(c.predicate.split(":")[1])))
            for e in evidence)
        for c in policy.clauses)
    assert policy(evidence, NOW) is want


@given(st.lists(clause_st, min_size=1, max_size=4), st.randoms())
def test_digest_ignores_clause_order_and_duplicates(clauses, rnd):
    shuffled = clauses + clauses[:1]
    rnd.shuffle(shuffled)
    assert policy_digest(Policy(tuple(shuffled))) == policy_digest(Policy(tuple(clauses)))


def test_distinct_policies_have_distinct_ids():
    ids = {Policy.of(Clause("bill", d * DAY)).policy_id for d in range(1, 50)}
    ids.add(Policy.of(Clause("bill")).policy_id)
    ids.add(Policy.of(Clause("bill", None, "non_empty")).policy_id)
    assert len(ids) == 51


@given(policy_st)
def test_text_round_trip(policy):
    assert parse_policy(policy.to_text()) == policy
    assert Policy.parse(policy.to_text()).policy_id == policy.policy_id


def test_parse_with_comments_and_units():
    p = parse_policy("# kyc\ntype:passport max_age:365d\n\ntype:bill max_age:2160h pred:min_size:64  # utility\n")
    assert p == KYC


@pytest.mark.parametrize("text", [
    "",
    "# only a comment\n",
    "max_age:5d\n",
    "type:visa\n",
    "type:bill colour:red\n",
    "type:bill type:passport\n",
    "type:bill max_age:5y\n",
    "type:bill max_age:0\n",
    "type:bill pred:is_pdf\n",
    "type bill\n",
])
def test_parser_rejections(text):
    with pytest.raises(PolicyParseError):
        parse_policy(text)


def test_empty_policy_rejected():
    with pytest.raises(ValidationError):
        Policy(())


@pytest.mark.parametrize("text,ms", [("15", 15), ("15ms", 15), ("2s", 2000), ("3m", 180_000),
                                     ("1h", 3_600_000), ("365d", 365 * DAY)])
def test_durations(text, ms):
    assert parse_duration(text) == ms


@given(st.integers(1, 10**12))
def test_duration_format_round_trip(ms):
    assert parse_duration(format_duration(ms)) == ms


def test_select_returns_latest_matching_records(system, alice, bob, clock):
    L = system.ledger
    p = commit(system, alice, Doc(alice.pk, "passport", b"p"))
    b0 = commit(system, alice, Doc(alice.pk, "bill", b"b0"))
    commit(system, alice, Doc(alice.pk, "occupation", b"o"))
    commit(system, bob, Doc(bob.pk, "bill", b"x"))
    clock.advance(5)
    b1 = update(system, alice, b0.recid, b"b1")
    got = policy_select(KYC, alice.pk, L)
    assert got == [p, b1]
    assert policy_select(KYC, bob.pk, L)[0].pk == bob.pk
    assert policy_select(Policy.of(Clause("location")), alice.pk, L) == []
