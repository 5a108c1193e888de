import dataclasses
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from kychain import crypto
from kychain.encoding import canonical_decode, canonical_encode
from kychain.errors import AuthorizationError, IntegrityError, ValidationError
from kychain.model import (
    BASE_TYPES,
    Certificate,
    ClientSecret,
    Doc,
    Evidence,
    Timestamp,
    Tran,
    check_doc_type,
    doc_from_text,
    doc_to_text,
    encode_evidence_set,
    evidence_digest,
    seal,
    tran_from_text,
    tran_to_text,
    unseal,
)

fields = st.lists(st.binary(max_size=40), max_size=6)


def make_secret(seed=0):
    r = random.Random(seed).randbytes
    kp = crypto.sig_keygen(r)
    return ClientSecret(kp.pk, kp.sigk, r(32))


def stamp(entry, ms=1000, seq=0):
    return Tran.stamp(entry, Timestamp(ms, seq))


# -- canonical encoding -------------------------------------------------------------

def test_empty_list_is_zero_count():
    assert canonical_encode([]) == bytes(8)


def test_single_field_layout():
    assert canonical_encode([b"ab"]) == bytes(7) + b"\x01" + bytes(7) + b"\x02" + b"ab"


def test_split_points_are_distinguished():
    assert canonical_encode([b"a", b"b"]) != canonical_encode([b"ab", b""])
    assert canonical_encode([b"ab"]) != canonical_encode([b"a", b"b"])


@given(fields)
def test_encode_decode_round_trip(parts):
    assert canonical_decode(canonical_encode(parts)) == parts


@given(fields, fields)
def test_encoding_is_injective(a, b):
    assert (canonical_encode(a) == canonical_encode(b)) == (a == b)


@given(fields.filter(bool), st.data())
def test_truncated_encoding_rejected(parts, data):
    raw = canonical_encode(parts)
    cut = data.draw(st.integers(0, len(raw) - 1))
    with pytest.raises(ValueError):
        canonical_decode(raw[:cut])


def test_trailing_bytes_rejected():
    with pytest.raises(ValueError):
        canonical_decode(canonical_encode([b"x"]) + b"\0")


def test_non_bytes_field_rejected():
    with pytest.raises(TypeError):
        canonical_encode(["str"])


# -- types and timestamps ---------------------------------------------------------------

@pytest.mark.parametrize("t", [*BASE_TYPES, "other:utility", "other:a-b_9"])
def test_known_doc_types(t):
    assert check_doc_type(t) == t


@pytest.mark.parametrize("t", ["", "Passport", "other:", "other:UP", "visa", "other:" + "x" * 33])
def test_unknown_doc_types(t):
    with pytest.raises(ValidationError):
        check_doc_type(t)


def test_doc_rejects_unknown_type():
    with pytest.raises(ValidationError):
        Doc(b"p" * 32, "visa", b"")


@given(st.integers(0, 2**62), st.integers(0, 2**20))
def test_timestamp_text_round_trip(ms, seq):
    t = Timestamp(ms, seq)
    assert Timestamp.parse(str(t)) == t


def test_timestamp_order_breaks_ties_by_seq():
    assert Timestamp(5, 1) > Timestamp(5, 0)
    assert Timestamp(6, 0) > Timestamp(5, 9)


# -- seal / unseal ----------------------------------------------------------------

@given(st.sampled_from(BASE_TYPES), st.binary(max_size=1500), st.lists(st.binary(min_size=32, max_size=32),
                                                                       max_size=3))
def test_seal_unseal_round_trip(doc_type, data, acc):
    sk = make_secret()
    doc = Doc(sk.pk, doc_type, data, (), tuple(acc))
    entry = seal(sk, doc)
    assert entry.auth_valid()
    assert unseal(sk, stamp(entry)) == doc


def test_desc_certificates_round_trip():
    sk, issuer = make_secret(1), crypto.sig_keygen()
    cert = Certificate.issue(issuer.sigk, sk.pk, b"P" * 32, [Evidence("bill", Timestamp(1, 0), b"x")])
    doc = Doc(sk.pk, "bill", b"data", (cert,), (issuer.pk,))
    assert unseal(sk, seal(sk, doc)).desc == (cert,)


def test_seal_uses_three_distinct_keys():
    sk = make_secret(2)
    entry = seal(sk, Doc(sk.pk, "passport", b"d", (), (b"a" * 32,)))
    k1, k2, k3 = (sk.key(entry.recid, i) for i in (1, 2, 3))
    assert crypto.se_decrypt(k1, entry.cdata) == b"d"
    assert crypto.se_decrypt(k3, entry.cacc[0]) == b"a" * 32
    assert crypto.se_decrypt(k1, entry.cacc[0]) is None
    assert crypto.se_decrypt(k3, entry.cdata) is None
    assert len({k1, k2, k3}) == 3


def test_seal_rejects_foreign_doc():
    a, b = make_secret(3), make_secret(4)
    with pytest.raises(AuthorizationError):
        seal(a, Doc(b.pk, "bill", b""))


def test_unseal_rejects_foreign_record():
    a, b = make_secret(3), make_secret(4)
    t = stamp(seal(a, Doc(a.pk, "bill", b"")))
    with pytest.raises(AuthorizationError):
        unseal(b, t)


def test_swapped_cdata_fails_to_decrypt():
    sk = make_secret(5)
    t1 = stamp(seal(sk, Doc(sk.pk, "bill", b"one")))
    t2 = stamp(seal(sk, Doc(sk.pk, "bill", b"two")))
    mixed = dataclasses.replace(t1, cdata=t2.cdata)
    assert not mixed.auth_valid()
    with pytest.raises(IntegrityError):
        unseal(sk, mixed)


@pytest.mark.parametrize("fld", ["recid", "doc_type", "cdata", "cacc", "auth"])
def test_signed_field_changes_break_auth(fld):
    sk = make_secret(6)
    e = seal(sk, Doc(sk.pk, "passport", b"abc", (), (b"c" * 32,)))
    other = seal(sk, Doc(sk.pk, "bill", b"xyz", (), (b"d" * 32,)))
    changed = dataclasses.replace(e, **{fld: getattr(other, fld)})
    assert not changed.auth_valid()


@given(st.integers(0, 10_000), st.integers(0, 7))
def test_bit_flip_anywhere_in_record_is_noticed(pos, bit):
    sk = make_secret(7)
    t = stamp(seal(sk, Doc(sk.pk, "passport", b"abc", (), (b"c" * 32,))))
    raw = bytearray(t.to_bytes())
    pos %= len(raw)
    raw[pos] ^= 1 << bit
    try:
        mutated = Tran.from_bytes(bytes(raw))
    except (ValueError, UnicodeDecodeError):
        return
    assert mutated.digest() != t.digest()


def test_serialized_record_contains_no_key_material():
    sk = make_secret(8)
    t = stamp(seal(sk, Doc(sk.pk, "passport", b"secret data", (), (b"c" * 32,))))
    blob = t.to_bytes() + tran_to_text(t).encode()
    for secret in (sk.seed, sk.sigk, b"secret data", *(sk.key(t.recid, i) for i in (1, 2, 3))):
        assert secret not in blob
        assert secret.hex().encode() not in blob


def test_secret_repr_hides_seed():
    sk = make_secret(9)
    assert sk.seed.hex() not in repr(sk) and sk.sigk.hex() not in repr(sk)


# -- encodings of records and certificates ---------------------------------------------

def test_tran_bytes_round_trip():
    sk = make_secret(10)
    t = stamp(seal(sk, Doc(sk.pk, "other:utility", b"abc", (), (b"c" * 32,))), 77, 3)
    assert Tran.from_bytes(t.to_bytes()) == t
    assert len(canonical_decode(t.to_bytes())) == 9


def test_tran_text_round_trip():
    sk = make_secret(11)
    t = stamp(seal(sk, Doc(sk.pk, "bill", b"abc")), 12, 1)
    assert tran_from_text(tran_to_text(t)) == t


def test_doc_text_round_trip():
    sk, issuer = make_secret(12), crypto.sig_keygen()
    cert = Certificate.issue(issuer.sigk, sk.pk, b"P" * 32, [])
    doc = Doc(sk.pk, "bill", b"\x00\xff", (cert,), (issuer.pk,))
    assert doc_from_text(doc_to_text(doc)) == doc


def test_text_kind_is_checked():
    sk = make_secret(13)
    doc = Doc(sk.pk, "bill", b"")
    with pytest.raises(ValidationError):
        tran_from_text(doc_to_text(doc))


ev = st.builds(Evidence, st.sampled_from(BASE_TYPES),
               st.builds(Timestamp, st.integers(0, 2**40), st.integers(0, 5)), st.binary(max_size=20))


@given(st.lists(ev, max_size=6), st.randoms())
def test_evidence_digest_ignores_order_and_duplicates(items, rnd):
    shuffled = list(items) + list(items[:2])
    rnd.shuffle(shuffled)
    assert encode_evidence_set(shuffled) == encode_evidence_set(items)
    assert evidence_digest(shuffled) == evidence_digest(items)


@given(ev)
def test_evidence_bytes_round_trip(e):
    assert Evidence.from_bytes(e.to_bytes()) == e


def test_certificate_round_trip_and_signature():
    issuer = crypto.sig_keygen()
    cert = Certificate.issue(issuer.sigk, b"s" * 32, b"p" * 32, [Evidence("bill", Timestamp(1), b"")])
    assert cert.signature_valid()
    assert Certificate.from_bytes(cert.to_bytes()) == cert
    assert not dataclasses.replace(cert, subject_pk=b"t" * 32).signature_valid()
    assert not dataclasses.replace(cert, evidence_digest=b"\0" * 32).signature_valid()
