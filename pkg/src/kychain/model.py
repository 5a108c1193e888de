"""KYC records in plaintext and sealed form, plus their byte encodings.

A :class:`Doc` is what the client holds. :func:`seal` turns it into an
:class:`Entry` (encrypted under per-record keys and signed), and the ledger
stamps an Entry into a :class:`Tran`. The text format used by the CLI for
Docs and Trans is JSON with every byte field hex-encoded.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from . import crypto
from .crypto import Ciphertext, RandomSource
from .encoding import canonical_decode, canonical_encode, read_u64, u64
from .errors import AuthorizationError, IntegrityError, ValidationError

BASE_TYPES = ("passport", "id_card", "location", "occupation", "bill")
_OTHER_TYPE = re.compile(r"other:[a-z0-9_\-]{1,32}")


def check_doc_type(doc_type: str) -> str:
    if doc_type in BASE_TYPES or _OTHER_TYPE.fullmatch(doc_type):
        return doc_type
    raise ValidationError(f"unknown document type {doc_type!r}")


class Timestamp(NamedTuple):
    """Ledger time: wall-clock milliseconds plus a tiebreak counter."""

    ms: int
    seq: int = 0

    def __str__(self) -> str:
        return f"{self.ms}.{self.seq}"

    @classmethod
    def parse(cls, text: str) -> "Timestamp":
        ms, _, seq = text.partition(".")
        return cls(int(ms), int(seq or 0))


@dataclass(frozen=True)
class ClientSecret:
    pk: bytes
    sigk: bytes
    seed: bytes

    def __repr__(self) -> str:
        # never print secret material
        return f"ClientSecret(pk={self.pk.hex()[:16]}...)"

    def key(self, recid: bytes, index: int) -> bytes:
        return crypto.prf_derive(self.seed, self.pk, recid, index)


@dataclass(frozen=True)
class Evidence:
    doc_type: str
    etime: Timestamp
    data: bytes

    def to_bytes(self) -> bytes:
        return canonical_encode(
            [self.doc_type.encode(), u64(self.etime.ms), u64(self.etime.seq), self.data]
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Evidence":
        t, ms, seq, data = canonical_decode(raw)
        return cls(t.decode(), Timestamp(read_u64(ms), read_u64(seq)), data)


def encode_evidence_set(evidence: Iterable[Evidence]) -> bytes:
    """Order-independent canonical encoding of an evidence set."""
    return canonical_encode(sorted({e.to_bytes() for e in evidence}))


def evidence_digest(evidence: Iterable[Evidence]) -> bytes:
    return crypto.sha256(encode_evidence_set(evidence))


@dataclass(frozen=True)
class Certificate:
    certifier_pk: bytes
    subject_pk: bytes
    policy_id: bytes
    evidence_digest: bytes
    sig: bytes

    @staticmethod
    def signing_message(subject_pk: bytes, policy_id: bytes, digest: bytes) -> bytes:
        return canonical_encode([subject_pk, policy_id, digest])

    @classmethod
    def issue(cls, certifier_sigk: bytes, subject_pk: bytes, policy_id: bytes,
              evidence: Iterable[Evidence]) -> "Certificate":
        digest = evidence_digest(evidence)
        sig = crypto.sig_sign(certifier_sigk, cls.signing_message(subject_pk, policy_id, digest))
        return cls(crypto.public_key_of(certifier_sigk), subject_pk, policy_id, digest, sig)

    def signature_valid(self) -> bool:
        msg = self.signing_message(self.subject_pk, self.policy_id, self.evidence_digest)
        return crypto.sig_verify(self.certifier_pk, msg, self.sig)

    def to_bytes(self) -> bytes:
        return canonical_encode(
            [self.certifier_pk, self.subject_pk, self.policy_id, self.evidence_digest, self.sig]
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Certificate":
        parts = canonical_decode(raw)
        if len(parts) != 5:
            raise ValueError("certificate must have 5 fields")
        return cls(*parts)


@dataclass(frozen=True)
class Doc:
    pk: bytes
    doc_type: str
    data: bytes
    desc: tuple[Certificate, ...] = ()
    acc: tuple[bytes, ...] = ()

    def __post_init__(self):
        check_doc_type(self.doc_type)
        object.__setattr__(self, "desc", tuple(self.desc))
        object.__setattr__(self, "acc", tuple(self.acc))


def _ct_list(cts: Iterable[Ciphertext]) -> bytes:
    return canonical_encode([c.to_bytes() for c in cts])


def _ct_list_parse(raw: bytes) -> tuple[Ciphertext, ...]:
    return tuple(Ciphertext.from_bytes(p) for p in canonical_decode(raw))


@dataclass(frozen=True)
class Entry:
    pk: bytes
    recid: bytes
    doc_type: str
    cdata: Ciphertext
    cdesc: tuple[Ciphertext, ...]
    cacc: tuple[Ciphertext, ...]
    auth: bytes

    def signed_payload(self) -> bytes:
        return auth_message(self.recid, self.doc_type, self.cdata, self.cdesc, self.cacc)

    def auth_valid(self) -> bool:
        return crypto.sig_verify(self.pk, self.signed_payload(), self.auth)

    def to_bytes(self) -> bytes:
        return canonical_encode(self._fields())

    def _fields(self) -> list[bytes]:
        return [
            self.pk,
            self.recid,
            self.doc_type.encode(),
            self.cdata.to_bytes(),
            _ct_list(self.cdesc),
            _ct_list(self.cacc),
            self.auth,
        ]


@dataclass(frozen=True)
class Tran(Entry):
    etime: Timestamp = field(default=Timestamp(0, 0))

    @classmethod
    def stamp(cls, entry: Entry, etime: Timestamp) -> "Tran":
        return cls(entry.pk, entry.recid, entry.doc_type, entry.cdata,
                   entry.cdesc, entry.cacc, entry.auth, etime)

    def to_bytes(self) -> bytes:
        return canonical_encode(self._fields() + [u64(self.etime.ms), u64(self.etime.seq)])

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Tran":
        parts = canonical_decode(raw)
        if len(parts) != 9:
            raise ValueError("Tran encoding must have 9 fields")
        pk, recid, t, cdata, cdesc, cacc, auth, ms, seq = parts
        return cls(pk, recid, t.decode("utf-8", "surrogateescape"), Ciphertext.from_bytes(cdata),
                   _ct_list_parse(cdesc), _ct_list_parse(cacc), auth,
                   Timestamp(read_u64(ms), read_u64(seq)))

    def digest(self) -> bytes:
        return crypto.sha256(self.to_bytes())


def auth_message(recid: bytes, doc_type: str, cdata: Ciphertext, cdesc: Iterable[Ciphertext],
                 cacc: Iterable[Ciphertext]) -> bytes:
    # the recid is signed too, so a record cannot be moved to another id unnoticed
    return canonical_encode([recid, doc_type.encode(), cdata.to_bytes(), _ct_list(cdesc), _ct_list(cacc)])


def seal(sk: ClientSecret, doc: Doc, rng: RandomSource | None = None) -> Entry:
    if doc.pk != sk.pk:
        raise AuthorizationError("document public key does not match the client secret")
    recid = crypto.random_bytes(crypto.RECID_SIZE, rng)
    k1, k2, k3 = (sk.key(recid, i) for i in (1, 2, 3))
    cdata = crypto.se_encrypt(k1, doc.data, rng)
    cdesc = tuple(crypto.se_encrypt(k2, c.to_bytes(), rng) for c in doc.desc)
    cacc = tuple(crypto.se_encrypt(k3, pk, rng) for pk in doc.acc)
    auth = crypto.sig_sign(sk.sigk, auth_message(recid, doc.doc_type, cdata, cdesc, cacc))
    return Entry(sk.pk, recid, doc.doc_type, cdata, cdesc, cacc, auth)


def _must_decrypt(key: bytes, ct: Ciphertext, what: str) -> bytes:
    pt = crypto.se_decrypt(key, ct)
    if pt is None:
        raise IntegrityError(f"{what} failed to decrypt")
    return pt


def unseal(sk: ClientSecret, tran: Entry) -> Doc:
    if tran.pk != sk.pk:
        raise AuthorizationError("record belongs to a different client")
    k1, k2, k3 = (sk.key(tran.recid, i) for i in (1, 2, 3))
    data = _must_decrypt(k1, tran.cdata, "data")
    try:
        desc = tuple(Certificate.from_bytes(_must_decrypt(k2, c, "desc")) for c in tran.cdesc)
    except ValueError as exc:
        raise IntegrityError(f"malformed certificate in desc: {exc}") from exc
    acc = tuple(_must_decrypt(k3, c, "acc") for c in tran.cacc)
    return Doc(tran.pk, tran.doc_type, data, desc, acc)


# -- text objects -------------------------------------------------------------

def _cert_obj(c: Certificate) -> dict:
    return {
        "certifier_pk": c.certifier_pk.hex(),
        "subject_pk": c.subject_pk.hex(),
        "policy_id": c.policy_id.hex(),
        "evidence_digest": c.evidence_digest.hex(),
        "sig": c.sig.hex(),
    }


def _cert_from(obj: dict) -> Certificate:
    return Certificate(*(bytes.fromhex(obj[k]) for k in
                         ("certifier_pk", "subject_pk", "policy_id", "evidence_digest", "sig")))


def doc_to_text(doc: Doc) -> str:
    return json.dumps({
        "kind": "doc",
        "pk": doc.pk.hex(),
        "type": doc.doc_type,
        "data": doc.data.hex(),
        "desc": [_cert_obj(c) for c in doc.desc],
        "acc": [pk.hex() for pk in doc.acc],
    }, indent=2)


def doc_from_text(text: str) -> Doc:
    obj = json.loads(text)
    if obj.get("kind") != "doc":
        raise ValidationError("not a doc object")
    return Doc(bytes.fromhex(obj["pk"]), obj["type"], bytes.fromhex(obj["data"]),
               tuple(_cert_from(c) for c in obj["desc"]),
               tuple(bytes.fromhex(a) for a in obj["acc"]))


def tran_to_text(tran: Tran) -> str:
    return json.dumps({
        "kind": "tran",
        "pk": tran.pk.hex(),
        "etime": str(tran.etime),
        "recid": tran.recid.hex(),
        "type": tran.doc_type,
        "cdata": tran.cdata.to_bytes().hex(),
        "cdesc": [c.to_bytes().hex() for c in tran.cdesc],
        "cacc": [c.to_bytes().hex() for c in tran.cacc],
        "auth": tran.auth.hex(),
    }, indent=2)


def tran_from_text(text: str) -> Tran:
    obj = json.loads(text)
    if obj.get("kind") != "tran":
        raise ValidationError("not a tran object")
    ct = lambda h: Ciphertext.from_bytes(bytes.fromhex(h))  # noqa: E731
    return Tran(bytes.fromhex(obj["pk"]), bytes.fromhex(obj["recid"]), obj["type"],
                ct(obj["cdata"]), tuple(ct(h) for h in obj["cdesc"]),
                tuple(ct(h) for h in obj["cacc"]), bytes.fromhex(obj["auth"]),
                Timestamp.parse(obj["etime"]))
