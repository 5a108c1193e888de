"""The certification scheme: setup, registration, commit/update, Prove/Certify, Onboard.

Prove and Certify exchange a single :class:`KeyMessage`. The channel between
them is modelled in-process; ``KeyMessage.channel_authentic`` records
whether the sender really is the client it claims to be, and the security
game harness clears it to simulate impersonation.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

from . import crypto
from .crypto import RandomSource, SigningKeyPair
from .encoding import canonical_decode, canonical_encode
from .errors import (
    AuthorizationError,
    ConfigurationError,
    DomainError,
    IntegrityError,
    LedgerRejection,
    NotFoundError,
    ProtocolAbort,
    ValidationError,
)
from .ledger import Clock, Ledger
from .model import (
    Certificate,
    ClientSecret,
    Doc,
    Evidence,
    Tran,
    evidence_digest,
    seal,
    unseal,
)
from .policy import Policy, policy_evaluate, policy_select

REGLOG_FILE = "reglog.txt"
CERTIFIERS_FILE = "certifiers.keys"

_B36 = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ"
_CHECK = "ABCD"


# -- registration --------------------------------------------------------------

def upi_check_char(body: str) -> str:
    """Check letter for a UPI body: base-36 digit sum mod 4, mapped onto A-D."""
    return _CHECK[sum(_B36.index(c) for c in body) % 4]


def make_upi(body: str) -> str:
    body = body.upper()
    return body + upi_check_char(body)


def validate_upi(upi: str) -> str:
    if not isinstance(upi, str) or len(upi) < 2:
        raise ValidationError("UPI must be a string of at least two characters")
    if any(c not in _B36 for c in upi):
        raise ValidationError("UPI must be upper-case alphanumeric")
    if upi[-1] != upi_check_char(upi[:-1]):
        raise ValidationError("UPI check character mismatch")
    return upi


class RegLog:
    """Registered client keys and the UPI each one is linked to."""

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[bytes, str] = {}
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RegLog":
        log = cls(path)
        for line in Path(path).read_text().splitlines():
            if line.strip():
                pk_hex, upi = line.split("\t")
                log._entries[bytes.fromhex(pk_hex)] = upi
        return log

    def add(self, pk: bytes, upi: str) -> None:
        with self._lock:
            if pk in self._entries:
                raise ValidationError("public key already registered")
            self._entries[pk] = upi
            if self.path is not None:
                with open(self.path, "a") as fh:
                    fh.write(f"{pk.hex()}\t{upi}\n")

    def __contains__(self, pk: object) -> bool:
        return pk in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def upi_of(self, pk: bytes) -> str | None:
        return self._entries.get(pk)

    def keys_for(self, upi: str) -> list[bytes]:
        return [pk for pk, u in self._entries.items() if u == upi]

    def items(self):
        return list(self._entries.items())


@dataclass
class SystemParams:
    ledger: Ledger
    certifiers: dict[bytes, SigningKeyPair]
    reglog: RegLog
    rng: RandomSource | None = None

    @property
    def certifier_pks(self) -> tuple[bytes, ...]:
        return self.ledger.params.certifier_registry

    def certifier(self, index: int) -> SigningKeyPair:
        return self.certifiers[self.certifier_pks[index]]

    def is_certifier(self, pk: bytes) -> bool:
        return pk in self.certifier_pks

    def is_registered(self, pk: bytes) -> bool:
        return pk in self.reglog or self.is_certifier(pk)


def kycs_setup(security_param: int = 128, n_certifiers: int = 1, *, clock: Clock | None = None,
               rng: RandomSource | None = None, path: str | os.PathLike | None = None) -> SystemParams:
    if n_certifiers < 1:
        raise ConfigurationError("at least one certifier is required")
    keypairs = [crypto.sig_keygen(rng) for _ in range(n_certifiers)]
    root = Path(path) if path is not None else None
    if root is not None:
        root.mkdir(parents=True, exist_ok=True)
        (root / REGLOG_FILE).write_text("")
        keyfile = root / CERTIFIERS_FILE
        keyfile.write_text("".join(f"{kp.pk.hex()}\t{kp.sigk.hex()}\n" for kp in keypairs))
        keyfile.chmod(0o600)
    reglog = RegLog(root / REGLOG_FILE if root is not None else None)
    ledger = Ledger(reglog, clock, root)
    ledger.setup(security_param, [kp.pk for kp in keypairs])
    return SystemParams(ledger, {kp.pk: kp for kp in keypairs}, reglog, rng)


def open_system(path: str | os.PathLike, *, clock: Clock | None = None,
                rng: RandomSource | None = None) -> SystemParams:
    root = Path(path)
    reglog = RegLog.load(root / REGLOG_FILE)
    ledger = Ledger.open(root, reglog, clock)
    certifiers = {}
    for line in (root / CERTIFIERS_FILE).read_text().splitlines():
        pk_hex, sigk_hex = line.split("\t")
        certifiers[bytes.fromhex(pk_hex)] = SigningKeyPair(bytes.fromhex(pk_hex), bytes.fromhex(sigk_hex))
    return SystemParams(ledger, certifiers, reglog, rng)


def register(params: SystemParams, upi: str) -> ClientSecret:
    validate_upi(upi)
    kp = crypto.sig_keygen(params.rng)
    seed = crypto.random_bytes(crypto.SEED_SIZE, params.rng)
    params.reglog.add(kp.pk, upi)
    return ClientSecret(kp.pk, kp.sigk, seed)


# -- records -----------------------------------------------------------------------

def commit(params: SystemParams, sk: ClientSecret, doc: Doc) -> Tran:
    return params.ledger.append(seal(sk, doc, params.rng))


def update(params: SystemParams, sk: ClientSecret, recid: bytes, new_data: bytes | None = None,
           new_acc: Iterable[bytes] | None = None,
           new_desc: Iterable[Certificate] | None = None) -> Tran:
    if new_data is None and new_acc is None and new_desc is None:
        raise DomainError("update needs at least one of data, acc, desc")
    if sk.pk not in params.reglog:
        raise LedgerRejection("unregistered public key")
    old = params.ledger.get(recid)
    if old is None:
        raise NotFoundError("no live record with that id")
    if old.pk != sk.pk:
        raise AuthorizationError("record belongs to a different client")
    doc = unseal(sk, old)
    new = Doc(
        sk.pk,
        doc.doc_type,
        new_data if new_data is not None else doc.data,
        tuple(new_desc) if new_desc is not None else doc.desc,
        tuple(new_acc) if new_acc is not None else doc.acc,
    )
    return params.ledger.append(seal(sk, new, params.rng), supersedes=recid)


def remove(params: SystemParams, sk: ClientSecret, recid: bytes) -> bool:
    return params.ledger.remove(sk, recid)


# -- Prove / Certify ---------------------------------------------------------------

@dataclass(frozen=True)
class KeyMessage:
    """Data keys released by the client, bound to the session parties and policy.

    Wire form: ``canonical_encode([client_pk, certifier_pk, policy_id,
    canonical_encode(recids), canonical_encode(keys)])``. The
    ``channel_authentic`` flag belongs to the channel, not to the bytes.
    """

    client_pk: bytes
    certifier_pk: bytes
    policy_id: bytes
    recids: tuple[bytes, ...]
    keys: tuple[bytes, ...]
    channel_authentic: bool = True

    def to_bytes(self) -> bytes:
        return canonical_encode([self.client_pk, self.certifier_pk, self.policy_id,
                                 canonical_encode(self.recids), canonical_encode(self.keys)])

    @classmethod
    def from_bytes(cls, raw: bytes, channel_authentic: bool = True) -> "KeyMessage":
        client_pk, certifier_pk, policy_id, recids, keys = canonical_decode(raw)
        return cls(client_pk, certifier_pk, policy_id, tuple(canonical_decode(recids)),
                   tuple(canonical_decode(keys)), channel_authentic)


@dataclass
class ProveSession:
    client_pk: bytes
    certifier_pk: bytes
    policy: Policy
    record_list: list[Tran]
    key_list: list[bytes] = field(repr=False)
    channel_authentic: bool = True


class Certification(NamedTuple):
    certificate: Certificate
    evidence: frozenset[Evidence]


def prove_start(params: SystemParams, sk: ClientSecret, certifier_pk: bytes,
                policy: Policy) -> tuple[ProveSession, KeyMessage]:
    """Client side: select records, re-check them, and release one data key per record."""
    if sk.pk not in params.reglog or not params.is_registered(certifier_pk):
        raise ProtocolAbort("registration-fail", "both parties must be registered")
    records = policy_select(policy, sk.pk, params.ledger)
    keys = []
    for tran in records:
        if tran.pk != sk.pk or not tran.auth_valid() or not params.ledger.matches_recorded_hash(tran):
            raise ProtocolAbort("auth-fail", f"record {tran.recid.hex()[:16]} failed verification")
        try:
            acc = unseal(sk, tran).acc
        except IntegrityError as exc:
            raise ProtocolAbort("wkd-fail", str(exc)) from exc
        if acc and certifier_pk not in acc:
            raise ProtocolAbort("access-fail", f"certifier not in access list of {tran.recid.hex()[:16]}")
        keys.append(sk.key(tran.recid, 1))
    msg = KeyMessage(sk.pk, certifier_pk, policy.policy_id,
                     tuple(t.recid for t in records), tuple(keys))
    return ProveSession(sk.pk, certifier_pk, policy, records, keys), msg


def certify_finish(params: SystemParams, certifier_sk, client_pk: bytes, policy: Policy,
                   msg: KeyMessage) -> Certification:
    """Certifier side: recompute the record list, decrypt with the received keys, check the policy, sign."""
    if not msg.channel_authentic:
        raise ProtocolAbort("channel-fail", "key message did not arrive over an authentic channel")
    if client_pk not in params.reglog or not params.is_registered(certifier_sk.pk):
        raise ProtocolAbort("registration-fail", "both parties must be registered")
    if (msg.client_pk, msg.certifier_pk, msg.policy_id) != (client_pk, certifier_sk.pk, policy.policy_id):
        raise ProtocolAbort("binding-fail", "key message bound to a different session")
    records = policy_select(policy, client_pk, params.ledger)
    for tran in records:
        if tran.pk != client_pk or not tran.auth_valid() or not params.ledger.matches_recorded_hash(tran):
            raise ProtocolAbort("auth-fail", f"record {tran.recid.hex()[:16]} failed verification")
    if [t.recid for t in records] != list(msg.recids) or len(msg.keys) != len(records):
        raise ProtocolAbort("divergence-fail", "client and certifier selected different records")
    evidence = []
    for tran, key in zip(records, msg.keys):
        data = crypto.se_decrypt(key, tran.cdata)
        if data is None:
            raise ProtocolAbort("wkd-fail", f"key for {tran.recid.hex()[:16]} does not decrypt")
        evidence.append(Evidence(tran.doc_type, tran.etime, data))
    if not policy_evaluate(policy, evidence, params.ledger.now_ms()):
        raise ProtocolAbort("policy-fail", "evidence does not satisfy the policy")
    cert = Certificate.issue(certifier_sk.sigk, client_pk, policy.policy_id, evidence)
    return Certification(cert, frozenset(evidence))


def prove_certify(params: SystemParams, sk: ClientSecret, certifier, policy: Policy) -> Certification:
    """Run both sides of one honest session."""
    _, msg = prove_start(params, sk, certifier.pk, policy)
    return certify_finish(params, certifier, sk.pk, policy, msg)


# -- Onboard -------------------------------------------------------------------------

def onboard_failure(params: SystemParams, client_pk: bytes, evidence: Iterable[Evidence],
                    policy: Policy, cert: Certificate, trans: Iterable[Tran] | None = None,
                    now: int | None = None) -> str | None:
    """Name of the first failing onboarding check, or ``None`` when all pass."""
    evidence = list(evidence)
    if not params.is_certifier(cert.certifier_pk):
        return "unknown-certifier"
    if cert.subject_pk != client_pk:
        return "subject-mismatch"
    if cert.policy_id != policy.policy_id:
        return "policy-mismatch"
    if evidence_digest(evidence) != cert.evidence_digest:
        return "evidence-digest"
    if not cert.signature_valid():
        return "bad-signature"
    if trans is not None:
        trans = list(trans)
        if any(t.pk != client_pk or not t.auth_valid() for t in trans):
            return "record-auth"
        stamped = {(t.doc_type, t.etime) for t in trans}
        if any((e.doc_type, e.etime) not in stamped for e in evidence):
            return "record-mismatch"
    if not policy_evaluate(policy, evidence, params.ledger.now_ms() if now is None else now):
        return "policy"
    return None


def onboard(params: SystemParams, client_pk: bytes, evidence: Iterable[Evidence], policy: Policy,
            cert: Certificate, trans: Iterable[Tran] | None = None, now: int | None = None) -> bool:
    return onboard_failure(params, client_pk, evidence, policy, cert, trans, now) is None
