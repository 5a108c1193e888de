"""Append-only timestamped record store with a hash-chained anchor log.

The store plays the role of the off-chain database; the anchor chain stands in
for a public blockchain. Record hashes are staged on append and committed in
batches by :meth:`Ledger.flush`.

On-disk layout (all integers unsigned 64-bit big-endian)
--------------------------------------------------------
``ledger.params``
    ``key=value`` lines: ``security_param``, ``created_at`` (``ms.seq``),
    ``genesis_hash`` (hex), ``certifier.<i>`` (hex public key).
``ledger.log``
    Sequence of records ``len || canonical_encode(fields)`` where fields are
    ``[b"T", tran_bytes, supersedes]`` for a stored Tran, or
    ``[b"X", recid, pk, tran_hash, removed_ms, removed_seq, supersedes]`` for
    a tombstone. ``supersedes`` is 32 bytes or empty. Appends only ever add
    records; a removal rewrites the removed record's ``T`` entry in place as
    an ``X`` entry so the body is erased while its position and hash remain.
``anchors.bin``
    Per block an 80-byte header ``height || prev_hash(32) || block_hash(32) ||
    count`` followed by ``count`` 32-byte record hashes. ``block_hash`` is
    SHA-256 of ``height || prev_hash || canonical_encode(record_hashes)``.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Collection, Iterable

from . import crypto
from .encoding import canonical_decode, canonical_encode, read_u64, u64
from .errors import (
    AuthorizationError,
    ConfigurationError,
    LedgerCorrupted,
    LedgerRejection,
    NotFoundError,
    QueryError,
    UninitializedError,
    ValidationError,
)
from .model import ClientSecret, Entry, Timestamp, Tran, check_doc_type

Clock = Callable[[], int]

PARAMS_FILE = "ledger.params"
LOG_FILE = "ledger.log"
ANCHOR_FILE = "anchors.bin"
HEADER_SIZE = 80
ZERO_HASH = bytes(32)

ANCHORED, PENDING, TAMPERED, TOMBSTONED = "anchored", "pending", "tampered", "tombstoned"


def system_clock() -> int:
    return time.time_ns() // 1_000_000


class ManualClock:
    """Test clock: returns a settable millisecond value."""

    def __init__(self, ms: int = 0):
        self.ms = ms

    def __call__(self) -> int:
        return self.ms

    def advance(self, delta_ms: int) -> None:
        self.ms += delta_ms


@dataclass(frozen=True)
class LedgerParams:
    security_param: int
    created_at: Timestamp
    genesis_hash: bytes
    certifier_registry: tuple[bytes, ...]

    def to_text(self) -> str:
        lines = [
            f"security_param={self.security_param}",
            f"created_at={self.created_at}",
            f"genesis_hash={self.genesis_hash.hex()}",
        ]
        lines += [f"certifier.{i}={pk.hex()}" for i, pk in enumerate(self.certifier_registry)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LedgerParams":
        kv = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        certs = []
        i = 0
        while f"certifier.{i}" in kv:
            certs.append(bytes.fromhex(kv[f"certifier.{i}"]))
            i += 1
        return cls(int(kv["security_param"]), Timestamp.parse(kv["created_at"]),
                   bytes.fromhex(kv["genesis_hash"]), tuple(certs))


@dataclass(frozen=True)
class AnchorBlock:
    height: int
    prev_hash: bytes
    record_hashes: tuple[bytes, ...]
    block_hash: bytes

    @staticmethod
    def compute_hash(height: int, prev_hash: bytes, record_hashes: Iterable[bytes]) -> bytes:
        return crypto.sha256(u64(height) + prev_hash + canonical_encode(record_hashes))

    @classmethod
    def build(cls, height: int, prev_hash: bytes, record_hashes: Iterable[bytes]) -> "AnchorBlock":
        hashes = tuple(record_hashes)
        return cls(height, prev_hash, hashes, cls.compute_hash(height, prev_hash, hashes))

    def hash_valid(self) -> bool:
        return self.block_hash == self.compute_hash(self.height, self.prev_hash, self.record_hashes)

    def to_bytes(self) -> bytes:
        return (u64(self.height) + self.prev_hash + self.block_hash
                + u64(len(self.record_hashes)) + b"".join(self.record_hashes))


def parse_anchor_file(raw: bytes) -> list[AnchorBlock]:
    blocks, pos = [], 0
    while pos < len(raw):
        if pos + HEADER_SIZE > len(raw):
            raise LedgerCorrupted("truncated anchor header")
        height = read_u64(raw, pos)
        prev_hash = raw[pos + 8:pos + 40]
        block_hash = raw[pos + 40:pos + 72]
        count = read_u64(raw, pos + 72)
        pos += HEADER_SIZE
        end = pos + 32 * count
        if end > len(raw):
            raise LedgerCorrupted("truncated anchor body")
        hashes = tuple(raw[i:i + 32] for i in range(pos, end, 32))
        blocks.append(AnchorBlock(height, prev_hash, hashes, block_hash))
        pos = end
    return blocks


def genesis_block(security_param: int, created_at: Timestamp,
                  certifiers: Iterable[bytes]) -> AnchorBlock:
    seed = crypto.sha256(canonical_encode(
        [b"kychain-genesis", u64(security_param), u64(created_at.ms), u64(created_at.seq)]
        + list(certifiers)
    ))
    return AnchorBlock.build(0, ZERO_HASH, [seed])


@dataclass(frozen=True)
class Query:
    by_pk: bytes | None = None
    by_recid: bytes | None = None
    by_type: Collection[str] | None = None
    latest_only: bool = False
    policy: object | None = None  # anything exposing a ``types`` set

    def __post_init__(self):
        if self.by_pk is None and self.by_recid is None and self.by_type is None and self.policy is None:
            raise QueryError("query needs at least one selector")


def removal_message(recid: bytes) -> bytes:
    return canonical_encode([b"kychain-remove", recid])


def _frame(fields: list[bytes]) -> bytes:
    body = canonical_encode(fields)
    return u64(len(body)) + body


def _read_frames(raw: bytes) -> list[list[bytes]]:
    frames, pos = [], 0
    while pos < len(raw):
        if pos + 8 > len(raw):
            raise LedgerCorrupted("truncated log frame length")
        n = read_u64(raw, pos)
        if pos + 8 + n > len(raw):
            raise LedgerCorrupted("truncated log frame")
        try:
            frames.append(canonical_decode(raw[pos + 8:pos + 8 + n]))
        except ValueError as exc:
            raise LedgerCorrupted(f"malformed log frame at offset {pos}: {exc}") from exc
        pos += 8 + n
    return frames


class Ledger:
    """The ledger entity: setup, time, append, search, plus remove and anchoring.

    ``registry`` is any container answering ``pk in registry`` for registered
    clients. Mutations are serialised by a single lock; reads take the same
    lock and see a consistent snapshot.
    """

    def __init__(self, registry: Collection[bytes], clock: Clock | None = None,
                 path: str | os.PathLike | None = None):
        self.registry = registry
        self.clock = clock or system_clock
        self.path = Path(path) if path is not None else None
        self._lock = threading.RLock()
        self._params: LedgerParams | None = None
        self._trans: dict[bytes, Tran] = {}
        self._order: list[bytes] = []
        self._hash_of: dict[bytes, bytes] = {}
        self._owner: dict[bytes, bytes] = {}
        self._supersedes: dict[bytes, bytes] = {}
        self._tombstones: dict[bytes, Timestamp] = {}
        self._staged: list[bytes] = []
        self._blocks: list[AnchorBlock] = []
        self._block_of: dict[bytes, int] = {}
        self._last: Timestamp | None = None

    # -- setup / persistence ---------------------------------------------------

    def setup(self, security_param: int, certifiers: Iterable[bytes]) -> LedgerParams:
        certifiers = tuple(certifiers)
        if not certifiers:
            raise ConfigurationError("at least one certifier is required")
        with self._lock:
            if self._params is not None:
                raise ConfigurationError("ledger already set up")
            self._last = None
            created = self.time_unchecked()
            genesis = genesis_block(security_param, created, certifiers)
            self._params = LedgerParams(security_param, created, genesis.block_hash, certifiers)
            self._blocks = [genesis]
            if self.path is not None:
                self.path.mkdir(parents=True, exist_ok=True)
                if (self.path / LOG_FILE).exists():
                    raise ConfigurationError(f"ledger files already exist in {self.path}")
                (self.path / PARAMS_FILE).write_text(self._params.to_text())
                (self.path / LOG_FILE).write_bytes(b"")
                (self.path / ANCHOR_FILE).write_bytes(genesis.to_bytes())
            return self._params

    @classmethod
    def open(cls, path: str | os.PathLike, registry: Collection[bytes],
             clock: Clock | None = None) -> "Ledger":
        """Rebuild the in-memory index from the files written by a previous instance."""
        led = cls(registry, clock, path)
        p = led.path
        try:
            led._params = LedgerParams.from_text((p / PARAMS_FILE).read_text())
        except FileNotFoundError as exc:
            raise UninitializedError(f"no ledger at {p}") from exc
        except (KeyError, ValueError) as exc:
            raise LedgerCorrupted(f"bad params file: {exc}") from exc
        led._blocks = parse_anchor_file((p / ANCHOR_FILE).read_bytes())
        if not led._blocks:
            raise LedgerCorrupted("anchor file has no genesis block")
        for b in led._blocks[1:]:
            for h in b.record_hashes:
                led._block_of.setdefault(h, b.height)
        anchored = [h for b in led._blocks[1:] for h in b.record_hashes]
        last = led._params.created_at
        for i, frame in enumerate(_read_frames((p / LOG_FILE).read_bytes())):
            try:
                recid, etime = led._load_frame(frame)
            except (ValueError, IndexError, UnicodeDecodeError) as exc:
                raise LedgerCorrupted(f"bad log record #{i}: {exc}") from exc
            if i < len(anchored):
                # flushes cover records in append order, so record i must match hash i
                led._hash_of[recid] = anchored[i]
            else:
                led._staged.append(led._hash_of[recid])
            last = max(last, etime)
        led._last = last
        return led

    def _load_frame(self, frame: list[bytes]) -> tuple[bytes, Timestamp]:
        kind = frame[0]
        if kind == b"T":
            _, raw, sup = frame
            tran = Tran.from_bytes(raw)
            recid = tran.recid
            self._trans[recid] = tran
            self._owner[recid] = tran.pk
            self._hash_of[recid] = crypto.sha256(raw)
            etime = tran.etime
        elif kind == b"X":
            _, recid, pk, h, ms, seq, sup = frame
            self._owner[recid] = pk
            self._hash_of[recid] = h
            etime = Timestamp(read_u64(ms), read_u64(seq))
            self._tombstones[recid] = etime
        else:
            raise ValueError(f"unknown record kind {kind!r}")
        if recid in self._order:
            raise ValueError("duplicate recid in log")
        self._order.append(recid)
        if sup:
            self._supersedes[recid] = sup
        return recid, etime

    def _log_frame_for(self, recid: bytes) -> bytes:
        sup = self._supersedes.get(recid, b"")
        if recid in self._tombstones:
            t = self._tombstones[recid]
            return _frame([b"X", recid, self._owner[recid], self._hash_of[recid],
                           u64(t.ms), u64(t.seq), sup])
        return _frame([b"T", self._trans[recid].to_bytes(), sup])

    def _append_log(self, recid: bytes) -> None:
        if self.path is not None:
            with open(self.path / LOG_FILE, "ab") as fh:
                fh.write(self._log_frame_for(recid))
                fh.flush()
                os.fsync(fh.fileno())

    def _rewrite_log(self) -> None:
        if self.path is None:
            return
        tmp = self.path / (LOG_FILE + ".tmp")
        tmp.write_bytes(b"".join(self._log_frame_for(r) for r in self._order))
        os.replace(tmp, self.path / LOG_FILE)

    # -- core operations ---------------------------------------------------------

    @property
    def params(self) -> LedgerParams:
        if self._params is None:
            raise UninitializedError("ledger not set up")
        return self._params

    def time_unchecked(self) -> Timestamp:
        with self._lock:
            now = self.clock()
            if self._last is None or now > self._last.ms:
                t = Timestamp(now, 0)
            else:
                t = Timestamp(self._last.ms, self._last.seq + 1)
            self._last = t
            return t

    def time(self) -> Timestamp:
        """Current ledger time; strictly increasing across calls."""
        self.params
        return self.time_unchecked()

    def now_ms(self) -> int:
        """Current clock reading in ms without consuming a tiebreak tick."""
        with self._lock:
            now = self.clock()
            return now if self._last is None else max(now, self._last.ms)

    def append(self, entry: Entry, supersedes: bytes | None = None) -> Tran:
        with self._lock:
            self.params
            if entry.pk not in self.registry:
                raise LedgerRejection("unregistered public key")
            try:
                check_doc_type(entry.doc_type)
            except ValidationError:
                raise LedgerRejection("unknown document type") from None
            if not entry.auth_valid():
                raise LedgerRejection("invalid authenticator")
            if len(entry.recid) != crypto.RECID_SIZE or entry.recid in self._hash_of:
                raise LedgerRejection("record id is not fresh")
            if supersedes is not None and self._owner.get(supersedes) != entry.pk:
                raise LedgerRejection("superseded record unknown or owned by another key")
            tran = Tran.stamp(entry, self.time())
            recid = tran.recid
            self._trans[recid] = tran
            self._order.append(recid)
            self._owner[recid] = tran.pk
            self._hash_of[recid] = tran.digest()
            if supersedes is not None:
                self._supersedes[recid] = supersedes
            self._staged.append(self._hash_of[recid])
            self._append_log(recid)
            return tran

    def _lineage_root(self, recid: bytes) -> bytes:
        while recid in self._supersedes:
            recid = self._supersedes[recid]
        return recid

    def search(self, q: Query) -> list[Tran]:
        with self._lock:
            self.params
            if q.by_recid is not None:
                t = self._trans.get(q.by_recid)
                found = [t] if t is not None else []
            else:
                found = [self._trans[r] for r in self._order if r in self._trans]
            if q.by_pk is not None:
                found = [t for t in found if t.pk == q.by_pk]
            if q.by_type is not None:
                types = set(q.by_type)
                found = [t for t in found if t.doc_type in types]
            if q.policy is not None:
                types = q.policy.types
                found = [t for t in found if t.doc_type in types]
            if q.latest_only:
                heads: dict[bytes, Tran] = {}
                for t in found:
                    root = self._lineage_root(t.recid)
                    if root not in heads or t.etime > heads[root].etime:
                        heads[root] = t
                found = list(heads.values())
            return sorted(found, key=lambda t: t.etime)

    def get(self, recid: bytes) -> Tran | None:
        with self._lock:
            return self._trans.get(recid)

    def remove(self, sk: ClientSecret, recid: bytes) -> bool:
        """Owner-only erasure of a record body; the anchored hash stays."""
        sig = crypto.sig_sign(sk.sigk, removal_message(recid))
        return self.remove_signed(recid, sig)

    def remove_signed(self, recid: bytes, sig: bytes) -> bool:
        with self._lock:
            self.params
            if recid not in self._trans:
                raise NotFoundError("no live record with that id")
            if not crypto.sig_verify(self._owner[recid], removal_message(recid), sig):
                raise AuthorizationError("only the owning client may remove a record")
            self._tombstones[recid] = self.time()
            del self._trans[recid]
            self._rewrite_log()
            return True

    # -- anchoring -----------------------------------------------------------------

    def flush(self) -> AnchorBlock:
        with self._lock:
            self.params
            head = self._blocks[-1]
            block = AnchorBlock.build(head.height + 1, head.block_hash, self._staged)
            self._blocks.append(block)
            for h in block.record_hashes:
                self._block_of.setdefault(h, block.height)
            self._staged = []
            if self.path is not None:
                with open(self.path / ANCHOR_FILE, "ab") as fh:
                    fh.write(block.to_bytes())
            return block

    @property
    def blocks(self) -> list[AnchorBlock]:
        with self._lock:
            return list(self._blocks)

    @property
    def staged(self) -> list[bytes]:
        with self._lock:
            return list(self._staged)

    def verify_chain(self) -> bool:
        with self._lock:
            blocks = self._blocks
            if not blocks or blocks[0].block_hash != self.params.genesis_hash:
                return False
            for i, b in enumerate(blocks):
                if b.height != i or not b.hash_valid():
                    return False
                if i and b.prev_hash != blocks[i - 1].block_hash:
                    return False
            return True

    def verify_integrity(self, tran: Tran) -> bool:
        with self._lock:
            return tran.digest() in self._block_of and self.verify_chain()

    def matches_recorded_hash(self, tran: Tran) -> bool:
        """True when ``tran`` hashes to the value recorded for its recid at append time.

        For anchored records that value is the one in the anchor chain; this
        catches edits to fields the client signature does not cover (etime).
        """
        with self._lock:
            try:
                return self._hash_of.get(tran.recid) == tran.digest()
            except (UnicodeError, ValueError):
                return False

    def record_status(self, recid: bytes) -> str:
        with self._lock:
            if recid not in self._hash_of:
                raise NotFoundError("unknown record id")
            if recid in self._tombstones:
                return TOMBSTONED
            tran = self._trans[recid]
            h = tran.digest()
            if h != self._hash_of[recid] or not tran.auth_valid():
                return TAMPERED
            return ANCHORED if h in self._block_of else PENDING

    def status_report(self) -> list[tuple[bytes, str]]:
        with self._lock:
            return [(r, self.record_status(r)) for r in self._order]

    def supersedes(self, recid: bytes) -> bytes | None:
        return self._supersedes.get(recid)

    def owner(self, recid: bytes) -> bytes | None:
        return self._owner.get(recid)

    def corrupt_record(self, recid: bytes, tran: Tran) -> None:
        """Overwrite the stored body at ``recid``, as an attacker with database write access could."""
        with self._lock:
            if recid not in self._trans:
                raise NotFoundError("no live record with that id")
            self._trans[recid] = tran
