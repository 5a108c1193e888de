"""Executable versions of the confidentiality and certification-compliance experiments.

Each trial builds a fresh system, registers the challenge client, and hands an
:class:`Oracles` object to the adversary. Oracles return ``None`` where the
experiment's oracle would return the error symbol. The harness keeps the
bookkeeping needed for the winning conditions (corruptions, prove sessions,
certificates obtained) and scores the trial itself.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Protocol

from . import crypto
from .errors import GameSetupError, KYChainError, ProtocolAbort
from .ledger import ManualClock, Query
from .model import ClientSecret, Doc, Evidence, Tran, unseal
from .policy import Clause, Policy, policy_evaluate, policy_select
from .protocol import (
    KeyMessage,
    SystemParams,
    certify_finish,
    commit,
    kycs_setup,
    make_upi,
    onboard,
    prove_start,
    register,
    update,
)

ADVANTAGE_THRESHOLD = 0.05
MIN_TRIALS = 100
START_MS = 1_700_000_000_000


@dataclass
class OracleContext:
    params: SystemParams
    challenge_pk: bytes
    log: dict[bytes, tuple[ClientSecret, str]] = field(default_factory=dict)
    corrupted: set[bytes] = field(default_factory=set)
    calls: list[tuple] = field(default_factory=list)
    forbidden_calls: list[tuple] = field(default_factory=list)
    committed: dict[bytes, list[bytes]] = field(default_factory=dict)
    prove_selections: list[tuple[bytes, tuple[bytes, ...]]] = field(default_factory=list)
    prove_open: bool = False
    certifications: list[tuple] = field(default_factory=list)
    aborts: Counter = field(default_factory=Counter)


class Oracles:
    """The oracle set handed to adversaries.

    ``oprove`` leaves a prove session open until ``oprove_close``; ``ocert``
    refuses to run while one is open, so the adversary never runs both
    concurrently.
    """

    def __init__(self, ctx: OracleContext, rng: random.Random):
        self._ctx = ctx
        self.rng = rng

    # public views the adversary may use freely
    @property
    def params(self) -> SystemParams:
        return self._ctx.params

    @property
    def ledger(self):
        return self._ctx.params.ledger

    @property
    def certifier_pks(self) -> tuple[bytes, ...]:
        return self._ctx.params.certifier_pks

    def _secret(self, pk: bytes) -> ClientSecret | None:
        found = self._ctx.log.get(pk)
        return found[0] if found else None

    def oreg(self, upi: str) -> bytes | None:
        self._ctx.calls.append(("oreg", upi))
        try:
            sk = register(self._ctx.params, upi)
        except KYChainError:
            return None
        self._ctx.log[sk.pk] = (sk, upi)
        return sk.pk

    def ocorrupt(self, pk: bytes) -> ClientSecret | None:
        self._ctx.calls.append(("ocorrupt", pk))
        sk = self._secret(pk)
        if sk is not None:
            self._ctx.corrupted.add(pk)
        return sk

    def ocommit(self, pk: bytes, doc: Doc) -> Tran | None:
        self._ctx.calls.append(("ocommit", pk))
        sk = self._secret(pk)
        if sk is None:
            return None
        try:
            tran = commit(self._ctx.params, sk, doc)
        except KYChainError:
            return None
        self._ctx.committed.setdefault(pk, []).append(tran.recid)
        return tran

    def oupdate(self, pk: bytes, recid: bytes, data: bytes | None = None,
                acc=None, desc=None) -> Tran | None:
        self._ctx.calls.append(("oupdate", pk, recid))
        sk = self._secret(pk)
        if sk is None:
            return None
        try:
            tran = update(self._ctx.params, sk, recid, data, acc, desc)
        except KYChainError:
            return None
        self._ctx.committed.setdefault(pk, []).append(tran.recid)
        return tran

    def oprove(self, client_pk: bytes, certifier_pk: bytes, policy: Policy) -> KeyMessage | None:
        """Adversary as a malicious certifier ``certifier_pk`` facing the honest client."""
        self._ctx.calls.append(("oprove", client_pk, certifier_pk))
        sk = self._secret(client_pk)
        if sk is None or certifier_pk not in self._ctx.log:
            return None
        selected = policy_select(policy, client_pk, self.ledger)
        self._ctx.prove_selections.append((client_pk, tuple(t.recid for t in selected)))
        try:
            _, msg = prove_start(self._ctx.params, sk, certifier_pk, policy)
        except ProtocolAbort as exc:
            self._ctx.aborts[f"prove:{exc.reason}"] += 1
            return None
        self._ctx.prove_open = True
        return msg

    def oprove_close(self) -> None:
        self._ctx.prove_open = False

    def ocert(self, client_pk: bytes, certifier_pk: bytes, policy: Policy,
              msg: KeyMessage) -> object | None:
        """Adversary as a malicious client ``client_pk`` facing an honest certifier."""
        call = ("ocert", client_pk, certifier_pk)
        self._ctx.calls.append(call)
        if self._ctx.prove_open:
            self._ctx.forbidden_calls.append(call)
            return None
        params = self._ctx.params
        if client_pk not in params.reglog or certifier_pk not in params.certifiers:
            return None
        # the sender can only authenticate as client_pk while holding its secret
        msg = replace(msg, channel_authentic=client_pk in self._ctx.corrupted)
        try:
            result = certify_finish(params, params.certifiers[certifier_pk], client_pk, policy, msg)
        except ProtocolAbort as exc:
            self._ctx.aborts[exc.reason] += 1
            return None
        self._ctx.certifications.append((client_pk, certifier_pk, policy, result))
        return result.certificate


class ConfidentialityAdversary(Protocol):
    def choose(self, o: Oracles, challenge_pk: bytes) -> tuple[str, bytes, bytes, tuple, tuple]: ...

    def guess(self, o: Oracles, tran: Tran) -> int: ...


class ComplianceAdversary(Protocol):
    def interact(self, o: Oracles, challenge_pk: bytes) -> None: ...


@dataclass
class GameResult:
    game: str
    strategy: str
    trials: int
    valid: int = 0
    wins: int = 0
    disqualified: int = 0
    certificates: int = 0
    forbidden_calls: int = 0
    aborts: Counter = field(default_factory=Counter)

    @property
    def advantage(self) -> float:
        if self.game != "confidentiality" or self.valid == 0:
            return 0.0
        return abs(self.wins / self.valid - 0.5)

    @property
    def passed(self) -> bool:
        if self.game == "confidentiality":
            return self.advantage < ADVANTAGE_THRESHOLD
        return self.wins == 0

    def to_text(self) -> str:
        lines = [
            f"game={self.game}",
            f"strategy={self.strategy}",
            f"trials={self.trials}",
            f"valid={self.valid}",
            f"wins={self.wins}",
            f"disqualified={self.disqualified}",
            f"advantage={self.advantage:.6f}",
            f"certificates={self.certificates}",
            f"forbidden_calls={self.forbidden_calls}",
        ]
        lines += [f"abort.{k}={v}" for k, v in sorted(self.aborts.items())]
        lines.append(f"passed={'true' if self.passed else 'false'}")
        return "\n".join(lines) + "\n"


def _new_context(upi: str, rng: random.Random, start_ms: int) -> tuple[OracleContext, ClientSecret]:
    params = kycs_setup(128, 1, clock=ManualClock(start_ms), rng=rng.randbytes)
    sk = register(params, upi)
    ctx = OracleContext(params, sk.pk)
    ctx.log[sk.pk] = (sk, upi)
    return ctx, sk


def _check_trials(trials: int) -> None:
    if trials < MIN_TRIALS:
        raise GameSetupError(f"need at least {MIN_TRIALS} trials, got {trials}")


def run_confidentiality(adversary: ConfidentialityAdversary, upi: str, beta: int | None = None,
                        trials: int = 1000, rng_seed: int = 0, name: str | None = None) -> GameResult:
    """Play the data-confidentiality experiment; ``beta=None`` draws a fresh bit per trial."""
    _check_trials(trials)
    rng = random.Random(rng_seed)
    res = GameResult("confidentiality", name or type(adversary).__name__, trials)
    for i in range(trials):
        ctx, sk = _new_context(upi, rng, START_MS + i)
        o = Oracles(ctx, rng)
        doc_type, d0, d1, desc, acc = adversary.choose(o, sk.pk)
        if crypto.bucket_size(len(d0)) != crypto.bucket_size(len(d1)):
            raise GameSetupError("challenge plaintexts fall in different padding buckets")
        b = rng.getrandbits(1) if beta is None else beta
        tran = commit(ctx.params, sk, Doc(sk.pk, doc_type, (d0, d1)[b], tuple(desc), tuple(acc)))
        guess = adversary.guess(o, tran)
        leaked = any(pk == sk.pk and tran.recid in recids for pk, recids in ctx.prove_selections)
        if sk.pk in ctx.corrupted or leaked:
            res.disqualified += 1
            continue
        res.valid += 1
        res.wins += int(guess == b)
    return res


def _committed_evidence(ctx: OracleContext, sk: ClientSecret) -> list[Evidence]:
    """Latest live versions of the records the oracles committed for ``sk``."""
    ledger = ctx.params.ledger
    mine = set(ctx.committed.get(sk.pk, ()))
    latest = [t for t in ledger.search(Query(by_pk=sk.pk, latest_only=True)) if t.recid in mine]
    return [Evidence(t.doc_type, t.etime, unseal(sk, t).data) for t in latest]


def run_compliance(adversary: ComplianceAdversary, upi: str, trials: int = 1000,
                   rng_seed: int = 0, name: str | None = None) -> GameResult:
    """Play the certification-compliance experiment; ``wins`` counts successful trials."""
    _check_trials(trials)
    rng = random.Random(rng_seed)
    res = GameResult("compliance", name or type(adversary).__name__, trials)
    for i in range(trials):
        ctx, sk = _new_context(upi, rng, START_MS + i)
        adversary.interact(Oracles(ctx, rng), sk.pk)
        res.valid += 1
        res.forbidden_calls += len(ctx.forbidden_calls)
        res.aborts.update(ctx.aborts)
        res.certificates += len(ctx.certifications)
        now = ctx.params.ledger.now_ms()
        won = False
        for client_pk, _, policy, cert in ctx.certifications:
            if client_pk != sk.pk:
                continue
            if not onboard(ctx.params, sk.pk, cert.evidence, policy, cert.certificate):
                continue
            if policy_evaluate(policy, [], now):
                continue
            if sk.pk not in ctx.corrupted or not policy_evaluate(policy, _committed_evidence(ctx, sk), now):
                won = True
        res.wins += int(won)
    return res


# -- shipped strategies ----------------------------------------------------------------

KYC_POLICY = Policy.of(
    Clause("passport", 365 * 86_400_000),
    Clause("bill", 90 * 86_400_000, "min_size:64"),
)


def _passport(pk: bytes, rng: random.Random) -> Doc:
    return Doc(pk, "passport", rng.randbytes(rng.randint(64, 200)))


def _bill(pk: bytes, rng: random.Random, size: int) -> Doc:
    return Doc(pk, "bill", rng.randbytes(size))


class MetadataOnly:
    """Guesses from what the record exposes in the clear: lengths, type, time, bytes of cdata."""

    def choose(self, o, challenge_pk):
        return "passport", b"\x00" * 10, b"\xff" * 200, (), ()

    def guess(self, o, tran):
        if len(tran.cdata.body) > crypto.bucket_size(10) + crypto.TAG_SIZE:
            return 1
        return (tran.cdata.body[0] ^ tran.etime.seq) & 1


class ConstantGuess:
    def __init__(self, bit: int = 0):
        self.bit = bit

    def choose(self, o, challenge_pk):
        return "bill", b"a" * 32, b"b" * 32, (), ()

    def guess(self, o, tran):
        return self.bit


class CorruptThenAbstain:
    """Corrupts the challenge client first.

    In the confidentiality game it then decrypts and always guesses right,
    which disqualifies every trial. In the compliance game it commits
    policy-satisfying data and certifies honestly, which must not count as a win.
    """

    def choose(self, o, challenge_pk):
        self._sk = o.ocorrupt(challenge_pk)
        return "passport", b"zero" * 8, b"one!" * 8, (), ()

    def guess(self, o, tran):
        return int(unseal(self._sk, tran).data == b"one!" * 8)

    def interact(self, o, challenge_pk):
        sk = o.ocorrupt(challenge_pk)
        o.ocommit(challenge_pk, _passport(challenge_pk, o.rng))
        o.ocommit(challenge_pk, _bill(challenge_pk, o.rng, 128))
        certifier = o.certifier_pks[0]
        _, msg = prove_start(o.params, sk, certifier, KYC_POLICY)
        o.ocert(challenge_pk, certifier, KYC_POLICY, msg)


class NoncompliantHonest:
    """Commits data that fails the policy and then sends the genuine keys."""

    def interact(self, o, challenge_pk):
        sk = o.ocorrupt(challenge_pk)
        o.ocommit(challenge_pk, _passport(challenge_pk, o.rng))
        if o.rng.getrandbits(1):
            o.ocommit(challenge_pk, _bill(challenge_pk, o.rng, o.rng.randint(0, 63)))
        certifier = o.certifier_pks[0]
        _, msg = prove_start(o.params, sk, certifier, KYC_POLICY)
        o.ocert(challenge_pk, certifier, KYC_POLICY, msg)


class KeySubstitution:
    """Holds non-compliant records and tries to pass altered keys off as the real ones."""

    MUTATIONS = ("random", "flip", "swap", "other-index", "foreign")

    def interact(self, o, challenge_pk):
        sk = o.ocorrupt(challenge_pk)
        o.ocommit(challenge_pk, _passport(challenge_pk, o.rng))
        o.ocommit(challenge_pk, _bill(challenge_pk, o.rng, o.rng.randint(1, 63)))
        certifier = o.certifier_pks[0]
        _, msg = prove_start(o.params, sk, certifier, KYC_POLICY)
        keys = list(msg.keys)
        kind = o.rng.choice(self.MUTATIONS)
        i = o.rng.randrange(len(keys))
        if kind == "random":
            keys[i] = o.rng.randbytes(32)
        elif kind == "flip":
            bit = o.rng.randrange(256)
            keys[i] = bytes(b ^ (1 << (bit % 8)) if j == bit // 8 else b for j, b in enumerate(keys[i]))
        elif kind == "swap":
            keys.reverse()
        elif kind == "other-index":
            keys[i] = sk.key(msg.recids[i], o.rng.choice((2, 3)))
        else:
            # data key of a compliant bill held by another client the adversary controls
            other = o.oreg(make_upi("X%07d" % o.rng.randrange(10**7)))
            osk = o.ocorrupt(other)
            shadow = o.ocommit(other, _bill(other, o.rng, 128))
            keys[i] = osk.key(shadow.recid, 1)
        o.ocert(challenge_pk, certifier, KYC_POLICY, replace(msg, keys=tuple(keys)))


class ChannelReplay:
    """Harvests the honest client's keys as a malicious certifier, then replays them as the client."""

    def interact(self, o, challenge_pk):
        o.ocommit(challenge_pk, _passport(challenge_pk, o.rng))
        o.ocommit(challenge_pk, _bill(challenge_pk, o.rng, 128))
        rogue = o.oreg(make_upi("R%07d" % o.rng.randrange(10**7)))
        msg = o.oprove(challenge_pk, rogue, KYC_POLICY)
        if msg is None:
            return
        certifier = o.certifier_pks[0]
        if o.rng.getrandbits(1):
            # replay while the prove session is still running: refused outright
            o.ocert(challenge_pk, certifier, KYC_POLICY, replace(msg, certifier_pk=certifier))
        o.oprove_close()
        o.ocert(challenge_pk, certifier, KYC_POLICY, replace(msg, certifier_pk=certifier))


class WithCorruption:
    """Wraps a confidentiality strategy and adds an ``ocorrupt`` of the challenge client."""

    def __init__(self, inner):
        self.inner = inner

    def choose(self, o, challenge_pk):
        o.ocorrupt(challenge_pk)
        return self.inner.choose(o, challenge_pk)

    def guess(self, o, tran):
        return self.inner.guess(o, tran)


STRATEGIES = {
    "metadata-only": (MetadataOnly, ("confidentiality",)),
    "constant-guess": (ConstantGuess, ("confidentiality",)),
    "corrupt-then-abstain": (CorruptThenAbstain, ("confidentiality", "compliance")),
    "key-substitution": (KeySubstitution, ("compliance",)),
    "channel-replay": (ChannelReplay, ("compliance",)),
    "noncompliant-honest": (NoncompliantHonest, ("compliance",)),
}

DEFAULT_UPI = make_upi("AB123456")


def run_strategy(name: str, trials: int = 1000, rng_seed: int = 0,
                 upi: str = DEFAULT_UPI) -> list[GameResult]:
    """Run every game a named strategy plays."""
    if name not in STRATEGIES:
        raise KeyError(name)
    cls, games = STRATEGIES[name]
    results = []
    for game in games:
        if game == "confidentiality":
            results.append(run_confidentiality(cls(), upi, None, trials, rng_seed, name))
        else:
            results.append(run_compliance(cls(), upi, trials, rng_seed, name))
    return results
