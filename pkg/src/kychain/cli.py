"""Command-line driver over a file-backed workspace.

Global flags go before the subcommand::

    kychain --workspace ws --clock 1700000000000 --rng-seed 7 init --certifiers 2
    kychain --workspace ws register alice AB123456C
    kychain --workspace ws commit alice --type passport --data-file scan.bin
    kychain --workspace ws certify alice 0 policy.txt
    kychain --workspace ws onboard ws/out/certificate.txt ws/out/evidence.txt policy.txt
    kychain --workspace ws verify-integrity
    kychain --workspace ws games metadata-only --trials 1000 --rng-seed 7

Reports and result files are ``key=value`` lines. Exit codes are listed in
``EXIT_CODES``.
"""

from __future__ import annotations

import argparse
import contextlib
import fcntl
import hashlib
import random
import re
import sys
from pathlib import Path

from . import games
from .errors import (
    AuthorizationError,
    ConfigurationError,
    IntegrityError,
    KYChainError,
    LedgerCorrupted,
    LedgerRejection,
    NotFoundError,
    PolicyParseError,
    ProtocolAbort,
    UninitializedError,
    ValidationError,
)
from .ledger import TAMPERED, ManualClock, Query
from .model import Certificate, ClientSecret, Doc, Evidence, Timestamp
from .policy import Policy
from .protocol import (
    SystemParams,
    commit,
    kycs_setup,
    onboard_failure,
    open_system,
    prove_certify,
    register,
    remove,
    update,
)

EXIT_CODES = {
    "ok": 0,
    "usage": 2,
    "workspace": 3,
    "input": 4,
    "rejected": 5,
    "auth-fail": 10,
    "wkd-fail": 11,
    "policy-fail": 12,
    "access-fail": 13,
    "channel-fail": 14,
    "registration-fail": 15,
    "binding-fail": 16,
    "divergence-fail": 17,
    "onboard-reject": 20,
    "integrity": 30,
    "game-fail": 40,
}

STATE_FILE = "workspace.state"
LOCK_FILE = ".lock"
CLIENT_DIR = "clients"
_ALIAS = re.compile(r"[A-Za-z0-9_.\-]{1,64}")


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _kv(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line.strip():
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"expected key=value, got {line!r}")
            out[key.strip()] = value.strip()
    return out


def _kv_text(pairs) -> str:
    return "".join(f"{k}={v}\n" for k, v in pairs)


class Workspace:
    """A directory holding one simulated deployment plus the clients' secret files.

    Each mutating command bumps an operation counter; with ``rng_seed`` set,
    randomness for operation ``n`` is drawn from a generator seeded by
    ``(rng_seed, n)`` so scripted runs are reproducible.
    """

    def __init__(self, root, clock_ms: int | None = None, rng_seed: int | None = None,
                 flush_every: int | None = None):
        self.root = Path(root)
        self.clock = ManualClock(clock_ms) if clock_ms is not None else None
        self.rng_seed = rng_seed
        self._flush_every = flush_every
        self._system: SystemParams | None = None

    # -- state ---------------------------------------------------------------

    def _state(self) -> dict[str, str]:
        path = self.root / STATE_FILE
        return _kv(path.read_text()) if path.exists() else {}

    def _write_state(self, state: dict[str, str]) -> None:
        (self.root / STATE_FILE).write_text(_kv_text(sorted(state.items())))

    @property
    def flush_every(self) -> int:
        if self._flush_every is not None:
            return self._flush_every
        return int(self._state().get("flush_every", 16))

    def next_rng(self):
        state = self._state()
        op = int(state.get("ops", 0))
        state["ops"] = str(op + 1)
        self._write_state(state)
        return self.rng_for(op)

    def rng_for(self, op: int):
        if self.rng_seed is None:
            return None
        digest = hashlib.sha256(f"kychain-ws:{self.rng_seed}:{op}".encode()).digest()
        return random.Random(int.from_bytes(digest, "big")).randbytes

    @contextlib.contextmanager
    def locked(self):
        with open(self.root / LOCK_FILE, "a") as fh:
            try:
                fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
            except BlockingIOError:
                raise CliError("workspace", f"workspace {self.root} is locked by another process") from None
            try:
                yield
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)

    # -- lifecycle -------------------------------------------------------------

    def init(self, n_certifiers: int, security_param: int = 128) -> SystemParams:
        if self.root.exists() and any(self.root.iterdir()):
            raise CliError("workspace", f"{self.root} is not empty")
        self.root.mkdir(parents=True, exist_ok=True)
        state = {"ops": "0", "flush_every": str(self._flush_every or 16)}
        self._write_state(state)
        rng = self.next_rng()
        self._system = kycs_setup(security_param, n_certifiers, clock=self.clock, rng=rng, path=self.root)
        (self.root / CLIENT_DIR).mkdir()
        return self._system

    def system(self, rng=None) -> SystemParams:
        if self._system is None:
            if not (self.root / STATE_FILE).exists():
                raise CliError("workspace", f"no workspace at {self.root}")
            self._system = open_system(self.root, clock=self.clock)
        self._system.rng = rng
        return self._system

    # -- client secrets ----------------------------------------------------------

    def _secret_path(self, alias: str) -> Path:
        if not _ALIAS.fullmatch(alias):
            raise CliError("input", f"bad alias {alias!r}")
        return self.root / CLIENT_DIR / f"{alias}.secret"

    def save_secret(self, alias: str, sk: ClientSecret, upi: str) -> None:
        path = self._secret_path(alias)
        path.touch(mode=0o600)
        path.write_text(_kv_text([("pk", sk.pk.hex()), ("sigk", sk.sigk.hex()),
                                  ("seed", sk.seed.hex()), ("upi", upi)]))

    def load_secret(self, alias: str) -> ClientSecret:
        path = self._secret_path(alias)
        if not path.exists():
            raise CliError("input", f"unknown client alias {alias!r}")
        kv = _kv(path.read_text())
        return ClientSecret(bytes.fromhex(kv["pk"]), bytes.fromhex(kv["sigk"]), bytes.fromhex(kv["seed"]))

    def aliases(self) -> dict[bytes, str]:
        out = {}
        for path in sorted((self.root / CLIENT_DIR).glob("*.secret")):
            out[bytes.fromhex(_kv(path.read_text())["pk"])] = path.stem
        return out

    def alias_exists(self, alias: str) -> bool:
        return self._secret_path(alias).exists()

    def maybe_flush(self) -> None:
        ledger = self._system.ledger
        if len(ledger.staged) >= self.flush_every:
            ledger.flush()


# -- certificate and evidence files ------------------------------------------------

def certificate_to_text(cert: Certificate) -> str:
    return _kv_text([
        ("certifier_pk", cert.certifier_pk.hex()),
        ("subject_pk", cert.subject_pk.hex()),
        ("policy_id", cert.policy_id.hex()),
        ("evidence_digest", cert.evidence_digest.hex()),
        ("sig", cert.sig.hex()),
    ])


def certificate_from_text(text: str) -> Certificate:
    kv = _kv(text)
    return Certificate(*(bytes.fromhex(kv[k]) for k in
                         ("certifier_pk", "subject_pk", "policy_id", "evidence_digest", "sig")))


def evidence_to_text(subject_pk: bytes, evidence) -> str:
    items = sorted(evidence, key=lambda e: (e.etime, e.doc_type))
    pairs = [("subject_pk", subject_pk.hex()), ("count", str(len(items)))]
    for i, e in enumerate(items):
        pairs += [(f"evidence.{i}.type", e.doc_type), (f"evidence.{i}.etime", str(e.etime)),
                  (f"evidence.{i}.data", e.data.hex())]
    return _kv_text(pairs)


def evidence_from_text(text: str) -> tuple[bytes, list[Evidence]]:
    kv = _kv(text)
    items = [Evidence(kv[f"evidence.{i}.type"], Timestamp.parse(kv[f"evidence.{i}.etime"]),
                      bytes.fromhex(kv[f"evidence.{i}.data"]))
             for i in range(int(kv["count"]))]
    return bytes.fromhex(kv["subject_pk"]), items


# -- commands ----------------------------------------------------------------------

def _out(line: str) -> None:
    print(line)


def _acc_list(ws: Workspace, indices: str | None):
    if indices is None:
        return None
    if indices == "none":
        return ()
    pks = ws.system().certifier_pks
    try:
        return tuple(pks[int(i)] for i in indices.split(","))
    except (ValueError, IndexError):
        raise CliError("input", f"bad certifier index list {indices!r}") from None


def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError("input", f"cannot read {path}: {exc}") from None


def _read_policy(path: str) -> Policy:
    try:
        return Policy.parse(Path(path).read_text())
    except OSError as exc:
        raise CliError("input", f"cannot read {path}: {exc}") from None


def _recid(text: str) -> bytes:
    try:
        recid = bytes.fromhex(text)
    except ValueError:
        raise CliError("input", f"bad record id {text!r}") from None
    if len(recid) != 32:
        raise CliError("input", "record id must be 32 bytes of hex")
    return recid


def cmd_init(ws: Workspace, args) -> int:
    sysp = ws.init(args.certifiers)
    _out(f"workspace={ws.root}")
    for i, pk in enumerate(sysp.certifier_pks):
        _out(f"certifier.{i}={pk.hex()}")
    return 0


def cmd_register(ws: Workspace, args) -> int:
    if ws.alias_exists(args.alias):
        raise CliError("input", f"alias {args.alias!r} already registered")
    sk = register(ws.system(ws.next_rng()), args.upi)
    ws.save_secret(args.alias, sk, args.upi)
    _out(f"pk={sk.pk.hex()}")
    return 0


def cmd_commit(ws: Workspace, args) -> int:
    sk = ws.load_secret(args.alias)
    data = _read_bytes(args.data_file)
    acc = _acc_list(ws, args.acc) or ()
    tran = commit(ws.system(ws.next_rng()), sk, Doc(sk.pk, args.type, data, (), acc))
    ws.maybe_flush()
    _out(f"recid={tran.recid.hex()}")
    _out(f"etime={tran.etime}")
    return 0


def cmd_update(ws: Workspace, args) -> int:
    sk = ws.load_secret(args.alias)
    data = _read_bytes(args.data_file) if args.data_file else None
    acc = _acc_list(ws, args.acc)
    tran = update(ws.system(ws.next_rng()), sk, _recid(args.recid), data, acc)
    ws.maybe_flush()
    _out(f"recid={tran.recid.hex()}")
    _out(f"supersedes={args.recid}")
    return 0


def cmd_remove(ws: Workspace, args) -> int:
    sk = ws.load_secret(args.alias)
    remove(ws.system(ws.next_rng()), sk, _recid(args.recid))
    _out(f"removed={args.recid}")
    return 0


def cmd_flush(ws: Workspace, args) -> int:
    block = ws.system().ledger.flush()
    _out(f"height={block.height}")
    _out(f"records={len(block.record_hashes)}")
    _out(f"block_hash={block.block_hash.hex()}")
    return 0


def cmd_inspect(ws: Workspace, args) -> int:
    sysp = ws.system()
    ledger = sysp.ledger
    aliases = ws.aliases()
    if args.alias:
        pks = [ws.load_secret(args.alias).pk]
    else:
        pks = [pk for pk, _ in sysp.reglog.items()]
    records = []
    for pk in pks:
        records += ledger.search(Query(by_pk=pk, latest_only=args.latest))
    records.sort(key=lambda t: t.etime)
    _out(f"records={len(records)}")
    _out(f"blocks={len(ledger.blocks)}")
    _out(f"staged={len(ledger.staged)}")
    for i, t in enumerate(records):
        _out(f"record.{i}.recid={t.recid.hex()}")
        _out(f"record.{i}.owner={aliases.get(t.pk, t.pk.hex())}")
        _out(f"record.{i}.type={t.doc_type}")
        _out(f"record.{i}.etime={t.etime}")
        _out(f"record.{i}.status={ledger.record_status(t.recid)}")
        sup = ledger.supersedes(t.recid)
        if sup:
            _out(f"record.{i}.supersedes={sup.hex()}")
    return 0


def cmd_certify(ws: Workspace, args) -> int:
    sk = ws.load_secret(args.alias)
    policy = _read_policy(args.policy_file)
    sysp = ws.system(ws.next_rng())
    try:
        certifier = sysp.certifier(args.certifier_index)
    except IndexError:
        raise CliError("input", f"no certifier with index {args.certifier_index}") from None
    try:
        result = prove_certify(sysp, sk, certifier, policy)
    except ProtocolAbort as exc:
        _out("status=abort")
        _out(f"reason={exc.reason}")
        _out(f"detail={exc.detail}")
        return EXIT_CODES[exc.reason]
    out_dir = Path(args.out_dir) if args.out_dir else ws.root / "out"
    out_dir.mkdir(parents=True, exist_ok=True)
    cert_path = out_dir / "certificate.txt"
    ev_path = out_dir / "evidence.txt"
    cert_path.write_text(certificate_to_text(result.certificate))
    ev_path.write_text(evidence_to_text(sk.pk, result.evidence))
    _out("status=certified")
    _out(f"certificate={cert_path}")
    _out(f"evidence={ev_path}")
    return 0


def cmd_onboard(ws: Workspace, args) -> int:
    try:
        cert = certificate_from_text(Path(args.certificate_file).read_text())
        client_pk, evidence = evidence_from_text(Path(args.evidence_file).read_text())
    except (OSError, KeyError, ValueError) as exc:
        raise CliError("input", f"cannot parse certificate/evidence: {exc}") from None
    policy = _read_policy(args.policy_file)
    sysp = ws.system()
    trans = sysp.ledger.search(Query(by_pk=client_pk))
    failure = onboard_failure(sysp, client_pk, evidence, policy, cert, trans)
    if failure is None:
        _out("result=accept")
        return 0
    _out("result=reject")
    _out(f"failed_check={failure}")
    return EXIT_CODES["onboard-reject"]


def cmd_verify_integrity(ws: Workspace, args) -> int:
    try:
        ledger = ws.system().ledger
    except LedgerCorrupted as exc:
        _out("chain=broken")
        _out(f"reason={exc}")
        return EXIT_CODES["integrity"]
    chain_ok = ledger.verify_chain()
    report = ledger.status_report()
    _out(f"chain={'valid' if chain_ok else 'broken'}")
    _out(f"blocks={len(ledger.blocks)}")
    counts: dict[str, int] = {}
    for recid, status in report:
        counts[status] = counts.get(status, 0) + 1
        _out(f"record.{recid.hex()}={status}")
    for status in ("anchored", "pending", "tampered", "tombstoned"):
        _out(f"count.{status}={counts.get(status, 0)}")
    if not chain_ok or counts.get(TAMPERED):
        return EXIT_CODES["integrity"]
    return 0


def cmd_games(ws: Workspace, args) -> int:
    names = list(games.STRATEGIES) if args.strategy == "all" else [args.strategy]
    unknown = [n for n in names if n not in games.STRATEGIES]
    if unknown:
        print(f"error=usage message=unknown strategy {unknown[0]!r}", file=sys.stderr)
        print("available=" + ",".join(["all", *games.STRATEGIES]), file=sys.stderr)
        return EXIT_CODES["usage"]
    seed = args.rng_seed if args.rng_seed is not None else (ws.rng_seed or 0)
    blocks, ok = [], True
    for name in names:
        for res in games.run_strategy(name, args.trials, seed):
            blocks.append(res.to_text())
            ok &= res.passed
    text = "\n".join(blocks)
    out = Path(args.out) if args.out else ws.root / f"games-{args.strategy}.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    sys.stdout.write(text)
    _out(f"results={out}")
    return 0 if ok else EXIT_CODES["game-fail"]


MUTATING = {"init", "register", "commit", "update", "remove", "flush", "certify"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kychain", description="KYC certification over an anchored ledger")
    p.add_argument("--workspace", default=".", help="workspace directory")
    p.add_argument("--clock", type=int, default=None, help="fixed ledger clock in ms since epoch")
    p.add_argument("--rng-seed", type=int, default=None, help="seed for reproducible randomness")
    p.add_argument("--flush-every", type=int, default=None, help="anchor after this many staged records")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init")
    s.add_argument("--certifiers", type=int, default=1)

    s = sub.add_parser("register")
    s.add_argument("alias")
    s.add_argument("upi")

    s = sub.add_parser("commit")
    s.add_argument("alias")
    s.add_argument("--type", required=True)
    s.add_argument("--data-file", required=True)
    s.add_argument("--acc", help="comma-separated certifier indices")

    s = sub.add_parser("update")
    s.add_argument("alias")
    s.add_argument("recid")
    s.add_argument("--data-file")
    s.add_argument("--acc", help="comma-separated certifier indices, or 'none'")

    s = sub.add_parser("remove")
    s.add_argument("alias")
    s.add_argument("recid")

    sub.add_parser("flush")

    s = sub.add_parser("inspect")
    s.add_argument("--alias")
    s.add_argument("--latest", action="store_true")

    s = sub.add_parser("certify")
    s.add_argument("alias")
    s.add_argument("certifier_index", type=int)
    s.add_argument("policy_file")
    s.add_argument("--out-dir")

    s = sub.add_parser("onboard")
    s.add_argument("certificate_file")
    s.add_argument("evidence_file")
    s.add_argument("policy_file")

    sub.add_parser("verify-integrity")

    s = sub.add_parser("games")
    s.add_argument("strategy")
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--rng-seed", dest="games_seed", type=int, default=None)
    s.add_argument("--out")
    return p


COMMANDS = {
    "init": cmd_init,
    "register": cmd_register,
    "commit": cmd_commit,
    "update": cmd_update,
    "remove": cmd_remove,
    "flush": cmd_flush,
    "inspect": cmd_inspect,
    "certify": cmd_certify,
    "onboard": cmd_onboard,
    "verify-integrity": cmd_verify_integrity,
    "games": cmd_games,
}


def _error(kind: str, message: str) -> int:
    print(f"error={kind} message={message}", file=sys.stderr)
    return EXIT_CODES[kind]


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "games" and args.games_seed is not None:
        args.rng_seed = args.games_seed
    ws = Workspace(args.workspace, args.clock, args.rng_seed, args.flush_every)
    try:
        if args.command == "init":
            return cmd_init(ws, args)
        if args.command in MUTATING:
            if not (ws.root / STATE_FILE).exists():
                raise CliError("workspace", f"no workspace at {ws.root}")
            with ws.locked():
                return COMMANDS[args.command](ws, args)
        return COMMANDS[args.command](ws, args)
    except CliError as exc:
        return _error(exc.kind, str(exc))
    except (ValidationError, PolicyParseError) as exc:
        return _error("input", str(exc))
    except (LedgerRejection, AuthorizationError, NotFoundError, IntegrityError) as exc:
        return _error("rejected", str(exc))
    except (UninitializedError, ConfigurationError, LedgerCorrupted) as exc:
        return _error("workspace", str(exc))
    except KYChainError as exc:
        return _error("input", str(exc))


if __name__ == "__main__":
    sys.exit(main())
