"""End-to-end walk through the library: register, commit, update, certify, onboard, tamper.

    python scripts/demo_scenario.py [--seed 1]
"""

import argparse
import dataclasses
import random

from kychain.errors import ProtocolAbort
from kychain.ledger import ManualClock, Query
from kychain.model import Doc
from kychain.policy import parse_policy
from kychain.protocol import commit, kycs_setup, make_upi, onboard_failure, prove_certify, register, update

DAY = 86_400_000
POLICY = """
type:passport max_age:365d
type:bill max_age:90d pred:min_size:64
"""


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    rnd = random.Random(args.seed)
    clock = ManualClock(1_700_000_000_000)
    sp = kycs_setup(128, 2, clock=clock, rng=rnd.randbytes)
    bank, broker = sp.certifier(0), sp.certifier(1)
    sk = register(sp, make_upi("AB123456"))
    policy = parse_policy(POLICY)

    commit(sp, sk, Doc(sk.pk, "passport", b"P<GBR" + rnd.randbytes(90)))
    bill = commit(sp, sk, Doc(sk.pk, "bill", b"gas " * 10, (), (bank.pk,)))
    print(f"committed 2 records, ledger holds {len(sp.ledger.search(Query(by_pk=sk.pk)))}")

    try:
        prove_certify(sp, sk, bank, policy)
    except ProtocolAbort as exc:
        print(f"first attempt aborted: {exc.reason} (the 40-byte bill is below min_size:64)")

    clock.advance(DAY)
    bill = update(sp, sk, bill.recid, b"electricity, quarterly statement " * 3)
    res = prove_certify(sp, sk, bank, policy)
    print(f"certified by bank: digest={res.certificate.evidence_digest.hex()[:16]}...")

    try:
        prove_certify(sp, sk, broker, policy)
    except ProtocolAbort as exc:
        print(f"broker refused by access list: {exc.reason}")

    trans = sp.ledger.search(Query(by_pk=sk.pk))
    print("onboard now:", onboard_failure(sp, sk.pk, res.evidence, policy, res.certificate, trans) or "accept")
    clock.advance(91 * DAY)
    print("onboard after 91 days:", onboard_failure(sp, sk.pk, res.evidence, policy, res.certificate, trans))

    sp.ledger.flush()
    sp.ledger.corrupt_record(bill.recid, dataclasses.replace(bill, etime=bill.etime._replace(ms=clock.ms)))
    print("integrity after back-dating the bill:",
          {r.hex()[:8]: s for r, s in sp.ledger.status_report()})


if __name__ == "__main__":
    main()
