"""Regenerate the frozen test vectors under tests/golden/.

The crypto vectors are computed here straight from hmac/struct/AESGCM, not
through the package, so the tests that read them check the package against
an independent construction. The ledger files come from a fixed CLI scenario.

    python scripts/make_golden.py
"""

import hashlib
import hmac
import random
import shutil
import struct
import sys
import tempfile
from pathlib import Path

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "tests" / "golden"
sys.path.insert(0, str(ROOT / "tests"))

from scenario import GOLDEN_SCENARIO, run_cli_scenario  # noqa: E402


def enc(parts):
    out = struct.pack(">Q", len(parts))
    for p in parts:
        out += struct.pack(">Q", len(p)) + p
    return out


def crypto_vectors() -> str:
    rnd = random.Random(20240501)
    lines = []
    for i in range(8):
        seed, pk, recid = rnd.randbytes(32), rnd.randbytes(32), rnd.randbytes(32)
        idx = 1 + i % 3
        key = hmac.new(seed, enc([pk, recid, bytes([idx])]), hashlib.sha256).digest()
        lines.append(f"prf {seed.hex()} {pk.hex()} {recid.hex()} {idx} {key.hex()}")
    for n in (0, 1, 255, 256, 700):
        key, nonce, pt = rnd.randbytes(32), rnd.randbytes(12), rnd.randbytes(n)
        size = 256
        while size < n + 1:
            size *= 2
        padded = pt + b"\x80" + bytes(size - n - 1)
        body = AESGCM(key).encrypt(nonce, padded, None)
        lines.append(f"aead {key.hex()} {nonce.hex()} {pt.hex() or '-'} {(nonce + body).hex()}")
    for n in (0, 3, 64):
        sigk = rnd.randbytes(32)
        priv = Ed25519PrivateKey.from_private_bytes(sigk)
        pk = priv.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        msg = rnd.randbytes(n)
        lines.append(f"sig {sigk.hex()} {pk.hex()} {msg.hex() or '-'} {priv.sign(msg).hex()}")
    return "\n".join(lines) + "\n"


def main() -> None:
    GOLDEN.mkdir(parents=True, exist_ok=True)
    (GOLDEN / "crypto_vectors.txt").write_text(crypto_vectors())
    with tempfile.TemporaryDirectory() as tmp:
        ws = Path(tmp) / "ws"
        run_cli_scenario(ws, Path(tmp), GOLDEN_SCENARIO)
        for name in ("ledger.log", "anchors.bin", "ledger.params"):
            shutil.copy(ws / name, GOLDEN / name)
    print(f"wrote golden files to {GOLDEN}")


if __name__ == "__main__":
    main()
