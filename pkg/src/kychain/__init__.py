"""User-controlled KYC data sharing and certification over an anchored ledger."""

from .crypto import Ciphertext, SigningKeyPair
from .errors import KYChainError, LedgerRejection, ProtocolAbort
from .ledger import Ledger, ManualClock, Query
from .model import Certificate, ClientSecret, Doc, Entry, Evidence, Timestamp, Tran
from .policy import Clause, Policy
from .protocol import (
    KeyMessage,
    SystemParams,
    certify_finish,
    commit,
    kycs_setup,
    onboard,
    prove_certify,
    prove_start,
    register,
    remove,
    update,
)

__version__ = "0.1.0"
