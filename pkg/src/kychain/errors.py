"""Exception hierarchy shared by every layer of the package."""


class KYChainError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(KYChainError):
    pass


class DomainError(KYChainError, ValueError):
    """An argument lies outside the operation's domain."""


class PlaintextTooLarge(DomainError):
    pass


class ValidationError(KYChainError, ValueError):
    pass


class AuthorizationError(KYChainError):
    pass


class IntegrityError(KYChainError):
    """Ciphertext or record failed an integrity check."""


class NotFoundError(KYChainError, LookupError):
    pass


class UninitializedError(KYChainError):
    pass


class QueryError(KYChainError, ValueError):
    pass


class LedgerRejection(KYChainError):
    """The ledger refused an append (the bottom value of Append)."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class LedgerCorrupted(KYChainError):
    """On-disk ledger files could not be parsed."""


class PolicyParseError(KYChainError, ValueError):
    pass


class GameSetupError(KYChainError):
    pass


class ProtocolAbort(KYChainError):
    """A Prove/Certify session aborted.

    ``reason`` is one of the machine-readable codes in ``ABORT_REASONS``.
    """

    def __init__(self, reason: str, detail: str = ""):
        if reason not in ABORT_REASONS:
            raise ValueError(f"unknown abort reason {reason!r}")
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


ABORT_REASONS = (
    "auth-fail",
    "wkd-fail",
    "policy-fail",
    "access-fail",
    "channel-fail",
    "registration-fail",
    "binding-fail",
    "divergence-fail",
)
