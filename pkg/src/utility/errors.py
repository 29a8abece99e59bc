class BcdnError(Exception):
    """Base class for every failure raised by the simulator."""


class DecryptionError(BcdnError):
    """Ciphertext could not be opened with the given private key."""


class TransactionRejected(BcdnError):
    def __init__(self, tx_id: str, reason: str):
        self.tx_id = tx_id
        self.reason = reason
        super().__init__(f"Transaction {tx_id[:16]} rejected: {reason}")


class AuthorizationError(BcdnError):
    """Requester is not a registered, verified CP."""


class ProtocolViolation(BcdnError):
    """A participant acted out of turn (wrong primary, wrong session state)."""


class DimensionError(BcdnError):
    """Feature vectors of different length were combined."""


class OwnershipError(BcdnError):
    """Content id does not belong to the CP's library."""


class TraceParseError(BcdnError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class SizingError(BcdnError):
    """Catalog too small for the requested partition."""


class AccountingError(BcdnError):
    """Hit/request tallies are inconsistent."""


class MetricDomainError(BcdnError):
    """Metric input lies outside its domain."""


class ConfigError(BcdnError):
    """Scenario configuration is invalid."""


class LedgerFormatError(BcdnError):
    """An exported chain line could not be decoded."""


class ConsensusStall(BcdnError):
    """A block did not commit within the tick budget."""
