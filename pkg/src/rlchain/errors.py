"""Error types shared across the ledger, registry, off-chain store and node.

Every error carries a stable ``code`` string. The CLI maps codes to exit
statuses and the node echoes them as rejection reasons.
"""


class RLError(Exception):
    code = "ERROR"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


class SerializationError(RLError, ValueError):
    code = "SERIALIZATION_ERROR"


class BadSignature(RLError):
    code = "BAD_SIGNATURE"


class StaleNonce(RLError):
    code = "STALE_NONCE"


class SchedulingError(RLError):
    code = "NOT_YOUR_TURN"


class PermissionDenied(RLError):
    code = "PERMISSION_DENIED"


class AlreadyExists(RLError):
    code = "ALREADY_EXISTS"


class NotFound(RLError, LookupError):
    code = "NOT_FOUND"


class InvalidBom(RLError):
    code = "INVALID_BOM"


class InvalidTransition(RLError):
    code = "INVALID_TRANSITION"


class MissingRecord(RLError):
    code = "MISSING_RECORD"


class NoProgress(RLError):
    code = "NO_PROGRESS"


class TooLarge(RLError):
    code = "TOO_LARGE"


class IntegrityFailure(RLError):
    code = "INTEGRITY_FAILURE"


class OutOfRange(RLError, IndexError):
    code = "OUT_OF_RANGE"


class CorruptChain(RLError):
    code = "CORRUPT_CHAIN"

    def __init__(self, message: str = "", report=None):
        super().__init__(message)
        self.report = report


ALL_ERRORS = (
    SerializationError, BadSignature, StaleNonce, SchedulingError,
    PermissionDenied, AlreadyExists, NotFound, InvalidBom, InvalidTransition,
    MissingRecord, NoProgress, TooLarge, IntegrityFailure, OutOfRange,
    CorruptChain,
)


_BY_CODE = {cls.code: cls for cls in ALL_ERRORS}


def error_for_code(code: str, message: str = "") -> RLError:
    cls = _BY_CODE.get(code)
    if cls is None:
        err = RLError(message)
        err.code = code
        return err
    return cls(message)
