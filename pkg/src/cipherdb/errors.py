"""Exception hierarchy.

Every error carries a stable ``code`` used in ERR frames and a process exit
status used by the CLI.
"""


class CipherDBError(Exception):
    code = "Error"
    exit_status = 1


class KeyMalformed(CipherDBError):
    code = "KeyMalformed"


class ValueMalformed(CipherDBError):
    code = "ValueMalformed"


class CiphertextMalformed(CipherDBError):
    code = "CiphertextMalformed"


class RngFailure(CipherDBError):
    code = "RngFailure"


class DuplicateTable(CipherDBError):
    code = "DuplicateTable"


class InvalidSpec(CipherDBError):
    code = "InvalidSpec"


class UnknownTable(CipherDBError):
    code = "UnknownTable"


class UnknownColumn(CipherDBError):
    code = "UnknownColumn"


class TypeMismatch(CipherDBError):
    code = "TypeMismatch"


class KeyRequired(CipherDBError):
    code = "KeyRequired"
    exit_status = 3


class InvalidCiphertextOp(CipherDBError):
    code = "InvalidCiphertextOp"
    exit_status = 4


class SQLSyntaxError(CipherDBError):
    code = "SyntaxError"
    exit_status = 2

    def __init__(self, message, line=1, column=1):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


class UnsupportedFeature(CipherDBError):
    code = "UnsupportedFeature"
    exit_status = 2


class ArityMismatch(CipherDBError):
    code = "ArityMismatch"


class IoFailure(CipherDBError):
    code = "IoFailure"
    exit_status = 5


class NotIndexed(CipherDBError):
    code = "NotIndexed"


class PlanInfeasible(CipherDBError):
    code = "PlanInfeasible"


class ArithmeticOverflow(CipherDBError):
    code = "ArithmeticOverflow"


class CsvMalformed(CipherDBError):
    code = "CsvMalformed"
    exit_status = 5


class LocalDecryptFailure(CipherDBError):
    code = "LocalDecryptFailure"


class MessageOutOfRange(CipherDBError):
    code = "MessageOutOfRange"


class InvalidCiphertext(CipherDBError):
    code = "InvalidCiphertext"


class BindFailure(CipherDBError):
    code = "BindFailure"
    exit_status = 5


class ProtocolError(CipherDBError):
    code = "ProtocolError"
    exit_status = 5


_BY_CODE = {
    cls.code: cls
    for cls in list(globals().values())
    if isinstance(cls, type) and issubclass(cls, CipherDBError)
}


def error_for_code(code: str, message: str) -> CipherDBError:
    """Rebuild an exception received in an ERR frame."""
    cls = _BY_CODE.get(code, CipherDBError)
    err = CipherDBError.__new__(cls)
    Exception.__init__(err, message)
    return err
