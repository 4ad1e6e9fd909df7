"""cipherdb: an SQL engine over AES-256 encrypted columns.

Stored values are deterministic or probabilistic AES ciphertext. Queries
compare deterministic ciphertext directly where that is sound and otherwise
decrypt on the fly with keys sent along with the query; every key and
plaintext buffer is wiped when the query ends.
"""

from .catalog import Catalog, ColumnSpec, KeyBinding, TableSpec
from .cipher import (
    COUNTERS,
    REGISTRY,
    CipherValue,
    LogicalType,
    PlainValue,
    SymKey,
    decrypt,
    encrypt_det,
    encrypt_prob,
    wipe,
)
from .database import Database
from .engine import Engine, ResultSet
from .errors import CipherDBError
from .sqlfront import parse, validate

__version__ = "0.1.0"

__all__ = [
    "COUNTERS",
    "REGISTRY",
    "Catalog",
    "CipherDBError",
    "CipherValue",
    "ColumnSpec",
    "Database",
    "Engine",
    "KeyBinding",
    "LogicalType",
    "PlainValue",
    "ResultSet",
    "SymKey",
    "TableSpec",
    "decrypt",
    "encrypt_det",
    "encrypt_prob",
    "parse",
    "validate",
    "wipe",
]
