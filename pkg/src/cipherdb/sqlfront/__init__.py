"""SQL subset: parsing, classification, validation and constant rewriting."""

from .ast import CIPHERTEXT, PLAINTEXT, Query
from .parser import parse, tokenize
from .validate import (
    CIPHER_COMPARE,
    DECRYPT_COMPARE,
    ValidatedQuery,
    bindings_from_query,
    rewrite_constants,
    table_spec_from_ddl,
    validate,
)

__all__ = [
    "CIPHERTEXT",
    "PLAINTEXT",
    "CIPHER_COMPARE",
    "DECRYPT_COMPARE",
    "Query",
    "ValidatedQuery",
    "bindings_from_query",
    "parse",
    "rewrite_constants",
    "table_spec_from_ddl",
    "tokenize",
    "validate",
]
