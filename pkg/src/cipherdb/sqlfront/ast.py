"""AST node types and canonical SQL printing."""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from typing import Optional, Tuple, Union

PLAINTEXT = "plaintext"
CIPHERTEXT = "ciphertext"

AGGREGATES = ("COUNT", "SUM", "AVG", "VAR", "STD")
CRYPTO_FUNCS = ("AESE", "AESD")
SCALARS = ("INT",)


@dataclass(frozen=True)
class ColumnRef:
    table: Optional[str]
    column: str

    def sql(self) -> str:
        return f"{self.table}.{self.column}" if self.table else self.column


@dataclass(frozen=True)
class Literal:
    value: Union[int, Decimal, str]

    def sql(self) -> str:
        if isinstance(self.value, str):
            return "'" + self.value.replace("'", "''") + "'"
        return str(self.value)


@dataclass(frozen=True)
class HexLiteral:
    # bytearray so key literals can be zeroed after the query
    data: bytearray = field(repr=False, hash=False)

    def sql(self) -> str:
        return f"x'{self.data.hex()}'"


@dataclass(frozen=True)
class Star:
    def sql(self) -> str:
        return "*"


@dataclass(frozen=True)
class FuncCall:
    name: str
    args: Tuple = ()

    def sql(self) -> str:
        return f"{self.name}({', '.join(a.sql() for a in self.args)})"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object

    def sql(self) -> str:
        return f"({self.left.sql()} {self.op} {self.right.sql()})"


Expr = Union[ColumnRef, Literal, HexLiteral, Star, FuncCall, BinOp]


@dataclass(frozen=True)
class SelectItem:
    expr: object
    alias: Optional[str] = None

    def sql(self) -> str:
        return self.expr.sql() + (f" AS {self.alias}" if self.alias else "")


@dataclass(frozen=True)
class TableRef:
    name: str
    alias: Optional[str] = None

    @property
    def ref_name(self) -> str:
        return self.alias or self.name

    def sql(self) -> str:
        return self.name + (f" AS {self.alias}" if self.alias else "")


@dataclass(frozen=True)
class Predicate:
    lhs: object
    op: str  # "=" or "<>"
    rhs: object

    def sql(self) -> str:
        return f"{self.lhs.sql()} {self.op} {self.rhs.sql()}"


@dataclass(frozen=True)
class KeySpec:
    scope: str
    key: HexLiteral

    def sql(self) -> str:
        return f"{self.scope} = {self.key.sql()}"


@dataclass(frozen=True)
class Select:
    items: Tuple[SelectItem, ...]
    tables: Tuple[TableRef, ...]
    where: Tuple[Predicate, ...] = ()
    group_by: Optional[ColumnRef] = None
    into: Optional[str] = None

    def sql(self) -> str:
        parts = ["SELECT"]
        if self.into:
            parts.append(f"INTO {self.into}")
        parts.append(", ".join(i.sql() for i in self.items))
        parts.append("FROM " + ", ".join(t.sql() for t in self.tables))
        if self.where:
            parts.append("WHERE " + " AND ".join(p.sql() for p in self.where))
        if self.group_by is not None:
            parts.append("GROUP BY " + self.group_by.sql())
        return " ".join(parts)


@dataclass(frozen=True)
class Insert:
    table: str
    columns: Tuple[str, ...]
    rows: Tuple[Tuple[object, ...], ...]

    def sql(self) -> str:
        cols = f" ({', '.join(self.columns)})" if self.columns else ""
        rows = ", ".join("(" + ", ".join(v.sql() for v in r) + ")" for r in self.rows)
        return f"INSERT INTO {self.table}{cols} VALUES {rows}"


@dataclass(frozen=True)
class Update:
    table: TableRef
    assignments: Tuple[Tuple[str, object], ...]
    where: Tuple[Predicate, ...] = ()

    def sql(self) -> str:
        sets = ", ".join(f"{c} = {e.sql()}" for c, e in self.assignments)
        out = f"UPDATE {self.table.sql()} SET {sets}"
        if self.where:
            out += " WHERE " + " AND ".join(p.sql() for p in self.where)
        return out


@dataclass(frozen=True)
class ColumnDef:
    name: str
    type_name: str
    mode: str = "deterministic"
    indexed: bool = False
    primary_key: bool = False

    def sql(self) -> str:
        out = f"{self.name} {self.type_name.upper()} {self.mode.upper()}"
        if self.indexed:
            out += " INDEXED"
        if self.primary_key:
            out += " PRIMARY KEY"
        return out


@dataclass(frozen=True)
class CreateTable:
    name: str
    columns: Tuple[ColumnDef, ...]
    grouping: str = "individual"
    key_scope: str = "database"

    def sql(self) -> str:
        out = f"CREATE TABLE {self.name} ({', '.join(c.sql() for c in self.columns)})"
        if self.grouping == "row-grouped":
            out += " GROUPED BY ROW"
        scope = {"database": "DATABASE", "table": "TABLE", "per-column": "COLUMN"}[self.key_scope]
        return out + f" KEY SCOPE {scope}"


Statement = Union[Select, Insert, Update, CreateTable]


def walk(node):
    """Yield every expression node below ``node``."""
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        if isinstance(n, FuncCall):
            stack.extend(n.args)
        elif isinstance(n, BinOp):
            stack.extend((n.left, n.right))
        elif isinstance(n, SelectItem):
            stack.append(n.expr)
        elif isinstance(n, Predicate):
            stack.extend((n.lhs, n.rhs))
        elif isinstance(n, Select):
            stack.extend(n.items)
            stack.extend(n.where)
        elif isinstance(n, Update):
            stack.extend(e for _, e in n.assignments)
            stack.extend(n.where)
        elif isinstance(n, Insert):
            for r in n.rows:
                stack.extend(r)


def uses_crypto_functions(stmt) -> bool:
    return any(isinstance(n, FuncCall) and n.name in CRYPTO_FUNCS for n in walk(stmt))


@dataclass
class Query:
    """A parsed statement with its classification and trailer keys."""

    statement: object
    kind: str
    keys: Tuple[KeySpec, ...] = ()

    def key_literals(self):
        """Every hex literal used as key material (trailer and inline)."""
        out = [k.key for k in self.keys]
        for n in walk(self.statement):
            if isinstance(n, FuncCall) and n.name in CRYPTO_FUNCS and len(n.args) == 2:
                out.append(n.args[1])
        return out

    def sql(self, redact_keys: bool = False) -> str:
        text = self.statement.sql()
        if self.keys:
            if redact_keys:
                text += " WITH KEYS (" + ", ".join(f"{k.scope} = x'…'" for k in self.keys) + ")"
            else:
                text += " WITH KEYS (" + ", ".join(k.sql() for k in self.keys) + ")"
        return text + ";"

    def __eq__(self, other):
        return (
            isinstance(other, Query)
            and self.statement == other.statement
            and self.kind == other.kind
            and self.keys == other.keys
        )
