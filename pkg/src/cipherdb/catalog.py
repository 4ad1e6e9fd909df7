"""Schemas, encryption modes and per-query key bindings.

The catalog never holds key material. Keys arrive with each query in a
:class:`KeyBinding` and are resolved column first, then table, then database.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional

from .cipher import DETERMINISTIC, MODES, PROBABILISTIC, LogicalType, SymKey
from .errors import DuplicateTable, InvalidSpec, IoFailure, KeyRequired, UnknownColumn, UnknownTable

INDIVIDUAL = "individual"
ROW_GROUPED = "row-grouped"
GROUPINGS = (INDIVIDUAL, ROW_GROUPED)

SCOPE_DATABASE = "database"
SCOPE_TABLE = "table"
SCOPE_COLUMN = "per-column"
KEY_SCOPES = (SCOPE_DATABASE, SCOPE_TABLE, SCOPE_COLUMN)

CATALOG_HEADER = "# cipherdb catalog v1"


def _norm(name: str) -> str:
    return name.casefold()


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    ltype: LogicalType
    enc_mode: str = DETERMINISTIC
    grouping: str = INDIVIDUAL
    indexed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "ltype", LogicalType.parse(self.ltype))

    @property
    def deterministic(self) -> bool:
        return self.enc_mode == DETERMINISTIC

    @property
    def grouped(self) -> bool:
        return self.grouping == ROW_GROUPED

    @property
    def cipher_comparable(self) -> bool:
        """True when equality can be tested on the stored ciphertext."""
        return self.deterministic and not self.grouped


@dataclass
class TableSpec:
    name: str
    columns: List[ColumnSpec]
    primary_key: Optional[str] = None
    key_scope: str = SCOPE_DATABASE
    grouping: str = INDIVIDUAL

    def __post_init__(self):
        if self.key_scope == "column":
            self.key_scope = SCOPE_COLUMN
        self.columns = [
            c if c.grouping == self.grouping else ColumnSpec(c.name, c.ltype, c.enc_mode, self.grouping, c.indexed)
            for c in self.columns
        ]
        self._by_name = {_norm(c.name): i for i, c in enumerate(self.columns)}

    def validate(self) -> None:
        if not self.name or not self.name.replace("_", "a").isalnum():
            raise InvalidSpec(f"bad table name {self.name!r}")
        if not self.columns:
            raise InvalidSpec(f"table {self.name} has no columns")
        if len(self._by_name) != len(self.columns):
            raise InvalidSpec(f"duplicate column names in {self.name}")
        if self.key_scope not in KEY_SCOPES:
            raise InvalidSpec(f"unknown key scope {self.key_scope!r}")
        if self.grouping not in GROUPINGS:
            raise InvalidSpec(f"unknown grouping {self.grouping!r}")
        for c in self.columns:
            if c.enc_mode not in MODES:
                raise InvalidSpec(f"unknown encryption mode {c.enc_mode!r}")
            if c.indexed and c.enc_mode != DETERMINISTIC:
                raise InvalidSpec(f"{self.name}.{c.name}: only deterministic columns can be indexed")
            if c.indexed and c.grouped:
                raise InvalidSpec(f"{self.name}.{c.name}: row-grouped columns cannot be indexed")
        if self.grouping == ROW_GROUPED:
            if len({c.enc_mode for c in self.columns}) != 1:
                raise InvalidSpec(f"{self.name}: row-grouped columns must share one encryption mode")
            if self.key_scope == SCOPE_COLUMN:
                raise InvalidSpec(f"{self.name}: row-grouped tables need a database or table key")
        if self.primary_key is not None and _norm(self.primary_key) not in self._by_name:
            raise InvalidSpec(f"primary key {self.primary_key} is not a column of {self.name}")

    @property
    def grouped(self) -> bool:
        return self.grouping == ROW_GROUPED

    @property
    def group_mode(self) -> str:
        return self.columns[0].enc_mode

    def column_index(self, name: str) -> int:
        try:
            return self._by_name[_norm(name)]
        except KeyError:
            raise UnknownColumn(f"{self.name} has no column {name}") from None

    def column(self, name: str) -> ColumnSpec:
        return self.columns[self.column_index(name)]

    def has_column(self, name: str) -> bool:
        return _norm(name) in self._by_name

    def is_primary_key(self, name: str) -> bool:
        return self.primary_key is not None and _norm(self.primary_key) == _norm(name)

    def scope_id(self, column: str) -> str:
        """Declared key scope identifier covering ``column``."""
        if self.key_scope == SCOPE_DATABASE:
            return "*"
        if self.key_scope == SCOPE_TABLE:
            return _norm(self.name)
        return f"{_norm(self.name)}.{_norm(column)}"


class KeyBinding:
    """Scope -> key map supplied with one query.

    Scopes are ``"*"``, ``"Table"`` or ``"Table.Column"`` (case-insensitive).
    """

    def __init__(self, keys: Optional[Dict[str, SymKey]] = None):
        self._keys: Dict[str, SymKey] = {}
        for scope, key in (keys or {}).items():
            self.add(scope, key)

    def add(self, scope: str, key: SymKey) -> None:
        scope = scope.strip()
        key.scope = scope
        self._keys[_norm(scope)] = key

    def get(self, scope: str) -> Optional[SymKey]:
        return self._keys.get(_norm(scope))

    def keys(self) -> List[SymKey]:
        return list(self._keys.values())

    def items(self):
        return [(k.scope, k) for k in self._keys.values()]

    def copy(self) -> "KeyBinding":
        return KeyBinding({k.scope: k.copy() for k in self._keys.values()})

    def merged(self, other: "KeyBinding") -> "KeyBinding":
        out = KeyBinding()
        out._keys = dict(self._keys)
        out._keys.update(other._keys)
        return out

    def wipe(self) -> None:
        for key in self._keys.values():
            key.wipe()

    def __len__(self):
        return len(self._keys)

    def __bool__(self):
        return bool(self._keys)

    def __eq__(self, other):
        return isinstance(other, KeyBinding) and self._keys == other._keys

    def __repr__(self):
        return f"KeyBinding(scopes={sorted(k.scope for k in self._keys.values())})"


def find_key(bindings: Optional[KeyBinding], table: str, column: Optional[str]) -> Optional[SymKey]:
    if not bindings:
        return None
    if column is not None:
        key = bindings.get(f"{table}.{column}")
        if key is not None:
            return key
    return bindings.get(table) or bindings.get("*")


def resolve_key(bindings: Optional[KeyBinding], table: str, column: str) -> SymKey:
    """Most specific key covering ``table.column``: column, table, database."""
    key = find_key(bindings, table, column)
    if key is None:
        raise KeyRequired(f"no key supplied for column {table}.{column}")
    return key


class Catalog:
    """In-memory schema registry, optionally persisted to a text file."""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self._tables: Dict[str, TableSpec] = {}
        self._write_lock = threading.Lock()
        if path and os.path.exists(path):
            self._tables = {_norm(t.name): t for t in load_catalog(path)}

    def create_table(self, spec: TableSpec) -> None:
        spec.validate()
        with self._write_lock:
            if _norm(spec.name) in self._tables:
                raise DuplicateTable(f"table {spec.name} already exists")
            self._tables[_norm(spec.name)] = spec
            if self.path:
                save_catalog(self.path, self._tables.values())

    def table(self, name: str) -> TableSpec:
        try:
            return self._tables[_norm(name)]
        except KeyError:
            raise UnknownTable(f"no table named {name}") from None

    def has_table(self, name: str) -> bool:
        return _norm(name) in self._tables

    def tables(self) -> List[TableSpec]:
        return list(self._tables.values())

    def __contains__(self, name):
        return self.has_table(name)


def dump_catalog(tables: Iterable[TableSpec]) -> str:
    lines = [CATALOG_HEADER]
    for t in tables:
        lines.append(
            "\t".join(
                ["@table", t.name, f"key_scope={t.key_scope}", f"primary_key={t.primary_key or ''}", f"grouping={t.grouping}"]
            )
        )
        for c in t.columns:
            lines.append(
                "\t".join([f"{t.name}.{c.name}", str(c.ltype), c.enc_mode, c.grouping, "true" if c.indexed else "false"])
            )
    return "\n".join(lines) + "\n"


def parse_catalog(text: str) -> List[TableSpec]:
    tables: Dict[str, dict] = {}
    order: List[str] = []
    lines = text.splitlines()
    if not lines or lines[0].strip() != CATALOG_HEADER:
        raise IoFailure("catalog file has no version header")
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if parts[0] == "@table":
            if len(parts) < 2:
                raise IoFailure(f"catalog line {lineno}: malformed table entry")
            opts = dict(p.split("=", 1) for p in parts[2:] if "=" in p)
            tables[_norm(parts[1])] = {"name": parts[1], "opts": opts, "columns": []}
            order.append(_norm(parts[1]))
            continue
        if len(parts) != 5 or "." not in parts[0]:
            raise IoFailure(f"catalog line {lineno}: expected 5 tab-separated fields")
        tname, cname = parts[0].split(".", 1)
        entry = tables.get(_norm(tname))
        if entry is None:
            entry = tables[_norm(tname)] = {"name": tname, "opts": {}, "columns": []}
            order.append(_norm(tname))
        entry["columns"].append(ColumnSpec(cname, LogicalType.parse(parts[1]), parts[2], parts[3], parts[4] == "true"))
    out = []
    for key in order:
        entry = tables[key]
        opts = entry["opts"]
        grouping = opts.get("grouping") or (entry["columns"][0].grouping if entry["columns"] else INDIVIDUAL)
        spec = TableSpec(
            entry["name"],
            entry["columns"],
            primary_key=opts.get("primary_key") or None,
            key_scope=opts.get("key_scope", SCOPE_DATABASE),
            grouping=grouping,
        )
        spec.validate()
        out.append(spec)
    return out


def save_catalog(path: str, tables: Iterable[TableSpec]) -> None:
    tmp = path + ".tmp"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(dump_catalog(tables))
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write catalog: {exc}") from exc


def load_catalog(path: str) -> List[TableSpec]:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_catalog(fh.read())
    except OSError as exc:
        raise IoFailure(f"cannot read catalog: {exc}") from exc


__all__ = [
    "Catalog",
    "ColumnSpec",
    "TableSpec",
    "KeyBinding",
    "resolve_key",
    "find_key",
    "DETERMINISTIC",
    "PROBABILISTIC",
    "INDIVIDUAL",
    "ROW_GROUPED",
]
