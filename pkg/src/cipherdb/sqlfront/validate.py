"""Name resolution, key-availability checks and constant rewriting.

Column references denote the logical (plaintext) value unless wrapped:

* ``AESE(col)`` is the stored ciphertext and forces a ciphertext comparison;
* ``AESD(col[, key])`` is the decrypted value, optionally with an inline key;
* ``AESE('lit'[, key])`` is the deterministic encryption of a constant;
* ``AESE(x'..')`` is a ciphertext supplied by the client (``plain_len`` u32 LE
  followed by the blocks).

A comparison runs over ciphertext when both sides are deterministic,
individually encrypted and under one key scope; otherwise the engine decrypts
and needs a key for every column involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from typing import List, Optional

from ..catalog import Catalog, ColumnSpec, KeyBinding, TableSpec, find_key
from ..cipher import DETERMINISTIC, CipherValue, LogicalType, PlainValue, SymKey, encrypt_det
from ..errors import (
    ArityMismatch,
    CiphertextMalformed,
    InvalidCiphertextOp,
    InvalidSpec,
    KeyMalformed,
    KeyRequired,
    TypeMismatch,
    UnknownColumn,
    UnsupportedFeature,
    ValueMalformed,
)
from .ast import (
    AGGREGATES,
    BinOp,
    ColumnRef,
    CreateTable,
    FuncCall,
    HexLiteral,
    Insert,
    Literal,
    Query,
    Select,
    Star,
    Update,
)

CIPHER_COMPARE = "ciphertext-compare"
DECRYPT_COMPARE = "decrypt-compare"


# ---------------------------------------------------------------------------
# bound forms


@dataclass
class Source:
    index: int
    alias: str
    spec: TableSpec


@dataclass(eq=False)
class BoundColumn:
    source: int
    alias: str
    table: TableSpec
    index: int
    wrap: Optional[str] = None  # None | "AESE" | "AESD"
    inline_key: Optional[SymKey] = None
    key: Optional[SymKey] = None

    @property
    def spec(self) -> ColumnSpec:
        return self.table.columns[self.index]

    @property
    def ltype(self) -> LogicalType:
        return self.spec.ltype

    @property
    def cipher_comparable(self) -> bool:
        return self.spec.cipher_comparable

    @property
    def scope_id(self) -> str:
        return self.table.scope_id(self.spec.name)

    @property
    def name(self) -> str:
        return f"{self.alias}.{self.spec.name}"

    def same_column(self, other) -> bool:
        return isinstance(other, BoundColumn) and (self.source, self.index) == (other.source, other.index)

    def __repr__(self):
        return f"BoundColumn({self.name}{', ' + self.wrap if self.wrap else ''})"


@dataclass
class Const:
    value: object


@dataclass
class EncConst:
    value: object
    inline_key: Optional[SymKey] = None


@dataclass
class CipherConst:
    value: object  # CipherValue once typed, raw bytes before


@dataclass(eq=False)
class BoundPredicate:
    lhs: BoundColumn
    op: str
    rhs: object
    cipherable: bool = False
    forced_cipher: bool = False
    tag: Optional[str] = None

    @property
    def sources(self) -> frozenset:
        out = {self.lhs.source}
        if isinstance(self.rhs, BoundColumn):
            out.add(self.rhs.source)
        return frozenset(out)

    @property
    def columns(self) -> List[BoundColumn]:
        return [c for c in (self.lhs, self.rhs) if isinstance(c, BoundColumn)]

    def describe(self) -> str:
        rhs = self.rhs.name if isinstance(self.rhs, BoundColumn) else type(self.rhs).__name__
        return f"{self.lhs.name} {self.op} {rhs} [{self.tag}]"


@dataclass(eq=False)
class ColumnOutput:
    name: str
    col: BoundColumn
    decrypt: bool
    to_int: bool = False


@dataclass(eq=False)
class AggOutput:
    name: str
    fn: str
    col: Optional[BoundColumn]  # None for COUNT(*)
    to_int: bool = False

    @property
    def needs_values(self) -> bool:
        return self.fn != "COUNT"


# UPDATE expressions
@dataclass(eq=False)
class ExprColumn:
    col: BoundColumn


@dataclass(eq=False)
class ExprConst:
    value: object


@dataclass(eq=False)
class ExprBin:
    op: str
    left: object
    right: object


@dataclass(eq=False)
class ExprInt:
    inner: object


@dataclass(eq=False)
class ValidatedQuery:
    query: Query
    statement: str  # select | insert | update | create
    kind: str
    bindings: KeyBinding
    inline_keys: List[SymKey] = field(default_factory=list)
    sources: List[Source] = field(default_factory=list)
    predicates: List[BoundPredicate] = field(default_factory=list)
    outputs: list = field(default_factory=list)
    group_by: Optional[BoundColumn] = None
    into: Optional[str] = None
    aggregate: bool = False
    assignments: list = field(default_factory=list)
    insert_rows: list = field(default_factory=list)
    table_spec: Optional[TableSpec] = None
    rewritten: bool = False

    def all_keys(self) -> List[SymKey]:
        return self.bindings.keys() + self.inline_keys

    @property
    def column_names(self) -> List[str]:
        return [o.name for o in self.outputs]


# ---------------------------------------------------------------------------


def _sym(lit: HexLiteral, scope: str) -> SymKey:
    if len(lit.data) != 32:
        raise KeyMalformed(f"key for {scope} must be 64 hex digits")
    return SymKey(lit.data, scope)


def bindings_from_query(q: Query, on_key=None) -> KeyBinding:
    kb = KeyBinding()
    for spec in q.keys:
        key = _sym(spec.key, spec.scope)
        if on_key is not None:
            on_key(key)
        kb.add(spec.scope, key)
    return kb


def _key_for(bc: BoundColumn, bindings: KeyBinding) -> Optional[SymKey]:
    if bc.inline_key is not None:
        return bc.inline_key
    if bc.table.grouped:
        return find_key(bindings, bc.table.name, None) if bindings else None
    return find_key(bindings, bc.table.name, bc.spec.name)


def table_key(spec: TableSpec, column: Optional[str], bindings: KeyBinding) -> Optional[SymKey]:
    if spec.grouped:
        column = None
    return find_key(bindings, spec.name, column)


def _coerce(ltype: LogicalType, value, where: str):
    if ltype.kind == "varchar" and not isinstance(value, str):
        raise TypeMismatch(f"{where}: expected a string literal, got {value!r}")
    try:
        return ltype.coerce(value)
    except ValueMalformed as exc:
        raise TypeMismatch(f"{where}: {exc}") from None


class _Binder:
    def __init__(self, q: Query, catalog: Catalog, bindings: Optional[KeyBinding] = None, on_key=None):
        self.q = q
        self.catalog = catalog
        self.on_key = on_key
        self.bindings = bindings_from_query(q, on_key)
        if bindings:
            # the query's own WITH KEYS entries win over session keys
            self.bindings = bindings.merged(self.bindings)
        self.inline_keys: List[SymKey] = []
        self.sources: List[Source] = []

    # -- names ----------------------------------------------------------------

    def add_source(self, name: str, alias: Optional[str]) -> Source:
        spec = self.catalog.table(name)
        ref = alias or spec.name
        if any(s.alias.casefold() == ref.casefold() for s in self.sources):
            raise InvalidSpec(f"table alias {ref} used twice")
        src = Source(len(self.sources), ref, spec)
        self.sources.append(src)
        return src

    def column(self, ref: ColumnRef, wrap=None, inline_key=None) -> BoundColumn:
        if ref.table is not None:
            for s in self.sources:
                if s.alias.casefold() == ref.table.casefold():
                    return BoundColumn(s.index, s.alias, s.spec, s.spec.column_index(ref.column), wrap, inline_key)
            raise UnknownColumn(f"unknown table or alias {ref.table}")
        hits = [s for s in self.sources if s.spec.has_column(ref.column)]
        if not hits:
            raise UnknownColumn(f"unknown column {ref.column}")
        if len(hits) > 1:
            raise UnknownColumn(f"column {ref.column} is ambiguous")
        s = hits[0]
        return BoundColumn(s.index, s.alias, s.spec, s.spec.column_index(ref.column), wrap, inline_key)

    def inline(self, node: FuncCall) -> Optional[SymKey]:
        if len(node.args) < 2:
            return None
        key = _sym(node.args[1], "inline")
        if self.on_key is not None:
            self.on_key(key)
        self.inline_keys.append(key)
        return key

    def resolve_key(self, bc: BoundColumn, purpose: str) -> SymKey:
        key = _key_for(bc, self.bindings)
        if key is None:
            raise KeyRequired(f"{purpose} column {bc.table.name}.{bc.spec.name} needs a key and none was supplied")
        bc.key = key
        return key

    def attach_key(self, bc: BoundColumn) -> None:
        bc.key = _key_for(bc, self.bindings)

    # -- predicates -------------------------------------------------------------

    def operand(self, node):
        if isinstance(node, ColumnRef):
            return self.column(node)
        if isinstance(node, Literal):
            return Const(node.value)
        if isinstance(node, HexLiteral):
            raise UnsupportedFeature("bare hex literal: wrap client ciphertext as AESE(x'...')")
        if isinstance(node, FuncCall) and node.name in ("AESE", "AESD"):
            key = self.inline(node)
            arg = node.args[0]
            if isinstance(arg, ColumnRef):
                return self.column(arg, node.name, key)
            if node.name == "AESE" and isinstance(arg, Literal):
                return EncConst(arg.value, key)
            if node.name == "AESE" and isinstance(arg, HexLiteral):
                return CipherConst(bytes(arg.data))
            raise UnsupportedFeature(f"{node.name} over {arg.sql()} is not supported")
        raise UnsupportedFeature(f"expression {node.sql()} is not supported in WHERE")

    def predicate(self, p) -> BoundPredicate:
        lhs, rhs = self.operand(p.lhs), self.operand(p.rhs)
        if not isinstance(lhs, BoundColumn):
            lhs, rhs = rhs, lhs
        if not isinstance(lhs, BoundColumn):
            raise UnsupportedFeature(f"predicate {p.sql()} must reference a column")
        bp = BoundPredicate(lhs, p.op, rhs)
        where = p.sql()
        if isinstance(rhs, BoundColumn):
            if lhs.ltype != rhs.ltype:
                raise TypeMismatch(f"{where}: {lhs.ltype} compared with {rhs.ltype}")
            wraps = {lhs.wrap, rhs.wrap}
            if "AESE" in wraps and "AESD" in wraps:
                raise InvalidCiphertextOp(f"{where}: ciphertext compared with plaintext")
            bp.cipherable = (
                lhs.cipher_comparable and rhs.cipher_comparable and lhs.scope_id == rhs.scope_id
            )
            bp.forced_cipher = "AESE" in wraps
            if bp.forced_cipher and not bp.cipherable:
                raise InvalidCiphertextOp(f"{where}: {self._why_not(lhs, rhs)}")
            if bp.cipherable:
                self.attach_key(lhs)
                self.attach_key(rhs)
            else:
                self.resolve_key(lhs, "comparing")
                self.resolve_key(rhs, "comparing")
            return bp
        if isinstance(rhs, Const):
            if lhs.wrap == "AESE":
                raise InvalidCiphertextOp(f"{where}: ciphertext compared with a plaintext constant")
            rhs.value = _coerce(lhs.ltype, rhs.value, where)
            self.resolve_key(lhs, "comparing")
            return bp
        # AESE constant or client ciphertext: equality must run over ciphertext
        if lhs.wrap == "AESD":
            raise InvalidCiphertextOp(f"{where}: plaintext compared with ciphertext")
        if not lhs.cipher_comparable:
            raise InvalidCiphertextOp(f"{where}: {self._why_not(lhs)}")
        bp.cipherable = bp.forced_cipher = True
        self.attach_key(lhs)
        if isinstance(rhs, EncConst):
            rhs.value = _coerce(lhs.ltype, rhs.value, where)
            if rhs.inline_key is None:
                rhs.inline_key = self.resolve_key(lhs, "encrypting the constant for")
        else:
            try:
                cv = CipherValue.from_bytes(rhs.value, DETERMINISTIC)
                cv.validate(lhs.ltype)
            except CiphertextMalformed as exc:
                raise CiphertextMalformed(f"{where}: {exc}") from None
            rhs.value = cv
        return bp

    @staticmethod
    def _why_not(*cols: BoundColumn) -> str:
        for c in cols:
            if c.spec.grouped:
                return f"{c.name} is row-grouped; its values have no individual ciphertext"
            if not c.spec.deterministic:
                return f"{c.name} is probabilistic; equal values have different ciphertexts"
        return "columns are encrypted under different key scopes"

    # -- select list ------------------------------------------------------------

    def output(self, item, kind: str):
        expr = item.expr
        name = item.alias or expr.sql()
        if isinstance(expr, FuncCall) and expr.name == "INT":
            inner = self.output(type(item)(expr.args[0], name), kind)
            if isinstance(inner, ColumnOutput):
                if not inner.decrypt:
                    raise InvalidCiphertextOp(f"{name}: INT needs plaintext")
                if not inner.col.ltype.numeric:
                    raise TypeMismatch(f"{name}: INT needs a numeric argument")
            inner.to_int = True
            inner.name = name
            return inner
        if isinstance(expr, FuncCall) and expr.name in AGGREGATES:
            arg = expr.args[0]
            if isinstance(arg, Star):
                if expr.name != "COUNT":
                    raise UnsupportedFeature(f"{expr.name}(*) is not valid")
                return AggOutput(name, "COUNT", None)
            col = self.operand(arg)
            if not isinstance(col, BoundColumn):
                raise UnsupportedFeature(f"{name}: aggregates take a column")
            if col.wrap == "AESE" and expr.name != "COUNT":
                raise InvalidCiphertextOp(f"{name}: {expr.name} over ciphertext needs on-the-fly decryption (use AESD)")
            if expr.name != "COUNT":
                if not col.ltype.numeric:
                    raise TypeMismatch(f"{name}: {expr.name} needs a numeric column")
                self.resolve_key(col, "aggregating")
            return AggOutput(name, expr.name, col)
        col = self.operand(expr)
        if not isinstance(col, BoundColumn):
            raise UnsupportedFeature(f"select item {name} is not supported")
        decrypt = col.wrap == "AESD" or (kind == "plaintext" and col.wrap is None)
        if decrypt:
            self.resolve_key(col, "projecting")
        elif col.table.grouped:
            raise InvalidCiphertextOp(f"{name}: row-grouped columns cannot be returned as individual ciphertext")
        return ColumnOutput(name, col, decrypt)

    # -- statements ---------------------------------------------------------------

    def select(self, stmt: Select) -> ValidatedQuery:
        for t in stmt.tables:
            self.add_source(t.name, t.alias)
        preds = [self.predicate(p) for p in stmt.where]
        items = []
        for item in stmt.items:
            if isinstance(item.expr, Star):
                for s in self.sources:
                    for c in s.spec.columns:
                        items.append(type(item)(ColumnRef(s.alias, c.name)))
            else:
                items.append(item)
        outputs = [self.output(i, self.q.kind) for i in items]
        group_by = None
        if stmt.group_by is not None:
            group_by = self.column(stmt.group_by)
            if group_by.cipher_comparable:
                self.attach_key(group_by)
            else:
                self.resolve_key(group_by, "grouping by")
        aggregate = group_by is not None or any(isinstance(o, AggOutput) for o in outputs)
        if aggregate:
            for o in outputs:
                if isinstance(o, ColumnOutput) and not (group_by is not None and o.col.same_column(group_by)):
                    raise UnsupportedFeature(f"{o.name} must be aggregated or appear in GROUP BY")
        return ValidatedQuery(
            self.q, "select", self.q.kind, self.bindings, self.inline_keys, self.sources, preds,
            outputs, group_by, stmt.into, aggregate,
        )

    def value(self, node, col: ColumnSpec, spec: TableSpec):
        where = f"{spec.name}.{col.name}"
        if isinstance(node, Literal):
            value = _coerce(col.ltype, node.value, where)
            if table_key(spec, col.name, self.bindings) is None:
                raise KeyRequired(f"writing {where} needs a key and none was supplied")
            return Const(value)
        if isinstance(node, FuncCall) and node.name == "AESE":
            arg = node.args[0]
            if spec.grouped:
                raise InvalidCiphertextOp(f"{where}: row-grouped tables take plaintext values only")
            if isinstance(arg, HexLiteral):
                try:
                    cv = CipherValue.from_bytes(bytes(arg.data), col.enc_mode)
                    cv.validate(col.ltype)
                except CiphertextMalformed as exc:
                    raise CiphertextMalformed(f"{where}: {exc}") from None
                return CipherConst(cv)
            if isinstance(arg, Literal):
                key = self.inline(node) or table_key(spec, col.name, self.bindings)
                if key is None:
                    raise KeyRequired(f"writing {where} needs a key and none was supplied")
                return EncConst(_coerce(col.ltype, arg.value, where), key)
        raise UnsupportedFeature(f"{where}: only literal values can be inserted")

    def insert(self, stmt: Insert) -> ValidatedQuery:
        src = self.add_source(stmt.table, None)
        spec = src.spec
        if stmt.columns:
            order = [spec.column_index(c) for c in stmt.columns]
            if sorted(order) != list(range(len(spec.columns))):
                raise ArityMismatch(f"INSERT must list every column of {spec.name} exactly once")
        else:
            order = list(range(len(spec.columns)))
        rows = []
        for r in stmt.rows:
            if len(r) != len(spec.columns):
                raise ArityMismatch(f"{spec.name} has {len(spec.columns)} columns, row has {len(r)} values")
            vals = [None] * len(spec.columns)
            for ci, node in zip(order, r):
                vals[ci] = self.value(node, spec.columns[ci], spec)
            rows.append(vals)
        return ValidatedQuery(
            self.q, "insert", self.q.kind, self.bindings, self.inline_keys, self.sources,
            insert_rows=rows, table_spec=spec,
        )

    def expr(self, node, target: ColumnSpec):
        if isinstance(node, Literal):
            return ExprConst(node.value)
        if isinstance(node, ColumnRef) or (isinstance(node, FuncCall) and node.name == "AESD"):
            col = self.operand(node)
            self.resolve_key(col, "reading")
            return ExprColumn(col)
        if isinstance(node, FuncCall) and node.name == "INT":
            return ExprInt(self.expr(node.args[0], target))
        if isinstance(node, BinOp):
            if not target.ltype.numeric:
                raise TypeMismatch(f"arithmetic assigned to varchar column {target.name}")
            return ExprBin(node.op, self.expr(node.left, target), self.expr(node.right, target))
        raise UnsupportedFeature(f"expression {node.sql()} is not supported in SET")

    def update(self, stmt: Update) -> ValidatedQuery:
        src = self.add_source(stmt.table.name, stmt.table.alias)
        spec = src.spec
        assigns = []
        for cname, node in stmt.assignments:
            ci = spec.column_index(cname)
            col = spec.columns[ci]
            if isinstance(node, FuncCall) and node.name == "AESE" and isinstance(node.args[0], HexLiteral):
                assigns.append((ci, self.value(node, col, spec)))
                continue
            e = self.expr(node, col)
            _check_expr_types(e, col)
            if table_key(spec, col.name, self.bindings) is None:
                raise KeyRequired(f"writing {spec.name}.{col.name} needs a key and none was supplied")
            assigns.append((ci, e))
        if spec.grouped and table_key(spec, None, self.bindings) is None:
            raise KeyRequired(f"updating row-grouped {spec.name} needs a key and none was supplied")
        preds = [self.predicate(p) for p in stmt.where]
        return ValidatedQuery(
            self.q, "update", self.q.kind, self.bindings, self.inline_keys, self.sources, preds,
            assignments=assigns, table_spec=spec,
        )


def _check_expr_types(e, target: ColumnSpec) -> None:
    if target.ltype.numeric:
        for leaf in _leaves(e):
            if isinstance(leaf, ExprConst) and isinstance(leaf.value, str):
                try:
                    Decimal(leaf.value)
                except Exception:
                    raise TypeMismatch(f"{leaf.value!r} assigned to numeric column {target.name}") from None
            if isinstance(leaf, ExprColumn) and not leaf.col.ltype.numeric:
                raise TypeMismatch(f"varchar column used in numeric expression for {target.name}")
    else:
        if isinstance(e, ExprInt):
            raise TypeMismatch(f"INT assigned to varchar column {target.name}")
        if isinstance(e, ExprConst) and not isinstance(e.value, str):
            raise TypeMismatch(f"number assigned to varchar column {target.name}")
        if isinstance(e, ExprColumn) and e.col.ltype.numeric:
            raise TypeMismatch(f"numeric column assigned to varchar column {target.name}")


def _leaves(e):
    if isinstance(e, ExprBin):
        yield from _leaves(e.left)
        yield from _leaves(e.right)
    elif isinstance(e, ExprInt):
        yield from _leaves(e.inner)
    else:
        yield e


def table_spec_from_ddl(stmt: CreateTable) -> TableSpec:
    cols = [ColumnSpec(c.name, LogicalType.parse(c.type_name), c.mode, stmt.grouping, c.indexed) for c in stmt.columns]
    pks = [c.name for c in stmt.columns if c.primary_key]
    if len(pks) > 1:
        raise InvalidSpec("composite primary keys are not supported")
    spec = TableSpec(stmt.name, cols, pks[0] if pks else None, stmt.key_scope, stmt.grouping)
    spec.validate()
    return spec


def validate(q: Query, catalog: Catalog, bindings: Optional[KeyBinding] = None, *, on_key=None) -> ValidatedQuery:
    """Resolve names and check that every needed key is available.

    ``bindings`` supplements the query's WITH KEYS clause. ``on_key`` sees
    every key built from the query text as soon as it exists, so a caller can
    take ownership before validation has a chance to fail.

    Raises UnknownColumn, KeyRequired, InvalidCiphertextOp, TypeMismatch or
    UnsupportedFeature.
    """
    stmt = q.statement
    b = _Binder(q, catalog, bindings, on_key)
    if isinstance(stmt, Select):
        return b.select(stmt)
    if isinstance(stmt, Insert):
        return b.insert(stmt)
    if isinstance(stmt, Update):
        return b.update(stmt)
    if isinstance(stmt, CreateTable):
        spec = table_spec_from_ddl(stmt)
        return ValidatedQuery(q, "create", q.kind, b.bindings, table_spec=spec)
    raise UnsupportedFeature(f"unsupported statement {type(stmt).__name__}")


def _bound_columns(obj, seen=None):
    """Every BoundColumn reachable from a validated query's parts."""
    seen = set() if seen is None else seen
    if id(obj) in seen:
        return
    seen.add(id(obj))
    if isinstance(obj, BoundColumn):
        yield obj
    elif isinstance(obj, (list, tuple)):
        for x in obj:
            yield from _bound_columns(x, seen)
    elif isinstance(obj, (BoundPredicate, ColumnOutput, AggOutput, ExprColumn, ExprBin, ExprInt)):
        for x in vars(obj).values():
            yield from _bound_columns(x, seen)


def rebind_keys(vq: ValidatedQuery, bindings: Optional[KeyBinding]) -> ValidatedQuery:
    """Point every column of an already planned query at ``bindings``.

    Used when a plan built earlier is executed later with fresh keys. A
    column that needed a key at plan time and finds none now raises
    KeyRequired; inline keys cannot be re-supplied this way.
    """
    vq.bindings = bindings if bindings is not None else KeyBinding()
    parts = [vq.predicates, vq.outputs, vq.group_by, vq.assignments]
    for bc in _bound_columns(parts):
        needed = bc.key is not None
        if bc.inline_key is not None:
            if bc.inline_key.wiped:
                raise KeyRequired(f"inline key for {bc.name} is gone; re-run the query text")
            continue
        bc.key = _key_for(bc, vq.bindings)
        if needed and bc.key is None:
            raise KeyRequired(f"column {bc.table.name}.{bc.spec.name} needs a key and none was supplied")
    return vq


def rewrite_constants(vq: ValidatedQuery, catalog=None, bindings=None, *, encrypt=None, enabled: bool = True) -> ValidatedQuery:
    """Tag predicates and move deterministic comparisons onto ciphertext.

    ``det_col = const`` becomes a ciphertext comparison against the constant
    encrypted once; ``det_a = det_b`` under one key scope compares stored
    ciphertext. Everything else is tagged decrypt-compare. With
    ``enabled=False`` only comparisons the query forces onto ciphertext
    (``AESE``) stay there; used to cross-check the rewrite.

    ``encrypt(key, plainvalue)`` defaults to :func:`encrypt_det`; the engine
    passes its arena so the encryption is counted and its buffers tracked.
    """
    enc = encrypt or encrypt_det
    for bp in vq.predicates:
        rhs = bp.rhs
        if isinstance(rhs, BoundColumn):
            bp.tag = CIPHER_COMPARE if bp.cipherable and (enabled or bp.forced_cipher) else DECRYPT_COMPARE
        elif isinstance(rhs, Const):
            if enabled and bp.lhs.cipher_comparable:
                key = bp.lhs.key
                if key is None:
                    raise KeyRequired(f"encrypting the constant for {bp.lhs.name} needs a key")
                bp.rhs = CipherConst(_encrypt_const(enc, key, bp.lhs.ltype, rhs.value))
                bp.tag = CIPHER_COMPARE
            else:
                bp.tag = DECRYPT_COMPARE
        elif isinstance(rhs, EncConst):
            bp.rhs = CipherConst(_encrypt_const(enc, rhs.inline_key, bp.lhs.ltype, rhs.value))
            bp.tag = CIPHER_COMPARE
        else:
            bp.tag = CIPHER_COMPARE
    vq.rewritten = enabled
    return vq


def _encrypt_const(enc, key: SymKey, ltype: LogicalType, value) -> CipherValue:
    pv = PlainValue.of(ltype, value)
    try:
        return enc(key, pv)
    finally:
        pv.payload[:] = bytes(len(pv.payload))
