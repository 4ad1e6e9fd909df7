"""Plaintext reference interpreter for the supported SQL subset.

Tables hold ordinary Python values; there is no encryption, planning or
batching. AESE/AESD wrappers are treated as the identity, which is what they
mean once keys and ciphertext are taken out of the picture. Joins are
evaluated table by table, applying each predicate as soon as its columns are
bound.
"""

from __future__ import annotations

import math
from decimal import ROUND_HALF_EVEN, Decimal, localcontext
from fractions import Fraction

from cipherdb.cipher import LogicalType
from cipherdb.sqlfront import parse
from cipherdb.sqlfront.ast import (
    BinOp,
    ColumnRef,
    FuncCall,
    Insert,
    Literal,
    Select,
    Star,
    Update,
)

AGGS = {"COUNT", "SUM", "AVG", "VAR", "STD"}
LIMIT = 2**127


class OracleError(Exception):
    pass


class OracleOverflow(OracleError):
    pass


class Table:
    def __init__(self, name, columns):
        self.name = name
        self.columns = [(c, LogicalType.parse(t)) for c, t in columns]
        self.rows = []

    def index(self, col):
        for i, (c, _) in enumerate(self.columns):
            if c.lower() == col.lower():
                return i
        raise OracleError(f"no column {col} in {self.name}")

    def ltype(self, col):
        return self.columns[self.index(col)][1]


class Oracle:
    def __init__(self):
        self.tables = {}

    def create(self, name, columns):
        self.tables[name.lower()] = Table(name, columns)

    def table(self, name):
        return self.tables[name.lower()]

    def insert(self, name, rows):
        t = self.table(name)
        for r in rows:
            t.rows.append([lt.coerce(v) for v, (_, lt) in zip(r, t.columns)])

    def run(self, sql):
        stmt = parse(sql).statement
        if isinstance(stmt, Select):
            return self.select(stmt)
        if isinstance(stmt, Update):
            return self.update(stmt)
        if isinstance(stmt, Insert):
            t = self.table(stmt.table)
            rows = []
            for r in stmt.rows:
                vals = [_literal(e) for e in r]
                if stmt.columns:
                    full = [None] * len(t.columns)
                    for c, v in zip(stmt.columns, vals):
                        full[t.index(c)] = v
                    vals = full
                rows.append(vals)
            self.insert(t.name, rows)
            return len(rows)
        raise OracleError(f"unsupported statement {type(stmt).__name__}")

    # -- column resolution ------------------------------------------------------

    def _sources(self, refs):
        out = []
        for tr in refs:
            out.append(((tr.alias or tr.name).lower(), self.table(tr.name)))
        return out

    def _resolve(self, sources, ref: ColumnRef):
        if ref.table is not None:
            for i, (alias, t) in enumerate(sources):
                if alias == ref.table.lower():
                    return i, t.index(ref.column), t.ltype(ref.column)
            raise OracleError(f"unknown alias {ref.table}")
        hits = []
        for i, (_, t) in enumerate(sources):
            try:
                hits.append((i, t.index(ref.column), t.ltype(ref.column)))
            except OracleError:
                pass
        if len(hits) != 1:
            raise OracleError(f"column {ref.column} is ambiguous or unknown")
        return hits[0]

    def _operand(self, sources, node):
        node = _unwrap(node)
        if isinstance(node, ColumnRef):
            return ("col",) + self._resolve(sources, node)
        return ("const", _literal(node))

    def _predicates(self, sources, where):
        preds = []
        for p in where:
            lhs = self._operand(sources, p.lhs)
            rhs = self._operand(sources, p.rhs)
            # constants take the type of the column they are compared with
            if lhs[0] == "const" and rhs[0] == "col":
                lhs = ("const", rhs[3].coerce(lhs[1]))
            if rhs[0] == "const" and lhs[0] == "col":
                rhs = ("const", lhs[3].coerce(rhs[1]))
            preds.append((lhs, p.op, rhs))
        return preds

    # -- SELECT ------------------------------------------------------------------

    def _tuples(self, sources, preds):
        tuples = [()]
        for depth in range(len(sources)):
            _, t = sources[depth]
            ready = [p for p in preds if _max_source(p) == depth]
            nxt = []
            for tup in tuples:
                for row in t.rows:
                    cand = tup + (row,)
                    if all(_holds(p, cand) for p in ready):
                        nxt.append(cand)
            tuples = nxt
        return tuples

    def select(self, stmt: Select):
        sources = self._sources(stmt.tables)
        preds = self._predicates(sources, stmt.where)
        tuples = self._tuples(sources, preds)
        items = []
        for it in stmt.items:
            if isinstance(it.expr, Star):
                for i, (_, t) in enumerate(sources):
                    for ci in range(len(t.columns)):
                        items.append(("col", i, ci))
            else:
                items.append(self._item(sources, it.expr))
        has_agg = any(k[0] == "agg" for k in items)
        if stmt.group_by is None and not has_agg:
            return [tuple(tup[i][ci] for _, i, ci in items) for tup in tuples]
        if stmt.group_by is not None:
            gi, gci, _ = self._resolve(sources, stmt.group_by)
            groups = {}
            for tup in tuples:
                groups.setdefault(tup[gi][gci], []).append(tup)
            parts = list(groups.values())
        else:
            parts = [tuples] if tuples else []
        out = []
        for part in parts:
            row = []
            for it in items:
                if it[0] == "col":
                    row.append(part[0][it[1]][it[2]])
                else:
                    row.append(_aggregate(it, part))
            out.append(tuple(row))
        return out

    def _item(self, sources, expr):
        expr = _unwrap(expr)
        to_int = False
        if isinstance(expr, FuncCall) and expr.name == "INT":
            to_int = True
            expr = _unwrap(expr.args[0])
        if isinstance(expr, FuncCall) and expr.name in AGGS:
            arg = expr.args[0]
            if isinstance(arg, Star):
                return ("agg", expr.name, None, to_int)
            return ("agg", expr.name, self._resolve(sources, _unwrap(arg)), to_int)
        if isinstance(expr, ColumnRef) and not to_int:
            i, ci, _ = self._resolve(sources, expr)
            return ("col", i, ci)
        raise OracleError(f"unsupported select item {expr!r}")

    # -- UPDATE ------------------------------------------------------------------

    def update(self, stmt: Update):
        sources = self._sources([stmt.table])
        preds = self._predicates(sources, stmt.where)
        t = sources[0][1]
        hits = [row for row in t.rows if all(_holds(p, (row,)) for p in preds)]
        plans = [(t.index(c), t.ltype(c), e) for c, e in stmt.assignments]
        updated = []
        for row in hits:
            new = list(row)
            for ci, lt, e in plans:
                new[ci] = _assign(lt, self._expr(sources, e, (row,)))
            updated.append(new)
        # all or nothing, like the engine
        for row, new in zip(hits, updated):
            row[:] = new
        return len(hits)

    def _expr(self, sources, e, tup):
        e = _unwrap(e)
        if isinstance(e, ColumnRef):
            i, ci, _ = self._resolve(sources, e)
            return tup[i][ci]
        if isinstance(e, Literal):
            return e.value
        if isinstance(e, FuncCall) and e.name == "INT":
            return int(Decimal(self._expr(sources, e.args[0], tup)))
        if isinstance(e, BinOp):
            a = Decimal(self._expr(sources, e.left, tup))
            b = Decimal(self._expr(sources, e.right, tup))
            with localcontext() as ctx:
                ctx.prec = 60
                if e.op == "+":
                    return a + b
                if e.op == "-":
                    return a - b
                if e.op == "*":
                    return a * b
                if e.op == "/":
                    return a / b
                if e.op == "^":
                    return a**b
        raise OracleError(f"unsupported expression {e!r}")


def _unwrap(node):
    while isinstance(node, FuncCall) and node.name in ("AESE", "AESD"):
        node = node.args[0]
    return node


def _literal(node):
    node = _unwrap(node)
    if isinstance(node, Literal):
        return node.value
    raise OracleError(f"expected a literal, got {node!r}")


def _max_source(pred):
    lhs, _, rhs = pred
    idx = [x[1] for x in (lhs, rhs) if x[0] == "col"]
    return max(idx) if idx else 0


def _value(operand, tup):
    if operand[0] == "const":
        return operand[1]
    return tup[operand[1]][operand[2]]


def _holds(pred, tup):
    lhs, op, rhs = pred
    a, b = _value(lhs, tup), _value(rhs, tup)
    return (a == b) if op == "=" else (a != b)


def _aggregate(item, part):
    _, fn, col, to_int = item
    if fn == "COUNT":
        return len(part)
    i, ci, _ = col
    xs = [Fraction(tup[i][ci]) for tup in part]
    n = len(xs)
    total = sum(xs, Fraction(0))
    if fn == "SUM":
        value = total
        if to_int:
            return math.trunc(value)
        v = part[0][i][ci]
        return int(value) if isinstance(v, int) else Decimal(value.numerator) / Decimal(value.denominator)
    if fn in ("VAR", "STD"):
        # the 128-bit sum-of-squares accumulator works on scaled integers
        scale = 10 ** col[2].scale if col[2].kind == "decimal" else 1
        if sum((x * scale) ** 2 for x in xs) >= LIMIT:
            raise OracleOverflow(f"{fn}: sum of squares exceeds 128 bits")
    mean = total / n
    if fn == "AVG":
        return math.trunc(mean) if to_int else float(mean)
    var = sum(((x - mean) ** 2 for x in xs), Fraction(0)) / n
    if fn == "VAR":
        return math.trunc(var) if to_int else float(var)
    # largest k with k*k <= var
    if to_int:
        k = math.isqrt(math.floor(var))
        while (k + 1) ** 2 <= var:
            k += 1
        return k
    return math.sqrt(var)


def _assign(lt: LogicalType, value):
    if lt.kind == "varchar":
        return value
    d = Decimal(value)
    if lt.kind == "int64":
        n = int(d)
        if not -(2**63) <= n < 2**63:
            raise OracleOverflow(f"{n} does not fit int64")
        return n
    with localcontext() as ctx:
        ctx.prec = 60
        q = d.quantize(Decimal(1).scaleb(-lt.scale), rounding=ROUND_HALF_EVEN)
    if not -(2**63) <= int(q.scaleb(lt.scale)) < 2**63:
        raise OracleOverflow(f"{q} does not fit 8 bytes")
    return q


def oracle_from_database(db, bindings):
    """Build an oracle holding the decrypted contents of every table in ``db``."""
    o = Oracle()
    for spec in db.catalog.tables():
        o.create(spec.name, [(c.name, str(c.ltype)) for c in spec.columns])
        rs = db.execute(f"SELECT * FROM {spec.name}", bindings.copy())
        o.insert(spec.name, rs.rows)
    return o
