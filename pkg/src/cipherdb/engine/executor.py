"""Plan execution over the encrypted store.

Tuples are lists with one :class:`RowCtx` per FROM source. A context
memoizes the plaintext of its row's columns, so a value decrypted for a
filter is reused by joins and the projection. Every decryption goes through
the query's :class:`RuntimeArena`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal, DivisionByZero, InvalidOperation, ROUND_HALF_EVEN, localcontext
from typing import Dict, List, Optional

from ..cipher import CipherValue, LogicalType
from ..errors import ArithmeticOverflow, KeyRequired, PlanInfeasible, TypeMismatch
from ..store import Row, pack_row
from ..sqlfront.validate import (
    CIPHER_COMPARE,
    AggOutput,
    BoundColumn,
    BoundPredicate,
    CipherConst,
    Const,
    EncConst,
    ExprBin,
    ExprColumn,
    ExprConst,
    ExprInt,
    table_key,
)
from .aggregate import aggregate_step, new_state
from .arena import ExecStats, RuntimeArena
from .plan import (
    Aggregate,
    Filter,
    HashJoin,
    IndexLookup,
    InsertValues,
    NestedLoopJoin,
    Plan,
    Project,
    Scan,
    SingleScanSelfJoin,
    Sink,
    UpdateRows,
)

BATCH = 8192
INT64_MIN, INT64_MAX = -(2**63), 2**63 - 1


@dataclass
class ResultSet:
    columns: List[str]
    rows: List[tuple]
    kind: str = "plaintext"
    into: Optional[str] = None
    # per output column: (table name, ColumnSpec) when the value is ciphertext
    cipher_columns: list = field(default_factory=list)
    affected: Optional[int] = None
    stats: ExecStats = field(default_factory=ExecStats)
    plan: Optional[str] = None

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)


class RowCtx:
    __slots__ = ("ordinal", "row", "memo")

    def __init__(self, ordinal: int, row: Row):
        self.ordinal = ordinal
        self.row = row
        self.memo: Dict[int, object] = {}


def plain(ctx: RowCtx, bc: BoundColumn, arena: RuntimeArena):
    memo = ctx.memo
    ci = bc.index
    if ci in memo:
        return memo[ci]
    key = bc.key
    if key is None:
        raise KeyRequired(f"no key bound for {bc.table.name}.{bc.spec.name}")
    if bc.table.grouped:
        values = arena.decrypt_row(key, ctx.row.values[0], bc.table)
        memo.update(enumerate(values))
        return memo[ci]
    v = arena.decrypt(key, ctx.row.values[ci], bc.ltype)
    memo[ci] = v
    return v


def _stored(ctx: RowCtx, bc: BoundColumn) -> CipherValue:
    return ctx.row.values[bc.index]


def _side(tup, operand, cipher: bool, arena):
    if isinstance(operand, BoundColumn):
        ctx = tup[operand.source]
        return _stored(ctx, operand) if cipher else plain(ctx, operand, arena)
    if isinstance(operand, (Const, CipherConst)):
        return operand.value
    raise PlanInfeasible(f"unrewritten operand {operand!r}")


def eval_pred(p: BoundPredicate, tup, arena: RuntimeArena) -> bool:
    cipher = p.tag == CIPHER_COMPARE
    left = _side(tup, p.lhs, cipher, arena)
    right = _side(tup, p.rhs, cipher, arena)
    return (left == right) if p.op == "=" else (left != right)


class Executor:
    def __init__(self, plan: Plan, store, arena: RuntimeArena):
        self.plan = plan
        self.store = store
        self.arena = arena
        self.width = len(plan.query.sources)

    def _tuple(self, src, ctx):
        tup = [None] * self.width
        tup[src.index] = ctx
        return tup

    def _table(self, src):
        return self.store.table(src.spec.name)

    # -- row producers ---------------------------------------------------------

    def rows(self, node):
        arena = self.arena
        if isinstance(node, Scan):
            arena.checkpoint("scan")
            for ordinal, row in self._table(node.source).scan():
                yield self._tuple(node.source, RowCtx(ordinal, row))
        elif isinstance(node, IndexLookup):
            arena.checkpoint("index")
            tf = self._table(node.source)
            for ordinal in tf.index_lookup(node.column.spec.name, node.pred.rhs.value):
                yield self._tuple(node.source, RowCtx(ordinal, tf.get(ordinal)))
        elif isinstance(node, Filter):
            preds = node.preds
            for tup in self.rows(node.child):
                if all(eval_pred(p, tup, arena) for p in preds):
                    yield tup
        elif isinstance(node, HashJoin):
            yield from self._hash_join(node)
        elif isinstance(node, NestedLoopJoin):
            right = arena.runtime_table(f"nlj{id(node)}")
            right.extend(self.rows(node.right))
            arena.checkpoint("join")
            for ltup in self.rows(node.left):
                for rtup in right:
                    tup = _merge(ltup, rtup)
                    if all(eval_pred(p, tup, arena) for p in node.preds):
                        yield tup
        elif isinstance(node, SingleScanSelfJoin):
            yield from self._self_join(node)
        else:
            raise PlanInfeasible(f"unexpected node {node.label}")

    def _key_of(self, tup, col, cipher):
        ctx = tup[col.source]
        return _stored(ctx, col) if cipher else plain(ctx, col, self.arena)

    def _hash_join(self, node: HashJoin):
        arena = self.arena
        kp = node.key
        cipher = kp.tag == CIPHER_COMPARE
        right_src = _sources(node.right)
        lcol, rcol = (kp.lhs, kp.rhs) if kp.rhs.source in right_src else (kp.rhs, kp.lhs)
        build: Dict[object, list] = {}
        table = arena.runtime_table(f"hash{id(node)}")
        for rtup in self.rows(node.right):
            table.append(rtup)
            build.setdefault(self._key_of(rtup, rcol, cipher), []).append(rtup)
        arena.checkpoint("join")
        for ltup in self.rows(node.left):
            for rtup in build.get(self._key_of(ltup, lcol, cipher), ()):
                tup = _merge(ltup, rtup)
                if all(eval_pred(p, tup, arena) for p in node.residual):
                    yield tup
        build.clear()

    def _self_join(self, node: SingleScanSelfJoin):
        arena = self.arena
        pinned = arena.runtime_table("T1")
        free = arena.runtime_table("T2")
        tf = self._table(node.pinned)
        arena.checkpoint("scan")
        p_idx, f_idx = node.pinned.index, node.free.index
        for ordinal, row in tf.scan():
            ctx = RowCtx(ordinal, row)
            tp = [None] * self.width
            tp[p_idx] = ctx
            if all(eval_pred(p, tp, arena) for p in node.pin_preds):
                pinned.append(ctx)
            tf_ = [None] * self.width
            tf_[f_idx] = ctx
            if all(eval_pred(p, tf_, arena) for p in node.free_preds):
                free.append(ctx)
        arena.checkpoint("join")
        for pctx in pinned:
            for fctx in free:
                tup = [None] * self.width
                tup[p_idx] = pctx
                tup[f_idx] = fctx
                if all(eval_pred(p, tup, arena) for p in node.join_preds):
                    yield tup

    # -- aggregation and projection ---------------------------------------------

    def _agg_states(self, outputs):
        return [new_state(o.fn, o.col.ltype if o.col is not None else None) for o in outputs if isinstance(o, AggOutput)]

    def aggregate(self, node: Aggregate):
        """Yield (representative tuple, [AggState...]) per group."""
        arena = self.arena
        aggs = [o for o in node.outputs if isinstance(o, AggOutput)]
        if node.batched:
            states = self._agg_states(node.outputs)
            if self._batched(node, aggs, states):
                yield None, states
            return
        groups: Dict[object, tuple] = {}
        gb = node.group_by
        gcipher = gb is not None and gb.cipher_comparable
        for tup in self.rows(node.child):
            gkey = None if gb is None else self._key_of(tup, gb, gcipher)
            entry = groups.get(gkey)
            if entry is None:
                entry = groups[gkey] = (tup, self._agg_states(node.outputs))
            for o, st in zip(aggs, entry[1]):
                if o.needs_values:
                    aggregate_step(st, plain(tup[o.col.source], o.col, arena))
                else:
                    st.count_only()
        arena.checkpoint("aggregate")
        yield from groups.values()

    def _batched(self, node, aggs, states) -> bool:
        arena = self.arena
        tf = self._table(node.child.source)
        needed = {}
        for o in aggs:
            if o.needs_values:
                needed.setdefault(o.col.index, o.col)
        arena.checkpoint("scan")
        rows = tf.live_rows()
        for start in range(0, len(rows), BATCH):
            chunk = rows[start : start + BATCH]
            values = {
                ci: arena.decrypt_batch(col.key, [r.values[ci] for r in chunk], col.ltype)
                for ci, col in needed.items()
            }
            for o, st in zip(aggs, states):
                if o.needs_values:
                    # batch output is the scaled integer for decimals too
                    st.step_many_scaled(values[o.col.index])
                else:
                    st.count_only(len(chunk))
        arena.checkpoint("aggregate")
        return bool(rows)

    def project_row(self, outputs, tup, states=None) -> tuple:
        out = []
        it = iter(states or ())
        for o in outputs:
            if isinstance(o, AggOutput):
                out.append(next(it).result(o.to_int))
            elif o.decrypt:
                v = plain(tup[o.col.source], o.col, self.arena)
                out.append(int(v) if o.to_int else v)
            else:
                out.append(_stored(tup[o.col.source], o.col))
        return tuple(out)

    def run_select(self) -> ResultSet:
        root = self.plan.root
        if not isinstance(root, Sink) or not isinstance(root.child, Project):
            raise PlanInfeasible("select plans end in Project -> Sink")
        proj = root.child
        outputs = proj.outputs
        rows = []
        if isinstance(proj.child, Aggregate):
            for tup, states in self.aggregate(proj.child):
                rows.append(self.project_row(outputs, tup, states))
        else:
            for tup in self.rows(proj.child):
                rows.append(self.project_row(outputs, tup))
        self.arena.checkpoint("project")
        vq = self.plan.query
        cipher_cols = [
            None if isinstance(o, AggOutput) or o.decrypt else (o.col.table.name, o.col.spec) for o in outputs
        ]
        return ResultSet(
            [o.name for o in outputs], rows, vq.kind, root.target, cipher_cols, None, self.arena.stats,
            self.plan.explain(),
        )

    # -- writes ---------------------------------------------------------------

    def _materialize(self, spec, values: list, bindings) -> Row:
        return materialize_row(self.arena, spec, values, bindings)

    def run_insert(self) -> ResultSet:
        node = self.plan.root
        assert isinstance(node, InsertValues)
        spec = node.source.spec
        bindings = self.plan.query.bindings
        rows = [self._materialize(spec, vals, bindings) for vals in node.rows]
        self.arena.checkpoint("write")
        self._table(node.source).append_rows(rows)
        return ResultSet([], [], self.plan.query.kind, affected=len(rows), stats=self.arena.stats)

    def run_update(self) -> ResultSet:
        node = self.plan.root
        assert isinstance(node, UpdateRows)
        src = node.source
        spec = src.spec
        bindings = self.plan.query.bindings
        matches = list(self.rows(node.child))
        new_rows = []
        for tup in matches:
            ctx = tup[src.index]
            if spec.grouped:
                gkey = table_key(spec, None, bindings)
                current = [plain(ctx, _col(src, i, gkey), self.arena) for i in range(len(spec.columns))]
            else:
                current = list(ctx.row.values)
            for ci, e in node.assignments:
                col = spec.columns[ci]
                if isinstance(e, CipherConst):
                    current[ci] = e.value
                else:
                    current[ci] = coerce_assign(col.ltype, eval_expr(e, tup, self.arena), f"{spec.name}.{col.name}")
            new_rows.append((ctx.ordinal, self._materialize(spec, current, bindings)))
        self.arena.checkpoint("write")
        tf = self._table(src)
        for ordinal, row in new_rows:
            tf.replace_row(ordinal, row)
        return ResultSet([], [], self.plan.query.kind, affected=len(new_rows), stats=self.arena.stats)

    def run(self) -> ResultSet:
        stmt = self.plan.query.statement
        if stmt == "select":
            return self.run_select()
        if stmt == "insert":
            return self.run_insert()
        if stmt == "update":
            return self.run_update()
        raise PlanInfeasible(f"cannot execute {stmt}")


def _encrypt_for(arena, spec, col, value, bindings):
    key = table_key(spec, col.name, bindings)
    if key is None:
        raise KeyRequired(f"writing {spec.name}.{col.name} needs a key")
    return arena.encrypt(key, value, col.ltype, col.enc_mode)


def materialize_row(arena: RuntimeArena, spec, values: list, bindings) -> Row:
    """Encrypt one row for storage.

    ``values`` holds per column a Const, EncConst, CipherConst, CipherValue
    or plain Python value.
    """
    if spec.grouped:
        plains = [v.value if isinstance(v, Const) else v for v in values]
        pv = pack_row(spec, plains)
        key = table_key(spec, None, bindings)
        if key is None:
            raise KeyRequired(f"writing row-grouped {spec.name} needs a key")
        return Row((arena.encrypt_plain(key, pv, spec.group_mode),), True)
    out = []
    for col, v in zip(spec.columns, values):
        if isinstance(v, CipherConst):
            out.append(v.value)
        elif isinstance(v, CipherValue):
            out.append(v)
        elif isinstance(v, EncConst):
            out.append(arena.encrypt(v.inline_key, v.value, col.ltype, col.enc_mode))
        elif isinstance(v, Const):
            out.append(_encrypt_for(arena, spec, col, v.value, bindings))
        else:
            out.append(_encrypt_for(arena, spec, col, v, bindings))
    return Row(tuple(out), False)


def _col(src, index, key) -> BoundColumn:
    return BoundColumn(src.index, src.alias, src.spec, index, key=key)


def _merge(a, b):
    return [x if x is not None else y for x, y in zip(a, b)]


def _sources(node) -> set:
    if isinstance(node, (Scan, IndexLookup)):
        return {node.source.index}
    out = set()
    for c in node.children():
        out |= _sources(c)
    return out


# -- UPDATE expressions ---------------------------------------------------------


def _num(v) -> Decimal:
    if isinstance(v, str):
        return Decimal(v.strip())
    return Decimal(v)


def eval_expr(e, tup, arena):
    if isinstance(e, ExprConst):
        return e.value
    if isinstance(e, ExprColumn):
        return plain(tup[e.col.source], e.col, arena)
    if isinstance(e, ExprInt):
        return int(_num(eval_expr(e.inner, tup, arena)))
    if isinstance(e, ExprBin):
        a = _num(eval_expr(e.left, tup, arena))
        b = _num(eval_expr(e.right, tup, arena))
        with localcontext() as ctx:
            ctx.prec = 60
            try:
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
            except (DivisionByZero, InvalidOperation, ZeroDivisionError) as exc:
                raise ArithmeticOverflow(f"arithmetic error: {exc}") from None
            except OverflowError as exc:
                raise ArithmeticOverflow(str(exc)) from None
        raise PlanInfeasible(f"unknown operator {e.op}")
    raise PlanInfeasible(f"unknown expression {e!r}")


def coerce_assign(ltype: LogicalType, value, where: str):
    """Fit an expression result into a column: int64 truncates toward zero,
    decimal(s) rounds half-even to s digits."""
    if ltype.kind == "varchar":
        if not isinstance(value, str):
            raise TypeMismatch(f"{where}: expected a string")
        return value
    d = _num(value)
    if not d.is_finite():
        raise ArithmeticOverflow(f"{where}: result is not finite")
    if ltype.kind == "int64":
        n = int(d)
        if not INT64_MIN <= n <= INT64_MAX:
            raise ArithmeticOverflow(f"{where}: {n} does not fit int64")
        return n
    with localcontext() as ctx:
        ctx.prec = 60
        q = d.quantize(Decimal(1).scaleb(-ltype.scale), rounding=ROUND_HALF_EVEN)
    if not INT64_MIN <= int(q.scaleb(ltype.scale)) <= INT64_MAX:
        raise ArithmeticOverflow(f"{where}: {q} does not fit the 8-byte payload")
    return q


def execute_plan(p: Plan, store, arena: RuntimeArena) -> ResultSet:
    return Executor(p, store, arena).run()
