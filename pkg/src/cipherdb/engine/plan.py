"""Plan construction.

The planner builds the plan it would build for a plaintext database and
then marks where on-the-fly decryption is needed. Selection rules:

* an equality between an indexed deterministic column and an encrypted
  constant becomes an IndexLookup, and that table goes first;
* ciphertext-compare predicates never decrypt;
* decrypt-compare predicates, aggregates and plaintext projections decrypt;
* a two-way self-join with one side pinned by a primary-key equality runs
  as a single scan (SingleScanSelfJoin) unless an index serves the pin.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

from ..errors import PlanInfeasible
from ..sqlfront.validate import (
    CIPHER_COMPARE,
    AggOutput,
    BoundColumn,
    BoundPredicate,
    CipherConst,
    ColumnOutput,
    Const,
    Source,
    ValidatedQuery,
)

SELF_JOIN_MODES = ("auto", "A", "B")


def _decrypt_cols(preds) -> frozenset:
    out = set()
    for p in preds:
        if p.tag != CIPHER_COMPARE:
            out.update(c.name for c in p.columns)
    return frozenset(out)


class PlanNode:
    label = "?"

    def children(self) -> list:
        return []

    @property
    def decrypts(self) -> frozenset:
        return frozenset()

    def detail(self) -> str:
        return ""

    def explain(self, depth: int = 0) -> str:
        head = "  " * depth + self.label
        extra = self.detail()
        if extra:
            head += f" {extra}"
        if self.decrypts:
            head += " decrypt(" + ", ".join(sorted(self.decrypts)) + ")"
        return "\n".join([head] + [c.explain(depth + 1) for c in self.children()])


@dataclass(eq=False)
class Scan(PlanNode):
    source: Source
    label = "Scan"

    def detail(self):
        return f"{self.source.spec.name} {self.source.alias}"


@dataclass(eq=False)
class IndexLookup(PlanNode):
    source: Source
    pred: BoundPredicate
    label = "IndexLookup"

    @property
    def column(self) -> BoundColumn:
        return self.pred.lhs

    def detail(self):
        return f"{self.source.spec.name} {self.source.alias} on {self.column.spec.name}"


@dataclass(eq=False)
class Filter(PlanNode):
    child: PlanNode
    preds: List[BoundPredicate]
    label = "Filter"

    def children(self):
        return [self.child]

    @property
    def decrypts(self):
        return _decrypt_cols(self.preds)

    def detail(self):
        return "[" + "; ".join(p.describe() for p in self.preds) + "]"


@dataclass(eq=False)
class HashJoin(PlanNode):
    left: PlanNode
    right: PlanNode
    key: BoundPredicate
    residual: List[BoundPredicate]
    label = "HashJoin"

    def children(self):
        return [self.left, self.right]

    @property
    def decrypts(self):
        return _decrypt_cols([self.key] + self.residual)

    def detail(self):
        return "[" + "; ".join(p.describe() for p in [self.key] + self.residual) + "]"


@dataclass(eq=False)
class NestedLoopJoin(PlanNode):
    left: PlanNode
    right: PlanNode
    preds: List[BoundPredicate]
    label = "NestedLoopJoin"

    def children(self):
        return [self.left, self.right]

    @property
    def decrypts(self):
        return _decrypt_cols(self.preds)

    def detail(self):
        return "[" + "; ".join(p.describe() for p in self.preds) + "]"


@dataclass(eq=False)
class SingleScanSelfJoin(PlanNode):
    """One pass over a table serving both aliases of a self-join.

    The pass keeps the pinned row(s) aside and buffers every other row that
    passes its own filters, then joins the two groups in memory.
    """

    pinned: Source
    free: Source
    pin_preds: List[BoundPredicate]
    free_preds: List[BoundPredicate]
    join_preds: List[BoundPredicate]
    label = "SingleScanSelfJoin"

    @property
    def decrypts(self):
        return _decrypt_cols(self.pin_preds + self.free_preds + self.join_preds)

    def detail(self):
        return f"{self.pinned.spec.name} pinned={self.pinned.alias} free={self.free.alias}"


@dataclass(eq=False)
class Aggregate(PlanNode):
    child: PlanNode
    outputs: list
    group_by: Optional[BoundColumn] = None
    batched: bool = False
    label = "Aggregate"

    def children(self):
        return [self.child]

    @property
    def decrypts(self):
        out = {o.col.name for o in self.outputs if isinstance(o, AggOutput) and o.needs_values}
        if self.group_by is not None and not self.group_by.cipher_comparable:
            out.add(self.group_by.name)
        return frozenset(out)

    def detail(self):
        fns = ", ".join(o.fn for o in self.outputs if isinstance(o, AggOutput))
        parts = [f"({fns})"] if fns else []
        if self.group_by is not None:
            parts.append(f"group by {self.group_by.name}")
        if self.batched:
            parts.append("batched")
        return " ".join(parts)


class GroupBy(Aggregate):
    label = "GroupBy"


@dataclass(eq=False)
class Project(PlanNode):
    child: PlanNode
    outputs: list
    label = "Project"

    def children(self):
        return [self.child]

    @property
    def decrypts(self):
        return frozenset(o.col.name for o in self.outputs if isinstance(o, ColumnOutput) and o.decrypt)

    def detail(self):
        return "[" + ", ".join(o.name for o in self.outputs) + "]"


@dataclass(eq=False)
class Sink(PlanNode):
    child: PlanNode
    target: Optional[str] = None
    label = "Sink"

    def children(self):
        return [self.child]

    def detail(self):
        return f"into {self.target}" if self.target else "client"


@dataclass(eq=False)
class InsertValues(PlanNode):
    source: Source
    rows: list
    label = "InsertValues"

    def detail(self):
        return f"{self.source.spec.name} rows={len(self.rows)}"


@dataclass(eq=False)
class UpdateRows(PlanNode):
    child: PlanNode
    source: Source
    assignments: list
    label = "UpdateRows"

    def children(self):
        return [self.child]

    def detail(self):
        return self.source.spec.name


@dataclass(eq=False)
class Plan:
    root: PlanNode
    query: ValidatedQuery
    strategy: str = ""

    def nodes(self) -> List[PlanNode]:
        out, stack = [], [self.root]
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(reversed(n.children()))
        return out

    def node_types(self) -> List[str]:
        return [n.label for n in self.nodes()]

    def find(self, label: str) -> List[PlanNode]:
        return [n for n in self.nodes() if n.label == label]

    @property
    def decrypt_columns(self) -> frozenset:
        out = set()
        for n in self.nodes():
            out |= n.decrypts
        return frozenset(out)

    def explain(self) -> str:
        return self.root.explain()


# ---------------------------------------------------------------------------


def _local(preds, s: int) -> list:
    return [p for p in preds if p.sources == frozenset({s})]


def _index_pin(preds) -> Optional[BoundPredicate]:
    for p in preds:
        if (
            p.op == "="
            and p.tag == CIPHER_COMPARE
            and isinstance(p.rhs, CipherConst)
            and p.lhs.spec.indexed
            and p.lhs.wrap != "AESD"
        ):
            return p
    return None


def access_path(src: Source, preds) -> PlanNode:
    local = _local(preds, src.index)
    pin = _index_pin(local)
    if pin is not None:
        node = IndexLookup(src, pin)
        rest = [p for p in local if p is not pin]
    else:
        node = Scan(src)
        rest = local
    return Filter(node, rest) if rest else node


def _join_tree(vq: ValidatedQuery, order: List[int]) -> PlanNode:
    preds = vq.predicates
    sources = vq.sources
    tree = access_path(sources[order[0]], preds)
    bound = {order[0]}
    remaining = [i for i in order[1:]]
    while remaining:
        nxt = next(
            (i for i in remaining if any(i in p.sources and p.sources - {i} <= bound and len(p.sources) == 2 for p in preds)),
            remaining[0],
        )
        remaining.remove(nxt)
        conn = [p for p in preds if len(p.sources) == 2 and nxt in p.sources and p.sources <= bound | {nxt}]
        right = access_path(sources[nxt], preds)
        eq = [p for p in conn if p.op == "="]
        if eq:
            tree = HashJoin(tree, right, eq[0], [p for p in conn if p is not eq[0]])
        else:
            tree = NestedLoopJoin(tree, right, conn)
        bound.add(nxt)
    return tree


def _self_join_pin(vq: ValidatedQuery):
    if len(vq.sources) != 2:
        return None
    a, b = vq.sources
    if a.spec is not b.spec or a.spec.primary_key is None:
        return None
    for p in vq.predicates:
        if (
            p.op == "="
            and len(p.sources) == 1
            and a.spec.is_primary_key(p.lhs.spec.name)
            and isinstance(p.rhs, (Const, CipherConst))
        ):
            pinned = p.lhs.source
            return pinned, 1 - pinned, p
    return None


def _index_servable(p: BoundPredicate) -> bool:
    return _index_pin([p]) is p


def _body(vq: ValidatedQuery, self_join: str):
    n = len(vq.sources)
    order = list(range(n))
    pin = _self_join_pin(vq)
    if pin is not None:
        pinned, free, pin_pred = pin
        use_b = self_join == "B" or (self_join == "auto" and not _index_servable(pin_pred))
        if use_b:
            preds = vq.predicates
            node = SingleScanSelfJoin(
                vq.sources[pinned],
                vq.sources[free],
                _local(preds, pinned),
                _local(preds, free),
                [p for p in preds if len(p.sources) == 2],
            )
            return node, "B"
        order = [pinned, free]
        return _join_tree(vq, order), "A"
    for s in range(n):
        if _index_pin(_local(vq.predicates, s)) is not None:
            order = [s] + [i for i in range(n) if i != s]
            break
    return _join_tree(vq, order), ""


def _batchable(vq: ValidatedQuery) -> bool:
    if len(vq.sources) != 1 or vq.predicates or vq.group_by is not None:
        return False
    if vq.sources[0].spec.grouped:
        return False
    for o in vq.outputs:
        if not isinstance(o, AggOutput):
            return False
        if o.col is not None and o.needs_values and (not o.col.ltype.numeric or o.col.key is None):
            return False
    return True


def plan(vq: ValidatedQuery, catalog=None, *, self_join: str = "auto") -> Plan:
    """Build the plan for a validated, rewritten query."""
    if self_join not in SELF_JOIN_MODES:
        raise ValueError(f"self_join must be one of {SELF_JOIN_MODES}")
    if vq.statement == "insert":
        return Plan(InsertValues(vq.sources[0], vq.insert_rows), vq)
    if vq.statement == "update":
        src = vq.sources[0]
        return Plan(UpdateRows(access_path(src, vq.predicates), src, vq.assignments), vq)
    if vq.statement != "select":
        raise PlanInfeasible(f"cannot plan a {vq.statement} statement")
    for p in vq.predicates:
        if p.tag is None:
            raise PlanInfeasible("predicates must be tagged by rewrite_constants before planning")
        if p.tag != CIPHER_COMPARE:
            for c in p.columns:
                if c.key is None:
                    raise PlanInfeasible(f"decrypt node on {c.name} has no key")
    body, strategy = _body(vq, self_join)
    if vq.aggregate:
        cls = GroupBy if vq.group_by is not None else Aggregate
        body = cls(body, vq.outputs, vq.group_by, batched=_batchable(vq))
    root = Sink(Project(body, vq.outputs), vq.into)
    return Plan(root, vq, strategy)
