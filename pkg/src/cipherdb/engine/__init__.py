"""Planner, executor and per-query runtime arena."""

from __future__ import annotations

from typing import Callable, Optional, Union

from ..catalog import KeyBinding
from ..sqlfront import parse, rewrite_constants, validate
from ..sqlfront.validate import rebind_keys
from ..sqlfront.ast import Query
from .aggregate import AggState, aggregate_step
from .arena import ExecStats, RuntimeArena
from .executor import ResultSet, coerce_assign, eval_expr, execute_plan
from .plan import Plan, plan


class Engine:
    """Parse -> validate -> rewrite -> plan -> execute, inside one arena."""

    def __init__(self, store):
        self.store = store
        self.catalog = store.catalog

    def run(
        self,
        query: Union[str, Query],
        bindings: Optional[KeyBinding] = None,
        *,
        rewrite: bool = True,
        self_join: str = "auto",
        fault: Optional[Callable[[str], None]] = None,
        rng=None,
        arena: Optional[RuntimeArena] = None,
    ) -> ResultSet:
        """Execute one statement.

        Every key (query text, inline or ``bindings``) and every decrypted
        buffer belongs to the arena, which is wiped when this returns or
        raises. Callers that want to reuse keys pass copies.
        """
        arena = arena if arena is not None else RuntimeArena(fault=fault, rng=rng)
        with arena:
            q = parse(query) if isinstance(query, str) else query
            for lit in q.key_literals():
                arena.register(lit.data)
            if bindings:
                arena.adopt_keys(bindings.keys())
            arena.checkpoint("validate")
            vq = validate(q, self.catalog, bindings, on_key=arena.adopt_key)
            if vq.statement == "create":
                self.store.create_table(vq.table_spec)
                return ResultSet([], [], vq.kind, affected=0, stats=arena.stats)
            rewrite_constants(vq, encrypt=arena.encrypt_plain, enabled=rewrite)
            arena.checkpoint("plan")
            p = plan(vq, self.catalog, self_join=self_join)
            return execute_plan(p, self.store, arena)

    def explain(self, query: Union[str, Query], bindings: Optional[KeyBinding] = None, *, self_join: str = "auto") -> Plan:
        """Plan without executing. Keys are still wiped on return."""
        with RuntimeArena() as arena:
            q = parse(query) if isinstance(query, str) else query
            for lit in q.key_literals():
                arena.register(lit.data)
            if bindings:
                arena.adopt_keys(bindings.keys())
            vq = validate(q, self.catalog, bindings, on_key=arena.adopt_key)
            rewrite_constants(vq, encrypt=arena.encrypt_plain)
            return plan(vq, self.catalog, self_join=self_join)


def execute(p: Plan, bindings: Optional[KeyBinding], store, *, fault=None) -> ResultSet:
    """Run an already built plan with keys bound now (late binding).

    ``bindings`` are wiped afterwards, as are any keys still held by the plan.
    """
    with RuntimeArena(fault=fault) as arena:
        if bindings:
            arena.adopt_keys(bindings.keys())
        arena.adopt_keys(p.query.all_keys())
        rebind_keys(p.query, bindings)
        return execute_plan(p, store, arena)


def execute_update(q: Union[str, Query], bindings: Optional[KeyBinding], store, **kw) -> int:
    rs = Engine(store).run(q, bindings, **kw)
    return rs.affected or 0


__all__ = [
    "AggState",
    "Engine",
    "ExecStats",
    "Plan",
    "ResultSet",
    "RuntimeArena",
    "aggregate_step",
    "coerce_assign",
    "eval_expr",
    "execute",
    "execute_update",
    "plan",
]
