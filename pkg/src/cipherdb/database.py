"""An opened database: catalog, table files and the query engine."""

from __future__ import annotations

import os
import threading
from typing import Iterable, Optional, Sequence, Union

from .catalog import Catalog, KeyBinding, TableSpec
from .engine import Engine, ResultSet, RuntimeArena
from .engine.executor import materialize_row
from .errors import ArityMismatch, IoFailure
from .sqlfront import parse
from .sqlfront.ast import Query, Select
from .store import Store

CATALOG_FILE = "catalog.txt"


class Database:
    """Catalog plus store plus engine. ``directory=None`` keeps everything in memory."""

    def __init__(self, directory: Optional[str] = None, *, create: bool = True):
        self.directory = directory
        path = None
        if directory is not None:
            if not os.path.isdir(directory):
                if not create:
                    raise IoFailure(f"no database at {directory}")
                try:
                    os.makedirs(directory, exist_ok=True)
                except OSError as exc:
                    raise IoFailure(f"cannot create {directory}: {exc}") from exc
            path = os.path.join(directory, CATALOG_FILE)
        self.catalog = Catalog(path)
        self.store = Store(self.catalog, directory)
        self.engine = Engine(self.store)
        # single writer across sessions; readers run concurrently
        self.write_lock = threading.Lock()

    @classmethod
    def init(cls, directory: str) -> "Database":
        db = cls(directory)
        if db.catalog.path and not os.path.exists(db.catalog.path):
            from .catalog import save_catalog

            save_catalog(db.catalog.path, [])
        return db

    def execute(self, sql: Union[str, Query], bindings: Optional[KeyBinding] = None, **kw) -> ResultSet:
        q = parse(sql) if isinstance(sql, str) else sql
        if isinstance(q.statement, Select):
            return self.engine.run(q, bindings, **kw)
        with self.write_lock:
            return self.engine.run(q, bindings, **kw)

    def explain(self, sql, bindings=None, **kw):
        return self.engine.explain(sql, bindings, **kw)

    def create_table(self, spec: TableSpec) -> None:
        with self.write_lock:
            self.store.create_table(spec)

    def insert_rows(self, table: str, rows: Iterable[Sequence], bindings: KeyBinding, *, rng=None) -> int:
        """Encrypt plaintext rows and append them; ``bindings`` is wiped afterwards."""
        tf = self.store.table(table)
        spec = tf.spec
        with RuntimeArena(rng=rng) as arena:
            arena.adopt_keys(bindings.keys())
            stored = []
            for r in rows:
                if len(r) != len(spec.columns):
                    raise ArityMismatch(f"{spec.name} has {len(spec.columns)} columns, row has {len(r)} values")
                values = [c.ltype.coerce(v) for c, v in zip(spec.columns, r)]
                stored.append(materialize_row(arena, spec, values, bindings))
            with self.write_lock:
                tf.append_rows(stored)
            return len(stored)

    def table(self, name: str):
        return self.store.table(name)

    def close(self) -> None:
        self.store.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
