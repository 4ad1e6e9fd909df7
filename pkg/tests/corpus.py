"""Random schemas, data and statements for oracle comparison.

An instance is a handful of tables with mixed deterministic/probabilistic
columns, their rows, and a list of statements (SPJ, aggregates, GROUP BY,
UPDATE, INSERT) that the encrypted engine and the oracle both run.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from decimal import Decimal
from typing import List

from cipherdb import ColumnSpec, Database, KeyBinding, SymKey, TableSpec
from cipherdb.catalog import INDIVIDUAL, ROW_GROUPED, SCOPE_COLUMN, SCOPE_DATABASE, SCOPE_TABLE
from cipherdb.cipher import DETERMINISTIC, PROBABILISTIC

from cipherdb.catalog import find_key
from cipherdb.cipher import CipherValue, decrypt
from cipherdb.errors import ArithmeticOverflow
from oracle import Oracle, OracleOverflow

WORDS = ["ann", "bob", "cy", "", "dee dee", "evelyn-marie-long-name", "x", "zip"]
NUMERIC = ("int64", "decimal(2)")


@dataclass
class Col:
    name: str
    type: str
    mode: str
    indexed: bool = False
    pk: bool = False


@dataclass
class Tab:
    name: str
    cols: List[Col]
    grouping: str = INDIVIDUAL
    scope: str = SCOPE_DATABASE
    rows: list = field(default_factory=list)

    def col(self, name):
        return next(c for c in self.cols if c.name == name)

    def spec(self):
        cs = [ColumnSpec(c.name, c.type, c.mode, indexed=c.indexed) for c in self.cols]
        pk = next((c.name for c in self.cols if c.pk), None)
        return TableSpec(self.name, cs, pk, self.scope, self.grouping)


@dataclass
class Instance:
    seed: int
    tables: List[Tab]
    keys: dict  # scope -> hex
    statements: List[str]

    def bindings(self):
        return KeyBinding({s: SymKey.from_hex(h) for s, h in self.keys.items()})

    def key_clause(self):
        return " WITH KEYS (" + ", ".join(f"{s} = x'{h}'" for s, h in self.keys.items()) + ")"


# -- values ---------------------------------------------------------------------


def rand_value(rng, typ):
    if typ == "int64":
        r = rng.random()
        if r < 0.8:
            return rng.randint(-20, 20)
        if r < 0.95:
            return rng.randint(-(2**40), 2**40)
        return rng.choice([2**62, -(2**62)])
    if typ.startswith("decimal"):
        return Decimal(rng.randint(-5000, 5000)).scaleb(-2)
    return rng.choice(WORDS)


def sql_literal(v):
    if isinstance(v, str):
        return "'" + v.replace("'", "''") + "'"
    if isinstance(v, Decimal) and v < 0:
        return f"-{-v}"
    return str(v)


# -- schema ---------------------------------------------------------------------


def make_table(rng, name, n_rows):
    cols = [Col("Id", "int64", DETERMINISTIC, rng.random() < 0.5, True)]
    for j in range(rng.randint(1, 4)):
        typ = rng.choice(["int64", "int64", "decimal(2)", "varchar"])
        mode = rng.choice([DETERMINISTIC, PROBABILISTIC])
        cols.append(Col(f"c{j}", typ, mode, mode == DETERMINISTIC and rng.random() < 0.2))
    grouping = ROW_GROUPED if rng.random() < 0.15 else INDIVIDUAL
    if grouping == ROW_GROUPED:
        for c in cols:
            c.indexed = False
        mode = rng.choice([DETERMINISTIC, PROBABILISTIC])
        for c in cols:
            c.mode = mode
    scope = rng.choice([SCOPE_DATABASE, SCOPE_DATABASE, SCOPE_TABLE, SCOPE_COLUMN])
    if grouping == ROW_GROUPED and scope == SCOPE_COLUMN:
        scope = SCOPE_TABLE
    t = Tab(name, cols, grouping, scope)
    ids = rng.sample(range(1, 3 * n_rows + 5), n_rows)
    for i in ids:
        t.rows.append([i] + [rand_value(rng, c.type) for c in cols[1:]])
    return t


def bank_tables(rng, n_cust, n_acct):
    cust = Tab(
        "Customer",
        [
            Col("Id", "int64", DETERMINISTIC, rng.random() < 0.5, True),
            Col("Name", "varchar", DETERMINISTIC),
            Col("Zip", "int64", PROBABILISTIC),
        ],
    )
    ids = rng.sample(range(100, 100 + 3 * n_cust), n_cust)
    zips = [rng.randint(60000, 60004) for _ in range(3)]
    for i in ids:
        cust.rows.append([i, rng.choice(WORDS), rng.choice(zips)])
    acct = Tab("Account", [Col("Id", "int64", DETERMINISTIC), Col("Transactions", "int64", PROBABILISTIC)])
    for _ in range(n_acct):
        acct.rows.append([rng.choice(ids) if ids else 1, rng.randint(-1000, 1000)])
    return [cust, acct]


def _keys_for(rng, tables):
    keys = {"*": _hex(rng)}
    for t in tables:
        if t.scope == SCOPE_TABLE:
            keys[t.name] = _hex(rng)
        elif t.scope == SCOPE_COLUMN:
            for c in t.cols:
                keys[f"{t.name}.{c.name}"] = _hex(rng)
    return keys


def _hex(rng):
    return bytes(rng.getrandbits(8) for _ in range(32)).hex()


# -- statements -----------------------------------------------------------------


def _pick_const(rng, t, c):
    vals = [r[t.cols.index(c)] for r in t.rows]
    if vals and rng.random() < 0.8:
        return rng.choice(vals)
    return rand_value(rng, c.type)


def _filters(rng, alias, t, k):
    out = []
    for _ in range(k):
        c = rng.choice(t.cols)
        op = "=" if rng.random() < 0.75 else "<>"
        out.append(f"{alias}.{c.name} {op} {sql_literal(_pick_const(rng, t, c))}")
    return out


def _join_pred(rng, a1, t1, a2, t2):
    pairs = [(x, y) for x in t1.cols for y in t2.cols if x.type == y.type]
    x, y = rng.choice(pairs)
    if rng.random() < 0.7:
        x, y = t1.cols[0], t2.cols[0]
    op = "=" if rng.random() < 0.9 else "<>"
    return f"{a1}.{x.name} {op} {a2}.{y.name}"


def _agg_items(rng, alias, t):
    nums = [c for c in t.cols if c.type in NUMERIC]
    items = []
    for _ in range(rng.randint(1, 3)):
        fn = rng.choice(["COUNT", "SUM", "AVG", "VAR", "STD", "SUM"])
        if fn == "COUNT":
            items.append("COUNT(*)")
            continue
        c = rng.choice(nums)
        expr = f"{fn}({alias}.{c.name})"
        if rng.random() < 0.25:
            expr = f"INT({expr})"
        items.append(expr)
    return items


def _small(t):
    return len(t.rows) <= 80


def gen_select(rng, tables):
    n = 1
    small = [t for t in tables if _small(t)]
    if small and rng.random() < 0.45:
        n = rng.choice([2, 2, 3])
    first = rng.choice(tables)
    chosen = [first] + [rng.choice(small) for _ in range(n - 1)] if n > 1 else [first]
    if n > 1 and not _small(first):
        chosen = [rng.choice(small) for _ in range(n)]
    aliases = [f"T{i}" for i in range(len(chosen))]
    preds = []
    for i in range(1, len(chosen)):
        j = rng.randrange(i)
        preds.append(_join_pred(rng, aliases[j], chosen[j], aliases[i], chosen[i]))
    for a, t in zip(aliases, chosen):
        if rng.random() < 0.5:
            preds += _filters(rng, a, t, rng.randint(1, 2))
    frm = ", ".join(f"{t.name} {a}" for a, t in zip(aliases, chosen))
    shape = rng.random()
    numeric_src = [(a, t) for a, t in zip(aliases, chosen) if any(c.type in NUMERIC for c in t.cols)]
    group = ""
    if shape < 0.5 or not numeric_src:
        items = []
        if rng.random() < 0.2:
            items = ["*"]
        else:
            for a, t in zip(aliases, chosen):
                for c in rng.sample(t.cols, rng.randint(1, len(t.cols))):
                    items.append(f"{a}.{c.name}")
    else:
        a, t = rng.choice(numeric_src)
        items = _agg_items(rng, a, t)
        if shape > 0.75:
            ga, gt = rng.choice(list(zip(aliases, chosen)))
            gc = rng.choice(gt.cols[1:] or gt.cols)
            items = [f"{ga}.{gc.name}"] + items
            group = f" GROUP BY {ga}.{gc.name}"
    where = (" WHERE " + " AND ".join(preds)) if preds else ""
    return f"SELECT {', '.join(items)} FROM {frm}{where}{group}"


def gen_update(rng, tables):
    t = rng.choice(tables)
    targets = [c for c in t.cols if not c.pk]
    c = rng.choice(targets)
    if c.type == "varchar":
        expr = sql_literal(rng.choice(WORDS))
    else:
        others = [o for o in t.cols if o.type in NUMERIC]
        o = rng.choice(others)
        expr = rng.choice(
            [
                f"{c.name} + {rng.randint(-5, 5)}",
                f"{c.name} * 1.1",
                f"{c.name} / 3",
                f"{c.name} - {o.name}",
                f"-{c.name}",
                f"{c.name} * 2 + 0.25",
                f"INT({c.name} / 7)",
            ]
        )
    where = ""
    if rng.random() < 0.7:
        where = " WHERE " + " AND ".join(f.replace("U.", "") for f in _filters(rng, "U", t, rng.randint(1, 2)))
    return f"UPDATE {t.name} SET {c.name} = {expr}{where}"


def gen_insert(rng, t):
    next_id = max([r[0] for r in t.rows], default=0) + 1
    vals = [next_id] + [rand_value(rng, c.type) for c in t.cols[1:]]
    t.rows.append(vals)
    return f"INSERT INTO {t.name} VALUES ({', '.join(sql_literal(v) for v in vals)})"


def bank_statements(rng, cust, acct):
    cid = rng.choice([r[0] for r in cust.rows])
    return [
        f"Select C.Name, A.Transactions from Customer C, Account A where C.Id = '{cid}' and C.Id = A.Id",
        f"Select Into Client.CacheDB.CipherTbl AESE (C.Name), AESE (A.Transactions) from Customer C, Account A "
        f"where AESE (C.Id) = AESE ('{cid}') and AESE (C.Id) = AESE (A.Id)",
        f"Select X.Id, X.Name From Customer as X, Customer as Y Where X.Zip = Y.Zip and X.Id = '{cid}' and Y.Id <> '{cid}'",
        "Select Sum (Transactions), INT (Var (Transactions)) From Account",
        "UPDATE Account SET Transactions = Transactions * 1.1",
        "Select Sum (Transactions), INT (Var (Transactions)) From Account",
    ]


def make_instance(seed: int, max_rows: int = 1000) -> Instance:
    rng = random.Random(seed)
    statements = []
    if seed % 5 == 0:
        tables = bank_tables(rng, rng.randint(1, 40), rng.randint(1, 80))
        statements += bank_statements(rng, *tables)
    else:
        tables = []
        for i in range(rng.randint(1, 4)):
            big = i == 0 and rng.random() < 0.15
            n = rng.randint(200, max_rows) if big else rng.randint(0, 40)
            tables.append(make_table(rng, f"R{i}", n))
        # share ids so equijoins on Id produce rows
        base = [r[0] for r in tables[0].rows[:30]]
        for t in tables[1:]:
            for r in t.rows:
                if base and rng.random() < 0.5:
                    r[0] = rng.choice(base)
            seen = set()
            t.rows = [r for r in t.rows if not (r[0] in seen or seen.add(r[0]))]
    for _ in range(rng.randint(3, 7)):
        r = rng.random()
        if r < 0.65:
            statements.append(gen_select(rng, tables))
        elif r < 0.85:
            statements.append(gen_update(rng, tables))
            statements.append(gen_select(rng, tables))
        else:
            statements.append(gen_insert(rng, rng.choice(tables)) if tables else gen_select(rng, tables))
    return Instance(seed, tables, _keys_for(rng, tables), statements)


def load(inst: Instance):
    """Database and oracle with the same initial contents."""
    inserted = {}
    for s in inst.statements:
        if s.startswith("INSERT INTO "):
            name = s.split()[2]
            inserted[name] = inserted.get(name, 0) + 1
    db = Database()
    o = Oracle()
    for t in inst.tables:
        db.create_table(t.spec())
        o.create(t.name, [(c.name, c.type) for c in t.cols])
        rows = t.rows[: len(t.rows) - inserted.get(t.name, 0)]
        if rows:
            db.insert_rows(t.name, rows, inst.bindings())
            o.insert(t.name, rows)
    return db, o


# -- comparison -----------------------------------------------------------------


def _exact(v):
    if isinstance(v, float):
        return None
    if isinstance(v, Decimal):
        return ("n", v.normalize() if v else Decimal(0))
    if isinstance(v, int):
        return ("n", Decimal(v))
    return ("s", v)


def _sort_key(row):
    return tuple((_exact(v) is None, str(_exact(v))) for v in row)


def rows_match(got, want, rel=1e-9):
    """Multiset equality; floats within ``rel`` relative error."""
    if len(got) != len(want):
        return False, f"{len(got)} rows vs {len(want)} expected"
    for g, w in zip(sorted(got, key=_sort_key), sorted(want, key=_sort_key)):
        if len(g) != len(w):
            return False, f"row width {g!r} vs {w!r}"
        for a, b in zip(g, w):
            if isinstance(b, float) or isinstance(a, float):
                if not isinstance(a, float) or not math.isclose(a, b, rel_tol=rel, abs_tol=1e-12):
                    return False, f"{a!r} vs {b!r}"
            elif _exact(a) != _exact(b) or type(a) is not type(b):
                return False, f"{a!r} vs {b!r}"
    return True, ""


def _plain_result(rs, inst):
    """Decrypt ciphertext output columns with the instance keys."""
    if not any(rs.cipher_columns):
        return list(rs.rows)
    kb = inst.bindings()
    out = []
    for row in rs.rows:
        vals = []
        for v, cc in zip(row, rs.cipher_columns):
            if cc is not None and isinstance(v, CipherValue):
                table, col = cc
                vals.append(decrypt(find_key(kb, table, col.name), v, col.ltype).value())
            else:
                vals.append(v)
        out.append(tuple(vals))
    kb.wipe()
    return out


def run_instance(inst: Instance, rng=None):
    """Run every statement on both sides; return a list of mismatch messages."""
    rng = rng or random.Random(inst.seed)
    db, o = load(inst)
    problems = []
    for sql in inst.statements:
        if rng.random() < 0.5:
            text, kb = sql + inst.key_clause(), None
        else:
            text, kb = sql, inst.bindings()
        try:
            rs = db.execute(text, kb)
            got = ("ok", rs.affected if rs.affected is not None else _plain_result(rs, inst))
        except ArithmeticOverflow:
            got = ("overflow", None)
        try:
            want = o.run(sql)
            want = ("ok", want)
        except OracleOverflow:
            want = ("overflow", None)
        if got[0] != want[0]:
            problems.append(f"{sql}: engine {got[0]}, oracle {want[0]}")
            continue
        if isinstance(want[1], int) or want[1] is None:
            if got[1] != want[1]:
                problems.append(f"{sql}: affected {got[1]} vs {want[1]}")
            continue
        ok, why = rows_match(got[1], want[1])
        if not ok:
            problems.append(f"{sql}: {why}")
    for t in inst.tables:
        rs = db.execute(f"SELECT * FROM {t.name}", inst.bindings())
        ok, why = rows_match(rs.rows, o.run(f"SELECT * FROM {t.name}"))
        if not ok:
            problems.append(f"final contents of {t.name}: {why}")
    db.close()
    return problems
