"""``cipherdb`` command line.

Exit codes: 0 ok, 1 other error, 2 syntax/unsupported, 3 key required,
4 invalid ciphertext operation, 5 I/O, CSV or network failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from typing import List, Optional

from .catalog import KeyBinding
from .cipher import CipherValue, SymKey
from .database import Database
from .errors import CipherDBError, CsvMalformed, IoFailure, KeyMalformed, ValueMalformed

ENV_DIR = "CIPHERDB_DIR"


def _parse_key(spec: str) -> tuple:
    scope, sep, hx = spec.partition("=")
    if not sep or not scope.strip():
        raise KeyMalformed("keys are given as scope=hex")
    return scope.strip(), SymKey.from_hex(hx.strip(), scope.strip())


def read_keys(flags: Optional[List[str]] = None, keys_file: Optional[str] = None) -> KeyBinding:
    kb = KeyBinding()
    if keys_file:
        try:
            with open(keys_file, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise IoFailure(f"cannot read keys file: {exc.strerror}") from None
        for line in lines:
            line = line.strip()
            if line and not line.startswith("#"):
                kb.add(*_parse_key(line))
    for spec in flags or ():
        kb.add(*_parse_key(spec))
    return kb


def load_csv(db: Database, table: str, csv_path: str, keys: KeyBinding) -> int:
    """Encrypt every CSV row per its column's mode and append it.

    The header must name each table column exactly once (any order).
    """
    spec = db.store.table(table).spec
    try:
        with open(csv_path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise CsvMalformed(f"{csv_path}: missing header")
            header = [h.strip() for h in header]
            if len(header) != len(spec.columns) or {h.casefold() for h in header} != {
                c.name.casefold() for c in spec.columns
            }:
                raise CsvMalformed(f"{csv_path}: header does not match the columns of {spec.name}")
            order = [spec.column_index(h) for h in header]
            rows = []
            for lineno, rec in enumerate(reader, start=2):
                if not rec:
                    continue
                if len(rec) != len(order):
                    raise CsvMalformed(f"{csv_path}:{lineno}: expected {len(order)} fields, got {len(rec)}")
                vals = [None] * len(order)
                for ci, text in zip(order, rec):
                    col = spec.columns[ci]
                    try:
                        vals[ci] = col.ltype.coerce(text)
                    except ValueMalformed as exc:
                        raise CsvMalformed(f"{csv_path}:{lineno}: {col.name}: {exc}") from None
                rows.append(vals)
    except OSError as exc:
        keys.wipe()
        raise IoFailure(f"cannot read {csv_path}: {exc.strerror}") from None
    except CipherDBError:
        keys.wipe()
        raise
    return db.insert_rows(spec.name, rows, keys)


def _fmt(v) -> str:
    if isinstance(v, CipherValue):
        return "\\x" + v.to_bytes().hex()
    if isinstance(v, (bytes, bytearray)):
        return "\\x" + bytes(v).hex()
    if isinstance(v, str):
        return v.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")
    return str(v)


def _db_dir(args) -> str:
    d = args.db or os.environ.get(ENV_DIR)
    if not d:
        raise IoFailure(f"no database directory: pass --db or set {ENV_DIR}")
    return d


def _open(args) -> Database:
    d = _db_dir(args)
    if not os.path.isdir(d):
        raise IoFailure(f"no database at {d}; run cipherdb init first")
    return Database(d, create=False)


def cmd_init(args, out) -> int:
    d = args.directory or _db_dir(args)
    Database.init(d).close()
    print(f"initialized {d}", file=out)
    return 0


def cmd_create_table(args, out) -> int:
    try:
        with open(args.ddl_file, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {args.ddl_file}: {exc.strerror}") from None
    with _open(args) as db:
        statements = [s.strip() for s in text.split(";") if s.strip()]
        for stmt in statements:
            db.execute(stmt)
    print(f"OK {len(statements)}", file=out)
    return 0


def cmd_load_csv(args, out) -> int:
    keys = read_keys(args.key, args.keys_file)
    with _open(args) as db:
        n = load_csv(db, args.table, args.file, keys)
    print(f"OK {n}", file=out)
    return 0


def cmd_query(args, out) -> int:
    keys = read_keys(args.key, args.keys_file)
    if args.connect:
        from .netproto import SimpleClient, parse_endpoint

        host, port = parse_endpoint(args.connect)
        with SimpleClient(host, port) as client:
            try:
                resp = client.execute(args.sql, keys)
            finally:
                keys.wipe()
        if resp.affected is not None:
            print(f"OK {resp.affected}", file=out)
        for row in resp.rows:
            print("\t".join(_fmt(v) for v in row), file=out)
        return 0
    with _open(args) as db:
        rs = db.execute(args.sql, keys)
    if rs.affected is not None:
        print(f"OK {rs.affected}", file=out)
        return 0
    if args.header:
        print("\t".join(rs.columns), file=out)
    for row in rs.rows:
        print("\t".join(_fmt(v) for v in row), file=out)
    return 0


def cmd_serve(args, out) -> int:
    from .netproto import serve

    db = _open(args)

    def ready(srv):
        host, port = srv.endpoint
        print(f"listening on {host}:{port}", file=out, flush=True)

    try:
        serve(args.listen, db, ready=ready)
    except KeyboardInterrupt:
        pass
    finally:
        db.close()
    return 0


def cmd_bench(args, out) -> int:
    from .bench import bench_sum

    report = bench_sum(args.n, args.trials, warmup=args.warmup, seed=args.seed, paillier_bits=args.paillier_bits)
    text = report.as_text()
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise IoFailure(f"cannot write {args.out}: {exc.strerror}") from None
        print(f"report written to {args.out}", file=out)
    else:
        out.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cipherdb", description="SQL over AES-256 encrypted columns")
    p.add_argument("--db", help=f"database directory (default: ${ENV_DIR})")
    p.add_argument("-v", "--verbose", action="store_true", help="log to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_keys(sp):
        sp.add_argument("--key", action="append", metavar="SCOPE=HEX", help="key for *, a table or table.column")
        sp.add_argument("--keys-file", help="file with one SCOPE=HEX per line")

    sp = sub.add_parser("init", help="create an empty database directory")
    sp.add_argument("directory", nargs="?")
    sp.set_defaults(func=cmd_init)

    sp = sub.add_parser("create-table", help="run CREATE TABLE statements from a file")
    sp.add_argument("ddl_file")
    sp.set_defaults(func=cmd_create_table)

    sp = sub.add_parser("load-csv", help="encrypt and append CSV rows")
    sp.add_argument("table")
    sp.add_argument("file")
    with_keys(sp)
    sp.set_defaults(func=cmd_load_csv)

    sp = sub.add_parser("query", help="run one statement and print rows as TSV")
    sp.add_argument("sql")
    sp.add_argument("--connect", metavar="HOST:PORT", help="send to a server instead of opening --db")
    sp.add_argument("--header", action="store_true", help="print column names first")
    with_keys(sp)
    sp.set_defaults(func=cmd_query)

    sp = sub.add_parser("serve", help="serve the database over TCP")
    sp.add_argument("--listen", default="127.0.0.1:5433", metavar="HOST:PORT")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("bench", help="SUM benchmark: plaintext, AES det/prob, Paillier")
    sp.add_argument("--n", type=int, default=100_000)
    sp.add_argument("--trials", type=int, default=5)
    sp.add_argument("--warmup", type=int, default=1)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--paillier-bits", type=int, default=2048)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[List[str]] = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=err, format="%(name)s: %(message)s")
    try:
        return args.func(args, out)
    except CipherDBError as exc:
        print(f"error: {exc.code}: {exc}", file=err)
        return exc.exit_status


if __name__ == "__main__":
    sys.exit(main())
