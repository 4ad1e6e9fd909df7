"""Framed TCP protocol, threaded server, smart and simple clients.

Frame: u32 little-endian length, then UTF-8 payload. A request is one SQL
statement. A response is ``OK <n>``, ``ERR <code> <message>`` or a run of
``ROW <fields>`` frames closed by ``END``.

Fields are tab separated and carry a one-letter type tag so clients can
rebuild values without the schema::

    i<int>  n<decimal>  f<float repr>  s<escaped text>  x<hex of plain_len|blocks>

Text escapes backslash, tab, newline and carriage return. Transport
encryption is out of scope; :class:`Transport` is the seam where it would go.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Dict, List, Optional, Tuple

from .catalog import Catalog, KeyBinding, find_key
from .cipher import DETERMINISTIC, CipherValue, PlainValue, decrypt, encrypt, wipe
from .errors import (
    BindFailure,
    CipherDBError,
    CiphertextMalformed,
    LocalDecryptFailure,
    ProtocolError,
    error_for_code,
)
from .sqlfront import parse, validate
from .sqlfront.ast import (
    CIPHERTEXT,
    FuncCall,
    HexLiteral,
    Insert,
    Literal,
    Predicate,
    Query,
    Select,
    SelectItem,
    ColumnRef,
)
from .sqlfront.validate import BoundColumn, CipherConst, ColumnOutput

log = logging.getLogger("cipherdb.netproto")

_LEN = struct.Struct("<I")
MAX_FRAME = 64 * 1024 * 1024


# ---------------------------------------------------------------------------
# framing


class Transport:
    """Plaintext transport. Subclass to add encryption or to observe bytes."""

    def outgoing(self, data: bytes) -> bytes:
        return data

    def incoming(self, data: bytes) -> bytes:
        return data


PLAINTEXT_TRANSPORT = Transport()


def _recv_exact(sock, n: int) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if buf:
                raise ProtocolError("connection closed inside a frame")
            return None
        buf += chunk
    return bytes(buf)


def send_frame(sock, text: str, transport: Transport = PLAINTEXT_TRANSPORT) -> None:
    payload = transport.outgoing(text.encode("utf-8"))
    sock.sendall(_LEN.pack(len(payload)) + payload)


def recv_frame(sock, transport: Transport = PLAINTEXT_TRANSPORT) -> Optional[str]:
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    (n,) = _LEN.unpack(head)
    if n > MAX_FRAME:
        raise ProtocolError(f"frame of {n} bytes exceeds the limit")
    body = _recv_exact(sock, n) if n else b""
    if body is None:
        raise ProtocolError("connection closed inside a frame")
    try:
        return transport.incoming(body).decode("utf-8")
    except UnicodeDecodeError:
        raise ProtocolError("frame is not valid UTF-8") from None


# ---------------------------------------------------------------------------
# field codec

_ESC = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_UNESC = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}


def escape(text: str) -> str:
    return "".join(_ESC.get(ch, ch) for ch in text)


def unescape(text: str) -> str:
    out = []
    it = iter(text)
    for ch in it:
        if ch == "\\":
            nxt = next(it, None)
            if nxt not in _UNESC:
                raise ProtocolError("bad escape in field")
            out.append(_UNESC[nxt])
        else:
            out.append(ch)
    return "".join(out)


def encode_field(v) -> str:
    if isinstance(v, CipherValue):
        return "x" + v.to_bytes().hex()
    if isinstance(v, bool):
        return f"i{int(v)}"
    if isinstance(v, int):
        return f"i{v}"
    if isinstance(v, Decimal):
        return f"n{v}"
    if isinstance(v, float):
        return f"f{v!r}"
    if isinstance(v, str):
        return "s" + escape(v)
    if isinstance(v, (bytes, bytearray)):
        return "x" + bytes(v).hex()
    raise ProtocolError(f"cannot encode {type(v).__name__}")


def decode_field(text: str):
    if not text:
        raise ProtocolError("empty field")
    tag, body = text[0], text[1:]
    try:
        if tag == "i":
            return int(body)
        if tag == "n":
            return Decimal(body)
        if tag == "f":
            return float(body)
        if tag == "s":
            return unescape(body)
        if tag == "x":
            return bytes.fromhex(body)
    except ValueError:
        raise ProtocolError(f"malformed {tag} field") from None
    raise ProtocolError(f"unknown field tag {tag!r}")


def encode_row(row) -> str:
    return "ROW " + "\t".join(encode_field(v) for v in row)


def decode_row(frame: str) -> tuple:
    body = frame[4:]
    if body == "":
        return ()
    return tuple(decode_field(f) for f in body.split("\t"))


def _one_line(text: str) -> str:
    return text.replace("\r", " ").replace("\n", " ")


# ---------------------------------------------------------------------------
# server


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        server = self.server
        session = server.next_session()
        transport = server.transport
        log.info("session %d opened", session)
        statements = 0
        try:
            while True:
                try:
                    text = recv_frame(self.request, transport)
                except ProtocolError as exc:
                    log.warning("session %d: %s", session, exc)
                    return
                if text is None:
                    return
                statements += 1
                for frame in server.respond(text):
                    send_frame(self.request, frame, transport)
        except OSError as exc:
            log.info("session %d: connection error %s", session, type(exc).__name__)
        finally:
            log.info("session %d closed after %d statements", session, statements)


class CipherDBServer(socketserver.ThreadingMixIn, socketserver.TCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, database, transport: Transport = PLAINTEXT_TRANSPORT):
        self.database = database
        self.transport = transport
        self._session_lock = threading.Lock()
        self._sessions = 0
        try:
            super().__init__(address, _Handler)
        except OSError as exc:
            raise BindFailure(f"cannot listen on {address[0]}:{address[1]}: {exc.strerror}") from None

    def next_session(self) -> int:
        with self._session_lock:
            self._sessions += 1
            return self._sessions

    def respond(self, text: str) -> List[str]:
        """Run one statement and build its response frames.

        Logs carry only outcome codes: never the statement, never keys.
        """
        try:
            rs = self.database.execute(text)
        except CipherDBError as exc:
            log.info("statement failed: %s", exc.code)
            return [f"ERR {exc.code} {_one_line(str(exc))}"]
        except Exception as exc:  # internal bug: report without details
            log.error("internal error: %s", type(exc).__name__)
            return [f"ERR InternalError {type(exc).__name__}"]
        if rs.affected is not None:
            log.info("statement ok, %d affected", rs.affected)
            return [f"OK {rs.affected}"]
        log.info("statement ok, %d rows", len(rs.rows))
        try:
            return [encode_row(r) for r in rs.rows] + ["END"]
        except ProtocolError as exc:
            return [f"ERR {exc.code} {_one_line(str(exc))}"]

    @property
    def endpoint(self) -> Tuple[str, int]:
        return self.server_address[:2]


def parse_endpoint(text: str) -> Tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise BindFailure(f"endpoint must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def serve(endpoint, database, *, transport: Transport = PLAINTEXT_TRANSPORT, ready=None) -> None:
    """Serve until interrupted. ``ready(server)`` is called once listening."""
    if isinstance(endpoint, str):
        endpoint = parse_endpoint(endpoint)
    with CipherDBServer(endpoint, database, transport) as srv:
        if ready is not None:
            ready(srv)
        srv.serve_forever()


def start_server(database, endpoint=("127.0.0.1", 0), transport: Transport = PLAINTEXT_TRANSPORT) -> CipherDBServer:
    """Start a server on a background thread (tests, embedding)."""
    srv = CipherDBServer(endpoint, database, transport)
    t = threading.Thread(target=srv.serve_forever, name="cipherdb-server", daemon=True)
    t.start()
    srv.thread = t
    return srv


def stop_server(srv: CipherDBServer) -> None:
    srv.shutdown()
    srv.server_close()


# ---------------------------------------------------------------------------
# clients


@dataclass
class Response:
    rows: List[tuple] = field(default_factory=list)
    affected: Optional[int] = None


class _Connection:
    def __init__(self, host: str = "127.0.0.1", port: int = 0, transport: Transport = PLAINTEXT_TRANSPORT, timeout=30.0):
        self.transport = transport
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self._lock = threading.Lock()

    def request(self, sql: str) -> Response:
        with self._lock:
            send_frame(self.sock, sql, self.transport)
            rows = []
            while True:
                frame = recv_frame(self.sock, self.transport)
                if frame is None:
                    raise ProtocolError("server closed the connection")
                if frame.startswith("ROW"):
                    rows.append(decode_row(frame))
                elif frame == "END":
                    return Response(rows)
                elif frame.startswith("OK "):
                    return Response(affected=int(frame[3:]))
                elif frame.startswith("ERR "):
                    _, code, msg = (frame.split(" ", 2) + [""])[:3]
                    raise error_for_code(code, msg)
                else:
                    raise ProtocolError(f"unexpected frame {frame[:16]!r}")

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def _keys_clause(keys) -> str:
    if not keys:
        return ""
    if isinstance(keys, KeyBinding):
        items = [(k.scope, k.material.hex()) for k in keys.keys()]
    else:
        items = [(scope, hx if isinstance(hx, str) else bytes(hx).hex()) for scope, hx in dict(keys).items()]
    return " WITH KEYS (" + ", ".join(f"{scope} = x'{hx}'" for scope, hx in items) + ")"


def _with_keys(sql: str, keys) -> str:
    text = sql.strip()
    if text.endswith(";"):
        text = text[:-1].rstrip()
    return text + _keys_clause(keys) + ";"


class SimpleClient(_Connection):
    """Sends plaintext-kind SQL plus a WITH KEYS clause; gets plaintext back."""

    def query(self, sql: str, keys=None) -> List[tuple]:
        resp = self.request(_with_keys(sql, keys))
        return resp.rows if resp.affected is None else [(resp.affected,)]

    def execute(self, sql: str, keys=None) -> Response:
        return self.request(_with_keys(sql, keys))


@dataclass
class CacheTable:
    """Ciphertext rows kept client side, with what is needed to decrypt them."""

    name: str
    columns: List[str]
    specs: List[Optional[tuple]]  # (table name, ColumnSpec) for ciphertext columns
    rows: List[tuple] = field(default_factory=list)

    def decrypt(self, keys: KeyBinding) -> List[tuple]:
        return [tuple(_local_decrypt(v, s, keys) for v, s in zip(r, self.specs)) for r in self.rows]


def _local_decrypt(value, spec, keys: KeyBinding):
    if spec is None:
        return value
    table, col = spec
    if not isinstance(value, (bytes, bytearray)):
        raise LocalDecryptFailure(f"{table}.{col.name}: expected ciphertext")
    key = find_key(keys, table, col.name)
    if key is None:
        raise LocalDecryptFailure(f"no local key for {table}.{col.name}")
    try:
        cv = CipherValue.from_bytes(bytes(value), col.enc_mode)
        pv = decrypt(key, cv, col.ltype)
    except (CiphertextMalformed, CipherDBError) as exc:
        raise LocalDecryptFailure(f"{table}.{col.name}: {exc}") from None
    try:
        return pv.value()
    finally:
        wipe(pv)


class SmartClient(_Connection):
    """Client holding keys and a catalog copy.

    Queries that can be answered over deterministic ciphertext are rewritten
    so that no key leaves the client: constants are encrypted locally,
    columns are requested as ciphertext and decrypted here. Anything else
    falls back to a plaintext query carrying the keys.
    """

    def __init__(self, host, port, catalog: Catalog, keys: KeyBinding, transport: Transport = PLAINTEXT_TRANSPORT, rng=None, **kw):
        super().__init__(host, port, transport, **kw)
        self.catalog = catalog
        self.keys = keys
        self.rng = rng
        self.cache: Dict[str, CacheTable] = {}
        self.last_sent: Optional[str] = None
        self.last_path: Optional[str] = None

    # -- planning on the client -------------------------------------------------

    def _validated(self, q: Query):
        local = self.keys.copy()
        try:
            return validate(q, self.catalog, local)
        finally:
            local.wipe()

    def _cipher_query(self, q: Query, vq) -> Optional[Tuple[str, list]]:
        """Zero-key ciphertext rewrite, or None when not evaluable that way."""
        stmt = q.statement
        if not isinstance(stmt, Select) or vq.aggregate or vq.group_by is not None:
            return None
        items, specs = [], []
        for o in vq.outputs:
            if not isinstance(o, ColumnOutput) or o.to_int or o.col.table.grouped:
                return None
            items.append(SelectItem(FuncCall("AESE", (ColumnRef(o.col.alias, o.col.spec.name),))))
            specs.append((o.col.table.name, o.col.spec))
        where = []
        for p in vq.predicates:
            lhs = FuncCall("AESE", (ColumnRef(p.lhs.alias, p.lhs.spec.name),))
            if isinstance(p.rhs, BoundColumn):
                if not p.cipherable:
                    return None
                rhs = FuncCall("AESE", (ColumnRef(p.rhs.alias, p.rhs.spec.name),))
            else:
                if not p.lhs.cipher_comparable or p.lhs.wrap == "AESD":
                    return None
                if isinstance(p.rhs, CipherConst):
                    cv = p.rhs.value
                else:  # plain constant or AESE('lit'): encrypt it here
                    key = find_key(self.keys, p.lhs.table.name, p.lhs.spec.name)
                    if key is None:
                        return None
                    pv = PlainValue.of(p.lhs.ltype, p.rhs.value)
                    try:
                        cv = encrypt(key, pv, DETERMINISTIC)
                    finally:
                        wipe(pv)
                rhs = FuncCall("AESE", (HexLiteral(bytearray(cv.to_bytes())),))
            where.append(Predicate(lhs, p.op, rhs))
        out = Select(tuple(items), stmt.tables, tuple(where), None, stmt.into)
        return Query(out, CIPHERTEXT).sql(), specs

    def _cipher_insert(self, q: Query) -> Optional[str]:
        stmt = q.statement
        if not isinstance(stmt, Insert) or q.key_literals():
            return None
        spec = self.catalog.table(stmt.table)
        if spec.grouped:
            return None
        cols = [spec.column(c) for c in stmt.columns] if stmt.columns else spec.columns
        rows = []
        for r in stmt.rows:
            if len(r) != len(cols) or not all(isinstance(v, Literal) for v in r):
                return None
            out = []
            for col, lit in zip(cols, r):
                key = find_key(self.keys, spec.name, col.name)
                if key is None:
                    return None
                pv = PlainValue.of(col.ltype, lit.value)
                try:
                    cv = encrypt(key, pv, col.enc_mode, self.rng)
                finally:
                    wipe(pv)
                out.append(FuncCall("AESE", (HexLiteral(bytearray(cv.to_bytes())),)))
            rows.append(tuple(out))
        names = tuple(c.name for c in cols)
        return Query(Insert(spec.name, names, tuple(rows)), CIPHERTEXT).sql()

    # -- public ------------------------------------------------------------------

    def smart_query(self, sql: str) -> List[tuple]:
        q = parse(sql)
        if isinstance(q.statement, Insert):
            text = self._cipher_insert(q)
            if text is not None:
                self.last_path = "ciphertext"
                return [(self._send(text).affected,)]
        if not isinstance(q.statement, Select):
            self.last_path = "keys"
            resp = self._send(_with_keys(q.sql(), self.keys))
            return [(resp.affected,)]
        vq = self._validated(q)
        outputs = vq.outputs
        # keys written into the text (trailer or inline) mean the user chose
        # to send them; respect that and skip the rewrite
        plan = None if q.key_literals() else self._cipher_query(q, vq)
        if plan is not None:
            text, specs = plan
            self.last_path = "ciphertext"
        else:
            text = q.sql() if q.key_literals() else _with_keys(q.sql(), self.keys)
            specs = [
                (o.col.table.name, o.col.spec) if isinstance(o, ColumnOutput) and not o.decrypt else None
                for o in outputs
            ]
            self.last_path = "keys"
        resp = self._send(text)
        table = CacheTable(vq.into or "_last", [o.name for o in outputs], specs, resp.rows)
        if vq.into:
            self.cache[vq.into] = table
        return table.decrypt(self.keys)

    def _send(self, text: str) -> Response:
        self.last_sent = text
        return self.request(text)


__all__ = [
    "CacheTable",
    "CipherDBServer",
    "SimpleClient",
    "SmartClient",
    "Transport",
    "decode_field",
    "encode_field",
    "parse_endpoint",
    "recv_frame",
    "send_frame",
    "serve",
    "start_server",
    "stop_server",
]
