"""Append-only encrypted table files with an in-memory hash index.

Table file layout (little-endian)::

    magic      8 bytes   b"AESDB1\\0\\0"
    version    u16
    columns    u16
    record*    u32 record_length, then per value: u32 plain_len | blocks

A record whose length field is ``0xFFFFFFFF`` is a tombstone followed by the
u32 ordinal it retires. Ordinals count data records only. Block counts are
not stored; they follow from the column mode and ``plain_len``.

Row-grouped tables store one value per record: the row's columns packed in
catalog order (numerics as 8 bytes, varchars as u32 length + bytes) and
encrypted as a single byte string.
"""

from __future__ import annotations

import os
import struct
import threading
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

from .catalog import Catalog, TableSpec
from .cipher import BLOCK, NUMERIC_BYTES, CipherValue, LogicalType, PlainValue, expected_blocks
from .errors import ArityMismatch, CiphertextMalformed, IoFailure, NotIndexed, ValueMalformed

MAGIC = b"AESDB1\x00\x00"
FORMAT_VERSION = 1
HEADER = struct.Struct("<8sHH")
U32 = struct.Struct("<I")
TOMBSTONE = 0xFFFFFFFF

_I64 = struct.Struct(">q")
_LEN = struct.Struct("<I")


@dataclass(frozen=True)
class Row:
    values: Tuple[CipherValue, ...]
    grouped: bool = False

    def __len__(self):
        return len(self.values)


@dataclass
class StorageReport:
    rows: int
    data_bytes: int
    plaintext_bytes: int
    prefix_bytes: int
    header_bytes: int

    @property
    def overhead_ratio_vs_plaintext(self) -> float:
        return self.data_bytes / self.plaintext_bytes if self.plaintext_bytes else 0.0


# ---------------------------------------------------------------------------
# row packing for grouped tables


def pack_row(spec: TableSpec, values: Sequence) -> PlainValue:
    """Concatenate a row's plaintext values into one varchar-shaped payload."""
    if len(values) != len(spec.columns):
        raise ArityMismatch(f"{spec.name} expects {len(spec.columns)} values, got {len(values)}")
    buf = bytearray()
    for col, value in zip(spec.columns, values):
        v = col.ltype.coerce(value)
        if col.ltype.numeric:
            buf += _I64.pack(col.ltype.to_scaled(v))
        else:
            raw = v.encode("utf-8")
            buf += _LEN.pack(len(raw))
            buf += raw
    return PlainValue(LogicalType("varchar"), buf)


def unpack_row(spec: TableSpec, payload) -> list:
    out = []
    pos = 0
    try:
        for col in spec.columns:
            if col.ltype.numeric:
                (n,) = _I64.unpack_from(payload, pos)
                pos += NUMERIC_BYTES
                out.append(col.ltype.from_scaled(n))
            else:
                (size,) = _LEN.unpack_from(payload, pos)
                pos += 4
                if pos + size > len(payload):
                    raise ValueMalformed("grouped row payload truncated")
                out.append(bytes(payload[pos : pos + size]).decode("utf-8", errors="replace"))
                pos += size
    except struct.error:
        raise ValueMalformed("grouped row payload truncated") from None
    if pos != len(payload):
        raise ValueMalformed("grouped row payload has trailing bytes")
    return out


# ---------------------------------------------------------------------------


class TableFile:
    """One table: append-only records, optional file backing, hash indexes.

    Rows are mirrored in memory; the file is the durable copy and is replayed
    on open. A single writer lock serializes appends; scans read a snapshot
    prefix and need no lock.
    """

    def __init__(self, spec: TableSpec, path: Optional[str] = None, sync: bool = False):
        self.spec = spec
        self.path = path
        self.sync = sync
        self._rows: List[Optional[Row]] = []
        self._live = 0
        self._lock = threading.RLock()
        self._indexes: Dict[int, Dict[bytes, List[int]]] = {
            i: {} for i, c in enumerate(spec.columns) if c.indexed
        }
        self._fh = None
        if path is not None:
            if os.path.exists(path):
                self._replay()
            else:
                self._create()

    # -- file handling ------------------------------------------------------

    def _create(self) -> None:
        try:
            with open(self.path, "wb") as fh:
                fh.write(HEADER.pack(MAGIC, FORMAT_VERSION, len(self.spec.columns)))
        except OSError as exc:
            raise IoFailure(f"cannot create {self.path}: {exc}") from exc

    def _replay(self) -> None:
        try:
            with open(self.path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise IoFailure(f"cannot read {self.path}: {exc}") from exc
        if len(data) < HEADER.size:
            raise IoFailure(f"{self.path}: truncated header")
        magic, version, ncols = HEADER.unpack_from(data)
        if magic != MAGIC or version != FORMAT_VERSION:
            raise IoFailure(f"{self.path}: not a cipherdb table file")
        if ncols != len(self.spec.columns):
            raise IoFailure(f"{self.path}: column count {ncols} does not match catalog")
        pos = HEADER.size
        end = len(data)
        while pos < end:
            if pos + 4 > end:
                break  # torn final length field
            (length,) = U32.unpack_from(data, pos)
            if length == TOMBSTONE:
                if pos + 8 > end:
                    break
                (target,) = U32.unpack_from(data, pos + 4)
                self._retire(target)
                pos += 8
                continue
            if pos + 4 + length > end:
                break  # torn final record
            row = self._decode_record(data[pos + 4 : pos + 4 + length])
            self._install(row)
            pos += 4 + length
        if pos != end:
            # drop a torn tail so later appends stay aligned
            with open(self.path, "r+b") as fh:
                fh.truncate(pos)

    def _modes(self) -> List[str]:
        if self.spec.grouped:
            return [self.spec.group_mode]
        return [c.enc_mode for c in self.spec.columns]

    def _decode_record(self, rec: bytes) -> Row:
        values = []
        pos = 0
        for mode in self._modes():
            if pos + 4 > len(rec):
                raise IoFailure(f"{self.path}: record truncated")
            (plain_len,) = U32.unpack_from(rec, pos)
            nbytes = expected_blocks(mode, plain_len) * BLOCK
            values.append(CipherValue(mode, plain_len, bytes(rec[pos + 4 : pos + 4 + nbytes])))
            pos += 4 + nbytes
        if pos != len(rec):
            raise IoFailure(f"{self.path}: record length mismatch")
        return Row(tuple(values), self.spec.grouped)

    @staticmethod
    def encode_record(row: Row) -> bytes:
        body = b"".join(v.to_bytes() for v in row.values)
        return U32.pack(len(body)) + body

    def _write(self, payload: bytes) -> None:
        if self.path is None:
            return
        try:
            if self._fh is None:
                self._fh = open(self.path, "ab")
            self._fh.write(payload)
            self._fh.flush()
            if self.sync:
                os.fsync(self._fh.fileno())
        except OSError as exc:
            raise IoFailure(f"cannot append to {self.path}: {exc}") from exc

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    # -- mutation -------------------------------------------------------------

    def check_row(self, row: Row) -> None:
        modes = self._modes()
        if len(row.values) != len(modes) or row.grouped != self.spec.grouped:
            raise ArityMismatch(f"{self.spec.name} expects {len(modes)} stored values, got {len(row.values)}")
        for i, (value, mode) in enumerate(zip(row.values, modes)):
            if value.mode != mode:
                raise ArityMismatch(f"{self.spec.name}: value {i} is {value.mode}, column is {mode}")
            try:
                ltype = None if self.spec.grouped else self.spec.columns[i].ltype
                value.validate(ltype)
            except CiphertextMalformed as exc:
                raise ArityMismatch(f"{self.spec.name}: value {i}: {exc}") from exc

    def _install(self, row: Row) -> int:
        ordinal = len(self._rows)
        self._rows.append(row)
        self._live += 1
        for ci, idx in self._indexes.items():
            idx.setdefault(row.values[ci].first_block, []).append(ordinal)
        return ordinal

    def _retire(self, ordinal: int) -> None:
        row = self._rows[ordinal] if 0 <= ordinal < len(self._rows) else None
        if row is None:
            return
        self._rows[ordinal] = None
        self._live -= 1
        for ci, idx in self._indexes.items():
            bucket = idx.get(row.values[ci].first_block)
            if bucket is not None:
                bucket.remove(ordinal)
                if not bucket:
                    del idx[row.values[ci].first_block]

    def append_row(self, row: Row) -> int:
        self.check_row(row)
        with self._lock:
            self._write(self.encode_record(row))
            return self._install(row)

    def append_rows(self, rows: Sequence[Row]) -> List[int]:
        for row in rows:
            self.check_row(row)
        with self._lock:
            self._write(b"".join(self.encode_record(r) for r in rows))
            return [self._install(r) for r in rows]

    def replace_row(self, ordinal: int, row: Row) -> int:
        """Append a new version of a row and tombstone the old one."""
        self.check_row(row)
        with self._lock:
            if self.get(ordinal) is None:
                raise IoFailure(f"{self.spec.name}: row {ordinal} is not live")
            self._write(self.encode_record(row) + U32.pack(TOMBSTONE) + U32.pack(ordinal))
            new = self._install(row)
            self._retire(ordinal)
            return new

    # -- reading ----------------------------------------------------------------

    def __len__(self):
        return self._live

    def get(self, ordinal: int) -> Optional[Row]:
        if 0 <= ordinal < len(self._rows):
            return self._rows[ordinal]
        return None

    def scan(self) -> Iterator[Tuple[int, Row]]:
        rows = self._rows
        for ordinal in range(len(rows)):
            row = rows[ordinal]
            if row is not None:
                yield ordinal, row

    def live_rows(self) -> List[Row]:
        """Snapshot of live rows in ordinal order (bulk scans)."""
        return [r for r in self._rows[: len(self._rows)] if r is not None]

    def index_lookup(self, column: str, ciphertext: Union[bytes, CipherValue]) -> List[int]:
        ci = self.spec.column_index(column)
        idx = self._indexes.get(ci)
        if idx is None:
            raise NotIndexed(f"{self.spec.name}.{column} is not indexed")
        if isinstance(ciphertext, CipherValue):
            hits = idx.get(ciphertext.first_block, ())
            return [o for o in hits if self._rows[o].values[ci] == ciphertext]
        return list(idx.get(bytes(ciphertext), ()))

    def measure_storage(self) -> StorageReport:
        data = plain = prefix = rows = 0
        for _, row in self.scan():
            rows += 1
            for v in row.values:
                data += v.nbytes
                plain += v.plain_len
                prefix += 4
        prefix += 4 * rows
        return StorageReport(rows, data, plain, prefix, HEADER.size)


class Store:
    """All table files of one database directory (or in memory)."""

    def __init__(self, catalog: Catalog, directory: Optional[str] = None):
        self.catalog = catalog
        self.directory = directory
        self._tables: Dict[str, TableFile] = {}
        self._lock = threading.Lock()
        for spec in catalog.tables():
            self._open(spec)

    def _path(self, name: str) -> Optional[str]:
        if self.directory is None:
            return None
        return os.path.join(self.directory, f"{name.casefold()}.tbl")

    def _open(self, spec: TableSpec) -> TableFile:
        tf = TableFile(spec, self._path(spec.name))
        self._tables[spec.name.casefold()] = tf
        return tf

    def create_table(self, spec: TableSpec) -> TableFile:
        with self._lock:
            self.catalog.create_table(spec)
            return self._open(spec)

    def table(self, name: str) -> TableFile:
        tf = self._tables.get(name.casefold())
        if tf is None:
            self.catalog.table(name)  # raises UnknownTable
            with self._lock:
                tf = self._tables.get(name.casefold()) or self._open(self.catalog.table(name))
        return tf

    def close(self) -> None:
        for tf in self._tables.values():
            tf.close()
