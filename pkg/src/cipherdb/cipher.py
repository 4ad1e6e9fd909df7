"""Column value codecs over AES-256.

Two encodings are provided:

* deterministic: the plaintext is padded to a multiple of 16 bytes (numerics
  with leading zero bytes, strings with trailing spaces) and every block is
  encrypted on its own, so equal plaintexts give equal ciphertexts;
* probabilistic: the plaintext is cut into 8-byte chunks and each block
  carries 8 fresh random salt bytes in its left half and one chunk in its
  right half.

Blocks are encrypted independently (codebook style). Feeding several blocks
to one ECB ``update`` call is therefore the same as encrypting them one by
one.

Plaintext handled here lives in ``bytearray`` buffers so it can be zeroed by
:func:`wipe`. Python ``int``/``str`` objects decoded from those buffers are
immutable and cannot be wiped; callers drop them at query end.
"""

from __future__ import annotations

import operator
import re
import secrets
import struct
import threading
from dataclasses import dataclass
from decimal import Decimal
from typing import Callable, Iterable, Optional

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import CiphertextMalformed, KeyMalformed, RngFailure, ValueMalformed

BLOCK = 16
HALF = 8
KEY_BYTES = 32
NUMERIC_BYTES = 8
MAX_VARCHAR = 2**31 - 1

DETERMINISTIC = "deterministic"
PROBABILISTIC = "probabilistic"
MODES = (DETERMINISTIC, PROBABILISTIC)

_PAD = 0x20
_I64 = struct.Struct(">q")
_TYPE_RE = re.compile(r"^\s*(int64|bigint|int|integer|varchar|text|decimal)\s*(?:\(\s*(\d+)\s*\))?\s*$", re.I)


# ---------------------------------------------------------------------------
# sensitive buffer registry


class SensitiveRegistry:
    """Tracks live buffers holding key or plaintext material."""

    def __init__(self):
        self._lock = threading.Lock()
        self._live = {}

    def register(self, buf: bytearray) -> bytearray:
        with self._lock:
            self._live[id(buf)] = buf
        return buf

    def discard(self, buf) -> None:
        with self._lock:
            self._live.pop(id(buf), None)

    def is_registered(self, buf) -> bool:
        with self._lock:
            return self._live.get(id(buf)) is buf

    @property
    def count(self) -> int:
        with self._lock:
            return len(self._live)

    def live_buffers(self) -> list:
        with self._lock:
            return list(self._live.values())


REGISTRY = SensitiveRegistry()


class CryptoCounters:
    """Instrumentation: number of value encryptions and decryptions."""

    def __init__(self):
        self._lock = threading.Lock()
        self.encrypts = 0
        self.decrypts = 0

    def add(self, encrypts: int = 0, decrypts: int = 0) -> None:
        with self._lock:
            self.encrypts += encrypts
            self.decrypts += decrypts

    def reset(self) -> None:
        with self._lock:
            self.encrypts = 0
            self.decrypts = 0

    def snapshot(self) -> tuple:
        with self._lock:
            return self.encrypts, self.decrypts


COUNTERS = CryptoCounters()


def _zero(buf) -> None:
    if buf is not None and len(buf):
        buf[:] = bytes(len(buf))


def wipe(buffer) -> None:
    """Zero ``buffer`` in place and drop it from the sensitive registry.

    Accepts a ``bytearray``, a writable ``memoryview``, a :class:`SymKey` or a
    :class:`PlainValue`. Idempotent.
    """
    if isinstance(buffer, SymKey):
        buffer.wipe()
        return
    if isinstance(buffer, PlainValue):
        buffer = buffer.payload
    if isinstance(buffer, (bytes, str)):
        raise TypeError("immutable objects cannot be wiped")
    _zero(buffer)
    REGISTRY.discard(buffer)


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class LogicalType:
    kind: str  # int64 | decimal | varchar
    scale: int = 0

    @classmethod
    def parse(cls, text) -> "LogicalType":
        if isinstance(text, LogicalType):
            return text
        m = _TYPE_RE.match(str(text))
        if not m:
            raise ValueMalformed(f"unknown logical type {text!r}")
        name, arg = m.group(1).lower(), m.group(2)
        if name in ("int64", "bigint", "int", "integer"):
            return cls("int64")
        if name in ("varchar", "text"):
            return cls("varchar")
        scale = int(arg) if arg is not None else 0
        if scale > 18:
            raise ValueMalformed("decimal scale above 18 does not fit int64")
        return cls("decimal", scale)

    @property
    def numeric(self) -> bool:
        return self.kind != "varchar"

    def __str__(self) -> str:
        if self.kind == "decimal":
            return f"decimal({self.scale})"
        return self.kind

    def coerce(self, value):
        """Convert a Python literal to this type's canonical Python value."""
        if self.kind == "varchar":
            if isinstance(value, (bytes, bytearray)):
                return bytes(value).decode("utf-8")
            if not isinstance(value, str):
                raise ValueMalformed(f"expected a string, got {value!r}")
            return value
        try:
            if isinstance(value, str):
                value = Decimal(value.strip())
            elif isinstance(value, float):
                value = Decimal(repr(value))
            else:
                value = Decimal(value)
        except Exception:
            raise ValueMalformed(f"not a number: {value!r}") from None
        if not value.is_finite():
            raise ValueMalformed(f"not a finite number: {value!r}")
        scaled = value.scaleb(self.scale)
        if scaled != scaled.to_integral_value():
            raise ValueMalformed(f"{value} has more than {self.scale} fractional digits")
        scaled = int(scaled)
        if not -(2**63) <= scaled < 2**63:
            raise ValueMalformed(f"{value} does not fit in 8 bytes")
        if self.kind == "int64":
            return scaled
        return Decimal(scaled).scaleb(-self.scale)

    def to_scaled(self, value) -> int:
        """Integer representation stored in the 8-byte payload."""
        if self.kind == "int64":
            return int(value)
        return int(Decimal(value).scaleb(self.scale))

    def from_scaled(self, n: int):
        if self.kind == "int64":
            return n
        return Decimal(n).scaleb(-self.scale)


INT64 = LogicalType("int64")
VARCHAR = LogicalType("varchar")


@dataclass
class PlainValue:
    """A typed plaintext payload: 8 big-endian bytes for numerics, raw bytes
    for varchar."""

    ltype: LogicalType
    payload: bytearray

    @classmethod
    def of(cls, ltype, value) -> "PlainValue":
        ltype = LogicalType.parse(ltype)
        value = ltype.coerce(value)
        if ltype.kind == "varchar":
            raw = bytearray(value.encode("utf-8"))
            if len(raw) > MAX_VARCHAR:
                raise ValueMalformed("varchar longer than 2^31-1 bytes")
            return cls(ltype, raw)
        return cls(ltype, bytearray(_I64.pack(ltype.to_scaled(value))))

    def check(self) -> None:
        if self.ltype.numeric and len(self.payload) != NUMERIC_BYTES:
            raise ValueMalformed(f"numeric payload must be 8 bytes, got {len(self.payload)}")
        if len(self.payload) > MAX_VARCHAR:
            raise ValueMalformed("varchar longer than 2^31-1 bytes")

    def value(self):
        if self.ltype.kind == "varchar":
            return bytes(self.payload).decode("utf-8", errors="replace")
        self.check()
        return self.ltype.from_scaled(_I64.unpack(self.payload)[0])


@dataclass(frozen=True)
class CipherValue:
    """Encrypted form of one column value.

    ``blocks`` is the concatenation of the 16-byte AES blocks. Equality and
    hashing cover ``plain_len`` and the blocks, which for deterministic values
    under one key is equivalent to plaintext equality.
    """

    mode: str
    plain_len: int
    blocks: bytes

    @property
    def block_count(self) -> int:
        return len(self.blocks) // BLOCK

    @property
    def block_list(self) -> list:
        return [self.blocks[i : i + BLOCK] for i in range(0, len(self.blocks), BLOCK)]

    @property
    def first_block(self) -> bytes:
        return self.blocks[:BLOCK]

    @property
    def nbytes(self) -> int:
        return len(self.blocks)

    def to_bytes(self) -> bytes:
        return struct.pack("<I", self.plain_len) + self.blocks

    @classmethod
    def from_bytes(cls, data: bytes, mode: str) -> "CipherValue":
        if len(data) < 4 + BLOCK:
            raise CiphertextMalformed("ciphertext shorter than one block")
        (plain_len,) = struct.unpack_from("<I", data)
        cv = cls(mode, plain_len, bytes(data[4:]))
        cv.validate()
        return cv

    def validate(self, ltype: Optional[LogicalType] = None) -> None:
        if self.mode not in MODES:
            raise CiphertextMalformed(f"unknown mode {self.mode!r}")
        if len(self.blocks) % BLOCK:
            raise CiphertextMalformed("ciphertext is not a whole number of blocks")
        if self.block_count != expected_blocks(self.mode, self.plain_len):
            raise CiphertextMalformed(
                f"{self.block_count} blocks inconsistent with {self.mode} plain_len {self.plain_len}"
            )
        if ltype is not None and ltype.numeric and self.plain_len != NUMERIC_BYTES:
            raise CiphertextMalformed(f"numeric ciphertext with plain_len {self.plain_len}")


def expected_blocks(mode: str, plain_len: int) -> int:
    width = BLOCK if mode == DETERMINISTIC else HALF
    return max(1, -(-plain_len // width))


class SymKey:
    """A 256-bit AES key bound to a scope.

    ``scope`` is ``"*"`` for the whole database, ``"T"`` for a table or
    ``"T.C"`` for a column. The key material is copied into a private
    ``bytearray`` so :meth:`wipe` can clear it.
    """

    def __init__(self, material, scope: str = "*"):
        if not isinstance(material, (bytes, bytearray, memoryview)) or len(material) != KEY_BYTES:
            raise KeyMalformed("AES-256 keys must be exactly 32 bytes")
        self.material = bytearray(material)
        self.scope = scope
        self._lock = threading.Lock()
        self._ctx = {}
        self._wiped = False

    @classmethod
    def generate(cls, scope: str = "*") -> "SymKey":
        return cls(secrets.token_bytes(KEY_BYTES), scope)

    @classmethod
    def from_hex(cls, text: str, scope: str = "*") -> "SymKey":
        try:
            raw = bytearray.fromhex(text)
        except ValueError:
            raise KeyMalformed("key is not valid hex") from None
        try:
            return cls(raw, scope)
        finally:
            _zero(raw)

    def copy(self, scope: Optional[str] = None) -> "SymKey":
        return SymKey(self.material, self.scope if scope is None else scope)

    @property
    def wiped(self) -> bool:
        return self._wiped

    def _contexts(self):
        # ECB contexts hold no chaining state; cached per thread since they are
        # not safe to share.
        tid = threading.get_ident()
        with self._lock:
            if self._wiped:
                raise KeyMalformed("key has been wiped")
            ctx = self._ctx.get(tid)
            if ctx is None:
                cipher = Cipher(algorithms.AES(self.material), modes.ECB())
                ctx = (cipher.encryptor(), cipher.decryptor())
                self._ctx[tid] = ctx
            return ctx

    def encrypt_blocks(self, plain) -> bytes:
        return self._contexts()[0].update(bytes(plain))

    def decrypt_blocks_into(self, blocks: bytes) -> bytearray:
        out = bytearray(len(blocks) + BLOCK - 1)
        n = self._contexts()[1].update_into(blocks, out)
        del out[n:]
        return out

    def wipe(self) -> None:
        with self._lock:
            self._wiped = True
            self._ctx.clear()
        _zero(self.material)
        REGISTRY.discard(self.material)

    def __eq__(self, other):
        return isinstance(other, SymKey) and self.material == other.material and self.scope == other.scope

    def __hash__(self):
        return hash(self.scope)

    def __repr__(self):
        return f"SymKey(scope={self.scope!r}, <redacted>)"


# ---------------------------------------------------------------------------
# codecs


def _check_key(key) -> SymKey:
    if not isinstance(key, SymKey):
        raise KeyMalformed("expected a SymKey")
    if len(key.material) != KEY_BYTES:
        raise KeyMalformed("AES-256 keys must be exactly 32 bytes")
    return key


def encrypt_det(key: SymKey, v: PlainValue) -> CipherValue:
    """Deterministic encoding: equal ``(key, v)`` always give equal blocks."""
    _check_key(key)
    v.check()
    n = len(v.payload)
    if v.ltype.numeric:
        buf = bytearray(BLOCK - NUMERIC_BYTES) + v.payload
    else:
        width = max(1, -(-n // BLOCK)) * BLOCK
        buf = bytearray(v.payload)
        buf.extend(b" " * (width - n))
    try:
        blocks = key.encrypt_blocks(buf)
    finally:
        _zero(buf)
    COUNTERS.add(encrypts=1)
    return CipherValue(DETERMINISTIC, n, blocks)


def _default_rng(n: int) -> bytes:
    return secrets.token_bytes(n)


def encrypt_prob(key: SymKey, v: PlainValue, rng: Optional[Callable[[int], bytes]] = None) -> CipherValue:
    """Probabilistic encoding: 8 random salt bytes on the left of every block,
    8 payload bytes on the right."""
    _check_key(key)
    v.check()
    rng = rng or _default_rng
    n = len(v.payload)
    chunks = max(1, -(-n // HALF))
    try:
        salt = rng(HALF * chunks)
    except Exception as exc:
        raise RngFailure(f"random source failed: {exc}") from exc
    if not isinstance(salt, (bytes, bytearray)) or len(salt) != HALF * chunks:
        raise RngFailure("random source returned the wrong number of bytes")
    buf = bytearray(BLOCK * chunks)
    payload = v.payload
    for i in range(chunks):
        chunk = payload[i * HALF : (i + 1) * HALF]
        base = i * BLOCK
        buf[base : base + HALF] = salt[i * HALF : (i + 1) * HALF]
        buf[base + HALF : base + HALF + len(chunk)] = chunk
        if len(chunk) < HALF:
            buf[base + HALF + len(chunk) : base + BLOCK] = b" " * (HALF - len(chunk))
    try:
        blocks = key.encrypt_blocks(buf)
    finally:
        _zero(buf)
    COUNTERS.add(encrypts=1)
    return CipherValue(PROBABILISTIC, n, blocks)


def encrypt(key: SymKey, v: PlainValue, mode: str, rng=None) -> CipherValue:
    if mode == DETERMINISTIC:
        return encrypt_det(key, v)
    if mode == PROBABILISTIC:
        return encrypt_prob(key, v, rng)
    raise ValueMalformed(f"unknown mode {mode!r}")


def decrypt(key: SymKey, c: CipherValue, logical_type) -> PlainValue:
    """Inverse of both encodings. No authentication: a wrong key yields
    garbage of the right shape."""
    _check_key(key)
    ltype = LogicalType.parse(logical_type)
    c.validate(ltype)
    plain = key.decrypt_blocks_into(c.blocks)
    try:
        if c.mode == DETERMINISTIC:
            if ltype.numeric:
                payload = plain[BLOCK - NUMERIC_BYTES : BLOCK]
            else:
                payload = plain[: c.plain_len]
        else:
            payload = bytearray()
            for base in range(0, len(plain), BLOCK):
                payload += plain[base + HALF : base + BLOCK]
            del payload[c.plain_len :]
    finally:
        _zero(plain)
    COUNTERS.add(decrypts=1)
    return PlainValue(ltype, payload)


_NUMERIC_BLOCK = struct.Struct(">8xq")
_BLOCKS = operator.attrgetter("blocks")
_PLAIN_LEN = operator.attrgetter("plain_len")


def decrypt_numeric_batch(key: SymKey, values: Iterable[CipherValue], logical_type, register=None) -> list:
    """Decrypt many single-block numeric values with one AES call.

    Both encodings keep an 8-byte numeric in the right half of a single block,
    so one decoder serves them. The shared plaintext buffer is zeroed before
    returning; ``register`` (if given) is called with it first so a runtime
    arena can track the region.
    """
    _check_key(key)
    ltype = LogicalType.parse(logical_type)
    if not ltype.numeric:
        raise ValueMalformed("batch decryption is for numeric columns")
    values = list(values)
    blob = b"".join(map(_BLOCKS, values))
    # every value holds at least one block, so equal total length means
    # exactly one block each
    if len(blob) != BLOCK * len(values) or (values and set(map(_PLAIN_LEN, values)) != {NUMERIC_BYTES}):
        raise CiphertextMalformed("numeric ciphertext must be one block with plain_len 8")
    plain = key.decrypt_blocks_into(blob)
    if register is not None:
        register(plain)
    try:
        if ltype.kind == "int64":
            out = [v for (v,) in _NUMERIC_BLOCK.iter_unpack(plain)]
        else:
            out = [ltype.from_scaled(v) for (v,) in _NUMERIC_BLOCK.iter_unpack(plain)]
    finally:
        wipe(plain)
    COUNTERS.add(decrypts=len(values))
    return out
