"""Per-query runtime arena: every key and decrypted buffer of one execution.

Closing the arena zeroes all registered buffers, wipes adopted keys and
drops run-time tables and variables. The engine closes it in a ``finally``
so error paths are covered too.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

from .. import cipher
from ..cipher import REGISTRY, CipherValue, LogicalType, PlainValue, SymKey, wipe
from ..store import unpack_row


@dataclass
class ExecStats:
    decrypts: int = 0
    encrypts: int = 0


class RuntimeArena:
    def __init__(self, registry=REGISTRY, fault: Optional[Callable[[str], None]] = None, rng=None):
        self.registry = registry
        self.fault = fault
        self.rng = rng
        self.stats = ExecStats()
        self.regions: List[bytearray] = []
        self.keys: List[SymKey] = []
        self.tables: Dict[str, list] = {}
        self.variables: dict = {}
        self.closed = False

    # -- registration -------------------------------------------------------

    def register(self, buf: bytearray) -> bytearray:
        self.registry.register(buf)
        self.regions.append(buf)
        return buf

    def adopt_key(self, key: SymKey) -> SymKey:
        if not any(k is key for k in self.keys):
            self.keys.append(key)
            self.register(key.material)
        return key

    def adopt_keys(self, keys) -> None:
        for k in keys:
            self.adopt_key(k)

    def runtime_table(self, name: str) -> list:
        return self.tables.setdefault(name, [])

    def checkpoint(self, stage: str) -> None:
        if self.fault is not None:
            self.fault(stage)

    # -- crypto through the arena ----------------------------------------------

    def decrypt(self, key: SymKey, cv: CipherValue, ltype: LogicalType):
        pv = cipher.decrypt(key, cv, ltype)
        self.register(pv.payload)
        try:
            return pv.value()
        finally:
            wipe(pv.payload)
            self.stats.decrypts += 1

    def decrypt_row(self, key: SymKey, cv: CipherValue, spec) -> list:
        pv = cipher.decrypt(key, cv, "varchar")
        self.register(pv.payload)
        try:
            return unpack_row(spec, pv.payload)
        finally:
            wipe(pv.payload)
            self.stats.decrypts += 1

    def decrypt_batch(self, key: SymKey, cvs, ltype: LogicalType) -> list:
        out = cipher.decrypt_numeric_batch(key, cvs, LogicalType("int64"), register=self.register)
        self.stats.decrypts += len(out)
        return out

    def encrypt_plain(self, key: SymKey, pv: PlainValue, mode: str = cipher.DETERMINISTIC) -> CipherValue:
        self.register(pv.payload)
        try:
            return cipher.encrypt(key, pv, mode, self.rng)
        finally:
            wipe(pv.payload)
            self.stats.encrypts += 1

    def encrypt(self, key: SymKey, value, ltype: LogicalType, mode: str) -> CipherValue:
        return self.encrypt_plain(key, PlainValue.of(ltype, value), mode)

    # -- teardown ---------------------------------------------------------------

    def close(self) -> None:
        for key in self.keys:
            key.wipe()
        for buf in self.regions:
            wipe(buf)
        for t in self.tables.values():
            t.clear()
        self.tables.clear()
        self.variables.clear()
        self.closed = True

    def all_zero(self) -> bool:
        """Test hook: every region this arena ever registered reads as zero."""
        return all(not any(buf) for buf in self.regions)

    def live_count(self) -> int:
        return sum(1 for buf in self.regions if self.registry.is_registered(buf))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
