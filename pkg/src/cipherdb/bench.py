"""SUM benchmark: plaintext vs on-the-fly AES (both modes) vs Paillier.

The AES paths run ``SELECT SUM(v) FROM ...`` through the engine. The
plaintext path walks the same rows through the same chunked aggregate code
with the decryption step left out. The Paillier path multiplies the
ciphertexts together and decrypts the product once.
"""

from __future__ import annotations

import random
import statistics
import struct
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import gmpy2

from . import paillier
from .catalog import ColumnSpec, KeyBinding, TableSpec
from .cipher import DETERMINISTIC, PROBABILISTIC, SymKey
from .database import Database
from .engine.aggregate import AggState
from .engine.executor import BATCH
from .store import Row

PATHS = ("plaintext", "aes_det", "aes_prob", "paillier")
_BE = struct.Struct(">q")


@dataclass
class BenchReport:
    n_values: int
    trials: int
    warmup: int
    total: int
    medians_ms: Dict[str, float]
    samples_ms: Dict[str, List[float]]
    sums: Dict[str, int]
    paillier_client_decrypt_ms: float
    paillier_bits: int
    decrypt_samples_ms: List[float] = field(default_factory=list)

    @property
    def plaintext_ms(self):
        return self.medians_ms["plaintext"]

    @property
    def aes_det_ms(self):
        return self.medians_ms["aes_det"]

    @property
    def aes_prob_ms(self):
        return self.medians_ms["aes_prob"]

    @property
    def paillier_ms(self):
        return self.medians_ms["paillier"]

    def as_text(self) -> str:
        lines = [
            f"n_values\t{self.n_values}",
            f"trials\t{self.trials}",
            f"warmup\t{self.warmup}",
            f"paillier_bits\t{self.paillier_bits}",
            f"sum\t{self.total}",
        ]
        for p in PATHS:
            lines.append(f"{p}_ms\t{self.medians_ms[p]:.4f}")
        lines.append(f"paillier_client_decrypt_ms\t{self.paillier_client_decrypt_ms:.4f}")
        base = self.plaintext_ms or float("nan")
        lines.append(f"aes_det_over_plaintext\t{self.aes_det_ms / base:.3f}")
        lines.append(f"aes_prob_over_aes_det\t{self.aes_prob_ms / self.aes_det_ms:.3f}")
        lines.append(f"paillier_over_aes_det\t{self.paillier_ms / self.aes_det_ms:.3f}")
        lines.append(f"paillier_over_plaintext\t{self.paillier_ms / base:.3f}")
        lines.append("# raw samples: path<TAB>trial<TAB>ms")
        for p in PATHS:
            for i, ms in enumerate(self.samples_ms[p]):
                lines.append(f"{p}\t{i}\t{ms:.4f}")
        for i, ms in enumerate(self.decrypt_samples_ms):
            lines.append(f"paillier_client_decrypt\t{i}\t{ms:.4f}")
        return "\n".join(lines) + "\n"


def plaintext_sum(rows) -> int:
    """Chunked SUM over rows holding 8-byte big-endian payloads.

    Same shape as the engine's batched aggregate: snapshot the live rows,
    gather one column per chunk, decode, fold. Only decryption is missing.
    """
    st = AggState("SUM")
    live = [r for r in rows if r is not None]
    for start in range(0, len(live), BATCH):
        chunk = live[start : start + BATCH]
        blob = b"".join([r.values[0] for r in chunk])
        st.step_many_scaled([v for (v,) in _BE.iter_unpack(blob)])
    return st.result()


def _noise_pool(pk, size: int, rng: random.Random) -> list:
    pool = []
    for _ in range(size):
        while True:
            r = rng.randrange(1, pk.n)
            if gmpy2.gcd(r, pk.n) == 1:
                break
        pool.append(gmpy2.powmod(r, pk.n, pk.n2))
    return pool


def paillier_column(pk, values, rng: random.Random, pool_size: int = 64) -> list:
    """Encrypt ``values``; each noise term is r_i^n * r_j^n for a pair drawn
    from a pool of fresh r^n, which keeps 100k encryptions affordable."""
    pool = _noise_pool(pk, pool_size, rng)
    n2 = pk.n2
    out = []
    for m in values:
        rn = pool[rng.randrange(pool_size)] * pool[rng.randrange(pool_size)] % n2
        out.append(paillier.encrypt_with_noise(pk, m, rn))
    return out


def _time(fn):
    t0 = time.perf_counter()
    value = fn()
    return value, (time.perf_counter() - t0) * 1000.0


def bench_sum(
    n_values: int,
    trials: int = 5,
    *,
    warmup: int = 1,
    seed: Optional[int] = None,
    paillier_bits: int = 2048,
    max_value: int = 2**32,
) -> BenchReport:
    if n_values < 1:
        raise ValueError("n_values must be at least 1")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = random.Random(seed)
    values = [rng.randrange(max_value) for _ in range(n_values)]

    db = Database()
    key = SymKey.generate()
    for name, mode in (("BenchDet", DETERMINISTIC), ("BenchProb", PROBABILISTIC)):
        db.create_table(TableSpec(name, [ColumnSpec("v", "int64", mode)]))
        db.insert_rows(name, [(v,) for v in values], KeyBinding({"*": key.copy()}))
    plain_rows = [Row((_BE.pack(v),), False) for v in values]
    kp = paillier.generate_keypair(paillier_bits)
    pk, sk = kp.public, kp.private
    pcol = paillier_column(pk, values, rng)

    def run_aes(table):
        rs = db.execute(f"SELECT SUM(v) FROM {table}", KeyBinding({"*": key.copy()}))
        return rs.rows[0][0]

    def run_paillier():
        return paillier.paillier_decrypt(sk, paillier.paillier_sum(pk, pcol))

    runners = {
        "plaintext": lambda: plaintext_sum(plain_rows),
        "aes_det": lambda: run_aes("BenchDet"),
        "aes_prob": lambda: run_aes("BenchProb"),
        "paillier": run_paillier,
    }

    # correctness gate before any timing
    expected = sum(values)
    sums = {p: int(fn()) for p, fn in runners.items()}
    bad = {p: s for p, s in sums.items() if s != expected}
    if bad:
        raise AssertionError(f"SUM paths disagree with {expected}: {bad}")

    samples: Dict[str, List[float]] = {p: [] for p in PATHS}
    for trial in range(warmup + trials):
        # interleave paths so drift hits all of them alike
        for p in PATHS:
            got, ms = _time(runners[p])
            if got != expected:
                raise AssertionError(f"{p} returned {got}, expected {expected}")
            if trial >= warmup:
                samples[p].append(ms)

    one = pcol[0]
    dec = []
    for _ in range(max(3, trials)):
        _, ms = _time(lambda: paillier.paillier_decrypt(sk, one))
        dec.append(ms)

    key.wipe()
    db.close()
    return BenchReport(
        n_values,
        trials,
        warmup,
        expected,
        {p: statistics.median(s) for p, s in samples.items()},
        samples,
        sums,
        statistics.median(dec),
        paillier_bits,
        dec,
    )
