"""Streaming one-pass aggregates over run-time plaintext.

Accumulators hold scaled integers (decimals multiplied by 10**scale) so SUM is
exact; AVG/VAR/STD are computed from exact fractions and only turned into
floats at the end. Overflow of the signed 128-bit range is an error.
"""

from __future__ import annotations

import math
from decimal import Decimal
from fractions import Fraction
from typing import Iterable

from ..cipher import LogicalType
from ..errors import ArithmeticOverflow

LIMIT = 2**127
FUNCTIONS = ("COUNT", "SUM", "AVG", "VAR", "STD")


class AggState:
    __slots__ = ("fn", "scale", "count", "total", "sumsq", "_squares")

    def __init__(self, fn: str, scale: int = 0):
        if fn not in FUNCTIONS:
            raise ValueError(f"unknown aggregate {fn}")
        self.fn = fn
        self.scale = scale
        self.count = 0
        self.total = 0
        self.sumsq = 0
        self._squares = fn in ("VAR", "STD")

    def step_scaled(self, n: int) -> None:
        self.count += 1
        self.total += n
        if self._squares:
            self.sumsq += n * n
            if self.sumsq >= LIMIT:
                raise ArithmeticOverflow(f"{self.fn}: sum of squares exceeds 128 bits")
        if not -LIMIT <= self.total < LIMIT:
            raise ArithmeticOverflow(f"{self.fn}: sum exceeds 128 bits")

    def step_many_scaled(self, values: Iterable[int]) -> None:
        values = values if isinstance(values, list) else list(values)
        self.count += len(values)
        self.total += sum(values)
        if self._squares:
            self.sumsq += sum(v * v for v in values)
            if self.sumsq >= LIMIT:
                raise ArithmeticOverflow(f"{self.fn}: sum of squares exceeds 128 bits")
        if not -LIMIT <= self.total < LIMIT:
            raise ArithmeticOverflow(f"{self.fn}: sum exceeds 128 bits")

    def count_only(self, n: int = 1) -> None:
        self.count += n

    def exact(self):
        """Exact result: int for COUNT/SUM of int64, Decimal for decimal SUM,
        Fraction for AVG/VAR, (Fraction, 'sqrt') marker for STD."""
        if self.fn == "COUNT":
            return self.count
        unit = 10**self.scale
        if self.fn == "SUM":
            return self.total if self.scale == 0 else Decimal(self.total).scaleb(-self.scale)
        if self.fn == "AVG":
            return Fraction(self.total, self.count * unit)
        n = self.count
        var = Fraction(n * self.sumsq - self.total * self.total, n * n * unit * unit)
        return var

    def result(self, to_int: bool = False):
        value = self.exact()
        if self.fn == "STD":
            if to_int:
                return math.isqrt(math.floor(value))
            return math.sqrt(value)
        if to_int:
            return int(value)
        if isinstance(value, Fraction):
            return float(value)
        return value


def new_state(fn: str, ltype: LogicalType = None) -> AggState:
    scale = ltype.scale if ltype is not None and ltype.kind == "decimal" else 0
    return AggState(fn, scale)


def aggregate_step(acc: AggState, value) -> AggState:
    """Fold one plaintext value into ``acc`` (COUNT ignores the value)."""
    if acc.fn == "COUNT":
        acc.count_only()
        return acc
    if isinstance(value, Decimal):
        n = value.scaleb(acc.scale)
        if n != n.to_integral_value():
            raise ValueError(f"{value} has more than {acc.scale} fractional digits")
        acc.step_scaled(int(n))
    else:
        acc.step_scaled(int(value) * 10**acc.scale)
    return acc
