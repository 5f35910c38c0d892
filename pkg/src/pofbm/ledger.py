"""Operation counting used as the machine-independent cost metric."""
from __future__ import annotations

from dataclasses import dataclass, field
import math

FIELDS = ("euler_steps", "fft_ops", "resample_ops", "dense_ops")
DEFAULT_WEIGHTS = {"euler_steps": 1.0, "fft_ops": 1.0, "resample_ops": 1.0, "dense_ops": 0.0}


@dataclass
class CostLedger:
    """Running operation counts.

    ``fft_ops`` accumulates ``n * log2(n)`` per transform of length ``n``;
    ``dense_ops`` counts multiply-adds spent in dense triangular products
    (the exact-path map).  ``total`` is the weighted sum of all four; the
    dense weight defaults to zero because the exact-path map also books its
    nominal full-length FFT under ``fft_ops``.
    """

    euler_steps: int = 0
    fft_ops: float = 0.0
    resample_ops: int = 0
    dense_ops: float = 0.0
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))

    def add_euler(self, count):
        self.euler_steps += int(count)

    def add_fft(self, n, count=1):
        if n > 1:
            self.fft_ops += count * n * math.log2(n)

    def add_resample(self, count):
        self.resample_ops += int(count)

    def add_dense(self, count):
        self.dense_ops += float(count)

    @property
    def total(self) -> float:
        return sum(self.weights[name] * getattr(self, name) for name in FIELDS)

    def merge(self, other: "CostLedger") -> "CostLedger":
        for name in FIELDS:
            setattr(self, name, getattr(self, name) + getattr(other, name))
        return self

    def as_dict(self) -> dict:
        out = {name: getattr(self, name) for name in FIELDS}
        out["total"] = self.total
        return out

    @classmethod
    def combined(cls, ledgers, weights=None) -> "CostLedger":
        out = cls() if weights is None else cls(weights=dict(weights))
        for item in ledgers:
            out.merge(item)
        return out


__all__ = ["CostLedger", "FIELDS", "DEFAULT_WEIGHTS"]
