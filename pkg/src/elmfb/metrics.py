"""
Link-quality metrics and closed-form overhead accounting.

The overhead figures count the learned receiver against a real-valued
fully-connected reference network whose subnets have twice the input,
hidden and output widths. Storage assumes 4-byte floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "BER_BIT_CAP",
    "BER_ERROR_FLOOR",
    "MB",
    "MetricsRecord",
    "OverheadReport",
    "accumulate_ber",
    "nmse",
    "overhead_report",
    "snr_to_sigma2",
]

BER_ERROR_FLOOR = 1000
BER_BIT_CAP = 10**8
MB = 1024**2


def snr_to_sigma2(snr_db: float, Eu: float = 1.0) -> float:
    """Noise variance for a given SNR = 10 log10(Eu / sigma2). ``inf`` gives 0."""
    if Eu <= 0:
        raise ValueError("Eu must be positive")
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return Eu * 10.0 ** (-snr_db / 10.0)


def nmse(h_true, h_est):
    """``||h_est - h_true||^2 / ||h_true||^2`` for one realization.

    2-D inputs are treated column-wise and return one ratio per column.
    """
    h_true = np.asarray(h_true)
    h_est = np.asarray(h_est)
    if h_true.shape != h_est.shape:
        raise ValueError(f"shape mismatch: {h_true.shape} vs {h_est.shape}")
    err = h_est - h_true
    num = np.sum(err.real**2 + err.imag**2, axis=0)
    den = np.sum(h_true.real**2 + h_true.imag**2, axis=0)
    if np.any(den == 0):
        raise ValueError("true CSI has zero norm")
    out = num / den
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class MetricsRecord:
    """Sufficient statistics for one (SNR, method) cell."""

    snr_db: float
    method: str
    nmse_sum: float = 0.0
    nmse_count: int = 0
    bit_errors: int = 0
    bits_total: int = 0

    def add_nmse(self, values) -> "MetricsRecord":
        values = np.atleast_1d(np.asarray(values, dtype=float))
        return replace(
            self,
            nmse_sum=math.fsum([self.nmse_sum, *values.tolist()]),
            nmse_count=self.nmse_count + values.size,
        )

    def merge(self, other: "MetricsRecord") -> "MetricsRecord":
        if (self.snr_db, self.method) != (other.snr_db, other.method):
            raise ValueError("cannot merge records of different cells")
        return replace(
            self,
            nmse_sum=self.nmse_sum + other.nmse_sum,
            nmse_count=self.nmse_count + other.nmse_count,
            bit_errors=self.bit_errors + other.bit_errors,
            bits_total=self.bits_total + other.bits_total,
        )

    @property
    def nmse(self) -> float:
        return self.nmse_sum / self.nmse_count if self.nmse_count else math.nan

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_total if self.bits_total else math.nan


def accumulate_ber(
    rec: MetricsRecord,
    tx_bits,
    rx_bits,
    error_floor: int = BER_ERROR_FLOOR,
    bit_cap: int = BER_BIT_CAP,
):
    """Add one batch of bit decisions; returns ``(record, stop)``.

    ``stop`` turns true once `error_floor` errors have been seen or
    `bit_cap` bits have been tested.
    """
    tx = np.asarray(tx_bits)
    rx = np.asarray(rx_bits)
    if tx.shape != rx.shape:
        raise ValueError(f"bit count mismatch: {tx.shape} vs {rx.shape}")
    errors = int(np.count_nonzero(tx != rx))
    rec = replace(rec, bit_errors=rec.bit_errors + errors, bits_total=rec.bits_total + tx.size)
    stop = rec.bit_errors >= error_floor or rec.bits_total >= bit_cap
    return rec, stop


@dataclass(frozen=True)
class OverheadReport:
    M: int
    N: int
    proposed_params: int
    ref_params: int
    proposed_bytes: int
    ref_bytes: int
    proposed_mults: int
    ref_mults: int
    proposed_adds: int
    ref_adds: int

    @property
    def proposed_mb(self) -> float:
        return self.proposed_bytes / MB

    @property
    def ref_mb(self) -> float:
        return self.ref_bytes / MB

    def rows(self):
        return [
            ("training parameters", self.ref_params, self.proposed_params),
            ("storage (bytes)", self.ref_bytes, self.proposed_bytes),
            ("storage (MB)", f"{self.ref_mb:.3f}", f"{self.proposed_mb:.3f}"),
            ("real multiplications", self.ref_mults, self.proposed_mults),
            ("real additions", self.ref_adds, self.proposed_adds),
        ]

    def format_table(self) -> str:
        body = [("", "reference DL", "proposed ELM")] + [
            (name, f"{r:,}" if isinstance(r, int) else r, f"{p:,}" if isinstance(p, int) else p)
            for name, r, p in self.rows()
        ]
        w0 = max(len(r[0]) for r in body)
        w1 = max(len(str(r[1])) for r in body)
        w2 = max(len(str(r[2])) for r in body)
        lines = [f"M = {self.M}, N = {self.N}"]
        lines += [f"{a:<{w0}}  {b:>{w1}}  {c:>{w2}}" for a, b, c in body]
        return "\n".join(lines)


def overhead_report(M: int, N: int) -> OverheadReport:
    """Parameter, storage and per-inference arithmetic counts, exact integers."""
    if M <= 0 or N <= 0:
        raise ValueError("M and N must be positive")
    M, N = int(M), int(N)
    sq = M * M + N * N
    # complex Phi (2 x 4 bytes each) plus one real 8M x M pool (4 bytes each)
    proposed_params = 16 * sq
    proposed_bytes = 128 * sq + max(32 * M * M, 32 * N * N)
    ref_params = 128 * sq + 36 * M + 36 * N
    return OverheadReport(
        M=M,
        N=N,
        proposed_params=proposed_params,
        ref_params=ref_params,
        proposed_bytes=proposed_bytes,
        ref_bytes=4 * ref_params,
        proposed_mults=96 * sq,
        ref_mults=128 * sq,
        proposed_adds=96 * sq - 4 * (M + N),
        ref_adds=128 * sq,
    )
