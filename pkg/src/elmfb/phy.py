"""
Superimposed-feedback signal model.

A user spreads its downlink CSI ``h`` (length N) over M symbols with a
Walsh spreading matrix and adds it to its uplink QPSK data ``d``::

    x = sqrt(rho*Eu/N) * P @ h + sqrt((1 - rho)*Eu) * d

After the matched-filter front end the base station sees the N x M matrix
``r = g x^T + n`` and forms the coarse estimate ``xhat = (g^+ r)^T``.

Vector arguments may also be 2-D with one sample per column.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .numerics import DimensionError, as_generator, gaussian_complex

__all__ = [
    "ChannelRealization",
    "DegenerateChannelError",
    "PowerProfile",
    "SpreadingMatrix",
    "build_walsh",
    "coarse_estimate",
    "despread",
    "draw_channel",
    "qpsk_demodulate",
    "qpsk_modulate",
    "superimpose",
    "uplink_transmit",
]

_SQRT_HALF = np.sqrt(0.5)


class DegenerateChannelError(ValueError):
    """Uplink channel too weak to invert."""


@dataclass(frozen=True)
class SpreadingMatrix:
    """First N Walsh columns of length M; ``P.T @ P == M * I_N``."""

    P: np.ndarray

    @property
    def M(self) -> int:
        return self.P.shape[0]

    @property
    def N(self) -> int:
        return self.P.shape[1]


@dataclass(frozen=True)
class PowerProfile:
    """Power split between the CSI branch (``rho``) and data branch."""

    rho: float = 0.2
    Eu: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.Eu <= 0:
            raise ValueError(f"Eu must be positive, got {self.Eu}")

    def csi_amplitude(self, N: int) -> float:
        return float(np.sqrt(self.rho * self.Eu / N))

    @property
    def data_amplitude(self) -> float:
        return float(np.sqrt((1.0 - self.rho) * self.Eu))


@dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray
    g: np.ndarray
    sigma2: float = 0.0

    def __post_init__(self):
        if self.h.shape != self.g.shape:
            raise DimensionError(f"h and g differ in shape: {self.h.shape} vs {self.g.shape}")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=32)
def build_walsh(M: int, N: int) -> SpreadingMatrix:
    """Sylvester-ordered Hadamard matrix of order M, truncated to N columns."""
    if not _is_pow2(M) or M < 2:
        raise ValueError(f"M must be a power of two >= 2, got {M}")
    if not 0 < N < M:
        raise ValueError(f"need 0 < N < M, got N={N}, M={M}")
    H = np.ones((1, 1), dtype=np.int64)
    while H.shape[0] < M:
        H = np.block([[H, H], [H, -H]])
    P = H[:, :N].astype(np.float64)
    P.flags.writeable = False
    return SpreadingMatrix(P)


def qpsk_modulate(bits) -> np.ndarray:
    """Gray-mapped unit-energy QPSK.

    Bit pair ``(b0, b1)`` maps to ``((1 - 2 b0) + 1j (1 - 2 b1)) / sqrt(2)``,
    so ``00 -> (1+1j)/sqrt(2)`` and ``11 -> (-1-1j)/sqrt(2)``.
    """
    bits = np.asarray(bits)
    if bits.shape[0] % 2:
        raise ValueError(f"QPSK needs an even number of bits, got {bits.shape[0]}")
    b = bits.astype(np.int8).reshape((-1, 2) + bits.shape[1:])
    re = 1 - 2 * b[:, 0]
    im = 1 - 2 * b[:, 1]
    return (re + 1j * im) * _SQRT_HALF


def qpsk_demodulate(symbols) -> np.ndarray:
    """Hard decisions, inverse of :func:`qpsk_modulate`; zero decides bit 0."""
    s = np.asarray(symbols)
    out = np.empty((2 * s.shape[0],) + s.shape[1:], dtype=np.uint8)
    out[0::2] = s.real < 0
    out[1::2] = s.imag < 0
    return out


def superimpose(h, d, P: SpreadingMatrix, pw: PowerProfile) -> np.ndarray:
    """Transmit vector ``x`` of length M."""
    h = np.asarray(h)
    d = np.asarray(d)
    if h.shape[0] != P.N or d.shape[0] != P.M or h.shape[1:] != d.shape[1:]:
        raise DimensionError(f"h {h.shape} / d {d.shape} do not fit P {P.P.shape}")
    return pw.csi_amplitude(P.N) * (P.P @ h) + pw.data_amplitude * d


def uplink_transmit(x, ch: ChannelRealization, rng) -> np.ndarray:
    """Received N x M matrix ``g x^T + n`` with CN(0, sigma2) noise."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise DimensionError("uplink_transmit takes a single length-M vector")
    r = np.outer(ch.g, x)
    if ch.sigma2 > 0:
        r = r + gaussian_complex(rng, r.shape, ch.sigma2)
    return r


def coarse_estimate(r, g) -> np.ndarray:
    """Matched-filter estimate ``(g^+ r)^T`` with ``g^+ = g^H / ||g||^2``."""
    r = np.asarray(r)
    g = np.asarray(g)
    if r.shape[0] != g.shape[0]:
        raise DimensionError(f"r has {r.shape[0]} rows but g has length {g.shape[0]}")
    gg = np.vdot(g, g).real
    if np.sqrt(gg) < 1e-12:
        raise DegenerateChannelError(f"uplink channel norm {np.sqrt(gg):.3e} is below 1e-12")
    return (g.conj() @ r) / gg


def despread(xhat, P: SpreadingMatrix) -> np.ndarray:
    """``P^T xhat``."""
    xhat = np.asarray(xhat)
    if xhat.shape[0] != P.M:
        raise DimensionError(f"expected {P.M} rows, got {xhat.shape[0]}")
    return P.P.T @ xhat


def draw_channel(rng, N: int, sigma2: float = 0.0) -> ChannelRealization:
    """Downlink and uplink CSI, both CN(0, 1/N) per entry."""
    gen = as_generator(rng)
    h = gaussian_complex(gen, N, 1.0 / N)
    g = gaussian_complex(gen, N, 1.0 / N)
    return ChannelRealization(h=h, g=g, sigma2=sigma2)
