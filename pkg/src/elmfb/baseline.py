"""Non-learned superimposed-feedback receiver: despread, cancel, detect."""

from __future__ import annotations

import numpy as np

from .numerics import DimensionError
from .phy import PowerProfile, SpreadingMatrix

__all__ = ["baseline_receive"]


def baseline_receive(xhat, P: SpreadingMatrix, pw: PowerProfile):
    """Despreading CSI estimate followed by one cancellation pass.

    Parameters
    ----------
    xhat : ndarray, shape (M,) or (M, K)
        Coarse estimate(s) of the transmitted vector.
    P : SpreadingMatrix
    pw : PowerProfile
        ``rho`` must lie strictly inside (0, 1).

    Returns
    -------
    h_hat : ndarray, shape (N,) or (N, K)
        ``P^T xhat / (M sqrt(rho Eu / N))``, unbiased for ``h``.
    d_hat : ndarray, shape (M,) or (M, K)
        Soft data estimate after removing the re-spread CSI estimate and
        undoing the data-branch gain. Feed to ``qpsk_demodulate`` for bits.
    """
    if pw.rho <= 0.0:
        raise ValueError("rho = 0 leaves no CSI branch to estimate")
    if pw.rho >= 1.0:
        raise ValueError("rho = 1 leaves no data branch to detect")
    xhat = np.asarray(xhat)
    if xhat.shape[0] != P.M:
        raise DimensionError(f"expected {P.M} rows, got {xhat.shape[0]}")

    a = pw.csi_amplitude(P.N)
    h_hat = (P.P.T @ xhat) / (P.M * a)
    d_hat = (xhat - a * (P.P @ h_hat)) / pw.data_amplitude
    return h_hat, d_hat
