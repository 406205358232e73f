"""
Four-subnet cascaded ELM receiver.

Subnets run in the order CSI-ELM1 -> DET-ELM1 -> CSI-ELM2 -> DET-ELM2,
with deterministic interference cancellation between them. Each subnet is
a complex-valued single-hidden-layer network with a *linear* activation::

    y = Phi @ (W @ BN(u) + b)

``W`` and ``b`` are fixed real slices of one shared random pool; only the
output weights ``Phi`` are trained, by least squares against the labels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .numerics import DimensionError, RngStream, gaussian_real_matrix, svd_truncated
from .phy import PowerProfile, SpreadingMatrix, despread

__all__ = [
    "BN_EPSILON",
    "BnStats",
    "CascadeReceiver",
    "ElmSubnet",
    "NotTrainedError",
    "SharedWeightPool",
    "TrainingSet",
    "bn_apply",
    "bn_fit",
    "cancel_csi",
    "cancel_ulus",
    "cascade_stages",
    "hidden_output",
    "infer",
    "slice_weights",
    "train_cascade",
    "train_output_weights",
]

BN_EPSILON = 1e-8
HIDDEN_FACTOR = 8
POOL_STREAM = 1


class NotTrainedError(RuntimeError):
    """A subnet was used before its BN statistics or output weights exist."""


@dataclass(frozen=True)
class SharedWeightPool:
    """Real ``(8M, M)`` matrix from which every subnet's W and b are sliced.

    Only ``seed`` and ``M`` need to be stored; :meth:`generate` rebuilds
    the pool bit-for-bit.
    """

    W: np.ndarray
    seed: int

    @classmethod
    def generate(cls, seed: int, M: int) -> "SharedWeightPool":
        W = gaussian_real_matrix(RngStream(seed, POOL_STREAM), HIDDEN_FACTOR * M, M)
        W.flags.writeable = False
        return cls(W=W, seed=int(seed))

    @property
    def M(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class BnStats:
    mean: np.ndarray
    var: np.ndarray
    epsilon: float = BN_EPSILON

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class ElmSubnet:
    """One ELM subnet. ``kind`` is ``"csi"`` or ``"det"``."""

    kind: str
    W: np.ndarray
    b: np.ndarray
    bn: Optional[BnStats] = None
    Phi: Optional[np.ndarray] = None

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W.shape[0]

    @property
    def trained(self) -> bool:
        return self.bn is not None and self.Phi is not None

    def hidden(self, u) -> np.ndarray:
        return hidden_output(self, u)

    def __call__(self, u) -> np.ndarray:
        if self.Phi is None:
            raise NotTrainedError(f"{self.kind} subnet has no output weights")
        return self.Phi @ hidden_output(self, u)


@dataclass(frozen=True)
class CascadeReceiver:
    csi1: ElmSubnet
    det1: ElmSubnet
    csi2: ElmSubnet
    det2: ElmSubnet
    P: SpreadingMatrix
    pw: PowerProfile
    pool_seed: int = 0

    @property
    def subnets(self) -> tuple:
        return (self.csi1, self.det1, self.csi2, self.det2)

    @property
    def trained(self) -> bool:
        return all(s.trained for s in self.subnets)

    def trainable_parameter_count(self) -> int:
        """Complex scalars in Phi_1..Phi_4."""
        return sum(s.Phi.size for s in self.subnets if s.Phi is not None)


@dataclass
class TrainingSet:
    """Coarse estimates and labels split into the four training blocks.

    ``inputs[k]`` is M x Nt for subnet k (CSI1, DET1, CSI2, DET2);
    ``labels_h[i]`` is N x Nt and ``labels_d[i]`` is M x Nt, i = 0, 1.
    """

    inputs: list
    labels_h: list
    labels_d: list
    meta: dict = field(default_factory=dict)

    @property
    def Nt(self) -> int:
        return self.inputs[0].shape[1]

    def validate(self, M: int, N: int) -> None:
        if len(self.inputs) != 4 or len(self.labels_h) != 2 or len(self.labels_d) != 2:
            raise DimensionError("training set needs 4 input blocks and 2+2 label blocks")
        Nt = self.Nt
        for k, X in enumerate(self.inputs):
            if X.shape != (M, Nt):
                raise DimensionError(f"input block {k + 1} has shape {X.shape}, expected {(M, Nt)}")
        for i in range(2):
            if self.labels_h[i].shape != (N, Nt):
                raise DimensionError(f"T_h block {i + 1} has shape {self.labels_h[i].shape}")
            if self.labels_d[i].shape != (M, Nt):
                raise DimensionError(f"T_d block {i + 1} has shape {self.labels_d[i].shape}")


def slice_weights(pool: SharedWeightPool, in_dim: int):
    """Input weights and hidden bias for a subnet with `in_dim` inputs.

    ``W_slice`` is the top-left ``(8*in_dim, in_dim)`` block of the pool and
    ``b_slice`` the first ``8*in_dim`` entries of the pool read in row-major
    order. The bias must not be a column of ``W_slice``: for the full-width
    slice that would tie the intercept to the last input feature and bias
    every decision on it.
    """
    rows, cols = pool.W.shape
    hid = HIDDEN_FACTOR * in_dim
    if in_dim <= 0 or hid > rows or in_dim > cols:
        raise ValueError(f"in_dim={in_dim} does not fit a {rows}x{cols} pool")
    return pool.W[:hid, :in_dim], pool.W.reshape(-1)[:hid]


def bn_fit(batch) -> BnStats:
    """Per-feature complex mean and variance ``E|x - mean|^2`` over columns."""
    batch = np.asarray(batch)
    if batch.ndim != 2 or batch.shape[1] == 0 or batch.shape[0] == 0:
        raise ValueError(f"bn_fit needs a nonempty (features, samples) batch, got {batch.shape}")
    mean = batch.mean(axis=1)
    dev = batch - mean[:, None]
    var = np.mean(dev.real**2 + dev.imag**2, axis=1)
    return BnStats(mean=mean, var=var)


def bn_apply(stats: BnStats, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[0] != stats.dim:
        raise DimensionError(f"BN fitted on {stats.dim} features, got {x.shape[0]}")
    scale = 1.0 / np.sqrt(stats.var + stats.epsilon)
    if x.ndim == 1:
        return (x - stats.mean) * scale
    return (x - stats.mean[:, None]) * scale[:, None]


def _real_matmul(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    # real (a, b) @ complex (b, K) as one real GEMM on the interleaved view
    X = np.ascontiguousarray(X, dtype=np.complex128)
    out = W @ X.view(np.float64)
    return np.ascontiguousarray(out).view(np.complex128)


def hidden_output(subnet: ElmSubnet, u) -> np.ndarray:
    """``W @ BN(u) + b`` with the subnet's frozen BN statistics."""
    if subnet.bn is None:
        raise NotTrainedError(f"{subnet.kind} subnet has no BN statistics")
    u = np.asarray(u)
    z = bn_apply(subnet.bn, u)
    if z.ndim == 1:
        return _real_matmul(subnet.W, z[:, None])[:, 0] + subnet.b
    return _real_matmul(subnet.W, z) + subnet.b[:, None]


def train_output_weights(H, T, ridge: float = 0.0, tol: float | None = None) -> np.ndarray:
    """Least-squares output weights ``Phi = T @ pinv(H)``.

    Evaluated through the truncated SVD ``H = U S V^H`` as
    ``(T V) S^-1 U^H``, which never materialises the pseudo-inverse.
    A positive `ridge` replaces ``1/s`` with ``s / (s^2 + ridge)``.
    """
    H = np.asarray(H)
    T = np.asarray(T)
    if H.ndim != 2 or T.ndim != 2 or H.shape[1] != T.shape[1]:
        raise DimensionError(f"H {H.shape} and T {T.shape} must share the sample axis")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    if H.shape[1] < H.shape[0]:
        warnings.warn(
            f"only {H.shape[1]} samples for {H.shape[0]} hidden neurons; "
            "the least-squares system is underdetermined",
            RuntimeWarning,
            stacklevel=2,
        )
    u, s, vh = svd_truncated(H, tol)
    filt = 1.0 / s if ridge == 0 else s / (s * s + ridge)
    return ((T @ vh.conj().T) * filt) @ u.conj().T


def cancel_csi(xhat, h_tilde, P: SpreadingMatrix, pw: PowerProfile) -> np.ndarray:
    """Remove the spread CSI estimate: ``xhat - sqrt(rho Eu/N) P h_tilde``."""
    xhat = np.asarray(xhat)
    h_tilde = np.asarray(h_tilde)
    if xhat.shape[0] != P.M or h_tilde.shape[0] != P.N or xhat.shape[1:] != h_tilde.shape[1:]:
        raise DimensionError(f"xhat {xhat.shape} / h_tilde {h_tilde.shape} do not fit P {P.P.shape}")
    return xhat - pw.csi_amplitude(P.N) * (P.P @ h_tilde)


def cancel_ulus(xhat, d_tilde, P: SpreadingMatrix, pw: PowerProfile) -> np.ndarray:
    """Remove the data estimate, then despread: ``P^T (xhat - sqrt((1-rho) Eu) d_tilde)``."""
    xhat = np.asarray(xhat)
    d_tilde = np.asarray(d_tilde)
    if xhat.shape != d_tilde.shape or xhat.shape[0] != P.M:
        raise DimensionError(f"xhat {xhat.shape} / d_tilde {d_tilde.shape} do not fit P {P.P.shape}")
    return P.P.T @ (xhat - pw.data_amplitude * d_tilde)


def cascade_stages(xhat, subnets, P: SpreadingMatrix, pw: PowerProfile) -> dict:
    """Run the cascade as far as the given (trained) subnets reach.

    Returns a dict with whichever of ``h_hat1, h_tilde1, d_hat1, d_tilde1,
    h_hat2, h_tilde2, d_hat2, d_tilde2`` were produced.
    """
    out = {"h_hat1": despread(xhat, P)}
    if len(subnets) >= 1:
        out["h_tilde1"] = subnets[0](out["h_hat1"])
    if len(subnets) >= 2:
        out["d_hat1"] = cancel_csi(xhat, out["h_tilde1"], P, pw)
        out["d_tilde1"] = subnets[1](out["d_hat1"])
    if len(subnets) >= 3:
        out["h_hat2"] = cancel_ulus(xhat, out["d_tilde1"], P, pw)
        out["h_tilde2"] = subnets[2](out["h_hat2"])
    if len(subnets) >= 4:
        out["d_hat2"] = cancel_csi(xhat, out["h_tilde2"], P, pw)
        out["d_tilde2"] = subnets[3](out["d_hat2"])
    return out


def _fit_subnet(subnet: ElmSubnet, u, T, ridge: float) -> ElmSubnet:
    bn = bn_fit(u)
    staged = replace(subnet, bn=bn)
    H = hidden_output(staged, u)
    Phi = train_output_weights(H, T, ridge=ridge)
    return replace(staged, Phi=Phi)


def train_cascade(
    ts: TrainingSet,
    pool: SharedWeightPool,
    P: SpreadingMatrix,
    pw: PowerProfile,
    ridge: float = 0.0,
) -> CascadeReceiver:
    """Train the four subnets in turn, freezing each before the next.

    Block k of the training set feeds subnet k through every earlier
    (already frozen) stage of the cascade.
    """
    M, N = P.M, P.N
    ts.validate(M, N)
    if pool.M != M:
        raise DimensionError(f"weight pool built for M={pool.M}, spreading matrix has M={M}")

    Wn, bn_ = slice_weights(pool, N)
    Wm, bm = slice_weights(pool, M)
    csi1 = ElmSubnet("csi", Wn, bn_)
    det1 = ElmSubnet("det", Wm, bm)
    csi2 = ElmSubnet("csi", Wn, bn_)
    det2 = ElmSubnet("det", Wm, bm)

    X1, X2, X3, X4 = ts.inputs

    csi1 = _fit_subnet(csi1, despread(X1, P), ts.labels_h[0], ridge)

    st = cascade_stages(X2, [csi1], P, pw)
    d_hat1 = cancel_csi(X2, st["h_tilde1"], P, pw)
    det1 = _fit_subnet(det1, d_hat1, ts.labels_d[0], ridge)
    del st, d_hat1

    st = cascade_stages(X3, [csi1, det1], P, pw)
    h_hat2 = cancel_ulus(X3, st["d_tilde1"], P, pw)
    csi2 = _fit_subnet(csi2, h_hat2, ts.labels_h[1], ridge)
    del st, h_hat2

    st = cascade_stages(X4, [csi1, det1, csi2], P, pw)
    d_hat2 = cancel_csi(X4, st["h_tilde2"], P, pw)
    det2 = _fit_subnet(det2, d_hat2, ts.labels_d[1], ridge)

    return CascadeReceiver(csi1, det1, csi2, det2, P=P, pw=pw, pool_seed=pool.seed)


def infer(xhat, net: CascadeReceiver):
    """Online running: returns ``(h_tilde, d_tilde)`` from the second stage."""
    if not net.trained:
        raise NotTrainedError("cascade receiver is not fully trained")
    st = cascade_stages(xhat, net.subnets, net.P, net.pw)
    return st["h_tilde2"], st["d_tilde2"]
