"""
Binary containers for trained receivers and recorded uplink signals.

Model file (``.elm``)::

    8 bytes   magic  b"ELMFBMDL"
    uint32    format version (little endian)
    uint32    header length L
    L bytes   UTF-8 JSON header: seed, M, N, rho, Eu, and an ordered
              list of {name, dtype, shape} array descriptors
    ...       raw little-endian array payloads in descriptor order

The shared weight pool is *not* stored; it is regenerated from ``seed``.

Signal file (``.sig``)::

    8 bytes   magic  b"ELMFBSIG"
    uint32 x4 version, record count K, N, M
    K records, each: g (N complex128) then r (N x M complex128, row-major)

The known uplink channel ``g`` travels with each received matrix because
the coarse estimate needs it.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .elm import BnStats, CascadeReceiver, ElmSubnet, SharedWeightPool, slice_weights
from .phy import PowerProfile, build_walsh

__all__ = [
    "FormatError",
    "MODEL_MAGIC",
    "SIGNAL_MAGIC",
    "load_receiver",
    "read_signals",
    "save_receiver",
    "write_signals",
]

MODEL_MAGIC = b"ELMFBMDL"
SIGNAL_MAGIC = b"ELMFBSIG"
MODEL_VERSION = 1
SIGNAL_VERSION = 1

_SUBNET_NAMES = ("csi1", "det1", "csi2", "det2")
_DTYPES = {"c16": np.dtype("<c16"), "f8": np.dtype("<f8")}


class FormatError(ValueError):
    """File is not a valid container of the expected kind."""


def save_receiver(net: CascadeReceiver, path) -> None:
    if not net.trained:
        raise ValueError("only a fully trained receiver can be saved")
    arrays = []
    eps = []
    for name, sub in zip(_SUBNET_NAMES, net.subnets):
        arrays.append((f"{name}.bn_mean", "c16", sub.bn.mean))
        arrays.append((f"{name}.bn_var", "f8", sub.bn.var))
        arrays.append((f"{name}.phi", "c16", sub.Phi))
        eps.append(sub.bn.epsilon)
    header = {
        "seed": int(net.pool_seed),
        "M": net.P.M,
        "N": net.P.N,
        "rho": net.pw.rho,
        "Eu": net.pw.Eu,
        "bn_epsilon": eps,
        "arrays": [{"name": n, "dtype": dt, "shape": list(a.shape)} for n, dt, a in arrays],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(hbytes)))
        fh.write(hbytes)
        for _, dt, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype=_DTYPES[dt]).tobytes())


def load_receiver(path) -> CascadeReceiver:
    path = Path(path)
    data = path.read_bytes()
    if data[:8] != MODEL_MAGIC:
        raise FormatError(f"{path}: not a receiver model file")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model format version {version}")
    off = 16
    try:
        header = json.loads(data[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    off += hlen

    arrays = {}
    for desc in header["arrays"]:
        dt = _DTYPES[desc["dtype"]]
        count = int(np.prod(desc["shape"], dtype=np.int64))
        nbytes = count * dt.itemsize
        if off + nbytes > len(data):
            raise FormatError(f"{path}: truncated payload at {desc['name']}")
        arrays[desc["name"]] = np.frombuffer(data, dtype=dt, count=count, offset=off).reshape(
            desc["shape"]
        ).copy()
        off += nbytes

    M, N = int(header["M"]), int(header["N"])
    pool = SharedWeightPool.generate(int(header["seed"]), M)
    P = build_walsh(M, N)
    pw = PowerProfile(rho=float(header["rho"]), Eu=float(header["Eu"]))
    subnets = []
    for k, name in enumerate(_SUBNET_NAMES):
        W, b = slice_weights(pool, N if name.startswith("csi") else M)
        bn = BnStats(
            mean=arrays[f"{name}.bn_mean"],
            var=arrays[f"{name}.bn_var"],
            epsilon=float(header["bn_epsilon"][k]),
        )
        subnets.append(ElmSubnet(name[:3], W, b, bn=bn, Phi=arrays[f"{name}.phi"]))
    return CascadeReceiver(*subnets, P=P, pw=pw, pool_seed=pool.seed)


def write_signals(path, g, r) -> None:
    """Write K received matrices.

    Parameters
    ----------
    g : ndarray, shape (K, N)
    r : ndarray, shape (K, N, M)
    """
    g = np.asarray(g, dtype="<c16")
    r = np.asarray(r, dtype="<c16")
    if g.ndim != 2 or r.ndim != 3 or r.shape[:2] != g.shape:
        raise ValueError(f"inconsistent shapes g {g.shape}, r {r.shape}")
    K, N, M = r.shape
    with Path(path).open("wb") as fh:
        fh.write(SIGNAL_MAGIC)
        fh.write(struct.pack("<IIII", SIGNAL_VERSION, K, N, M))
        for k in range(K):
            fh.write(g[k].tobytes())
            fh.write(np.ascontiguousarray(r[k]).tobytes())


def read_signals(path):
    """Returns ``(g, r)`` with shapes ``(K, N)`` and ``(K, N, M)``."""
    path = Path(path)
    data = path.read_bytes()
    if data[:8] != SIGNAL_MAGIC:
        raise FormatError(f"{path}: not a recorded-signal file")
    version, K, N, M = struct.unpack_from("<IIII", data, 8)
    if version != SIGNAL_VERSION:
        raise FormatError(f"{path}: unsupported signal format version {version}")
    rec = N * (M + 1)
    body = np.frombuffer(data, dtype="<c16", offset=24)
    if body.size != K * rec:
        raise FormatError(f"{path}: expected {K * rec} complex values, found {body.size}")
    body = body.reshape(K, rec).astype(np.complex128)
    return body[:, :N].copy(), body[:, N:].reshape(K, N, M).copy()
