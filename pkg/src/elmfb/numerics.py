"""
Dense complex linear algebra and reproducible random draws.

Matrices and vectors are plain ``numpy`` arrays (``complex128`` unless a
real array is the natural representation, e.g. the shared weight pool).
Batched functions elsewhere in the package treat the *columns* of a 2-D
array as independent samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg

__all__ = [
    "DimensionError",
    "PinvError",
    "RngStream",
    "as_generator",
    "gaussian_complex",
    "gaussian_real_matrix",
    "matmul",
    "pinv",
    "svd_truncated",
]


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class PinvError(np.linalg.LinAlgError):
    """SVD failed to converge while forming a pseudo-inverse.

    Attributes
    ----------
    shape : tuple
        Shape of the offending matrix.
    attempts : list of (str, str)
        ``(lapack_driver, error message)`` for every driver tried.
    """

    def __init__(self, shape, attempts):
        self.shape = tuple(shape)
        self.attempts = list(attempts)
        detail = "; ".join(f"{drv}: {msg}" for drv, msg in self.attempts)
        super().__init__(f"SVD did not converge for {self.shape} matrix ({detail})")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def svd_truncated(a: np.ndarray, tol: float | None = None):
    """Thin SVD of `a` with singular values at or below the cutoff dropped.

    Parameters
    ----------
    a : ndarray, shape (m, n)
    tol : float, optional
        Absolute singular-value cutoff. ``None`` selects
        ``s_max * max(m, n) * eps``.

    Returns
    -------
    u : ndarray, shape (m, r)
    s : ndarray, shape (r,)
    vh : ndarray, shape (r, n)
        Only the ``r`` retained singular triplets.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.size == 0:
        raise DimensionError(f"pinv expects a nonempty 2-D matrix, got shape {a.shape}")
    if tol is not None and tol < 0:
        raise ValueError("tol must be nonnegative")

    attempts = []
    for driver in ("gesdd", "gesvd"):
        try:
            u, s, vh = scipy.linalg.svd(
                a, full_matrices=False, lapack_driver=driver, check_finite=True
            )
            break
        except np.linalg.LinAlgError as exc:
            attempts.append((driver, str(exc)))
    else:
        raise PinvError(a.shape, attempts)

    if tol is None:
        smax = s[0] if s.size else 0.0
        tol = smax * max(a.shape) * np.finfo(s.dtype).eps
    r = int(np.count_nonzero(s > tol))
    return u[:, :r], s[:r], vh[:r]


def pinv(a: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse computed from the SVD.

    Singular values at or below `tol` are treated as zero; the default
    cutoff is ``s_max * max(rows, cols) * eps``.
    """
    u, s, vh = svd_truncated(a, tol)
    return (vh.conj().T / s) @ u.conj().T


@dataclass(frozen=True)
class RngStream:
    """Identifier of a reproducible random stream.

    The same ``(seed, stream_id)`` pair always yields the same sequence,
    whatever process or thread consumes it. ``stream_id`` may be an int or
    a tuple of ints, which makes hierarchical ids (experiment phase, SNR
    index, trial index) cheap to build.
    """

    seed: int
    stream_id: Union[int, tuple] = 0

    def generator(self) -> np.random.Generator:
        key = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=tuple(int(k) for k in key))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *ids: int) -> "RngStream":
        key = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
        return RngStream(self.seed, tuple(key) + tuple(ids))


def as_generator(rng) -> np.random.Generator:
    """Accept an ``RngStream`` (fresh generator) or a live ``Generator``."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def gaussian_complex(rng, n, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian draws.

    Parameters
    ----------
    rng : RngStream or numpy.random.Generator
    n : int or tuple of int
        Output shape.
    variance : float
        Total variance per entry; real and imaginary parts each get half.
    """
    if variance <= 0:
        raise ValueError("variance must be positive")
    shape = (n,) if np.isscalar(n) else tuple(n)
    gen = as_generator(rng)
    z = gen.standard_normal(shape + (2,)).view(np.complex128)[..., 0]
    return z * np.sqrt(variance / 2.0)


def gaussian_real_matrix(rng, rows: int, cols: int) -> np.ndarray:
    """I.i.d. real N(0, 1) matrix.

    Returned as ``float64``; embedding into the complex field is implicit
    wherever it meets complex operands.
    """
    if rows <= 0 or cols <= 0:
        raise ValueError("rows and cols must be positive")
    return as_generator(rng).standard_normal((rows, cols))
