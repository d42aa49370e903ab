"""Block log-likelihood of an unmixing matrix and its gradient.

For a candidate unmixing matrix ``B`` and a received block ``Y`` (``n x T``)
the model density of the block is ``|det B|^T prod_kt f((B Y)_kt)``.  The
Laplacian objective drops the per-sample normalisation ``log sqrt(2)``,
which does not move the maximiser.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "SQRT2",
    "SINGULAR_DET",
    "SingularUnmixingError",
    "LogDensity",
    "LAPLACIAN_UNIT",
    "log_abs_det",
    "log_likelihood_laplacian",
    "log_likelihood_generic",
    "gradient_laplacian",
    "finite_difference_gradient",
]

SQRT2 = math.sqrt(2.0)
SINGULAR_DET = 1e-300
_LOG_SINGULAR_DET = math.log(SINGULAR_DET)


class SingularUnmixingError(ArithmeticError):
    """The unmixing matrix is singular (``|det B| < 1e-300``); objective is -inf."""


@dataclass(frozen=True)
class LogDensity:
    """Elementwise source log-density.

    ``fn`` is applied to whole arrays and must broadcast like a ufunc.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    name: str

    def __call__(self, x):
        return self.fn(x)


def _laplacian_unit_logpdf(x):
    return -SQRT2 * np.abs(x) - 0.5 * math.log(2.0)


LAPLACIAN_UNIT = LogDensity(_laplacian_unit_logpdf, "laplacian-unit")


def _as_matrix(a) -> np.ndarray:
    return np.asarray(getattr(a, "entries", a), dtype=float)


def _check_shapes(B: np.ndarray, Y: np.ndarray) -> None:
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError(f"unmixing matrix must be square, got shape {B.shape}")
    if Y.ndim != 2 or Y.shape[0] != B.shape[1]:
        raise ValueError(f"received block of shape {Y.shape} does not match B {B.shape}")


def log_abs_det(B) -> float:
    """``log|det B|`` from the LU pivots, raising when the matrix is singular."""
    sign, logdet = np.linalg.slogdet(_as_matrix(B))
    if sign == 0 or not logdet > _LOG_SINGULAR_DET:
        raise SingularUnmixingError(f"|det B| below {SINGULAR_DET:g}")
    return float(logdet)


def log_likelihood_laplacian(B, Y) -> float:
    """``T log|det B| - sqrt(2) * sum_kt |(B Y)_kt|`` for unit Laplacian sources."""
    B, Y = _as_matrix(B), _as_matrix(Y)
    _check_shapes(B, Y)
    T = Y.shape[1]
    return T * log_abs_det(B) - SQRT2 * float(np.abs(B @ Y).sum())


def log_likelihood_generic(B, Y, density: LogDensity = LAPLACIAN_UNIT) -> float:
    """``T log|det B| + sum_kt density((B Y)_kt)`` for an arbitrary source density."""
    B, Y = _as_matrix(B), _as_matrix(Y)
    _check_shapes(B, Y)
    S = B @ Y
    terms = np.broadcast_to(np.asarray(density(S), dtype=float), S.shape)
    return Y.shape[1] * log_abs_det(B) + float(terms.sum())


def gradient_laplacian(B, Y) -> np.ndarray:
    """Gradient of :func:`log_likelihood_laplacian` with respect to ``B``.

    Returns ``T B^{-T} - sqrt(2) sign(B Y) Y^T``, using ``sign(0) = 0`` as the
    subgradient at the kinks of the absolute value.
    """
    B, Y = _as_matrix(B), _as_matrix(Y)
    _check_shapes(B, Y)
    log_abs_det(B)
    T = Y.shape[1]
    return T * np.linalg.inv(B).T - SQRT2 * (np.sign(B @ Y) @ Y.T)


def finite_difference_gradient(
    B,
    Y,
    objective: Callable[[np.ndarray, np.ndarray], float] = log_likelihood_laplacian,
    h: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of ``objective(B, Y)`` with respect to ``B``."""
    if not h > 0:
        raise ValueError("step h must be positive")
    B, Y = _as_matrix(B), _as_matrix(Y)
    grad = np.empty_like(B)
    for idx in np.ndindex(B.shape):
        Bp = B.copy()
        Bm = B.copy()
        Bp[idx] += h
        Bm[idx] -= h
        try:
            grad[idx] = (objective(Bp, Y) - objective(Bm, Y)) / (2.0 * h)
        except SingularUnmixingError as exc:
            raise SingularUnmixingError(
                f"objective singular within the stencil at entry {idx}"
            ) from exc
    return grad
