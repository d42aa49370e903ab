"""Pilot-free detection: estimate the unmixing matrix from ``Y`` alone, recover
the symbol streams, and score them against ground truth when it is known.

Recovered streams come back in arbitrary order and sign.  The scoring step
pairs each true stream ``i`` with an estimated stream ``permutation[i]`` by
maximising the summed absolute correlation.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from .likelihood import log_likelihood_laplacian
from .optimizer import OptimizerConfig, Trajectory, run_optimization
from .signal_model import SymbolBlock

__all__ = [
    "DetectionResult",
    "recover_symbols",
    "correlation_matrix",
    "match_permutation",
    "detect",
    "matrix_to_csv",
    "matrix_from_csv",
]


def _as_matrix(a) -> np.ndarray:
    return np.asarray(getattr(a, "entries", a), dtype=float)


def recover_symbols(B_hat, Y) -> np.ndarray:
    B_hat, Y = _as_matrix(B_hat), _as_matrix(Y)
    if B_hat.ndim != 2 or Y.ndim != 2 or B_hat.shape[1] != Y.shape[0]:
        raise ValueError(f"cannot apply B {B_hat.shape} to Y {Y.shape}")
    return B_hat @ Y


def correlation_matrix(X, X_hat) -> np.ndarray:
    """Uncentred row cosines: ``rho[i, j] = <X_i, X_hat_j> / (|X_i| |X_hat_j|)``.

    Rows of ``X`` index true users, rows of ``X_hat`` estimated streams.
    """
    X, X_hat = _as_matrix(X), _as_matrix(X_hat)
    if X.shape != X_hat.shape or X.ndim != 2:
        raise ValueError(f"shape mismatch: X {X.shape} vs X_hat {X_hat.shape}")
    nx = np.linalg.norm(X, axis=1)
    nh = np.linalg.norm(X_hat, axis=1)
    for name, norms in (("X", nx), ("X_hat", nh)):
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise ValueError(f"row {int(zero[0])} of {name} has zero norm")
    rho = (X @ X_hat.T) / np.outer(nx, nh)
    # Cauchy-Schwarz holds exactly; rounding can push |rho| a few ulps past 1.
    return np.clip(rho, -1.0, 1.0)


def match_permutation(rho) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Optimal signed assignment of estimated streams to true users.

    Returns ``(permutation, signs, matched)`` where ``permutation[i]`` is the
    estimated stream assigned to true user ``i`` (0-based).  Among
    permutations that attain the maximal ``sum_i |rho[i, permutation[i]]|``
    the lexicographically smallest one is returned.
    """
    A = np.abs(_as_matrix(rho))
    K = A.shape[0]
    if A.ndim != 2 or A.shape[1] != K:
        raise ValueError("correlation matrix must be square")
    rows, cols = linear_sum_assignment(A, maximize=True)
    best = A[rows, cols].sum()
    tol = 1e-12 * max(1.0, best)

    # Fix rows one at a time to the smallest column that keeps the optimum.
    perm = np.empty(K, dtype=int)
    free_cols = list(range(K))
    fixed = 0.0
    for i in range(K):
        rest_rows = list(range(i + 1, K))
        for j in free_cols:
            remaining = [c for c in free_cols if c != j]
            tail = 0.0
            if rest_rows:
                sub = A[np.ix_(rest_rows, remaining)]
                r, c = linear_sum_assignment(sub, maximize=True)
                tail = sub[r, c].sum()
            if fixed + A[i, j] + tail >= best - tol:
                perm[i] = j
                fixed += A[i, j]
                free_cols = remaining
                break
        else:  # pragma: no cover - the optimum is always reachable
            raise AssertionError("assignment search lost the optimum")

    picked = _as_matrix(rho)[np.arange(K), perm]
    signs = np.where(picked < 0, -1, 1)
    return perm, signs, np.abs(picked)


@dataclass
class DetectionResult:
    """Output of :func:`detect`.

    The scoring fields are ``None`` when no ground truth was supplied.
    """

    B_hat: np.ndarray
    X_hat: np.ndarray
    trajectory: Trajectory
    rho: Optional[np.ndarray] = None
    permutation: Optional[np.ndarray] = None
    signs: Optional[np.ndarray] = None
    matched_correlations: Optional[np.ndarray] = None
    final_objective: float = float("nan")

    @property
    def scored(self) -> bool:
        return self.rho is not None

    def per_cell_matched(self, cell_of_row) -> dict[int, float]:
        if not self.scored:
            raise ValueError("detection was run without ground truth")
        cells = np.asarray(cell_of_row)
        return {
            int(c): float(self.matched_correlations[cells == c].mean())
            for c in np.unique(cells)
        }

    def to_dict(self) -> dict:
        out = {
            "B_hat": self.B_hat.tolist(),
            "final_objective": float(self.final_objective),
        }
        if self.scored:
            m = self.matched_correlations
            out.update(
                permutation=[int(p) for p in self.permutation],
                signs=[int(s) for s in self.signs],
                matched_correlations=[float(x) for x in m],
                min_matched=float(m.min()),
                mean_matched=float(m.mean()),
                max_matched=float(m.max()),
            )
        return out

    def to_json(self, path: Union[str, Path, None] = None) -> str:
        text = json.dumps(self.to_dict(), indent=2) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def matrix_to_csv(M, path: Union[str, Path, None] = None) -> str:
    """Row-major CSV without a header, full float precision."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in np.asarray(M, dtype=float):
        writer.writerow([repr(float(x)) for x in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def matrix_from_csv(text: str) -> np.ndarray:
    rows = [list(map(float, r)) for r in csv.reader(io.StringIO(text)) if r]
    return np.array(rows, dtype=float)


def detect(
    Y,
    opt_config: OptimizerConfig,
    truth: SymbolBlock | np.ndarray | None,
    rng: np.random.Generator,
) -> DetectionResult:
    """Estimate ``B_hat`` by likelihood ascent and recover ``X_hat = B_hat Y``."""
    Y = _as_matrix(Y)
    B_hat, trajectory = run_optimization(Y, opt_config, rng)
    X_hat = recover_symbols(B_hat, Y)
    result = DetectionResult(
        B_hat=B_hat,
        X_hat=X_hat,
        trajectory=trajectory,
        final_objective=log_likelihood_laplacian(B_hat, Y),
    )
    if truth is not None:
        rho = correlation_matrix(truth, X_hat)
        perm, signs, matched = match_permutation(rho)
        result.rho = rho
        result.permutation = perm
        result.signs = signs
        result.matched_correlations = matched
    return result
