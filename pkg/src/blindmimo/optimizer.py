"""Gradient-ascent maximisation of the Laplacian block log-likelihood.

Both updates move *up* the objective: ``B <- B + step``.  The step
diagnostics follow the convergence plot convention, where one recorded step
spans ``record_every`` iterations and the reported average/maximum absolute
change is taken between consecutive recorded matrices.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .likelihood import (
    SINGULAR_DET,
    SingularUnmixingError,
    gradient_laplacian,
    log_abs_det,
    log_likelihood_laplacian,
)
from .signal_model import ConfigError

__all__ = [
    "OptimizationError",
    "NonFiniteGradientError",
    "OptimizerConfig",
    "AdamState",
    "Trajectory",
    "TRAJECTORY_HEADER",
    "init_unmixing",
    "adam_update",
    "sgd_update",
    "run_optimization",
]

logger = logging.getLogger(__name__)

MAX_INIT_TRIES = 100
MAX_RESTARTS = 3
TRAJECTORY_HEADER = ("step", "iteration", "avg_step", "max_step", "objective")


class OptimizationError(RuntimeError):
    """A trial could not be completed (singular restarts exhausted, bad gradient)."""


class NonFiniteGradientError(OptimizationError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "adam"
    learning_rate: float = 3e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_epsilon: float = 1e-8
    total_iterations: int = 5000
    record_every: int = 10
    minibatch_size: Union[int, str] = "full"
    # None means 1/sqrt(K), resolved once K is known.
    init_scale: Optional[float] = None

    def __post_init__(self) -> None:
        if self.method not in ("adam", "sgd"):
            raise ConfigError(f"method must be 'adam' or 'sgd', got {self.method!r}")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ConfigError("learning_rate must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if not self.adam_epsilon > 0:
            raise ConfigError("adam_epsilon must be positive")
        if isinstance(self.total_iterations, bool) or not isinstance(self.total_iterations, int) \
                or self.total_iterations < 0:
            raise ConfigError("total_iterations must be a nonnegative integer")
        if isinstance(self.record_every, bool) or not isinstance(self.record_every, int) \
                or self.record_every < 1:
            raise ConfigError("record_every must be an integer >= 1")
        mb = self.minibatch_size
        if mb != "full" and (isinstance(mb, bool) or not isinstance(mb, int) or mb < 1):
            raise ConfigError("minibatch_size must be a positive integer or 'full'")
        if self.init_scale is not None and not self.init_scale > 0:
            raise ConfigError("init_scale must be positive")

    def scale_for(self, K: int) -> float:
        return self.init_scale if self.init_scale is not None else 1.0 / math.sqrt(K)

    def replace(self, **changes: Any) -> "OptimizerConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "OptimizerConfig":
        if not isinstance(data, dict):
            raise ConfigError("optimizer must be a JSON object")
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown optimizer keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad optimizer field type: {exc}") from exc


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), 0)


@dataclass
class Trajectory:
    """Per-record step diagnostics.  ``initial_objective`` is at ``B^[0]``."""

    iteration: list[int] = field(default_factory=list)
    average_step: list[float] = field(default_factory=list)
    maximum_step: list[float] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    initial_objective: float = float("nan")

    def __len__(self) -> int:
        return len(self.iteration)

    def append(self, iteration: int, delta: np.ndarray, objective: float) -> None:
        step = np.abs(delta)
        self.iteration.append(int(iteration))
        self.average_step.append(float(step.mean()))
        self.maximum_step.append(float(step.max()))
        self.objective.append(float(objective))

    def to_csv(self, path: Union[str, Path, None] = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRAJECTORY_HEADER)
        for k in range(len(self)):
            writer.writerow([
                k + 1,
                self.iteration[k],
                repr(self.average_step[k]),
                repr(self.maximum_step[k]),
                repr(self.objective[k]),
            ])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != TRAJECTORY_HEADER:
            raise ValueError("not a trajectory CSV")
        traj = cls()
        for row in rows[1:]:
            traj.iteration.append(int(row[1]))
            traj.average_step.append(float(row[2]))
            traj.maximum_step.append(float(row[3]))
            traj.objective.append(float(row[4]))
        return traj


def init_unmixing(K: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian initial unmixing matrix with entry standard deviation ``scale``."""
    if K < 1 or not scale > 0:
        raise ValueError("need K >= 1 and scale > 0")
    for _ in range(MAX_INIT_TRIES):
        B = scale * rng.standard_normal((K, K))
        try:
            log_abs_det(B)
        except SingularUnmixingError:
            continue
        return B
    raise OptimizationError(f"no nonsingular initialisation in {MAX_INIT_TRIES} draws")


def _check_finite(grad: np.ndarray) -> None:
    if not np.all(np.isfinite(grad)):
        bad = np.argwhere(~np.isfinite(grad))
        raise NonFiniteGradientError(
            f"non-finite gradient at {len(bad)} entries, first {tuple(bad[0])}"
        )


def adam_update(
    B: np.ndarray, grad: np.ndarray, state: AdamState, config: OptimizerConfig
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam ascent step.  Inputs are not modified."""
    if grad.shape != B.shape or state.m.shape != B.shape:
        raise ValueError("shape mismatch between B, gradient and Adam state")
    _check_finite(grad)
    b1, b2 = config.adam_beta1, config.adam_beta2
    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    B_new = B + config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
    return B_new, AdamState(m, v, t)


def sgd_update(B: np.ndarray, grad: np.ndarray, config: OptimizerConfig) -> np.ndarray:
    if grad.shape != B.shape:
        raise ValueError("shape mismatch between B and gradient")
    _check_finite(grad)
    return B + config.learning_rate * grad


def _minibatch_gradient(B: np.ndarray, Y: np.ndarray, m: int, rng: np.random.Generator):
    # Unbiased estimate of the full-block gradient: the L1 part is rescaled by T/m.
    T = Y.shape[1]
    cols = rng.choice(T, size=m, replace=False)
    Yb = Y[:, cols]
    log_abs_det(B)
    return T * np.linalg.inv(B).T - (T / m) * math.sqrt(2.0) * (np.sign(B @ Yb) @ Yb.T)


def _ascend(Y: np.ndarray, config: OptimizerConfig, rng: np.random.Generator):
    K = Y.shape[0]
    B = init_unmixing(K, config.scale_for(K), rng)
    traj = Trajectory(initial_objective=log_likelihood_laplacian(B, Y))
    state = AdamState.zeros(B.shape)
    minibatch = config.minibatch_size
    use_minibatch = minibatch != "full" and minibatch < Y.shape[1]
    B_rec = B
    for it in range(1, config.total_iterations + 1):
        if use_minibatch:
            grad = _minibatch_gradient(B, Y, minibatch, rng)
        else:
            grad = gradient_laplacian(B, Y)
        if config.method == "adam":
            B, state = adam_update(B, grad, state, config)
        else:
            B = sgd_update(B, grad, config)
        if it % config.record_every == 0:
            traj.append(it, B - B_rec, log_likelihood_laplacian(B, Y))
            B_rec = B
    log_abs_det(B)
    return B, traj


def run_optimization(Y, config: OptimizerConfig, rng: np.random.Generator):
    """Maximise the Laplacian log-likelihood over ``B`` from a random start.

    Returns ``(B_hat, trajectory)``.  A singular iterate triggers a fresh
    random restart (drawn from the same generator); after
    ``MAX_RESTARTS`` restarts :class:`OptimizationError` is raised.
    """
    Y = np.asarray(getattr(Y, "entries", Y), dtype=float)
    if Y.ndim != 2:
        raise ValueError("received block must be a matrix")
    for attempt in range(MAX_RESTARTS + 1):
        try:
            return _ascend(Y, config, rng)
        except SingularUnmixingError as exc:
            logger.warning("singular iterate on attempt %d: %s", attempt + 1, exc)
    raise OptimizationError(
        f"unmixing matrix became singular (|det B| < {SINGULAR_DET:g}) "
        f"after {MAX_RESTARTS} restarts"
    )
