"""Seeded experiment runner, coherence-block sweeps and the gradient check.

Trial ``i`` of an experiment with master seed ``s`` always uses the scenario
seed ``trial_seed(s, i)``, independent of the coherence block length, so a
sweep over ``T`` sees the same channels in every arm.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Union

import numpy as np

from .detector import DetectionResult, detect, matrix_to_csv
from .likelihood import (
    SingularUnmixingError,
    finite_difference_gradient,
    gradient_laplacian,
    log_abs_det,
    log_likelihood_laplacian,
)
from .optimizer import OptimizationError, OptimizerConfig
from .signal_model import (
    ConfigError,
    DegenerateChannelError,
    ScenarioConfig,
    generate_scenario,
    scenario_streams,
)

__all__ = [
    "EMIT_CHOICES",
    "ExperimentConfig",
    "TrialRecord",
    "ExperimentSummary",
    "GradientCheckReport",
    "trial_seed",
    "run_experiment",
    "run_sweep",
    "run_gradient_check",
]

logger = logging.getLogger(__name__)

EMIT_CHOICES = frozenset({"rho_csv", "trajectory_csv", "summary_json"})
SMOOTH_MARGIN = 1e-3
GRAD_TOLERANCE = 1e-5


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    trials: int = 1
    output_dir: Path = Path("results")
    emit: frozenset = EMIT_CHOICES

    def __post_init__(self) -> None:
        if isinstance(self.trials, bool) or not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError("trials must be an integer >= 1")
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        emit = frozenset(self.emit)
        if not emit <= EMIT_CHOICES:
            raise ConfigError(f"unknown emit entries: {sorted(emit - EMIT_CHOICES)}")
        object.__setattr__(self, "emit", emit)

    def replace(self, **changes: Any) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self, include_output_dir: bool = True) -> dict[str, Any]:
        out = {
            "scenario": self.scenario.to_dict(),
            "optimizer": self.optimizer.to_dict(),
            "trials": self.trials,
            "emit": sorted(self.emit),
        }
        if include_output_dir:
            out["output_dir"] = str(self.output_dir)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("experiment config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        if "scenario" not in data:
            raise ConfigError("experiment config needs a 'scenario' section")
        kwargs: dict[str, Any] = {
            "scenario": ScenarioConfig.from_dict(data["scenario"]),
            "optimizer": OptimizerConfig.from_dict(data.get("optimizer", {})),
        }
        for key in ("trials", "output_dir", "emit"):
            if key in data:
                kwargs[key] = data[key]
        return cls(**kwargs)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(data)


@dataclass
class TrialRecord:
    index: int
    seed: int
    result: Optional[DetectionResult] = None
    cell_of_row: Optional[np.ndarray] = None
    error: Optional[str] = None
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class ExperimentSummary:
    """Aggregates over the successful trials of one experiment.

    ``wall_clock_seconds`` is kept in memory only; the serialised summary
    must be byte-reproducible and timings are not.
    """

    config: ExperimentConfig
    trial_seeds: list[int]
    matched: list[Optional[list[float]]]
    final_objectives: list[Optional[float]]
    failures: list[dict[str, Any]]
    min_matched: float
    mean_matched: float
    max_matched: float
    per_cell_means: dict[int, float]
    wall_clock_seconds: list[float] = field(default_factory=list)

    @property
    def n_failed(self) -> int:
        return len(self.failures)

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(include_output_dir=False),
            "trial_seeds": self.trial_seeds,
            "matched_correlations": self.matched,
            "final_objectives": self.final_objectives,
            "min_matched": self.min_matched,
            "mean_matched": self.mean_matched,
            "max_matched": self.max_matched,
            "per_cell_means": {str(k): v for k, v in self.per_cell_means.items()},
            "n_trials": len(self.trial_seeds),
            "n_failed": self.n_failed,
            "failures": self.failures,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def trial_seed(master_seed: int, index: int) -> int:
    """64-bit scenario seed of trial ``index`` under ``master_seed``."""
    ss = np.random.SeedSequence([int(master_seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _run_trial(config: ExperimentConfig, index: int) -> TrialRecord:
    seed = trial_seed(config.scenario.seed, index)
    record = TrialRecord(index=index, seed=seed)
    start = time.perf_counter()
    try:
        scenario = generate_scenario(config.scenario.replace(seed=seed))
        rng = scenario_streams(seed)["optimizer"]
        record.result = detect(scenario.received, config.optimizer, scenario.symbols, rng)
        record.cell_of_row = scenario.symbols.cell_of_row
    except (OptimizationError, DegenerateChannelError, SingularUnmixingError) as exc:
        record.error = f"{type(exc).__name__}: {exc}"
        logger.warning("trial %d failed: %s", index, record.error)
    record.seconds = time.perf_counter() - start
    return record


def _write_trial(config: ExperimentConfig, record: TrialRecord) -> None:
    if not record.ok:
        return
    stem = config.output_dir / f"trial_{record.index:03d}"
    if "rho_csv" in config.emit:
        matrix_to_csv(np.abs(record.result.rho), f"{stem}_rho.csv")
    if "trajectory_csv" in config.emit:
        record.result.trajectory.to_csv(f"{stem}_trajectory.csv")


def _summarise(config: ExperimentConfig, records: list[TrialRecord]) -> ExperimentSummary:
    good = [r for r in records if r.ok]
    nan = float("nan")
    per_cell: dict[int, float] = {}
    if good:
        all_matched = np.concatenate([r.result.matched_correlations for r in good])
        trial_means = [float(r.result.matched_correlations.mean()) for r in good]
        mean_matched = float(np.mean(trial_means))
        min_matched, max_matched = float(all_matched.min()), float(all_matched.max())
        cells = [r.result.per_cell_matched(r.cell_of_row) for r in good]
        for c in sorted(cells[0]):
            per_cell[c] = float(np.mean([cm[c] for cm in cells]))
    else:
        min_matched = mean_matched = max_matched = nan
    return ExperimentSummary(
        config=config,
        trial_seeds=[r.seed for r in records],
        matched=[
            [float(x) for x in r.result.matched_correlations] if r.ok else None
            for r in records
        ],
        final_objectives=[float(r.result.final_objective) if r.ok else None for r in records],
        failures=[{"trial": r.index, "reason": r.error} for r in records if not r.ok],
        min_matched=min_matched,
        mean_matched=mean_matched,
        max_matched=max_matched,
        per_cell_means=per_cell,
        wall_clock_seconds=[r.seconds for r in records],
    )


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentSummary:
    """Run ``config.trials`` seeded detections and write the requested artifacts.

    Trials may run on ``workers`` threads; results are reduced in trial order
    so the artifacts do not depend on scheduling.
    """
    config.output_dir.mkdir(parents=True, exist_ok=True)
    indices = range(config.trials)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda i: _run_trial(config, i), indices))
    else:
        records = [_run_trial(config, i) for i in indices]
    for record in records:
        _write_trial(config, record)
        if record.ok:
            logger.info(
                "trial %d: min matched %.4f (%.1fs)",
                record.index, record.result.matched_correlations.min(), record.seconds,
            )
    summary = _summarise(config, records)
    if "summary_json" in config.emit:
        (config.output_dir / "summary.json").write_text(summary.to_json())
    return summary


def run_sweep(
    base: ExperimentConfig, T_values: Iterable[int], workers: int = 1
) -> list[ExperimentSummary]:
    """Repeat ``base`` for each coherence block length with paired trial seeds.

    Each arm writes into ``<output_dir>/T<value>/``; the combined table
    ``sweep.csv`` lands in ``output_dir`` itself.
    """
    T_values = [int(T) for T in T_values]
    if not T_values:
        raise ConfigError("sweep needs at least one T value")
    arms = [
        base.replace(
            scenario=base.scenario.replace(coherence_block=T),
            output_dir=base.output_dir / f"T{T}",
        )
        for T in T_values
    ]
    summaries = [run_experiment(arm, workers=workers) for arm in arms]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["T", "mean_matched", "min_matched"])
    for T, s in zip(T_values, summaries):
        writer.writerow([T, repr(s.mean_matched), repr(s.min_matched)])
    base.output_dir.mkdir(parents=True, exist_ok=True)
    (base.output_dir / "sweep.csv").write_text(buf.getvalue())
    return summaries


@dataclass
class GradientCheckReport:
    K: int
    T: int
    seed: int
    errors: list[float]
    tolerance: float = GRAD_TOLERANCE

    @property
    def max_error(self) -> float:
        return max(self.errors, default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def to_dict(self) -> dict[str, Any]:
        return {
            "K": self.K,
            "T": self.T,
            "seed": self.seed,
            "instances": len(self.errors),
            "relative_errors": self.errors,
            "max_relative_error": self.max_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def _smooth_instance(K: int, T: int, rng: np.random.Generator, max_tries: int = 1000):
    for _ in range(max_tries):
        B = rng.standard_normal((K, K))
        Y = rng.standard_normal((K, T))
        try:
            log_abs_det(B)
        except SingularUnmixingError:
            continue
        if np.abs(B @ Y).min() > SMOOTH_MARGIN:
            return B, Y
    raise RuntimeError(f"no smooth (B, Y) pair in {max_tries} draws")


def run_gradient_check(
    K: int,
    T: int,
    instances: int,
    seed: int = 0,
    h: float = 1e-5,
    gradient: Callable[[np.ndarray, np.ndarray], np.ndarray] = gradient_laplacian,
) -> GradientCheckReport:
    """Compare the analytic gradient with central differences at smooth points.

    The error of each instance is ``|g - g_fd|_F / |g_fd|_F``.  ``gradient``
    can be swapped out to check that a wrong gradient is caught.
    """
    if K < 1 or T < 1 or instances < 0:
        raise ValueError("need K, T >= 1 and instances >= 0")
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(instances):
        B, Y = _smooth_instance(K, T, rng)
        fd = finite_difference_gradient(B, Y, log_likelihood_laplacian, h)
        g = gradient(B, Y)
        errors.append(float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    return GradientCheckReport(K=K, T=T, seed=seed, errors=errors)
