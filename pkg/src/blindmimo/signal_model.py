"""Scenario generation for the real-valued block-fading uplink ``Y = H X + Z``.

Every scenario derives its channel, symbol and noise draws from independent
substreams of a single 64-bit seed, so a ``(config, seed)`` pair always
reproduces the same matrices bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence, Union

import numpy as np

__all__ = [
    "NOISELESS",
    "ConfigError",
    "DegenerateChannelError",
    "ScenarioConfig",
    "ChannelMatrix",
    "SymbolBlock",
    "ReceivedBlock",
    "Scenario",
    "laplacian_from_uniform",
    "sample_laplacian",
    "scenario_streams",
    "generate_channel",
    "generate_symbols",
    "synthesize_received",
    "generate_scenario",
]

NOISELESS = "noiseless"
LAPLACE_SCALE = 1.0 / math.sqrt(2.0)
MIN_RCOND = 1e-12
MAX_REGENERATIONS = 100
_UINT64_MAX = 2**64 - 1


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment descriptions."""


class DegenerateChannelError(RuntimeError):
    """Raised when no invertible channel was drawn within the retry budget."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Dimensions, cell layout, SNR and seed of one uplink scenario.

    ``snr`` is the linear per-symbol power ``rho`` against unit-variance
    noise, or the string ``"noiseless"`` (unit symbol power, no noise).
    """

    num_antennas: int
    cell_user_counts: tuple[int, ...]
    coherence_block: int
    attenuation_range: tuple[float, float] = (0.1, 1.9)
    snr: Union[float, str] = NOISELESS
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "cell_user_counts", tuple(self.cell_user_counts))
        object.__setattr__(self, "attenuation_range", tuple(self.attenuation_range))
        self.validate()

    def validate(self) -> None:
        for name in ("num_antennas", "coherence_block", "seed"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        if self.num_antennas < 1:
            raise ConfigError("num_antennas must be positive")
        if not self.cell_user_counts:
            raise ConfigError("cell_user_counts must list at least one cell")
        if any(
            isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 1
            for k in self.cell_user_counts
        ):
            raise ConfigError("cell_user_counts must be positive integers")
        if self.num_antennas != self.num_users:
            raise ConfigError(
                f"num_antennas ({self.num_antennas}) must equal the total user "
                f"count ({self.num_users})"
            )
        if self.coherence_block <= 2 * self.num_users:
            raise ConfigError(
                f"coherence_block ({self.coherence_block}) must exceed "
                f"2*K = {2 * self.num_users}"
            )
        if len(self.attenuation_range) != 2:
            raise ConfigError("attenuation_range must be a (low, high) pair")
        low, high = self.attenuation_range
        if not (low > 0 and low <= high and math.isfinite(high)):
            raise ConfigError(f"invalid attenuation_range {self.attenuation_range!r}")
        if isinstance(self.snr, str):
            if self.snr != NOISELESS:
                raise ConfigError(f"snr must be a number or {NOISELESS!r}")
        elif isinstance(self.snr, bool) or not (
            isinstance(self.snr, (int, float)) and math.isfinite(self.snr) and self.snr >= 0
        ):
            raise ConfigError(f"snr must be a finite nonnegative number, got {self.snr!r}")
        if not 0 <= self.seed <= _UINT64_MAX:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")

    @property
    def num_users(self) -> int:
        return int(sum(self.cell_user_counts))

    @property
    def noiseless(self) -> bool:
        return self.snr == NOISELESS

    @property
    def symbol_scale(self) -> float:
        return 1.0 if self.noiseless else math.sqrt(float(self.snr))

    def replace(self, **changes: Any) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "num_antennas": int(self.num_antennas),
            "cell_user_counts": [int(k) for k in self.cell_user_counts],
            "coherence_block": int(self.coherence_block),
            "attenuation_range": [float(a) for a in self.attenuation_range],
            "snr": self.snr if self.noiseless else float(self.snr),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("scenario must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        missing = {"num_antennas", "cell_user_counts", "coherence_block"} - set(data)
        if missing:
            raise ConfigError(f"missing scenario keys: {sorted(missing)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad scenario field type: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ScenarioConfig":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class ChannelMatrix:
    entries: np.ndarray
    per_user_variance: np.ndarray


@dataclass(frozen=True)
class SymbolBlock:
    entries: np.ndarray
    cell_of_row: np.ndarray

    def rows_of_cell(self, cell: int) -> np.ndarray:
        return np.flatnonzero(self.cell_of_row == cell)


@dataclass(frozen=True)
class ReceivedBlock:
    entries: np.ndarray


@dataclass(frozen=True)
class Scenario:
    """One realisation of the model together with the config that drew it."""

    config: ScenarioConfig
    channel: ChannelMatrix
    symbols: SymbolBlock
    received: ReceivedBlock


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def laplacian_from_uniform(u):
    """Inverse CDF of the zero-mean, unit-variance Laplacian.

    ``u`` is uniform on the open interval (-1/2, 1/2).
    """
    u = np.asarray(u, dtype=float)
    x = -LAPLACE_SCALE * np.sign(u) * np.log1p(-2.0 * np.abs(u))
    return x if x.ndim else float(x)


def sample_laplacian(rng: np.random.Generator, size=None):
    """Draw unit-variance Laplacian variates by inverse-CDF sampling.

    Returns a float when ``size`` is None, otherwise an array of that shape.
    """
    r = rng.random(size)
    # rng.random is on [0, 1); r == 0 maps to the excluded endpoint u = -1/2.
    if size is None:
        while r == 0.0:
            r = rng.random()
    else:
        bad = r == 0.0
        while bad.any():
            r[bad] = rng.random(int(bad.sum()))
            bad = r == 0.0
    return laplacian_from_uniform(r - 0.5)


def scenario_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for the channel, symbols, noise and optimizer."""
    children = np.random.SeedSequence(int(seed)).spawn(4)
    names = ("channel", "symbols", "noise", "optimizer")
    return {name: np.random.Generator(np.random.PCG64(ss)) for name, ss in zip(names, children)}


def generate_channel(config: ScenarioConfig, rng: np.random.Generator) -> ChannelMatrix:
    """Draw an ``n x K`` Gaussian channel with per-user column variances.

    The per-user variances are uniform on ``config.attenuation_range``; only
    the Gaussian entries are redrawn when the matrix is numerically singular.
    """
    n, K = config.num_antennas, config.num_users
    low, high = config.attenuation_range
    variance = rng.uniform(low, high, size=K) if high > low else np.full(K, float(low))
    std = np.sqrt(variance)
    for _ in range(MAX_REGENERATIONS):
        H = rng.standard_normal((n, K)) * std
        if 1.0 / np.linalg.cond(H) > MIN_RCOND:
            return ChannelMatrix(_freeze(H), _freeze(variance))
    raise DegenerateChannelError(
        f"no invertible channel in {MAX_REGENERATIONS} draws; check the configuration"
    )


def _cell_index(cell_user_counts: Sequence[int]) -> np.ndarray:
    return np.repeat(np.arange(len(cell_user_counts)), cell_user_counts)


def generate_symbols(config: ScenarioConfig, rng: np.random.Generator) -> SymbolBlock:
    K, T = config.num_users, config.coherence_block
    X = sample_laplacian(rng, (K, T)) * config.symbol_scale
    return SymbolBlock(_freeze(X), _freeze(_cell_index(config.cell_user_counts)))


def synthesize_received(
    H: ChannelMatrix | np.ndarray,
    X: SymbolBlock | np.ndarray,
    config: ScenarioConfig | None = None,
    rng: np.random.Generator | None = None,
    *,
    noiseless: bool | None = None,
) -> ReceivedBlock:
    """Form ``Y = H X + Z`` with i.i.d. standard Gaussian noise ``Z``.

    Noise is skipped when the config is in noiseless mode (or ``noiseless``
    is passed explicitly, which takes precedence).
    """
    H = np.asarray(getattr(H, "entries", H), dtype=float)
    X = np.asarray(getattr(X, "entries", X), dtype=float)
    if H.ndim != 2 or X.ndim != 2 or H.shape[1] != X.shape[0]:
        raise ValueError(f"cannot multiply H {H.shape} by X {X.shape}")
    if noiseless is None:
        noiseless = True if config is None else config.noiseless
    Y = H @ X
    if not noiseless:
        if rng is None:
            raise ValueError("a random generator is required for noisy synthesis")
        Y = Y + rng.standard_normal(Y.shape)
    return ReceivedBlock(_freeze(Y))


def generate_scenario(config: ScenarioConfig) -> Scenario:
    """Draw channel, symbols and received block from ``config.seed``."""
    streams = scenario_streams(config.seed)
    H = generate_channel(config, streams["channel"])
    X = generate_symbols(config, streams["symbols"])
    Y = synthesize_received(H, X, config, streams["noise"])
    return Scenario(config, H, X, Y)
