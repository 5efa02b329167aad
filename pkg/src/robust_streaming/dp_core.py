"""Differential-privacy primitives.

Laplace noise, the AboveThreshold sparse-vector test, a private median over a
finite grid (exponential mechanism) and advanced composition.  Every
randomized primitive draws from a :class:`NoiseSource`, which is either a
seeded generator or a FIFO of injected values used by deterministic tests.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Iterable
from dataclasses import dataclass
from itertools import islice

import numpy as np

from .errors import InjectionExhausted, ParameterError, UsageError


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ParameterError(f"epsilon must be nonnegative, got {self.epsilon}")
        if not 0 <= self.delta < 1:
            raise ParameterError(f"delta must lie in [0, 1), got {self.delta}")


class NoiseSource:
    """Single-owner source of randomness for the mechanisms in this module.

    ``NoiseSource(seed)`` draws from a seeded numpy generator.
    ``NoiseSource.injected(values)`` instead hands out the given values
    verbatim, in order; ``values`` may be any iterable, including an
    infinite one such as ``itertools.repeat(0.0)``.
    """

    def __init__(self, seed: int | None = None):
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._queue = None

    @classmethod
    def injected(cls, values: Iterable[float]) -> "NoiseSource":
        src = cls.__new__(cls)
        src.seed = None
        src._rng = None
        src._queue = iter(values)
        return src

    @property
    def mode(self) -> str:
        return "random" if self._queue is None else "injected"

    def _take(self, count: int) -> list[float]:
        vals = [float(v) for v in islice(self._queue, count)]
        if len(vals) < count:
            raise InjectionExhausted(
                f"injected noise queue exhausted (needed {count}, had {len(vals)})")
        return vals

    def laplace(self, scale: float) -> float:
        """One draw from Lap(scale) by inverse CDF of a single uniform."""
        if not scale > 0:
            raise ParameterError(f"Laplace scale must be positive, got {scale}")
        if self._queue is not None:
            return self._take(1)[0]
        u = 0.0
        while u == 0.0:
            u = self._rng.random()
        v = u - 0.5
        return -scale * math.copysign(1.0, v) * math.log1p(-2.0 * abs(v))

    def gumbel(self, size: int) -> np.ndarray:
        """``size`` independent standard Gumbel draws."""
        if self._queue is not None:
            return np.asarray(self._take(size), dtype=np.float64)
        return self._rng.gumbel(size=size)


def laplace_sample(scale: float, noise: NoiseSource) -> float:
    return noise.laplace(scale)


class Outcome(enum.Enum):
    BELOW = "below"
    AT_OR_ABOVE = "at_or_above"


@dataclass
class AboveThresholdState:
    noisy_threshold: float
    noise_scale: float
    halted: bool = False


def above_threshold_init(t: float, noise_scale: float,
                         noise: NoiseSource) -> AboveThresholdState:
    """Start a sparse-vector run with threshold ``t + Lap(noise_scale)``."""
    if not noise_scale > 0:
        raise ParameterError(f"noise scale must be positive, got {noise_scale}")
    return AboveThresholdState(t + noise.laplace(noise_scale), noise_scale)


def above_threshold_step(state: AboveThresholdState, query_value: float,
                         noise_scale: float, noise: NoiseSource) -> Outcome:
    """Answer one query; a noisy value at or above the threshold halts the run."""
    if state.halted:
        raise UsageError("AboveThreshold already halted; start a new run")
    if not noise_scale > 0:
        raise ParameterError(f"noise scale must be positive, got {noise_scale}")
    if query_value + noise.laplace(noise_scale) >= state.noisy_threshold:
        state.halted = True
        return Outcome.AT_OR_ABOVE
    return Outcome.BELOW


def _grid_points(grid) -> np.ndarray:
    return np.asarray(getattr(grid, "points", grid), dtype=np.float64)


def median_utility(values, grid) -> np.ndarray:
    """Utility of every grid point as a median of ``values``.

    ``u(x) = -max(0, |S|/2 - #{v >= x}, |S|/2 - #{v <= x})``, which has
    sensitivity 1 when one value changes.  Depends on ``values`` only through
    their sorted order.
    """
    pts = _grid_points(grid)
    vals = np.sort(np.asarray(values, dtype=np.float64))
    half = len(vals) / 2.0
    n_ge = len(vals) - np.searchsorted(vals, pts, side="left")
    n_le = np.searchsorted(vals, pts, side="right")
    return -np.maximum(0.0, np.maximum(half - n_ge, half - n_le))


def median_error_bound(grid_size: int, epsilon0: float, delta: float) -> float:
    """Rank error ``(2/eps0) ln(|grid|/delta)`` met with probability >= 1 - delta."""
    return (2.0 / epsilon0) * math.log(grid_size / delta)


def private_median(values, grid, epsilon0: float, noise: NoiseSource) -> float:
    """Sample a grid point with probability proportional to ``exp(eps0 * u / 2)``.

    Sampling uses the Gumbel-max trick, so a random source consumes one
    Gumbel draw per grid point.  With all-zero injected noise the result is
    the smallest grid point of maximal utility.

    Args:
        values: Non-empty collection, every element a member of ``grid``.
        grid: Sorted candidate points, or an object with a ``points`` array.
        epsilon0: Privacy parameter of this single invocation.
        noise: Source of the Gumbel perturbations.

    Returns:
        The selected grid point.
    """
    if not epsilon0 > 0:
        raise ParameterError(f"epsilon0 must be positive, got {epsilon0}")
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise ParameterError("private_median needs at least one value")
    pts = _grid_points(grid)
    if not np.isin(vals, pts).all():
        off = vals[~np.isin(vals, pts)][0]
        raise ParameterError(f"value {off!r} is not a grid point; round it first")
    scores = 0.5 * epsilon0 * median_utility(vals, pts)
    scores = scores + noise.gumbel(len(pts))
    return float(pts[int(np.argmax(scores))])


def compose(count: int, epsilon_each: float, delta_each: float,
            delta_prime: float) -> PrivacyParams:
    """Advanced composition of ``count`` adaptive (eps, delta)-DP interactions.

    Returns ``(sqrt(2 count ln(1/delta')) eps + 2 count eps^2,
    count delta + delta')``.
    """
    if count < 0 or int(count) != count:
        raise ParameterError(f"count must be a nonnegative integer, got {count}")
    if not 0 < epsilon_each <= 1:
        raise ParameterError(f"epsilon_each must lie in (0, 1], got {epsilon_each}")
    if not 0 < delta_prime <= 1:
        raise ParameterError(f"delta_prime must lie in (0, 1], got {delta_prime}")
    if not 0 <= delta_each <= 1:
        raise ParameterError(f"delta_each must lie in [0, 1], got {delta_each}")
    eps = (math.sqrt(2 * count * -math.log(delta_prime)) * epsilon_each
           + 2 * count * epsilon_each ** 2)
    return PrivacyParams(eps, count * delta_each + delta_prime)
