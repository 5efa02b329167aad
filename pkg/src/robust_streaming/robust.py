"""RobustSketch: k oblivious copies guarded by differential privacy.

The copies' random seeds play the role of a private database.  A
sparse-vector test decides when the published estimate has gone stale, and a
private median of the copies' (grid-rounded) answers replaces it.  Because
the adversary only ever sees differentially private functions of the seeds,
its updates cannot correlate with them enough to break most copies.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .dp_core import (NoiseSource, Outcome, PrivacyParams, above_threshold_init,
                      above_threshold_step, compose, private_median)
from .errors import BudgetExhausted, ParameterError, UsageError
from .sketches import (INSERTION_ONLY, TAU_BOUNDED, AmsF2Bank, KmvSketch,
                       SketchBank, StreamModel)


class AnalysisRegimeWarning(UserWarning):
    """Parameters are outside the regime the accuracy analysis covers."""


# --- sizing ----------------------------------------------------------------


def epsilon0(epsilon: float, lam: int, delta: float) -> float:
    """Per-mechanism privacy parameter ``eps / (16 sqrt(lambda ln(1/delta)))``."""
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if not 0 < delta < 1:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    if lam < 1:
        raise ParameterError(f"lambda must be >= 1, got {lam}")
    return epsilon / (16 * math.sqrt(lam * -math.log(delta)))


def required_k(epsilon: float, delta: float, lam: int, m: int, alpha: float,
               C: float = 1.0) -> int:
    """Copy count ``ceil(C/eps * sqrt(lambda ln(1/delta)) * ln(m/(alpha delta)))``."""
    if not (epsilon > 0 and lam > 0 and m > 0 and C > 0):
        raise ParameterError("epsilon, lambda, m and C must be positive")
    if not 0 < delta < 1:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    if not 0 < alpha < 1:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    return math.ceil(C / epsilon * math.sqrt(lam * -math.log(delta))
                     * math.log(m / (alpha * delta)))


def lambda_bound(model: StreamModel | str, alpha: float, m: int,
                 constant: float = 4.0) -> int:
    """Flip-number budget: ``ceil(C ln(m)/alpha)`` or ``ceil(C tau ln(m)/alpha^2)``.

    General turnstile streams have no such bound; pass lambda explicitly.
    """
    if isinstance(model, str):
        model = StreamModel(model)
    if not (alpha > 0 and m >= 1 and constant > 0):
        raise ParameterError("alpha, m and constant must be positive")
    if model.kind == INSERTION_ONLY:
        raw = constant * math.log(m) / alpha
    elif model.kind == TAU_BOUNDED:
        raw = constant * model.tau * math.log(m) / alpha ** 2
    else:
        raise ParameterError("no flip-number bound for general turnstile streams")
    return max(1, math.ceil(raw))


def grid_exponent(n: int, max_value: float) -> float:
    """Smallest ``c >= 1`` with ``n**c >= max_value``."""
    if n < 2:
        return max(1.0, math.log(max(max_value, 2.0)) / math.log(2.0))
    return max(1.0, math.log(max(max_value, 1.0)) / math.log(n))


# --- estimate grid ---------------------------------------------------------


@dataclass(frozen=True)
class EstimateGrid:
    """``{0}`` together with the powers of ``base`` inside ``[n^-c, n^c]``.

    When ``mirrored`` the negated powers are included as well.  ``points``
    is sorted ascending.
    """

    base: float
    n: int
    c: float
    mirrored: bool
    top: int
    points: np.ndarray

    @classmethod
    def build(cls, alpha: float, n: int, c: float = 1.0,
              mirrored: bool = False) -> "EstimateGrid":
        if not alpha > 0:
            raise ParameterError(f"alpha must be positive, got {alpha}")
        base = 1 + alpha / 10
        top = max(0, math.floor(c * math.log(n) / math.log(base)))
        powers = np.power(base, np.arange(-top, top + 1, dtype=np.float64))
        parts = [-powers[::-1]] if mirrored else []
        parts += [np.zeros(1), powers]
        return cls(base, n, c, mirrored, top, np.concatenate(parts))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def low(self) -> float:
        return float(self.n) ** -self.c

    def _positive_offset(self) -> int:
        return self.top * 2 + 2 if self.mirrored else 1


def round_to_grid(y, grid: EstimateGrid):
    """Nearest grid point in log-ratio distance, ties toward the smaller magnitude.

    Magnitudes below ``n^-c`` go to 0, magnitudes beyond the top of the grid
    clamp to its extreme point, and on an unmirrored grid negatives go to 0.
    Accepts a scalar or an array.
    """
    arr = np.asarray(y, dtype=np.float64)
    mag = np.abs(arr)
    zero = (mag < grid.low) | (mag == 0) | ((arr < 0) & (not grid.mirrored))
    log_b = math.log(grid.base)
    with np.errstate(divide="ignore"):
        pos = np.log(np.where(zero, 1.0, mag)) / log_b
    lo = np.floor(pos)
    # compare |ln y - lo ln b| with |(lo+1) ln b - ln y| in ratio space
    exp = np.where((pos - lo) > (lo + 1 - pos), lo + 1, lo)
    exp = np.clip(exp, -grid.top, grid.top).astype(np.int64)
    off = grid._positive_offset()
    idx = np.where(arr > 0, off + exp + grid.top, grid.top - exp)
    idx = np.where(zero, off - 1, idx)
    out = grid.points[idx]
    return float(out) if out.ndim == 0 else out


# --- configuration and state ----------------------------------------------


@dataclass(frozen=True)
class RobustConfig:
    alpha: float
    epsilon: float
    delta: float
    lam: int
    k: int
    m: int
    n: int
    c: float = 1.0
    sizing_constant: float = 1.0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ParameterError(f"delta must lie in (0, 1), got {self.delta}")
        if self.lam < 1 or self.k < 1 or self.m < 1 or self.n < 1:
            raise ParameterError("lambda, k, m and n must all be >= 1")
        if not (self.c > 0 and self.sizing_constant > 0):
            raise ParameterError("c and sizing_constant must be positive")
        if self.epsilon > 0.01:
            warnings.warn(f"epsilon={self.epsilon} > 0.01 is outside the analysed "
                          "regime", AnalysisRegimeWarning, stacklevel=3)

    @classmethod
    def auto(cls, alpha: float, epsilon: float, delta: float, m: int, n: int,
             model: StreamModel | str = INSERTION_ONLY, *, lam: int | None = None,
             k: int | None = None, C: float = 1.0, lambda_constant: float = 4.0,
             c: float | None = None, max_value: float | None = None) -> "RobustConfig":
        """Fill in lambda (flip budget at alpha/10) and k from the sizing rules.

        ``c`` defaults to the exponent that puts ``max_value`` (by default
        ``m**2``, the largest F2 of ``m`` unit updates) inside the grid.
        """
        if lam is None:
            lam = lambda_bound(model, alpha / 10, m, lambda_constant)
        if k is None:
            k = required_k(epsilon, delta, lam, m, alpha, C)
        if c is None:
            c = grid_exponent(n, float(m) ** 2 if max_value is None else max_value)
        return cls(alpha, epsilon, delta, lam, k, m, n, c, C)

    @property
    def epsilon0(self) -> float:
        return epsilon0(self.epsilon, self.lam, self.delta)


def privacy_accounting(config) -> PrivacyParams:
    """Privacy of the seeds: 2*lambda mechanisms, each (eps0, 0)-DP, composed.

    ``config`` only needs ``epsilon``, ``delta`` and ``lam``; ``lam == 0``
    (no recomputation ever allowed) is the empty composition ``(0, delta)``.
    """
    if config.lam == 0:
        return compose(0, 1.0, 0.0, config.delta)
    return compose(2 * config.lam, epsilon0(config.epsilon, config.lam, config.delta),
                   0.0, config.delta)


def derive_seeds(root_seed: int, k: int) -> list[int]:
    """Independent 64-bit seeds for copies 0..k-1, split off ``root_seed`` by counter."""
    return [int(np.random.SeedSequence(root_seed, spawn_key=(j,))
                .generate_state(1, np.uint64)[0]) for j in range(k)]


@dataclass(frozen=True)
class StepOutput:
    estimate: float
    recomputed: bool
    remaining_budget: int


class RobustSketch:
    """Adversarially robust wrapper around a bank of ``k`` oblivious copies.

    ``copies`` needs ``update(item, weight)`` and ``estimates() -> array``
    of length ``k``.  All randomness of the wrapper itself comes from
    ``noise``.
    """

    def __init__(self, config: RobustConfig, copies, noise: NoiseSource, *,
                 grid: EstimateGrid | None = None, initial: float = 0.0):
        if getattr(copies, "k", config.k) != config.k:
            raise ParameterError("number of copies does not match config.k")
        self.config = config
        self.copies = copies
        self.noise = noise
        self.grid = grid if grid is not None else EstimateGrid.build(
            config.alpha, config.n, config.c)
        self.eps0 = config.epsilon0
        self.g_tilde = float(initial)
        self.outer_budget = config.lam
        self.recomputations = 0
        self.halted = False
        self.last_disagreement = 0
        self.at_state = self._fresh_threshold()

    def _fresh_threshold(self):
        return above_threshold_init(self.config.k / 2, 1 / self.eps0, self.noise)

    def disagreement(self, answers: np.ndarray) -> int:
        """Number of copies ``j`` with ``g~`` outside ``(1 +- alpha/2) y_j``."""
        half = self.config.alpha / 2
        a = (1 - half) * answers
        b = (1 + half) * answers
        inside = (np.minimum(a, b) <= self.g_tilde) & (self.g_tilde <= np.maximum(a, b))
        return int(answers.size - np.count_nonzero(inside))

    def process(self, item: int, weight: int) -> StepOutput:
        if self.halted:
            raise UsageError("RobustSketch has halted and accepts no more updates")
        self.copies.update(item, weight)
        answers = np.asarray(self.copies.estimates(), dtype=np.float64)
        d = self.disagreement(answers)
        self.last_disagreement = d
        outcome = above_threshold_step(self.at_state, d, 1 / self.eps0, self.noise)
        if outcome is Outcome.BELOW:
            return StepOutput(self.g_tilde, False, self.outer_budget)
        if self.outer_budget == 0:
            self.halted = True
            raise BudgetExhausted(
                f"recomputation demanded after all {self.config.lam} were used")
        self.outer_budget -= 1
        rounded = round_to_grid(np.maximum(answers, 0.0), self.grid)
        self.g_tilde = private_median(rounded, self.grid, self.eps0, self.noise)
        self.recomputations += 1
        assert self.recomputations <= self.config.lam
        self.at_state = self._fresh_threshold()
        return StepOutput(self.g_tilde, True, self.outer_budget)

    def respond(self, item: int, weight: int) -> float:
        return self.process(item, weight).estimate


def make_copies(kind: str, seeds: Sequence[int], config: RobustConfig,
                copy_alpha: float | None = None):
    """Bank of oblivious copies for ``kind`` in {"f2", "distinct"}.

    ``copy_alpha`` is the accuracy each copy is sized for; it defaults to
    ``config.alpha``.
    """
    a = config.alpha if copy_alpha is None else copy_alpha
    if kind == "f2":
        return AmsF2Bank(seeds, a, config.n)
    if kind == "distinct":
        cap = math.ceil(6 / a ** 2)
        return SketchBank([KmvSketch(s, cap, config.n) for s in seeds])
    raise ParameterError(f"unknown functionality {kind!r}")


def robust_init(config: RobustConfig, root_seed: int, *, functionality: str = "f2",
                noise: NoiseSource | None = None, copy_alpha: float | None = None,
                copies_factory: Callable[[Sequence[int]], object] | None = None
                ) -> RobustSketch:
    """Build a :class:`RobustSketch` whose copy seeds all derive from ``root_seed``.

    The wrapper's own noise defaults to a generator seeded from a separate
    branch of ``root_seed``, so it is independent of every copy.
    """
    seeds = derive_seeds(root_seed, config.k)
    if copies_factory is not None:
        copies = copies_factory(seeds)
    else:
        copies = make_copies(functionality, seeds, config, copy_alpha)
    if noise is None:
        noise_seed = int(np.random.SeedSequence(root_seed, spawn_key=(config.k, 1))
                         .generate_state(1, np.uint64)[0])
        noise = NoiseSource(noise_seed)
    return RobustSketch(config, copies, noise)
