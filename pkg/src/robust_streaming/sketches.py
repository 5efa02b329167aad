"""Stream model, exact oracles and oblivious sketches.

The exact :class:`FrequencyVector` is the ground truth every estimate is
audited against.  The sketches here are *oblivious*: their guarantees hold
only when the stream does not depend on their internal randomness, which is
fully determined by an integer seed.
"""

from __future__ import annotations

import heapq
import math
from abc import ABC, abstractmethod
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ModelViolation, ParameterError

try:  # optional: compiled sign hashing, same results as the numpy path
    import numba
except ImportError:  # pragma: no cover
    numba = None

# Mersenne prime 2^31 - 1: products of two residues fit in uint64.
MERSENNE_31 = (1 << 31) - 1
_P31 = np.uint64(MERSENNE_31)
_SHIFT31 = np.uint64(31)
# Mersenne prime 2^61 - 1 for the scalar (pure Python) KMV hash.
MERSENNE_61 = (1 << 61) - 1

INSERTION_ONLY = "insertion_only"
TURNSTILE = "turnstile"
TAU_BOUNDED = "tau_bounded"


class StreamUpdate(NamedTuple):
    item: int
    weight: int


@dataclass(frozen=True)
class StreamModel:
    """Which updates a stream may contain.

    ``insertion_only`` allows positive weights, ``turnstile`` allows any
    integer weight, and ``tau_bounded`` allows only +1/-1 with
    ``F2(f) >= F2(h) / tau`` at every prefix.
    """

    kind: str = INSERTION_ONLY
    tau: float | None = None

    def __post_init__(self):
        if self.kind not in (INSERTION_ONLY, TURNSTILE, TAU_BOUNDED):
            raise ParameterError(f"unknown stream model {self.kind!r}")
        if self.kind == TAU_BOUNDED and (self.tau is None or self.tau < 1):
            raise ParameterError("tau_bounded model needs tau >= 1")

    def check(self, update: StreamUpdate, n: int | None = None) -> None:
        """Raise :class:`ModelViolation` if one update is not admissible.

        The tau condition involves the whole prefix and is checked by
        :meth:`FrequencyVector.tau_ok` instead.
        """
        item, weight = update
        if n is not None and not 1 <= item <= n:
            raise ModelViolation(f"item {item} outside domain [1, {n}]")
        if self.kind == INSERTION_ONLY and weight < 0:
            raise ModelViolation(f"negative weight {weight} in an insertion-only stream")
        if self.kind == TAU_BOUNDED and weight not in (1, -1):
            raise ModelViolation(f"weight {weight} not in +-1 for a tau-bounded stream")


class FrequencyVector:
    """Exact frequency state ``f`` plus the absolute-weight vector ``h``.

    ``f2`` and ``h2`` are maintained incrementally; :func:`exact_f2`
    recomputes from the counts.
    """

    def __init__(self, n: int | None = None):
        self.n = n
        self.counts: dict[int, int] = {}
        self.absolute_counts: dict[int, int] = {}
        self.f2 = 0
        self.h2 = 0

    def update(self, item: int, weight: int) -> None:
        if self.n is not None and not 1 <= item <= self.n:
            raise ParameterError(f"item {item} outside domain [1, {self.n}]")
        old = self.counts.get(item, 0)
        self.counts[item] = old + weight
        self.f2 += 2 * old * weight + weight * weight
        h_old = self.absolute_counts.get(item, 0)
        a = abs(weight)
        self.absolute_counts[item] = h_old + a
        self.h2 += 2 * h_old * a + a * a

    def extend(self, updates: Iterable[StreamUpdate]) -> "FrequencyVector":
        for item, weight in updates:
            self.update(item, weight)
        return self

    @property
    def distinct(self) -> int:
        return len(self.counts)

    def tau_ok(self, tau: float) -> bool:
        return self.f2 * tau >= self.h2


def exact_f2(fv: FrequencyVector) -> int:
    return sum(v * v for v in fv.counts.values())


def exact_distinct(fv: FrequencyVector) -> int:
    """Number of items that appeared in the stream, deleted or not."""
    return sum(1 for _ in fv.counts)


def exact_trace(updates: Iterable[StreamUpdate], functionality: str = "f2",
                n: int | None = None) -> list[int]:
    """Exact value of the functionality after every prefix of the stream."""
    fv = FrequencyVector(n)
    out = []
    for item, weight in updates:
        fv.update(item, weight)
        out.append(fv.f2 if functionality == "f2" else fv.distinct)
    return out


# --- oblivious sketches ---------------------------------------------------


class ObliviousSketch(ABC):
    """A streaming estimator whose randomness is fixed by ``seed``."""

    @abstractmethod
    def update(self, item: int, weight: int) -> None: ...

    @abstractmethod
    def estimate(self) -> float: ...


def ams_shape(alpha: float, groups: int = 12,
              per_group: int | None = None) -> tuple[int, int]:
    """Counter layout ``(groups, per_group)``; ``per_group`` defaults to ceil(6/alpha^2)."""
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    if per_group is None:
        per_group = math.ceil(6 / alpha ** 2)
    if groups < 1 or per_group < 1:
        raise ParameterError("groups and per_group must be positive")
    return groups, per_group


def ams_coefficients(seed: int, counters: int) -> np.ndarray:
    """Degree-3 polynomial coefficients, shape (4, counters), one hash per counter."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, MERSENNE_31, size=(4, counters), dtype=np.uint64)


def _powers(item: int) -> tuple[int, int, int]:
    x1 = int(item) % MERSENNE_31
    x2 = x1 * x1 % MERSENNE_31
    return x1, x2, x2 * x1 % MERSENNE_31


def _ams_signs_numpy(coef: np.ndarray, item) -> np.ndarray:
    if np.ndim(item):
        x = np.asarray(item, dtype=np.uint64) % _P31
        x2 = x * x % _P31
        powers = (x, x2, x2 * x % _P31)
        coef = coef[..., None]
    else:
        powers = tuple(np.uint64(v) for v in _powers(item))
    # each term is below 2^62, so the four-term sum fits in uint64
    h = coef[0] + coef[1] * powers[0]
    h = h + coef[2] * powers[1]
    h += coef[3] * powers[2]
    t = np.empty_like(h)
    for _ in range(2):
        np.right_shift(h, _SHIFT31, out=t)
        np.bitwise_and(h, _P31, out=h)
        np.add(h, t, out=h)
    # h < 2P now; residues in [P, 2P) are h - P, of opposite parity
    parity = (h & np.uint64(1)).astype(np.int8)
    parity ^= (h >= _P31)
    return 1 - 2 * parity


if numba is not None:
    @numba.njit(cache=True, nogil=True)
    def _signs_kernel(coef, x1, x2, x3, out):  # pragma: no cover - compiled
        p = np.uint64(MERSENNE_31)
        sh = np.uint64(31)
        one = np.uint64(1)
        for c in range(coef.shape[1]):
            h = coef[0, c] + coef[1, c] * x1 + coef[2, c] * x2 + coef[3, c] * x3
            h = (h & p) + (h >> sh)
            h = (h & p) + (h >> sh)
            parity = (h & one) ^ (one if h >= p else np.uint64(0))
            out[c] = 1 - 2 * np.int8(parity)
        return out


def ams_signs(coef: np.ndarray, item) -> np.ndarray:
    """4-wise independent +-1 signs of ``item`` for every counter (int8).

    Evaluates ``a3 x^3 + a2 x^2 + a1 x + a0 mod (2^31 - 1)`` from the
    reduced powers of ``x``; the sign is the parity of the residue.  An
    array of items gives shape ``(counters, len(items))``.
    """
    if numba is None or np.ndim(item):
        return _ams_signs_numpy(coef, item)
    x1, x2, x3 = (np.uint64(v) for v in _powers(item))
    return _signs_kernel(coef, x1, x2, x3, np.empty(coef.shape[1], dtype=np.int8))


def _add_scaled(counters: np.ndarray, signs: np.ndarray, weight: int) -> None:
    if weight == 1:
        np.add(counters, signs, out=counters)
    elif weight == -1:
        np.subtract(counters, signs, out=counters)
    elif weight:
        counters += signs.astype(np.int64) * weight


def _median_of_means(counters: np.ndarray) -> np.ndarray:
    sq = counters.astype(np.float64) ** 2
    return np.median(sq.mean(axis=-1), axis=-1)


class AmsF2Sketch(ObliviousSketch):
    """Tug-of-war F2 estimator: median over groups of the mean squared counter.

    Each counter ``c`` accumulates ``sign(item) * weight`` for its own
    4-wise independent sign hash, so ``E[c^2] = F2``.
    """

    def __init__(self, seed: int, alpha: float, n: int, m: int | None = None,
                 groups: int = 12, per_group: int | None = None):
        self.seed = seed
        self.n = n
        self.m = m
        self.groups, self.per_group = ams_shape(alpha, groups, per_group)
        self._coef = ams_coefficients(seed, self.groups * self.per_group)
        self.counters = np.zeros((self.groups, self.per_group), dtype=np.int64)
        self._signs: dict[int, np.ndarray] = {}

    def signs(self, item: int) -> np.ndarray:
        s = self._signs.get(item)
        if s is None:
            s = ams_signs(self._coef, item).reshape(self.groups, self.per_group)
            self._signs[item] = s
        return s

    def update(self, item: int, weight: int) -> None:
        if not 1 <= item <= self.n:
            raise ParameterError(f"item {item} outside domain [1, {self.n}]")
        _add_scaled(self.counters, self.signs(item), weight)

    def update_many(self, items, weights) -> None:
        """Apply many updates at once; same counters as calling ``update`` in turn."""
        items = np.asarray(items, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.int64)
        if items.size == 0:
            return
        if items.min() < 1 or items.max() > self.n:
            raise ParameterError(f"items outside domain [1, {self.n}]")
        signs = ams_signs(self._coef, items).astype(np.int64)
        self.counters += (signs @ weights).reshape(self.counters.shape)

    def estimate(self) -> float:
        return float(_median_of_means(self.counters))


class AmsF2Bank:
    """``k`` independent AMS sketches updated together.

    Copy ``j`` is bit-for-bit the sketch ``AmsF2Sketch(seeds[j], ...)``;
    the bank only vectorizes the work and caches the signs of each item in
    packed form.
    """

    def __init__(self, seeds: Sequence[int], alpha: float, n: int,
                 groups: int = 12, per_group: int | None = None):
        self.seeds = list(seeds)
        self.k = len(self.seeds)
        self.n = n
        self.groups, self.per_group = ams_shape(alpha, groups, per_group)
        width = self.groups * self.per_group
        self._coef = np.concatenate(
            [ams_coefficients(s, width) for s in self.seeds], axis=1)
        self._size = self.k * width
        self.counters = np.zeros((self.k, self.groups, self.per_group), dtype=np.int64)
        self._packed: dict[int, np.ndarray] = {}

    def _signs(self, item: int) -> np.ndarray:
        packed = self._packed.get(item)
        if packed is None:
            packed = np.packbits(ams_signs(self._coef, item) > 0)
            self._packed[item] = packed
        bits = np.unpackbits(packed, count=self._size).view(np.int8)
        return (2 * bits - 1).reshape(self.counters.shape)

    def update(self, item: int, weight: int) -> None:
        if not 1 <= item <= self.n:
            raise ParameterError(f"item {item} outside domain [1, {self.n}]")
        if weight:
            _add_scaled(self.counters, self._signs(item), weight)

    def estimates(self) -> np.ndarray:
        return _median_of_means(self.counters)


class SketchBank:
    """``k`` arbitrary oblivious sketches fed the same stream."""

    def __init__(self, sketches: Sequence[ObliviousSketch]):
        self.sketches = list(sketches)
        self.k = len(self.sketches)

    def update(self, item: int, weight: int) -> None:
        for sk in self.sketches:
            sk.update(item, weight)

    def estimates(self) -> np.ndarray:
        return np.array([sk.estimate() for sk in self.sketches], dtype=np.float64)


class KmvSketch(ObliviousSketch):
    """k-minimum-values distinct-elements estimator.

    Items hash to (0, 1] with a seeded pairwise-independent hash; the
    estimate is ``(k - 1) / v_k`` where ``v_k`` is the k-th smallest hash
    seen, or the exact count while fewer than ``k`` items were seen.  The
    weight is ignored: an item counts once it has appeared.
    """

    def __init__(self, seed: int, k: int = 400, n: int | None = None):
        if k < 2:
            raise ParameterError("KMV needs k >= 2")
        self.seed = seed
        self.k = k
        self.n = n
        rng = np.random.default_rng(seed)
        self._a = int(rng.integers(1, MERSENNE_61))
        self._b = int(rng.integers(0, MERSENNE_61))
        self._heap: list[float] = []  # negated k smallest hashes
        self._kept: set[float] = set()

    def hash(self, item: int) -> float:
        return ((self._a * item + self._b) % MERSENNE_61 + 1) / MERSENNE_61

    def update(self, item: int, weight: int = 1) -> None:
        if self.n is not None and not 1 <= item <= self.n:
            raise ParameterError(f"item {item} outside domain [1, {self.n}]")
        v = self.hash(item)
        if v in self._kept:
            return
        if len(self._heap) < self.k:
            heapq.heappush(self._heap, -v)
            self._kept.add(v)
        elif v < -self._heap[0]:
            self._kept.discard(-heapq.heapreplace(self._heap, -v))
            self._kept.add(v)

    def estimate(self) -> float:
        if len(self._heap) < self.k:
            return float(len(self._heap))
        return (self.k - 1) / -self._heap[0]


# --- flip number and bounded deletion ------------------------------------


def _within_factor(v: float, anchor: float, alpha: float) -> bool:
    if v == 0 or anchor == 0:
        return v == anchor
    if (v > 0) != (anchor > 0):
        return False
    v, anchor = abs(v), abs(anchor)
    return anchor / (1 + alpha) <= v <= anchor * (1 + alpha)


def flip_indices(trace: Sequence[float], alpha: float) -> list[int]:
    """Positions (0-based) at which the anchor scan registers a flip.

    The anchor starts at the first value; a value outside
    ``[anchor/(1+alpha), anchor*(1+alpha)]`` is a flip and becomes the new
    anchor.  Sign changes and moves between zero and nonzero always flip.
    """
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    out = []
    it = iter(enumerate(trace))
    try:
        _, anchor = next(it)
    except StopIteration:
        return out
    for i, v in it:
        if not _within_factor(v, anchor, alpha):
            out.append(i)
            anchor = v
    return out


def flip_number(trace: Sequence[float], alpha: float) -> int:
    return len(flip_indices(trace, alpha))


def norm_history(updates: Iterable[StreamUpdate]) -> list[tuple[int, int]]:
    """``(||f||^2, ||h||^2)`` after every prefix of a +-1 stream."""
    fv = FrequencyVector()
    out = []
    for i, (item, weight) in enumerate(updates, start=1):
        if weight not in (1, -1):
            raise ModelViolation(f"update {i}: weight {weight} is not +-1")
        fv.update(item, weight)
        out.append((fv.f2, fv.h2))
    return out


def min_tau(updates: Iterable[StreamUpdate]) -> float:
    """Smallest tau for which the +-1 stream is tau-bounded.

    Returns ``math.inf`` if some prefix has ``f = 0`` but ``h != 0``, and
    1.0 for an empty stream.
    """
    worst = 1.0
    for f2, h2 in norm_history(updates):
        if f2 == 0:
            if h2 > 0:
                return math.inf
            continue
        worst = max(worst, h2 / f2)
    return worst
