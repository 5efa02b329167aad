"""Two-player streaming game, oblivious stream generators and an adaptive attack.

In every round the adversary picks an update after seeing everything so far
(including all of the algorithm's answers), then the algorithm answers.  The
transcript records the exact value of the functionality next to each answer,
computed from a private :class:`FrequencyVector` that the algorithm never sees.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from collections import deque
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BudgetExhausted, ModelViolation, ParameterError
from .sketches import (INSERTION_ONLY, TAU_BOUNDED, TURNSTILE, FrequencyVector,
                       ObliviousSketch, StreamModel, StreamUpdate)


def relative_error(output: float, exact: float) -> float:
    if exact == 0:
        return 0.0 if output == 0 else math.inf
    return abs(output - exact) / abs(exact)


def within(output: float, exact: float, alpha: float) -> bool:
    return abs(output - exact) <= alpha * abs(exact)


@dataclass
class Round:
    i: int
    item: int
    weight: int
    output: float
    exact: int
    ok: bool


@dataclass
class GameTranscript:
    alpha: float
    rounds: list[Round] = field(default_factory=list)
    violation: str | None = None
    halted: bool = False

    def __len__(self) -> int:
        return len(self.rounds)

    @property
    def outputs(self) -> list[float]:
        return [r.output for r in self.rounds]

    @property
    def updates(self) -> list[StreamUpdate]:
        return [StreamUpdate(r.item, r.weight) for r in self.rounds]

    @property
    def failure_round(self) -> int | None:
        """First round whose answer missed the exact value by more than alpha."""
        return next((r.i for r in self.rounds if not r.ok), None)

    @property
    def max_rel_error(self) -> float:
        return max((relative_error(r.output, r.exact) for r in self.rounds), default=0.0)

    @property
    def final_rel_error(self) -> float:
        if not self.rounds:
            return 0.0
        return relative_error(self.rounds[-1].output, self.rounds[-1].exact)

    def to_json(self) -> str:
        doc = {"alpha": self.alpha, "violation": self.violation, "halted": self.halted,
               "rounds": [asdict(r) for r in self.rounds]}
        return json.dumps(doc, sort_keys=True)


# --- algorithms under test -------------------------------------------------


class ObliviousAlgorithm:
    """Answers every round with the current estimate of one oblivious sketch."""

    def __init__(self, sketch: ObliviousSketch):
        self.sketch = sketch

    def respond(self, item: int, weight: int) -> float:
        self.sketch.update(item, weight)
        return self.sketch.estimate()


class ExactAlgorithm:
    """Answers with the exact value; nothing for an adversary to exploit."""

    def __init__(self, functionality: str = "f2", n: int | None = None):
        self.functionality = functionality
        self.fv = FrequencyVector(n)

    def respond(self, item: int, weight: int) -> float:
        self.fv.update(item, weight)
        return float(self.fv.f2 if self.functionality == "f2" else self.fv.distinct)


# --- adversaries -----------------------------------------------------------


class Adversary(ABC):
    """Chooses the next update from the full transcript so far."""

    model: StreamModel = StreamModel(INSERTION_ONLY)

    @abstractmethod
    def next_update(self, transcript: GameTranscript) -> StreamUpdate: ...


class ReplayAdversary(Adversary):
    """Oblivious: replays a fixed list of updates, ignoring the answers."""

    def __init__(self, updates: Sequence[StreamUpdate],
                 model: StreamModel = StreamModel(TURNSTILE)):
        self.updates = [StreamUpdate(*u) for u in updates]
        self.model = model

    def next_update(self, transcript: GameTranscript) -> StreamUpdate:
        return self.updates[len(transcript)]


class RandomStreamAdversary(Adversary):
    """Oblivious random stream over ``[1, n]``.

    Insertion-only streams add +1 to a uniform item.  Turnstile streams
    instead subtract 1 from a uniform item with probability
    ``deletion_prob``.  A tau-bounded stream deletes with that probability
    too, but only from an item with positive count, and every update must
    keep ``F2(f) >= F2(h) / tau``.  A draw that would break the bound is
    replaced by an insertion that keeps it.
    """

    def __init__(self, model: StreamModel | str, n: int, m: int, seed: int,
                 deletion_prob: float = 0.0):
        if isinstance(model, str):
            model = StreamModel(model)
        if not 0 <= deletion_prob <= 1:
            raise ParameterError("deletion_prob must lie in [0, 1]")
        self.model = model
        self.n = n
        self.m = m
        self.deletion_prob = 0.0 if model.kind == INSERTION_ONLY else deletion_prob
        self.rng = np.random.default_rng(seed)
        self._fv = FrequencyVector(n)

    def _fits(self, item: int, weight: int) -> bool:
        f = self._fv.counts.get(item, 0)
        h = self._fv.absolute_counts.get(item, 0)
        f2 = self._fv.f2 + 2 * f * weight + 1
        h2 = self._fv.h2 + 2 * h + 1
        return f2 * self.model.tau >= h2

    def _draw(self) -> StreamUpdate:
        item = int(self.rng.integers(1, self.n + 1))
        weight = 1
        if self.deletion_prob and self.rng.random() < self.deletion_prob:
            if self.model.kind != TAU_BOUNDED:
                return StreamUpdate(item, -1)
            if self._fv.counts.get(item, 0) > 0:
                weight = -1
        if self.model.kind != TAU_BOUNDED or self._fits(item, weight):
            return StreamUpdate(item, weight)
        if weight == -1 and self._fits(item, 1):
            return StreamUpdate(item, 1)
        # some insertion always fits: an item with 2h+1 <= tau(2f+1) must exist
        counts, absolute = self._fv.counts, self._fv.absolute_counts
        best = max(range(1, self.n + 1), key=lambda x: (
            (2 * counts.get(x, 0) + 1) / (2 * absolute.get(x, 0) + 1), -x))
        return StreamUpdate(best, 1)

    def next_update(self, transcript: GameTranscript) -> StreamUpdate:
        u = self._draw()
        self._fv.update(*u)
        return u

    def stream(self) -> list[StreamUpdate]:
        """The whole stream, for use outside a game."""
        return [self.next_update(None) for _ in range(self.m)]


def random_stream_adversary(model: StreamModel | str, n: int, m: int, seed: int,
                            deletion_prob: float = 0.0) -> RandomStreamAdversary:
    return RandomStreamAdversary(model, n, m, seed, deletion_prob)


def random_stream(model: StreamModel | str, n: int, m: int, seed: int,
                  deletion_prob: float = 0.0) -> list[StreamUpdate]:
    return RandomStreamAdversary(model, n, m, seed, deletion_prob).stream()


class F2ProbeAttack(Adversary):
    """Adaptive insertion-only attack on F2 estimators.

    After inserting item ``x`` the true F2 grows by exactly ``2 f_x + 1``,
    which the adversary knows because it wrote the stream.  The difference
    between the reported growth and that value is the item's *margin*.  An
    item whose margin falls below the running median of recent margins (and
    below zero) is under-counted by the estimator's hidden state and is
    kept; kept items are re-inserted, least-used first, up to ``reuse_cap``
    times each, and dropped as soon as a margin comes back high.  With
    nothing left to re-insert, a batch of ``probe_batch`` unused items is
    probed.

    Against a linear sketch with fixed signs this steers the stream onto
    items anti-aligned with the counters, so the true F2 keeps growing while
    the reported value lags behind.  Spreading insertions over many items
    matters: a single heavy item is estimated almost exactly.
    """

    def __init__(self, n: int, m: int, probe_batch: int = 1, seed: int = 0,
                 reuse_cap: int = 16, window: int = 256):
        if probe_batch < 1 or reuse_cap < 1:
            raise ParameterError("probe_batch and reuse_cap must be >= 1")
        self.model = StreamModel(INSERTION_ONLY)
        self.n = n
        self.m = m
        self.probe_batch = probe_batch
        self.reuse_cap = reuse_cap
        self.rng = np.random.default_rng(seed)
        self.counts: dict[int, int] = {}
        self.kept: dict[int, float] = {}
        self._margins: deque[float] = deque(maxlen=window)
        self._probes: list[int] = []
        self._pending: tuple[int, int] | None = None  # (item, true growth)

    def _judge(self, transcript: GameTranscript) -> None:
        if self._pending is None or not transcript.rounds:
            return
        item, true_growth = self._pending
        outs = transcript.rounds
        before = outs[-2].output if len(outs) > 1 else 0.0
        margin = outs[-1].output - before - true_growth
        self._margins.append(margin)
        cut = min(0.0, float(np.median(self._margins))) if len(self._margins) > 16 else 0.0
        if margin < cut:
            self.kept[item] = margin
        else:
            self.kept.pop(item, None)

    def _fresh(self) -> int:
        while True:
            x = int(self.rng.integers(1, self.n + 1))
            if x not in self.counts or len(self.counts) >= self.n:
                return x

    def next_update(self, transcript: GameTranscript) -> StreamUpdate:
        self._judge(transcript)
        reusable = [x for x in self.kept if self.counts[x] < self.reuse_cap]
        if reusable and not self._probes:
            item = min(reusable, key=lambda x: (self.counts[x], self.kept[x]))
        else:
            if not self._probes:
                self._probes = [self._fresh() for _ in range(self.probe_batch)]
            item = self._probes.pop()
        f = self.counts.get(item, 0)
        self.counts[item] = f + 1
        self._pending = (item, 2 * f + 1)
        return StreamUpdate(item, 1)


def f2_probe_attack(n: int, m: int, probe_batch: int = 1, seed: int = 0,
                    reuse_cap: int = 16) -> F2ProbeAttack:
    return F2ProbeAttack(n, m, probe_batch, seed, reuse_cap)


# --- the game --------------------------------------------------------------


def play_game(algorithm, adversary: Adversary, m: int, *, n: int | None = None,
              functionality: str = "f2", alpha: float = 0.1) -> GameTranscript:
    """Run ``m`` rounds of adversary update / algorithm answer.

    The game stops early if the adversary leaves its declared model (the
    transcript then carries a ``violation`` message) or if the algorithm
    raises :class:`BudgetExhausted` (``halted`` is set).
    """
    if m < 1:
        raise ParameterError("horizon m must be >= 1")
    if functionality not in ("f2", "distinct"):
        raise ParameterError(f"unknown functionality {functionality!r}")
    model = adversary.model
    fv = FrequencyVector()
    tr = GameTranscript(alpha)
    for i in range(1, m + 1):
        try:
            u = StreamUpdate(*adversary.next_update(tr))
            model.check(u, n)
            fv.update(*u)
            if model.kind == TAU_BOUNDED and not fv.tau_ok(model.tau):
                raise ModelViolation(f"round {i} breaks the tau={model.tau} bound")
        except ModelViolation as exc:
            tr.violation = str(exc)
            break
        try:
            z = float(algorithm.respond(*u))
        except BudgetExhausted:
            tr.halted = True
            break
        g = fv.f2 if functionality == "f2" else fv.distinct
        tr.rounds.append(Round(i, u.item, u.weight, z, g, within(z, g, alpha)))
    return tr


def play_stream(algorithm, updates: Iterable[StreamUpdate], **kw) -> GameTranscript:
    """Convenience: a game against a replayed, oblivious stream."""
    updates = list(updates)
    kw.setdefault("alpha", 0.1)
    return play_game(algorithm, ReplayAdversary(updates), len(updates), **kw)
