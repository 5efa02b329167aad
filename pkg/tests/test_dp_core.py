import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robust_streaming.dp_core import (AboveThresholdState, NoiseSource, Outcome, PrivacyParams,
                                      above_threshold_init, above_threshold_step, compose,
                                      laplace_sample, median_error_bound, median_utility,
                                      private_median)
from robust_streaming.errors import InjectionExhausted, ParameterError, UsageError

# sqrt(4 ln 100) * 0.1 + 0.04, evaluated at 40 digits with mpmath
COMPOSE_2_01 = 0.469193205257869447927236714058


def zeros():
    return NoiseSource.injected(itertools.repeat(0.0))


def rank_error(values, x):
    above = sum(1 for v in values if v >= x)
    below = sum(1 for v in values if v <= x)
    half = len(values) / 2
    return max(0.0, half - above, half - below)


class TestPrivacyParams:
    def test_valid(self):
        p = PrivacyParams(0.5, 0.01)
        assert (p.epsilon, p.delta) == (0.5, 0.01)

    @pytest.mark.parametrize("eps,delta", [(-0.1, 0.1), (1.0, 1.0), (1.0, -0.01),
                                           (float("nan"), 0.1)])
    def test_invalid(self, eps, delta):
        with pytest.raises(ParameterError):
            PrivacyParams(eps, delta)


class TestNoiseSource:
    def test_injected_passthrough(self):
        assert laplace_sample(1.0, NoiseSource.injected([0.5])) == 0.5

    def test_injected_fifo_then_exhausted(self):
        src = NoiseSource.injected([1.0, -2.0])
        assert src.mode == "injected"
        assert src.laplace(3.0) == 1.0
        assert src.laplace(3.0) == -2.0
        with pytest.raises(InjectionExhausted):
            src.laplace(3.0)

    def test_gumbel_injection_needs_enough_values(self):
        with pytest.raises(InjectionExhausted):
            NoiseSource.injected([0.0, 0.0]).gumbel(3)

    def test_bad_scale(self):
        with pytest.raises(ParameterError):
            NoiseSource(0).laplace(0.0)

    def test_seeded_is_reproducible(self):
        a = [NoiseSource(11).laplace(2.0) for _ in range(1)]
        b = [NoiseSource(11).laplace(2.0) for _ in range(1)]
        assert a == b
        assert NoiseSource(11).mode == "random"

    @pytest.mark.parametrize("b", [0.5, 1.0, 7.0])
    def test_mean_absolute_value(self, b):
        src = NoiseSource(123)
        draws = np.array([src.laplace(b) for _ in range(100_000)])
        assert abs(np.abs(draws).mean() - b) <= 0.05 * b

    def test_tail_probability(self):
        src = NoiseSource(7)
        n, t = 100_000, 3.0
        draws = np.array([src.laplace(1.0) for _ in range(n)])
        p = math.exp(-t)
        se = math.sqrt(p * (1 - p) / n)
        assert abs(np.mean(np.abs(draws) > t) - p) <= 3 * se

    def test_symmetry(self):
        src = NoiseSource(5)
        draws = np.array([src.laplace(1.0) for _ in range(50_000)])
        assert abs(np.mean(draws > 0) - 0.5) < 0.01


class TestAboveThreshold:
    @pytest.mark.parametrize("t,noise,expected", [(5, 0.0, 5.0), (0, -1.5, -1.5),
                                                  (40 / 2, 2.2, 22.2)])
    def test_init_adds_noise(self, t, noise, expected):
        state = above_threshold_init(t, 1.0, NoiseSource.injected([noise]))
        assert state.noisy_threshold == pytest.approx(expected)
        assert not state.halted

    def test_zero_noise_sequence(self):
        noise = zeros()
        state = above_threshold_init(5, 1.0, noise)
        got = [above_threshold_step(state, q, 1.0, noise) for q in (3, 4, 5)]
        assert got == [Outcome.BELOW, Outcome.BELOW, Outcome.AT_OR_ABOVE]
        assert state.halted

    def test_just_below(self):
        state = AboveThresholdState(5.0, 1.0)
        assert above_threshold_step(state, 4.999, 1.0, zeros()) is Outcome.BELOW

    def test_halted_refuses(self):
        state = AboveThresholdState(0.0, 1.0, halted=True)
        with pytest.raises(UsageError):
            above_threshold_step(state, 0.0, 1.0, zeros())

    def test_halt_rate_matches_direct_simulation(self):
        eps, t, trials, horizon = 0.2, 10.0, 10_000, 100
        src = NoiseSource(2024)
        halted = 0
        for _ in range(trials):
            state = above_threshold_init(t, 2 / eps, src)
            for _ in range(horizon):
                if above_threshold_step(state, 0.0, 4 / eps, src) is Outcome.AT_OR_ABOVE:
                    halted += 1
                    break
        rng = np.random.default_rng(99)
        thr = t + rng.laplace(0, 2 / eps, trials)
        q = rng.laplace(0, 4 / eps, (trials, horizon))
        expected = np.mean((q >= thr[:, None]).any(axis=1))
        assert abs(halted / trials - expected) <= 0.02


class TestPrivateMedian:
    grid = np.arange(31, dtype=float)

    def test_utility_values(self):
        u = median_utility([1, 2, 3, 4], [0, 1, 2, 2.5, 3, 4, 5])
        assert list(u) == [-2, -1, 0, 0, 0, -1, -2]

    def test_utility_matches_rank_oracle(self):
        rng = np.random.default_rng(0)
        vals = rng.integers(0, 31, 57).astype(float)
        u = median_utility(vals, self.grid)
        assert [-x for x in u] == [rank_error(list(vals), g) for g in self.grid]

    def test_unanimous_within_rank_bound(self):
        src = NoiseSource(3)
        gamma = median_error_bound(len(self.grid), 0.5, 0.01)
        outs = [private_median([7, 7, 7, 7], self.grid, 0.5, src) for _ in range(500)]
        assert all(rank_error([7, 7, 7, 7], x) <= gamma for x in outs)

    def test_unanimous_wins_when_gap_dominates(self):
        # every other point scores <= -2, so eps0 = 20 leaves 30 * e^-20 of mass off 7
        src = NoiseSource(3)
        hits = sum(private_median([7, 7, 7, 7], self.grid, 20.0, src) == 7 for _ in range(500))
        assert hits / 500 >= 0.99

    def test_singleton_grid(self):
        assert private_median([42, 42], [42.0], 0.1, NoiseSource(0)) == 42.0

    def test_zero_noise_picks_smallest_best_point(self):
        assert private_median([1, 2, 3, 4], self.grid, 1.0, zeros()) == 2.0

    def test_rank_error_bound(self):
        eps0, delta, trials = 0.5, 0.01, 300
        gamma = median_error_bound(len(self.grid), eps0, delta)
        src = NoiseSource(17)
        rng = np.random.default_rng(17)
        ok = 0
        for _ in range(trials):
            vals = list(rng.integers(0, 31, 100).astype(float))
            ok += rank_error(vals, private_median(vals, self.grid, eps0, src)) <= gamma
        assert ok / trials >= 0.99

    def test_errors(self):
        with pytest.raises(ParameterError):
            private_median([], self.grid, 0.5, NoiseSource(0))
        with pytest.raises(ParameterError):
            private_median([0.5], self.grid, 0.5, NoiseSource(0))
        with pytest.raises(ParameterError):
            private_median([1.0], self.grid, 0.0, NoiseSource(0))

    def test_error_bound_formula(self):
        assert median_error_bound(31, 0.5, 0.01) == pytest.approx(4 * math.log(3100))


class TestCompose:
    def test_empty(self):
        p = compose(0, 0.3, 0.0, 0.01)
        assert (p.epsilon, p.delta) == (0.0, 0.01)

    def test_two_fold(self):
        p = compose(2, 0.1, 0.0, 0.01)
        assert p.epsilon == pytest.approx(COMPOSE_2_01, rel=1e-14)
        assert p.delta == 0.01

    def test_delta_adds(self):
        assert compose(3, 0.1, 1e-4, 0.01).delta == pytest.approx(0.0103)

    @pytest.mark.parametrize("args", [(-1, 0.1, 0, 0.1), (1.5, 0.1, 0, 0.1), (1, 0.0, 0, 0.1),
                                      (1, 1.5, 0, 0.1), (1, 0.1, 0, 0.0), (1, 0.1, 2.0, 0.1)])
    def test_rejects(self, args):
        with pytest.raises(ParameterError):
            compose(*args)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2000), st.integers(0, 50), st.floats(1e-4, 0.5),
           st.floats(1e-9, 0.5))
    def test_monotone(self, count, extra, eps, dprime):
        base = compose(count, eps, 0.0, dprime).epsilon
        assert compose(count + extra, eps, 0.0, dprime).epsilon >= base
        assert compose(count, min(1.0, eps * 1.5), 0.0, dprime).epsilon >= base
