import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from t2tlab.errors import ParameterError
from t2tlab.mixture import (
    MixtureSpec,
    MixtureStream,
    TaskStream,
    equal,
    examples_proportional,
    leave_one_out,
    mixing_rates,
    sample_task,
    temperature,
)
from t2tlab.rng import Rng


def spec_of(counts, strategy):
    tasks = tuple(TaskStream(f"task{i}", c) for i, c in enumerate(counts))
    return MixtureSpec(tasks=tasks, strategy=strategy)


class TestRates:
    def test_capping_example(self):
        rates = mixing_rates(spec_of([100, 300], examples_proportional(cap=200)))
        np.testing.assert_allclose(rates, [1 / 3, 2 / 3])

    def test_temperature_one_is_identity(self):
        a = mixing_rates(spec_of([50, 150, 700], examples_proportional(cap=500)))
        b = mixing_rates(spec_of([50, 150, 700], temperature(1.0, cap=500)))
        np.testing.assert_allclose(a, b)

    def test_temperature_two_hand_value(self):
        # sqrt(.25) / (sqrt(.25) + sqrt(.75)) = 0.36603
        rates = mixing_rates(spec_of([25, 75], temperature(2.0, cap=10**9)))
        assert rates[0] == pytest.approx(0.3660, abs=1e-4)
        assert rates[1] == pytest.approx(0.6340, abs=1e-4)

    def test_equal(self):
        np.testing.assert_allclose(mixing_rates(spec_of([5, 50, 500], equal())), [1 / 3] * 3)

    def test_big_cap_is_pure_proportional(self):
        rates = mixing_rates(spec_of([10, 30, 60], examples_proportional(cap=10**9)))
        np.testing.assert_allclose(rates, [0.1, 0.3, 0.6])

    def test_capped_tasks_get_equal_rates(self):
        rates = mixing_rates(spec_of([999, 1000, 5000, 3], examples_proportional(cap=500)))
        assert rates[0] == rates[1] == rates[2]

    @settings(max_examples=100, deadline=None)
    @given(
        counts=st.lists(st.integers(1, 10**7), min_size=1, max_size=8),
        cap=st.integers(1, 10**7),
        t=st.floats(1.0, 16.0),
        kind=st.sampled_from(["examples_proportional", "temperature", "equal"]),
    )
    def test_rates_are_probability_vector(self, counts, cap, t, kind):
        strategy = {"examples_proportional": examples_proportional(cap),
                    "temperature": temperature(t, cap),
                    "equal": equal()}[kind]
        rates = mixing_rates(spec_of(counts, strategy))
        assert (rates >= 0).all()
        assert abs(rates.sum() - 1.0) < 1e-12

    def test_temperature_monotone_toward_equal(self):
        counts = [10, 200, 4000]
        spreads = []
        for t in (1.0, 2.0, 4.0, 8.0, 16.0):
            rates = mixing_rates(spec_of(counts, temperature(t, cap=10**9)))
            spreads.append(rates.max() - rates.min())
        assert all(a >= b - 1e-12 for a, b in zip(spreads, spreads[1:]))


class TestSampling:
    def test_single_task_always_zero(self):
        spec = spec_of([7], equal())
        rng = Rng(0)
        assert all(sample_task(spec, rng) == 0 for _ in range(50))

    def test_two_thirds_frequencies(self):
        spec = spec_of([100, 300], examples_proportional(cap=200))
        rng = Rng(5)
        n = 10**6
        draws = sum(sample_task(spec, rng) for _ in range(n))  # counts task 1
        p = 2 / 3
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(draws - n * p) <= 3 * sigma

    def test_equal_four_tasks(self):
        spec = spec_of([10, 10, 10, 10], equal())
        rng = Rng(6)
        n = 100_000
        counts = np.zeros(4)
        for _ in range(n):
            counts[sample_task(spec, rng)] += 1
        p = 0.25
        sigma = math.sqrt(n * p * (1 - p))
        assert (np.abs(counts - n * p) <= 3 * sigma).all()


class TestLeaveOneOut:
    def test_two_task_spec_becomes_singleton(self):
        spec = spec_of([100, 300], examples_proportional(cap=200))
        out = leave_one_out(spec, "task0")
        assert len(out.tasks) == 1
        np.testing.assert_allclose(mixing_rates(out), [1.0])

    def test_relative_ratios_intact(self):
        spec = spec_of([100, 200, 300], examples_proportional(cap=200))
        out = leave_one_out(spec, "task2")
        rates = mixing_rates(out)
        assert rates[0] / rates[1] == pytest.approx((100 / 200))

    def test_five_task_hand_recomputation(self):
        counts = [10, 20, 40, 80, 160]
        spec = spec_of(counts, examples_proportional(cap=100))
        out = leave_one_out(spec, "task3")
        capped = [10, 20, 40, 100]
        np.testing.assert_allclose(mixing_rates(out), np.array(capped) / sum(capped))

    def test_unknown_task(self):
        with pytest.raises(ParameterError):
            leave_one_out(spec_of([1, 2], equal()), "nope")


class TestStream:
    def test_deterministic_and_wrapping(self):
        spec = spec_of([3, 5], examples_proportional(cap=10))
        examples = {"task0": ["a0", "a1", "a2"], "task1": ["b0", "b1", "b2", "b3", "b4"]}
        s1 = MixtureStream(spec, examples, seed=9)
        s2 = MixtureStream(spec, examples, seed=9)
        seq1 = [s1.example_at(i) for i in range(40)]
        seq2 = [s2.example_at(i) for i in range(40)]
        assert seq1 == seq2
        # every epoch visits each example exactly once per task
        from collections import Counter

        a_items = [ex for ti, ex in seq1 if ti == 0]
        counts = Counter(a_items[:3])
        assert set(counts.values()) == {1}
