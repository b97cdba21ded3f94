import math

import pytest

from simnet.analysis import (
    all_colluder_probability,
    approx_min_tour_length,
    coin_flip_unstuck_probability,
    crash_experiment,
    expected_block_interval,
    expected_min_tour_length,
    fit_message_rate,
    fraction_power_probability,
    retarget_trajectory,
    sample_min_tour_length,
    sample_tour_lengths,
    unstuck_probability,
)


def test_unstuck_probability_is_hypergeometric():
    assert unstuck_probability(10, 2) == pytest.approx(56 / 252)
    assert unstuck_probability(30, 15) == pytest.approx(1 / math.comb(30, 15))
    assert unstuck_probability(10, 0) == pytest.approx(1.0)


def test_coin_flip_estimate():
    assert coin_flip_unstuck_probability(30) == pytest.approx(1 - (1 - 2 ** -15) ** 30)


def test_crash_fraction_matches_oracle():
    stats = crash_experiment(10, 2, range(300))
    assert stats["oracle"] == pytest.approx(56 / 252)
    assert abs(stats["unstuck_fraction"] - stats["oracle"]) <= 3 * stats["stderr"] + 0.01


def test_half_crashed_large_network_is_stuck():
    stats = crash_experiment(30, 15, range(50))
    assert stats["unstuck_fraction"] == 0.0
    assert stats["any_unstuck"] == 0.0
    assert stats["oracle"] < 1e-8


def test_tour_lengths_are_uniform():
    lengths = sample_tour_lengths(27, 20000, seed=1)
    assert lengths.min() >= 1
    assert lengths.max() <= 53
    assert lengths.mean() == pytest.approx(27, rel=0.02)
    assert sample_tour_lengths(10, 10000, seed=3).mean() == pytest.approx(10, rel=0.02)


def test_minimum_tour_length():
    exact = expected_min_tour_length(27, 10)
    assert exact == pytest.approx(5.334, abs=0.01)
    # the 2m/(n+1) shortcut ignores the discrete lower end and runs about 8% low
    assert approx_min_tour_length(27, 10) == pytest.approx(exact, rel=0.12)
    sampled = sample_min_tour_length(27, 10, 5000, seed=2)
    assert sampled.mean() == pytest.approx(exact, rel=0.05)


def test_expected_block_interval():
    assert expected_block_interval(1, 10, 10) == pytest.approx(20)
    assert expected_block_interval(27, 10, 10) == pytest.approx(2 * 10 * expected_min_tour_length(27, 10))


def test_colluder_probabilities():
    assert all_colluder_probability(8, 8, 5) == pytest.approx(1.0)
    assert all_colluder_probability(8, 0, 5) == 0.0
    assert fraction_power_probability(10, 5, 3) == pytest.approx(0.125)
    assert 0 < all_colluder_probability(8, 4, 3) < 1


def test_retarget_settles_near_target():
    for initial in (1, 1000):
        means = retarget_trajectory(initial, com=10, n=10, period=100, target_interval=100, periods=12)
        assert 20 <= means[-1] <= 30
        assert expected_block_interval(means[-1], 10, 10) == pytest.approx(100, rel=0.1)
        for before, after in zip(means, means[1:]):
            assert before // 4 <= after <= before * 4


def test_retarget_fixed_point_is_stable():
    means = retarget_trajectory(25, com=10, n=10, period=100, target_interval=100, periods=5)
    assert max(means) - min(means) <= 1


def test_halving_latency_doubles_difficulty():
    means = retarget_trajectory(25, com=5, n=10, period=100, target_interval=100, periods=5)
    assert means[-1] == pytest.approx(50, rel=0.1)
    assert all(after <= before * 4 for before, after in zip(means, means[1:]))


def test_message_rate_fit():
    fit = fit_message_rate([10, 20, 40], [1.0, 2.0, 4.0])
    assert fit["slope"] == pytest.approx(0.1)
    assert fit["intercept"] == pytest.approx(0.0, abs=1e-9)
    assert fit["r2"] == pytest.approx(1.0)
