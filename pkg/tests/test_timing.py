import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsample.timing import (
    expected_max_tau,
    expected_round_time_bound,
    linear_round_time_bound,
    monte_carlo_expected_round_time,
    realized_round_time,
)

from helpers import make_model, random_model, random_q


def enumerate_max_tau(tau, q):
    """E[max tau over sampled clients] by summing over all 2^N outcomes (empty -> 0)."""
    outcomes = np.array(list(itertools.product([0, 1], repeat=len(q))), dtype=bool)
    prob = np.prod(np.where(outcomes, q, 1 - q), axis=1)
    slowest = np.where(outcomes, tau, 0.0).max(axis=1)
    return float(prob @ slowest)


def scan_round_time(tau, t, f_tot, step=1e-6, span=20.0):
    """Root of sum t/(T - tau) = f_tot by a dense scan for the sign change."""
    start = tau.max()
    for offset in np.arange(0.0, span, 1.0):
        grid = start + offset + step * np.arange(1, int(1.0 / step) + 1)
        excess = (t[None, :] / (grid[:, None] - tau[None, :])).sum(axis=1) - f_tot
        below = np.flatnonzero(excess <= 0)
        if below.size:
            return grid[below[0]]
    raise AssertionError("no sign change in scan range")


class TestRealizedRoundTime:
    def test_single_participant_gets_all_bandwidth(self):
        model = make_model([2.0], [5.0], f_tot=10.0)
        timing = realized_round_time(model, [1])
        assert timing.duration == pytest.approx(2.5, abs=1e-12)
        np.testing.assert_allclose(timing.allocations, [10.0])

    @pytest.mark.parametrize("k", [1, 2, 5, 17])
    def test_identical_participants_split_evenly(self, k):
        tau, t, f_tot = 3.0, 4.0, 7.0
        model = make_model([tau] * k, [t] * k, f_tot=f_tot)
        timing = realized_round_time(model, model.ids)
        assert timing.duration == pytest.approx(tau + k * t / f_tot, abs=1e-9)
        np.testing.assert_allclose(timing.allocations, f_tot / k, rtol=1e-9)

    def test_matches_dense_scan(self):
        model = make_model([1.0, 2.5, 4.0], [3.0, 7.0, 2.0], f_tot=5.0)
        expected = scan_round_time(model.tau, model.t, model.total_bandwidth)
        assert realized_round_time(model, model.ids).duration == pytest.approx(expected, abs=2e-6)

    def test_empty_set(self):
        model = make_model([1.0, 2.0], [1.0, 1.0])
        timing = realized_round_time(model, [])
        assert timing.duration == 0.0 and timing.allocations.size == 0

    def test_boolean_mask_input(self):
        model = make_model([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        a = realized_round_time(model, np.array([True, False, True]))
        b = realized_round_time(model, [3, 1])
        assert a.duration == b.duration and a.participants == (1, 3)

    def test_ids_follow_clients_after_sorting(self):
        model = make_model([3.0, 1.0], [2.0, 4.0], f_tot=2.0)
        assert realized_round_time(model, [1]).duration == pytest.approx(3.0 + 1.0)
        assert realized_round_time(model, [2]).participants == (2,)
        with pytest.raises(KeyError):
            realized_round_time(model, [7])

    @settings(max_examples=200, deadline=None)
    @given(
        tau=st.lists(st.floats(0.01, 100.0), min_size=1, max_size=30),
        data=st.data(),
        f_tot=st.floats(0.01, 1000.0),
    )
    def test_same_finish_time_and_conservation(self, tau, data, f_tot):
        t = data.draw(st.lists(st.floats(0.01, 100.0), min_size=len(tau), max_size=len(tau)))
        model = make_model(tau, t, f_tot=f_tot)
        timing = realized_round_time(model, model.ids)
        sub_tau, sub_t = model.tau, model.t
        assert timing.duration > sub_tau.max()
        finish = sub_tau + sub_t / timing.allocations
        np.testing.assert_allclose(finish, timing.duration, rtol=0, atol=1e-9 * max(1.0, timing.duration))
        assert timing.allocations.sum() == pytest.approx(f_tot, rel=1e-9)

    def test_adding_participant_never_decreases_time(self, rng):
        for _ in range(50):
            model = random_model(rng, 8)
            members = list(model.ids[rng.permutation(8)])
            prev = 0.0
            for k in range(1, 9):
                d = realized_round_time(model, members[:k]).duration
                assert d >= prev
                prev = d


class TestExpectedMaxTau:
    def test_full_participation(self, rng):
        model = random_model(rng, 6)
        assert expected_max_tau(model, np.ones(6)) == model.tau.max()

    def test_two_clients_by_hand(self):
        model = make_model([1.0, 2.0], [1.0, 1.0])
        assert expected_max_tau(model, [0.5, 0.5]) == pytest.approx(1.25)

    def test_matches_enumeration(self, rng):
        for n in (1, 3, 7, 10):
            model = random_model(rng, n)
            q = random_q(rng, n, low=0.01)
            assert expected_max_tau(model, q) == pytest.approx(enumerate_max_tau(model.tau, q), abs=1e-12)

    def test_matches_monte_carlo(self, rng):
        model = random_model(rng, 9)
        q = random_q(rng, 9)
        draws = rng.random((10**6, 9)) < q
        mc = np.where(draws, model.tau, 0.0).max(axis=1).mean()
        assert expected_max_tau(model, q) == pytest.approx(mc, rel=0.01)

    def test_nondecreasing_in_each_q(self, rng):
        for _ in range(100):
            model = random_model(rng, 6)
            q = random_q(rng, 6)
            n = rng.integers(6)
            bumped = q.copy()
            bumped[n] = rng.uniform(q[n], 1.0)
            assert expected_max_tau(model, bumped) >= expected_max_tau(model, q) - 1e-12


class TestBounds:
    def test_single_client_bound_is_tight(self):
        model = make_model([2.0], [5.0], f_tot=10.0)
        assert expected_round_time_bound(model, [1.0]) == pytest.approx(2.5)
        assert expected_round_time_bound(model, [1.0]) == pytest.approx(realized_round_time(model, [1]).duration)

    def test_identical_full_participation_is_tight(self):
        model = make_model([3.0] * 4, [2.0] * 4, f_tot=8.0)
        realized = realized_round_time(model, model.ids).duration
        assert expected_round_time_bound(model, np.ones(4)) == pytest.approx(realized, rel=1e-12)

    def test_linear_bound_full_participation(self, rng):
        model = random_model(rng, 5)
        expected = np.sum(model.t / model.total_bandwidth + model.tau)
        assert linear_round_time_bound(model, np.ones(5)) == pytest.approx(expected)

    def test_linear_bound_dominates_on_random_instances(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 15))
            model = random_model(rng, n)
            q = random_q(rng, n, low=0.001)
            assert linear_round_time_bound(model, q) >= expected_round_time_bound(model, q) - 1e-12
            assert expected_max_tau(model, q) <= np.sum(q * model.tau) + 1e-12

    def test_linear_bound_vanishes_with_q(self, rng):
        model = random_model(rng, 5)
        values = [linear_round_time_bound(model, np.full(5, eps)) for eps in (1e-2, 1e-4, 1e-8)]
        assert values[0] > values[1] > values[2] and values[2] < 1e-6

    def test_bound_above_monte_carlo(self, rng):
        model = random_model(rng, 6)
        q = random_q(rng, 6)
        mean, se = monte_carlo_expected_round_time(model, q, 10**5, seed=1)
        assert mean <= expected_round_time_bound(model, q) + 3 * se


class TestMonteCarlo:
    def test_full_participation_is_deterministic(self, rng):
        model = random_model(rng, 5)
        mean, se = monte_carlo_expected_round_time(model, np.ones(5), 100, seed=0)
        # averaging identical floats can move the last ulp
        assert mean == pytest.approx(realized_round_time(model, model.ids).duration, rel=1e-14)
        assert se == pytest.approx(0.0, abs=1e-12)

    def test_tiny_probabilities_mean_near_zero(self, rng):
        model = random_model(rng, 5)
        mean, _ = monte_carlo_expected_round_time(model, np.full(5, 1e-9), 50, seed=0)
        assert mean == 0.0

    def test_deterministic_given_seed(self, rng):
        model = random_model(rng, 5)
        q = random_q(rng, 5)
        assert monte_carlo_expected_round_time(model, q, 20000, 3) == monte_carlo_expected_round_time(model, q, 20000, 3)

    def test_rejects_zero_draws(self, rng):
        with pytest.raises(ValueError):
            monte_carlo_expected_round_time(random_model(rng, 2), [0.5, 0.5], 0)
