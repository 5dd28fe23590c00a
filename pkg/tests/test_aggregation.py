import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedfleet.aggregation import (
    ClientUpdate,
    DPConfig,
    EmptyUpdateSet,
    InvalidBudget,
    LengthMismatch,
    MixedRounds,
    clip_l2,
    fedavg,
    gaussian_sigma,
    privatize_update,
)

# Independently derived: sqrt(2*ln(1.25/1e-5)), checked at 30 digits with mpmath.
SIGMA_EPS1_DELTA1E5 = 4.844805262605389


def naive_weighted_mean(updates):
    """Brute-force oracle: per-coordinate loop, no vectorization."""
    total = sum(u.num_examples for u in updates)
    length = len(updates[0].params)
    out = []
    for j in range(length):
        acc = 0.0
        for u in updates:
            acc += u.params[j] * u.num_examples
        out.append(acc / total)
    return np.array(out)


def make_update(client_id, params, n, rnd=1):
    return ClientUpdate(client_id, rnd, np.asarray(params, dtype=np.float64), n, "NameKeyed")


class TestFedavg:
    def test_two_client_weighted_mean(self):
        result = fedavg([make_update("a", [1.0, 3.0], 1), make_update("b", [3.0, 5.0], 3)])
        assert result.tolist() == [2.5, 4.5]

    def test_identical_updates_are_fixed_point(self):
        upd = [make_update(f"c{i}", [0.25, -1.5, 3.0], 7) for i in range(4)]
        assert np.allclose(fedavg(upd), [0.25, -1.5, 3.0], atol=1e-15)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(13)
        for _ in range(5):
            updates = [
                make_update(f"c{i}", rng.standard_normal(30), int(rng.integers(1, 50)))
                for i in range(int(rng.integers(2, 8)))
            ]
            assert np.max(np.abs(fedavg(updates) - naive_weighted_mean(updates))) < 1e-12

    def test_permutation_invariance(self):
        rng = np.random.default_rng(21)
        updates = [make_update(f"c{i}", rng.standard_normal(10), i + 1) for i in range(6)]
        expected = fedavg(updates)
        rng.shuffle(updates)
        assert np.array_equal(fedavg(updates), expected)

    def test_convex_hull_per_coordinate(self):
        rng = np.random.default_rng(34)
        updates = [make_update(f"c{i}", rng.standard_normal(15), int(rng.integers(1, 9))) for i in range(5)]
        stacked = np.stack([u.params for u in updates])
        result = fedavg(updates)
        slack = 1e-12
        assert np.all(result >= stacked.min(axis=0) - slack)
        assert np.all(result <= stacked.max(axis=0) + slack)

    def test_errors(self):
        with pytest.raises(EmptyUpdateSet):
            fedavg([])
        with pytest.raises(MixedRounds):
            fedavg([make_update("a", [1.0], 1, rnd=1), make_update("b", [2.0], 1, rnd=2)])
        with pytest.raises(LengthMismatch):
            fedavg([make_update("a", [1.0], 1), make_update("b", [2.0, 3.0], 1)])


class TestClip:
    def test_over_norm_scaled(self):
        assert np.allclose(clip_l2(np.array([3.0, 4.0]), 1.0), [0.6, 0.8], atol=1e-15)

    def test_under_norm_untouched(self):
        v = np.array([0.3, 0.4])
        assert np.array_equal(clip_l2(v, 1.0), v)

    def test_zero_vector(self):
        assert clip_l2(np.zeros(3), 2.5).tolist() == [0.0, 0.0, 0.0]

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20),
        st.floats(1e-6, 1e6),
    )
    def test_norm_bound_and_direction(self, values, clip_norm):
        v = np.array(values)
        clipped = clip_l2(v, clip_norm)
        assert np.linalg.norm(clipped) <= clip_norm * (1 + 1e-12) or np.linalg.norm(clipped) <= np.linalg.norm(v)
        norm = np.linalg.norm(v)
        if norm > 0:
            cosine = float(np.dot(v, clipped) / (norm * np.linalg.norm(clipped)))
            assert cosine > 1 - 1e-12


class TestSigma:
    def test_calibration_matches_closed_form(self):
        dp = DPConfig(enabled=True, clip_norm=1.0, epsilon=1.0, delta=1e-5)
        assert gaussian_sigma(dp) == pytest.approx(SIGMA_EPS1_DELTA1E5, rel=1e-12)

    def test_sigma_inverse_in_epsilon(self):
        base = gaussian_sigma(DPConfig(enabled=True, clip_norm=1.0, epsilon=1.0, delta=1e-5))
        halved = gaussian_sigma(DPConfig(enabled=True, clip_norm=1.0, epsilon=2.0, delta=1e-5))
        assert halved == base / 2.0

    def test_sigma_scales_with_clip_norm(self):
        doubled = gaussian_sigma(DPConfig(enabled=True, clip_norm=2.0, epsilon=1.0, delta=1e-5))
        assert doubled == pytest.approx(2 * SIGMA_EPS1_DELTA1E5, rel=1e-12)

    def test_override_wins(self):
        dp = DPConfig(enabled=True, clip_norm=1.0, epsilon=1.0, delta=1e-5, sigma_override=0.5)
        assert gaussian_sigma(dp) == 0.5

    def test_invalid_budget(self):
        with pytest.raises(InvalidBudget):
            DPConfig(enabled=True, clip_norm=1.0, epsilon=-1.0, delta=1e-5)
        with pytest.raises(InvalidBudget):
            DPConfig(enabled=True, clip_norm=1.0, epsilon=1.0, delta=1.5)


class TestPrivatize:
    def test_disabled_passthrough(self):
        rng = np.random.default_rng(0)
        trained = np.array([1.0, -2.0, 0.5])
        out = privatize_update(np.zeros(3), trained, DPConfig(enabled=False), rng)
        assert np.array_equal(out, trained)

    def test_noop_pipeline_is_bit_exact(self):
        # sigma 0 and an effectively infinite clip: output must be the trained
        # vector exactly, so an epsilon->infinity run replays a DP-off run.
        rng = np.random.default_rng(0)
        base = np.array([1e16, -3.0, 7.5])
        trained = np.array([1e16 + 1.0, -2.0, 7.25])
        dp = DPConfig(enabled=True, clip_norm=1e18, epsilon=1.0, delta=1e-5, sigma_override=0.0)
        out = privatize_update(base, trained, dp, rng)
        assert np.array_equal(out, trained)

    def test_noise_std_matches_sigma(self):
        # Monte-Carlo against the configured scale on zero deltas.
        dp = DPConfig(enabled=True, clip_norm=1.0, epsilon=1.0, delta=1e-5)
        sigma = gaussian_sigma(dp)
        rng = np.random.default_rng(42)
        d, draws = 4, 20_000
        samples = np.stack(
            [privatize_update(np.zeros(d), np.zeros(d), dp, rng) for _ in range(draws)]
        )
        stds = samples.std(axis=0)
        assert np.all(np.abs(stds - sigma) < 0.02 * sigma)

    def test_noise_is_unbiased(self):
        dp = DPConfig(enabled=True, clip_norm=10.0, epsilon=1.0, delta=1e-5, sigma_override=1.0)
        rng = np.random.default_rng(7)
        base = np.array([0.5, -0.5])
        trained = np.array([1.5, 0.5])
        draws = 100_000
        total = np.zeros(2)
        for _ in range(draws):
            total += privatize_update(base, trained, dp, rng)
        mean_dev = total / draws - trained
        assert np.all(np.abs(mean_dev) < 4 / math.sqrt(draws))

    def test_clipping_applies_to_delta(self):
        rng = np.random.default_rng(3)
        base = np.array([10.0, 10.0])
        trained = base + np.array([3.0, 4.0])
        dp = DPConfig(enabled=True, clip_norm=1.0, epsilon=1.0, delta=1e-5, sigma_override=0.0)
        out = privatize_update(base, trained, dp, rng)
        assert np.allclose(out, base + [0.6, 0.8], atol=1e-12)

    def test_deterministic_given_seed(self):
        dp = DPConfig(enabled=True, clip_norm=1.0, epsilon=1.0, delta=1e-5)
        a = privatize_update(np.zeros(5), np.ones(5), dp, np.random.default_rng(123))
        b = privatize_update(np.zeros(5), np.ones(5), dp, np.random.default_rng(123))
        assert np.array_equal(a, b)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            privatize_update(np.zeros(2), np.zeros(3), DPConfig(enabled=False), np.random.default_rng(0))

    def test_privatized_output_feeds_fedavg(self):
        # Noisy vectors are ordinary updates; aggregation takes them unchanged.
        dp = DPConfig(enabled=True, clip_norm=1.0, epsilon=1.0, delta=1e-5)
        rng = np.random.default_rng(11)
        noisy = privatize_update(np.zeros(4), np.full(4, 0.1), dp, rng)
        result = fedavg([make_update("a", noisy, 3), make_update("b", np.zeros(4), 1)])
        assert result.shape == (4,)
