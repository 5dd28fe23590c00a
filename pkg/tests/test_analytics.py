import numpy as np
import pytest
from scipy import stats

from fedfleet.analytics import (
    BucketSpec,
    DPMeanQuery,
    EmptyInput,
    HeavyHittersQuery,
    NoReports,
    OutOfDomain,
    PerturbedReport,
    bucketize,
    de_identify,
    debias_histogram,
    dp_mean,
    heavy_hitters,
    krr_perturb,
    krr_probabilities,
    query_from_json,
    recommend,
)

STEP_EDGES = tuple(float(e) for e in range(0, 6001, 2000))


class TestBucketize:
    def test_interval_membership(self):
        spec = BucketSpec(STEP_EDGES, clamp=True)
        assert bucketize(2500.0, spec) == 1

    def test_clamp_below(self):
        assert bucketize(-5.0, BucketSpec(STEP_EDGES, clamp=True)) == 0

    def test_clamp_above(self):
        assert bucketize(9999.0, BucketSpec(STEP_EDGES, clamp=True)) == 2

    def test_right_edge_exclusive(self):
        with pytest.raises(OutOfDomain):
            bucketize(6000.0, BucketSpec(STEP_EDGES, clamp=False))

    def test_interior_edge_belongs_right(self):
        assert bucketize(2000.0, BucketSpec(STEP_EDGES, clamp=False)) == 1


class TestKrr:
    def test_probability_ratio_exact(self):
        for eps in (0.1, 1.0, 4.0):
            p, q = krr_probabilities(12, eps)
            assert p / q == np.exp(eps)
            assert p + 11 * q == pytest.approx(1.0, rel=1e-12)

    def test_high_epsilon_keeps_truth(self):
        rng = np.random.default_rng(5)
        hits = sum(krr_perturb(3, 10, 50.0, rng) == 3 for _ in range(10_000))
        assert hits >= 9990

    def test_low_epsilon_approaches_uniform(self):
        rng = np.random.default_rng(9)
        B, draws = 8, 100_000
        counts = np.bincount([krr_perturb(2, B, 1e-6, rng) for _ in range(draws)], minlength=B)
        chi2 = float(((counts - draws / B) ** 2 / (draws / B)).sum())
        assert chi2 < stats.chi2.ppf(0.99, df=B - 1)

    def test_output_distribution_matches_p_q(self):
        rng = np.random.default_rng(31)
        B, eps, draws = 6, 1.5, 100_000
        p, q = krr_probabilities(B, eps)
        counts = np.bincount([krr_perturb(1, B, eps, rng) for _ in range(draws)], minlength=B)
        expected = np.full(B, q * draws)
        expected[1] = p * draws
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 < stats.chi2.ppf(0.99, df=B - 1)

    def test_deterministic_given_seed(self):
        a = [krr_perturb(2, 10, 2.0, np.random.default_rng(77)) for _ in range(50)]
        b = [krr_perturb(2, 10, 2.0, np.random.default_rng(77)) for _ in range(50)]
        assert a == b


class TestDebias:
    def test_hand_computed_estimate(self):
        # B=10, eps=ln 9: p=0.5, q=1/18. (200 - 1800/18) / (0.5 - 1/18) = 225.
        B, n = 10, 1800
        observed = np.full(B, (n - 200) / (B - 1))
        observed[0] = 200
        estimates = debias_histogram(observed, n, B, float(np.log(9.0)))
        assert estimates[0] == pytest.approx(225.0, abs=1e-9)

    def test_identity_limit(self):
        observed = np.array([5.0, 3.0, 2.0, 0.0])
        estimates = debias_histogram(observed, 10, 4, 50.0)
        assert np.all(np.abs(estimates - observed) < 1e-6)

    def test_single_bucket_consistency(self):
        observed = np.array([0.0, 20.0, 0.0])
        estimates = debias_histogram(observed, 20, 3, 50.0)
        assert estimates[1] == pytest.approx(20.0, abs=1e-6)
        assert np.all(np.abs(estimates[[0, 2]]) < 1e-6)

    def test_total_preservation(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            B = int(rng.integers(2, 30))
            counts = rng.multinomial(int(rng.integers(1, 5000)), rng.dirichlet(np.ones(B)))
            n = int(counts.sum())
            estimates = debias_histogram(counts.astype(float), n, B, float(rng.uniform(0.1, 8)))
            assert abs(estimates.sum() - n) < 1e-6

    def test_unbiasedness_monte_carlo(self):
        # Mean estimate over repeated perturbation runs within 3 SE of truth.
        B, eps, n, runs = 5, 1.0, 400, 500
        truth = np.array([200, 100, 50, 30, 20])
        values = np.repeat(np.arange(B), truth)
        p, q = krr_probabilities(B, eps)
        rng = np.random.default_rng(12)
        estimates = np.zeros((runs, B))
        for r in range(runs):
            keep = rng.random(n) < p
            offsets = rng.integers(1, B, size=n)
            reported = np.where(keep, values, (values + offsets) % B)
            counts = np.bincount(reported, minlength=B).astype(float)
            estimates[r] = debias_histogram(counts, n, B, eps)
        se = estimates.std(axis=0, ddof=1) / np.sqrt(runs)
        assert np.all(np.abs(estimates.mean(axis=0) - truth) < 3 * se + 1e-9)


def hh_query(edges=STEP_EDGES, k=2, epsilon=50.0):
    return HeavyHittersQuery(
        query_id="q1", buckets=BucketSpec(edges), k=k, epsilon=epsilon, cluster_by="cluster"
    )


def report(bucket, cluster="a", query_id="q1", pseudonym="p"):
    return PerturbedReport(query_id=query_id, pseudonym=pseudonym, payload=bucket, cluster=cluster)


class TestHeavyHitters:
    def test_near_noiseless_counting(self):
        reports = [report(b) for b in [0, 0, 0, 1, 1, 2]]
        result = heavy_hitters(reports, hh_query())
        top = result.per_cluster["a"]
        assert [b for b, _ in top] == [0, 1]
        assert top[0][1] == pytest.approx(3.0, abs=1e-6)
        assert top[1][1] == pytest.approx(2.0, abs=1e-6)

    def test_cluster_partition_independence(self):
        reports_a = [report(b, cluster="a") for b in [0, 1, 1]]
        reports_b = [report(b, cluster="b") for b in [2, 2, 0]]
        combined = heavy_hitters(reports_a + reports_b, hh_query())
        only_b = heavy_hitters(reports_b, hh_query())
        assert combined.per_cluster["b"] == only_b.per_cluster["b"]

    def test_tie_breaks_toward_lower_bucket(self):
        reports = [report(b) for b in [2, 0, 2, 0]]
        result = heavy_hitters(reports, hh_query(k=1))
        assert result.per_cluster["a"][0][0] == 0

    def test_no_reports(self):
        with pytest.raises(NoReports):
            heavy_hitters([], hh_query())

    def test_topk_recovery_under_noise(self):
        # Skewed truth over 20 buckets, eps=4: the debiased top-3 should match
        # the true top-3 in nearly every seeded trial.
        edges = tuple(float(e) for e in range(0, 21))
        B, k, eps, n = 20, 3, 4.0, 10_000
        wins = 0
        for trial in range(20):
            rng = np.random.default_rng(1000 + trial)
            weights = 1.0 / np.arange(1, B + 1) ** 1.1
            weights = rng.permutation(weights / weights.sum())
            true_buckets = rng.choice(B, size=n, p=weights)
            true_top = set(np.argsort(np.bincount(true_buckets, minlength=B) * -1)[:k].tolist())
            reports = [
                report(int(krr_perturb(int(b), B, eps, rng)), pseudonym=f"p{i}")
                for i, b in enumerate(true_buckets)
            ]
            result = heavy_hitters(reports, hh_query(edges=edges, k=k, epsilon=eps))
            got = {b for b, _ in result.per_cluster["a"]}
            wins += got == true_top
        assert wins >= 18


class TestDpMean:
    def test_vanishing_noise(self):
        query = DPMeanQuery("q", "steps", 0.0, 5000.0, 1e6)
        value = dp_mean([1000.0, 3000.0], query, np.random.default_rng(1))
        assert value == pytest.approx(2000.0, abs=0.1)

    def test_clipping_floor(self):
        query = DPMeanQuery("q", "steps", 0.0, 5000.0, 1e6)
        value = dp_mean([-50.0, -1.0], query, np.random.default_rng(2))
        assert value == pytest.approx(0.0, abs=0.1)

    def test_unbiased_against_clipped_mean(self):
        query = DPMeanQuery("q", "steps", 0.0, 5000.0, 1.0)
        n, runs = 10_000, 1000
        values = [2500.0] * n
        rng = np.random.default_rng(5)
        estimates = np.array([dp_mean(values, query, rng) for _ in range(runs)])
        scale = (query.clip_hi - query.clip_lo) / query.epsilon / n
        se = scale * np.sqrt(2) / np.sqrt(runs)
        assert abs(estimates.mean() - 2500.0) < 4 * se

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            dp_mean([], DPMeanQuery("q", "steps", 0.0, 1.0, 1.0), np.random.default_rng(0))


class TestDeIdentify:
    def test_fresh_pseudonym_per_query(self):
        rng = np.random.default_rng(4)
        record = {"client_id": "c0001", "steps": 2500.0, "cluster": "year-1"}
        r1 = de_identify(record, "q1", rng, cluster_attr="cluster")
        r2 = de_identify(record, "q2", rng, cluster_attr="cluster")
        assert r1.pseudonym != r2.pseudonym

    def test_output_has_no_stable_identity(self):
        rng = np.random.default_rng(4)
        record = {"client_id": "c0001", "steps": 2500.0}
        out = de_identify(record, "q1", rng).to_json()
        assert set(out) == {"query_id", "pseudonym", "payload", "cluster"}
        assert "c0001" not in str(out.values())

    def test_token_collision_scan(self):
        # Same construction as the pseudonym tokens: 16 random bytes each.
        rng = np.random.default_rng(8)
        raw = rng.integers(0, 256, size=(1_000_000, 16), dtype=np.uint8)
        tokens = {row.tobytes() for row in raw}
        assert len(tokens) == 1_000_000
        direct = {de_identify({"client_id": "x"}, "q", rng).pseudonym for _ in range(10_000)}
        assert len(direct) == 10_000


class TestRecommend:
    def test_below_band(self):
        stats_ = {"dp_mean_steps": 8000.0, "dp_mean_calories": 2000.0}
        labels = recommend(stats_, {"steps": 5000.0, "calories": 2000.0})
        assert labels == {"steps": "IncreaseActivity", "calories": "OnTrack"}

    def test_exactly_at_mean(self):
        stats_ = {"dp_mean_steps": 8000.0, "dp_mean_calories": 2000.0}
        labels = recommend(stats_, {"steps": 8000.0, "calories": 2400.0})
        assert labels == {"steps": "OnTrack", "calories": "OnTrack"}

    def test_above_band(self):
        stats_ = {"dp_mean_steps": 8000.0, "dp_mean_calories": 2000.0}
        labels = recommend(stats_, {"steps": 10000.0, "calories": 2500.0})
        assert labels == {"steps": "MaintainHigh", "calories": "MaintainHigh"}

    def test_degenerate_cohort_mean(self):
        labels = recommend({"dp_mean_steps": 0.0, "dp_mean_calories": -1.0}, {"steps": 1.0, "calories": 1.0})
        assert labels == {"steps": "OnTrack", "calories": "OnTrack"}

    def test_scale_invariance(self):
        stats_ = {"dp_mean_steps": 8000.0, "dp_mean_calories": 2000.0}
        user = {"steps": 5000.0, "calories": 2600.0}
        for factor in (0.01, 3.0, 1e4):
            scaled_stats = {k: v * factor for k, v in stats_.items()}
            scaled_user = {k: v * factor for k, v in user.items()}
            assert recommend(scaled_stats, scaled_user) == recommend(stats_, user)


class TestQueryJson:
    def test_round_trip(self):
        q = hh_query()
        assert query_from_json(q.to_json()) == q
        m = DPMeanQuery("q2", "calories", 0.0, 4000.0, 2.0)
        assert query_from_json(m.to_json()) == m
