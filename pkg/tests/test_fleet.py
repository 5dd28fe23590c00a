import numpy as np
import pytest

from fedfleet.fleet import (
    ARCHETYPES,
    CLUSTERS,
    TASK_ACTIVITY,
    TASK_SLEEP,
    build_activity_dataset,
    build_sleep_dataset,
    generate_fleet,
    generate_health_data,
    mean_attribute,
    sleep_efficiency_truth,
    validation_dataset,
)
from fedfleet.model_format import PLATFORM_INDEX_KEYED, PLATFORM_NAME_KEYED
from fedfleet.training import TASK_CLASSIFICATION, TASK_REGRESSION


class TestGenerateFleet:
    def test_deterministic_in_seed(self):
        assert generate_fleet(100, 7) == generate_fleet(100, 7)
        assert generate_fleet(100, 7) != generate_fleet(100, 8)

    def test_one_profile_per_cluster_at_four(self):
        clusters = [p.cluster for p in generate_fleet(4, 1)]
        assert sorted(clusters) == sorted(CLUSTERS)

    def test_platform_split_is_even(self):
        fleet = generate_fleet(100, 3)
        named = sum(p.platform == PLATFORM_NAME_KEYED for p in fleet)
        indexed = sum(p.platform == PLATFORM_INDEX_KEYED for p in fleet)
        assert (named, indexed) == (50, 50)

    def test_archetypes_round_robin(self):
        fleet = generate_fleet(6, 2)
        assert [p.archetype for p in fleet] == list(ARCHETYPES) * 2

    def test_unique_ids_and_seeds(self):
        fleet = generate_fleet(50, 9)
        assert len({p.client_id for p in fleet}) == 50
        assert len({p.seed for p in fleet}) == 50

    def test_force_platform(self):
        fleet = generate_fleet(10, 4, force_platform=PLATFORM_NAME_KEYED)
        assert all(p.platform == PLATFORM_NAME_KEYED for p in fleet)


class TestGroundTruth:
    def test_high_end_clamps_to_one(self):
        assert sleep_efficiency_truth(screen_h=0.0, steps=10000.0, sleep_h=7.5) == 1.0

    def test_hand_computed_interior_value(self):
        # 0.85 - 0.3 - 0.0 - 0.02*4.5 = 0.46
        value = sleep_efficiency_truth(screen_h=10.0, steps=0.0, sleep_h=3.0)
        assert value == pytest.approx(0.46, abs=1e-12)

    def test_label_always_in_unit_interval(self):
        rng = np.random.default_rng(6)
        for _ in range(10_000):
            v = sleep_efficiency_truth(
                screen_h=rng.uniform(0, 24),
                steps=rng.uniform(0, 40000),
                sleep_h=rng.uniform(0, 24),
                noise=rng.normal(0, 5),
            )
            assert 0.0 <= v <= 1.0


class TestHealthData:
    def test_deterministic_per_profile(self):
        profile = generate_fleet(3, 11)[1]
        assert generate_health_data(profile, 30) == generate_health_data(profile, 30)

    def test_fields_non_negative(self):
        for profile in generate_fleet(6, 12):
            for record in generate_health_data(profile, 50):
                assert record.avg_heart_rate > 0
                assert record.steps >= 0
                assert record.calories >= 0
                assert 0 <= record.sleep_h <= 24
                assert 0 <= record.screen_h <= 24
                assert 0 <= record.sleep_efficiency <= 1

    def test_archetypes_separate_on_steps(self):
        fleet = generate_fleet(30, 13)
        by_archetype = {a: [] for a in ARCHETYPES}
        for profile in fleet:
            records = generate_health_data(profile, 40)
            by_archetype[profile.archetype].append(mean_attribute(records, "steps"))
        means = {a: np.mean(v) for a, v in by_archetype.items()}
        assert means["Sedentary"] < means["Moderate"] < means["Active"]


class TestDatasets:
    def test_sleep_dataset_shape(self):
        profile = generate_fleet(1, 5)[0]
        ds = build_sleep_dataset(generate_health_data(profile, 25))
        assert ds.task_kind == TASK_REGRESSION
        assert ds.features.shape == (25, 3)
        assert np.all((ds.labels >= 0) & (ds.labels <= 1))

    def test_activity_dataset_labels(self):
        profile = generate_fleet(3, 5)[2]
        ds = build_activity_dataset(generate_health_data(profile, 10), profile.archetype)
        assert ds.task_kind == TASK_CLASSIFICATION
        assert ds.features.shape == (10, 5)
        assert np.all(ds.labels == ARCHETYPES.index(profile.archetype))

    def test_validation_dataset_is_reserved_stream(self):
        val = validation_dataset(TASK_SLEEP, seed=1)
        again = validation_dataset(TASK_SLEEP, seed=1)
        assert np.array_equal(val.features, again.features)
        # fleet data from the same top-level seed must not reproduce it
        fleet = generate_fleet(20, 1)
        client = build_sleep_dataset(generate_health_data(fleet[0], 30))
        assert not np.array_equal(val.features[: client.features.shape[0]], client.features)

    def test_validation_activity_kind(self):
        val = validation_dataset(TASK_ACTIVITY, seed=2, n_devices=6, days=5)
        assert val.task_kind == TASK_CLASSIFICATION
        assert val.features.shape == (30, 5)
