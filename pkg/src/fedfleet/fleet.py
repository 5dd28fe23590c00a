"""Synthetic wearable-device fleet with known ground truth.

Each simulated device gets an archetype (distribution parameters for its
daily health stats, loaded from archetypes.json so experiments can swap them),
a platform, a cluster label, and a derived seed. The sleep-efficiency label is
produced by a fixed linear-plus-noise function of the daily stats, which makes
federated fits objectively checkable against a closed-form least-squares
baseline on the pooled data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .model_format import PLATFORM_INDEX_KEYED, PLATFORM_NAME_KEYED
from .seeding import derive_rng, derive_seed
from .training import TASK_CLASSIFICATION, TASK_REGRESSION, Dataset

ARCHETYPES = ("Sedentary", "Moderate", "Active")
CLUSTERS = ("year-1", "year-2", "year-3", "year-4")

TASK_SLEEP = "sleep"
TASK_ACTIVITY = "activity"

# seed-derivation purpose tags (device-side streams)
STREAM_DATA = 0
STREAM_DP = 1
STREAM_FA = 2
STREAM_FIT = 3
# orchestrator-side reserved stream for the server-held validation split
STREAM_VALIDATION = 1001


@dataclass(frozen=True)
class DeviceProfile:
    client_id: str
    platform: str
    archetype: str
    cluster: str
    seed: int


@dataclass(frozen=True)
class HealthRecord:
    day: int
    avg_heart_rate: float
    steps: float
    calories: float
    sleep_h: float
    screen_h: float
    sleep_efficiency: float


def _load_archetype_params() -> dict:
    with resources.files(__package__).joinpath("archetypes.json").open("r") as fh:
        return json.load(fh)


_ARCHETYPE_PARAMS = _load_archetype_params()


def generate_fleet(n: int, seed: int, force_platform: str | None = None) -> list[DeviceProfile]:
    """Deterministic fleet: platforms alternate, archetypes and clusters
    round-robin, per-device seeds derive from (fleet seed, index)."""
    if n < 1:
        raise ValueError(f"fleet size must be >= 1, got {n}")
    profiles = []
    for i in range(n):
        platform = PLATFORM_NAME_KEYED if i % 2 == 0 else PLATFORM_INDEX_KEYED
        profiles.append(
            DeviceProfile(
                client_id=f"c{i:04d}",
                platform=force_platform or platform,
                archetype=ARCHETYPES[i % len(ARCHETYPES)],
                cluster=CLUSTERS[i % len(CLUSTERS)],
                seed=derive_seed(seed, i),
            )
        )
    return profiles


def sleep_efficiency_truth(screen_h: float, steps: float, sleep_h: float, noise: float = 0.0) -> float:
    """Normative synthetic label:
    clamp(0.85 - 0.03*screen_h + 0.015*(steps/1000) - 0.02*|sleep_h - 7.5| + noise, 0, 1)
    """
    raw = 0.85 - 0.03 * screen_h + 0.015 * (steps / 1000.0) - 0.02 * abs(sleep_h - 7.5) + noise
    return float(min(1.0, max(0.0, raw)))


def generate_health_data(profile: DeviceProfile, days: int) -> list[HealthRecord]:
    """Daily records drawn from the device's archetype distributions."""
    if days < 1:
        raise ValueError(f"days must be >= 1, got {days}")
    params = _ARCHETYPE_PARAMS[profile.archetype]
    rng = derive_rng(profile.seed, STREAM_DATA)
    records = []
    for day in range(days):
        hr = max(30.0, rng.normal(*params["avg_heart_rate"]))
        steps = max(0.0, rng.normal(*params["steps"]))
        calories = max(0.0, rng.normal(*params["calories"]))
        sleep_h = float(np.clip(rng.normal(*params["sleep_h"]), 0.0, 24.0))
        screen_h = float(np.clip(rng.normal(*params["screen_h"]), 0.0, 24.0))
        label = sleep_efficiency_truth(screen_h, steps, sleep_h, noise=rng.normal(0.0, 0.02))
        records.append(HealthRecord(day, hr, steps, calories, sleep_h, screen_h, label))
    return records


# --- feature builders -----------------------------------------------------------
#
# Standardization constants are fixed (approximate population moments for the
# default archetype mix), never estimated from data, so every client and the
# server featurize identically.

_SLEEP_CENTER = np.array([4.7, 8.0, 0.76])
_SLEEP_SCALE = np.array([1.9, 3.8, 0.55])
_ACTIVITY_CENTER = np.array([72.0, 8000.0, 2250.0, 7.3, 4.7])
_ACTIVITY_SCALE = np.array([10.0, 4000.0, 500.0, 1.0, 1.9])


def sleep_features(records: list[HealthRecord]) -> np.ndarray:
    raw = np.array(
        [[r.screen_h, r.steps / 1000.0, abs(r.sleep_h - 7.5)] for r in records]
    )
    return (raw - _SLEEP_CENTER) / _SLEEP_SCALE


def activity_features(records: list[HealthRecord]) -> np.ndarray:
    raw = np.array(
        [[r.avg_heart_rate, r.steps, r.calories, r.sleep_h, r.screen_h] for r in records]
    )
    return (raw - _ACTIVITY_CENTER) / _ACTIVITY_SCALE


def build_sleep_dataset(records: list[HealthRecord]) -> Dataset:
    labels = np.array([r.sleep_efficiency for r in records])
    return Dataset(sleep_features(records), labels, TASK_REGRESSION)


def build_activity_dataset(records: list[HealthRecord], archetype: str) -> Dataset:
    label = ARCHETYPES.index(archetype)
    labels = np.full(len(records), label, dtype=np.int64)
    return Dataset(activity_features(records), labels, TASK_CLASSIFICATION)


def build_task_dataset(task: str, profile: DeviceProfile, records: list[HealthRecord]) -> Dataset:
    if task == TASK_SLEEP:
        return build_sleep_dataset(records)
    if task == TASK_ACTIVITY:
        return build_activity_dataset(records, profile.archetype)
    raise ValueError(f"no dataset builder for task {task!r}")


def mean_attribute(records: list[HealthRecord], attribute: str) -> float:
    return float(np.mean([getattr(r, attribute) for r in records]))


def task_feature_width(task: str) -> int:
    return {TASK_SLEEP: 3, TASK_ACTIVITY: 5}[task]


def validation_dataset(task: str, seed: int, n_devices: int = 20, days: int = 30) -> Dataset:
    """Server-held split from a reserved seed stream; never overlaps client data."""
    profiles = generate_fleet(n_devices, derive_seed(seed, STREAM_VALIDATION))
    feature_blocks = []
    labels = []
    for profile in profiles:
        records = generate_health_data(profile, days)
        ds = build_task_dataset(task, profile, records)
        feature_blocks.append(ds.features)
        labels.append(ds.labels)
    kind = TASK_REGRESSION if task == TASK_SLEEP else TASK_CLASSIFICATION
    return Dataset(np.vstack(feature_blocks), np.concatenate(labels), kind)
