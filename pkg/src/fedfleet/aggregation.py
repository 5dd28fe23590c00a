"""Example-weighted federated averaging plus client-side update privatization.

The server never cares which platform an update came from: by the time a
vector reaches fedavg it is canonical and flat. Privatization happens on the
client before upload: clip the training delta in L2, then add per-coordinate
Gaussian noise calibrated from the (epsilon, delta) budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class AggregationError(Exception):
    pass


class EmptyUpdateSet(AggregationError):
    pass


class LengthMismatch(AggregationError):
    pass


class MixedRounds(AggregationError):
    pass


class InvalidBudget(AggregationError):
    pass


@dataclass(frozen=True)
class ClientUpdate:
    client_id: str
    round: int
    params: np.ndarray
    num_examples: int
    platform: str


@dataclass(frozen=True)
class DPConfig:
    enabled: bool = False
    clip_norm: float = 1.0
    epsilon: float = 1.0
    delta: float = 1e-5
    sigma_override: float | None = None

    def __post_init__(self):
        if self.enabled:
            if self.clip_norm <= 0:
                raise InvalidBudget(f"clip_norm must be > 0, got {self.clip_norm}")
            if self.epsilon <= 0:
                raise InvalidBudget(f"epsilon must be > 0, got {self.epsilon}")
            if not 0 < self.delta < 1:
                raise InvalidBudget(f"delta must be in (0,1), got {self.delta}")
            if self.sigma_override is not None and self.sigma_override < 0:
                raise InvalidBudget(f"sigma_override must be >= 0, got {self.sigma_override}")

    def to_json(self) -> dict:
        return {
            "enabled": self.enabled,
            "clip_norm": self.clip_norm,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "sigma_override": self.sigma_override,
        }

    @staticmethod
    def from_json(obj: dict) -> "DPConfig":
        return DPConfig(
            enabled=bool(obj.get("enabled", False)),
            clip_norm=float(obj.get("clip_norm", 1.0)),
            epsilon=float(obj.get("epsilon", 1.0)),
            delta=float(obj.get("delta", 1e-5)),
            sigma_override=None if obj.get("sigma_override") is None else float(obj["sigma_override"]),
        )


def fedavg(updates: list[ClientUpdate]) -> np.ndarray:
    """Coordinate-wise mean weighted by example counts.

    Summation runs in ascending client_id order so the result is independent
    of arrival order.
    """
    if not updates:
        raise EmptyUpdateSet("no client updates to aggregate")
    rounds = {u.round for u in updates}
    if len(rounds) > 1:
        raise MixedRounds(f"updates span rounds {sorted(rounds)}")
    length = updates[0].params.shape[0]
    if any(u.params.shape != (length,) for u in updates):
        raise LengthMismatch("updates carry different parameter lengths")

    total = sum(u.num_examples for u in updates)
    out = np.zeros(length)
    for update in sorted(updates, key=lambda u: u.client_id):
        out += update.params * (update.num_examples / total)
    return out


def clip_l2(delta: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale delta to L2 norm at most clip_norm; direction is preserved."""
    if clip_norm <= 0:
        raise InvalidBudget(f"clip_norm must be > 0, got {clip_norm}")
    norm = float(np.linalg.norm(delta))
    if norm <= clip_norm:
        return np.array(delta, dtype=np.float64)
    return np.asarray(delta, dtype=np.float64) * (clip_norm / norm)


def gaussian_sigma(dp: DPConfig) -> float:
    """Per-round Gaussian noise scale: sigma = C * sqrt(2 ln(1.25/delta)) / epsilon.

    sigma_override short-circuits the calibration (experiment knob).
    """
    if not dp.enabled:
        raise InvalidBudget("gaussian_sigma needs an enabled DP config")
    if dp.sigma_override is not None:
        return dp.sigma_override
    if dp.epsilon <= 0 or not 0 < dp.delta < 1:
        raise InvalidBudget(f"epsilon={dp.epsilon}, delta={dp.delta}")
    return dp.clip_norm * math.sqrt(2.0 * math.log(1.25 / dp.delta)) / dp.epsilon


def privatize_update(
    base_params: np.ndarray,
    trained_params: np.ndarray,
    dp: DPConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Clip the training delta and add Gaussian noise before upload.

    Disabled DP passes the trained vector through untouched. The zero-noise,
    no-clip configuration is an exact no-op (bit-identical output), so an
    epsilon->infinity run reproduces a DP-off run.
    """
    base = np.asarray(base_params, dtype=np.float64)
    trained = np.asarray(trained_params, dtype=np.float64)
    if base.shape != trained.shape:
        raise LengthMismatch(f"base {base.shape} vs trained {trained.shape}")
    if not dp.enabled:
        return trained.copy()

    sigma = gaussian_sigma(dp)
    delta = trained - base
    norm = float(np.linalg.norm(delta))
    if sigma == 0.0 and norm <= dp.clip_norm:
        return trained.copy()
    clipped = delta if norm <= dp.clip_norm else delta * (dp.clip_norm / norm)
    noise = rng.normal(0.0, sigma, size=base.shape) if sigma > 0 else 0.0
    return base + clipped + noise
