"""Federated analytics under local differential privacy.

Devices never ship raw statistics. A report is de-identified (fresh pseudonym
per query, stable id stripped) and its value is either bucketized and pushed
through k-ary randomized response (frequency queries) or clipped for a
noised-mean query. The server debiases the randomized-response histogram with
the standard unbiased estimator and ranks heavy hitters per cluster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

KIND_HEAVY_HITTERS = "heavy_hitters"
KIND_DP_MEAN = "dp_mean"


class AnalyticsError(Exception):
    pass


class OutOfDomain(AnalyticsError):
    pass


class DegenerateBudget(AnalyticsError):
    pass


class NoReports(AnalyticsError):
    pass


class EmptyInput(AnalyticsError):
    pass


class BadQuery(AnalyticsError):
    pass


@dataclass(frozen=True)
class BucketSpec:
    """Half-open buckets [e_i, e_{i+1}) over strictly increasing edges."""

    edges: tuple[float, ...]
    clamp: bool = True

    def __post_init__(self):
        if len(self.edges) < 3:
            raise BadQuery("need at least 3 edges (2 buckets)")
        if any(a >= b for a, b in zip(self.edges, self.edges[1:])):
            raise BadQuery("bucket edges must be strictly increasing")

    @property
    def n_buckets(self) -> int:
        return len(self.edges) - 1

    def to_json(self) -> dict:
        return {"edges": list(self.edges), "clamp": self.clamp}

    @staticmethod
    def from_json(obj: dict) -> "BucketSpec":
        return BucketSpec(tuple(float(e) for e in obj["edges"]), bool(obj.get("clamp", True)))


def default_step_buckets() -> BucketSpec:
    """Daily step counts, 2000-step buckets up to 24000, clamped."""
    return BucketSpec(tuple(float(e) for e in range(0, 24001, 2000)), clamp=True)


@dataclass(frozen=True)
class HeavyHittersQuery:
    query_id: str
    buckets: BucketSpec
    k: int
    epsilon: float
    cluster_by: str
    attribute: str = "steps"

    def __post_init__(self):
        if self.k < 1 or self.k > self.buckets.n_buckets:
            raise BadQuery(f"k must be in [1, {self.buckets.n_buckets}], got {self.k}")
        if self.epsilon <= 0:
            raise BadQuery(f"epsilon must be > 0, got {self.epsilon}")

    kind = KIND_HEAVY_HITTERS

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "kind": self.kind,
            "buckets": self.buckets.to_json(),
            "k": self.k,
            "epsilon": self.epsilon,
            "cluster_by": self.cluster_by,
            "attribute": self.attribute,
        }


@dataclass(frozen=True)
class DPMeanQuery:
    query_id: str
    attribute: str
    clip_lo: float
    clip_hi: float
    epsilon: float

    def __post_init__(self):
        if self.clip_lo >= self.clip_hi:
            raise BadQuery(f"clip_lo must be < clip_hi, got [{self.clip_lo}, {self.clip_hi}]")
        if self.epsilon <= 0:
            raise BadQuery(f"epsilon must be > 0, got {self.epsilon}")

    kind = KIND_DP_MEAN

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "kind": self.kind,
            "attribute": self.attribute,
            "clip_lo": self.clip_lo,
            "clip_hi": self.clip_hi,
            "epsilon": self.epsilon,
        }


FAQuery = HeavyHittersQuery | DPMeanQuery


def query_from_json(obj: dict) -> FAQuery:
    try:
        kind = obj["kind"]
        if kind == KIND_HEAVY_HITTERS:
            return HeavyHittersQuery(
                query_id=str(obj["query_id"]),
                buckets=BucketSpec.from_json(obj["buckets"]),
                k=int(obj["k"]),
                epsilon=float(obj["epsilon"]),
                cluster_by=str(obj["cluster_by"]),
                attribute=str(obj.get("attribute", "steps")),
            )
        if kind == KIND_DP_MEAN:
            return DPMeanQuery(
                query_id=str(obj["query_id"]),
                attribute=str(obj["attribute"]),
                clip_lo=float(obj["clip_lo"]),
                clip_hi=float(obj["clip_hi"]),
                epsilon=float(obj["epsilon"]),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise BadQuery(f"malformed query object: {exc}") from exc
    raise BadQuery(f"unknown query kind {obj.get('kind')!r}")


@dataclass
class PerturbedReport:
    """De-identified client response. No stable client identity anywhere."""

    query_id: str
    pseudonym: str
    payload: float | int | None = None
    cluster: str | None = None

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "pseudonym": self.pseudonym,
            "payload": self.payload,
            "cluster": self.cluster,
        }


@dataclass
class HeavyHitterResult:
    query_id: str
    # cluster -> ranked [(bucket index, estimated count)], estimate descending
    per_cluster: dict[str, list[tuple[int, float]]] = field(default_factory=dict)
    n_reports: int = 0

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "kind": KIND_HEAVY_HITTERS,
            "per_cluster": [
                {"cluster": c, "top": [{"bucket": b, "estimate": e} for b, e in top]}
                for c, top in sorted(self.per_cluster.items())
            ],
            "n_reports": self.n_reports,
        }


def bucketize(value: float, spec: BucketSpec) -> int:
    """Index of the half-open bucket containing value.

    With clamp on, out-of-range values fold into the first/last bucket;
    otherwise they raise OutOfDomain (the top edge is exclusive).
    """
    edges = spec.edges
    if value < edges[0]:
        if spec.clamp:
            return 0
        raise OutOfDomain(f"{value} below domain start {edges[0]}")
    if value >= edges[-1]:
        if spec.clamp:
            return spec.n_buckets - 1
        raise OutOfDomain(f"{value} at or above domain end {edges[-1]}")
    return int(np.searchsorted(edges, value, side="right")) - 1


def krr_probabilities(n_buckets: int, epsilon: float) -> tuple[float, float]:
    """(p, q): keep-truth probability and per-other-bucket probability."""
    e = math.exp(epsilon)
    return e / (e + n_buckets - 1), 1.0 / (e + n_buckets - 1)


def krr_perturb(true_bucket: int, n_buckets: int, epsilon: float, rng: np.random.Generator) -> int:
    """k-ary randomized response: keep the truth w.p. p, else a uniform other bucket."""
    if not 0 <= true_bucket < n_buckets:
        raise OutOfDomain(f"bucket {true_bucket} outside [0, {n_buckets})")
    p, _ = krr_probabilities(n_buckets, epsilon)
    if rng.random() < p:
        return true_bucket
    other = int(rng.integers(0, n_buckets - 1))
    return other if other < true_bucket else other + 1


def debias_histogram(observed: np.ndarray, n: int, n_buckets: int, epsilon: float) -> np.ndarray:
    """Unbiased true-count estimates from randomized-response counts.

    n_hat_v = (c_v - n q) / (p - q). The estimator preserves the report total
    and may legitimately go negative for rare buckets.
    """
    observed = np.asarray(observed, dtype=np.float64)
    if observed.shape != (n_buckets,):
        raise AnalyticsError(f"observed must have {n_buckets} entries, got {observed.shape}")
    if n < 1 or int(round(float(observed.sum()))) != n:
        raise AnalyticsError(f"observed counts sum {observed.sum()} != n={n}")
    p, q = krr_probabilities(n_buckets, epsilon)
    if p == q:
        raise DegenerateBudget("p == q leaves the histogram unidentifiable")
    return (observed - n * q) / (p - q)


def heavy_hitters(reports: list[PerturbedReport], query: HeavyHittersQuery) -> HeavyHitterResult:
    """Debias per cluster and rank the top-k buckets.

    Ranking is estimate-descending with ties broken toward the lower bucket
    index. Clusters without reports simply do not appear.
    """
    if not reports:
        raise NoReports(f"no reports for query {query.query_id!r}")
    n_buckets = query.buckets.n_buckets
    by_cluster: dict[str, list[int]] = {}
    for report in reports:
        if report.query_id != query.query_id:
            raise AnalyticsError(f"report for {report.query_id!r} mixed into {query.query_id!r}")
        bucket = int(report.payload)
        if not 0 <= bucket < n_buckets:
            raise OutOfDomain(f"report bucket {bucket} outside [0, {n_buckets})")
        by_cluster.setdefault(report.cluster or "", []).append(bucket)

    result = HeavyHitterResult(query_id=query.query_id, n_reports=len(reports))
    for cluster, buckets in sorted(by_cluster.items()):
        counts = np.bincount(buckets, minlength=n_buckets).astype(np.float64)
        estimates = debias_histogram(counts, len(buckets), n_buckets, query.epsilon)
        ranked = sorted(range(n_buckets), key=lambda v: (-estimates[v], v))[: query.k]
        result.per_cluster[cluster] = [(v, float(estimates[v])) for v in ranked]
    return result


def dp_mean(values: list[float], query: DPMeanQuery, rng: np.random.Generator) -> float:
    """Clipped mean with one Laplace draw on the sum, scale (hi-lo)/epsilon."""
    if not values:
        raise EmptyInput(f"no values for query {query.query_id!r}")
    clipped = np.clip(np.asarray(values, dtype=np.float64), query.clip_lo, query.clip_hi)
    scale = (query.clip_hi - query.clip_lo) / query.epsilon
    return float((clipped.sum() + rng.laplace(0.0, scale)) / len(values))


def dp_mean_result_json(query: DPMeanQuery, value: float, n_reports: int) -> dict:
    return {"query_id": query.query_id, "kind": KIND_DP_MEAN, "value": value, "n_reports": n_reports}


def de_identify(
    record: dict,
    query_id: str,
    rng: np.random.Generator,
    cluster_attr: str | None = None,
) -> PerturbedReport:
    """Report skeleton with a fresh 128-bit pseudonym; the stable id is dropped.

    The payload stays empty; the caller fills it after perturbation. Nothing in
    the output derives from the client id, so reports are unlinkable across
    queries.
    """
    token = bytes(rng.integers(0, 256, size=16, dtype=np.uint8)).hex()
    cluster = record.get(cluster_attr) if cluster_attr else None
    return PerturbedReport(query_id=query_id, pseudonym=token, cluster=cluster)


# --- recommendation rule ------------------------------------------------------

LABEL_INCREASE = "IncreaseActivity"
LABEL_MAINTAIN = "MaintainHigh"
LABEL_ON_TRACK = "OnTrack"


def band_label(user_value: float, cohort_mean: float, low: float = 0.8, high: float = 1.2) -> str:
    """Place a user against the cohort mean. A non-positive cohort mean
    collapses the bands, which reads as on-track by convention."""
    if cohort_mean <= 0:
        return LABEL_ON_TRACK
    if user_value < low * cohort_mean:
        return LABEL_INCREASE
    if user_value > high * cohort_mean:
        return LABEL_MAINTAIN
    return LABEL_ON_TRACK


def recommend(
    cohort_stats: dict,
    user_local: dict,
    low: float = 0.8,
    high: float = 1.2,
) -> dict:
    """Pair of band labels for steps and calories."""
    return {
        "steps": band_label(user_local["steps"], cohort_stats["dp_mean_steps"], low, high),
        "calories": band_label(user_local["calories"], cohort_stats["dp_mean_calories"], low, high),
    }
