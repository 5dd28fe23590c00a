"""End-to-end demo flows: coordinator, sessions, and a device fleet in one
process, talking over real loopback sockets.

Demos are bit-reproducible for a given seed: the coordinator records logical
timestamps, every RNG stream derives from the run seed, and aggregation is
arrival-order independent. The one nondeterministic summary field is
duration_ms, which reports the wall clock.
"""

from __future__ import annotations

import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aggregation import DPConfig
from .analytics import DPMeanQuery, HeavyHittersQuery, default_step_buckets, recommend
from .client import ClientRunReport, fetch_manifest, run_client
from .fleet import (
    TASK_ACTIVITY,
    TASK_SLEEP,
    DeviceProfile,
    generate_fleet,
    generate_health_data,
    mean_attribute,
    validation_dataset,
)
from .model_format import from_document, new_linear_model, new_mlp_model, to_document
from .orchestrator import Orchestrator, OrchestratorConfig
from .orchestrator.session import COMPLETED, KIND_FA, KIND_FL
from .seeding import derive_seed
from .training import Hyperparams, trainer_for_model

DEMO_TASKS = ("sleep", "activity", "recommend", "hitters")

SLEEP_HP = dict(learning_rate=0.2, epochs=2, batch_size=None)
ACTIVITY_HP = dict(learning_rate=0.5, epochs=2, batch_size=None)


class DemoError(Exception):
    pass


@dataclass
class DemoResult:
    summary: dict
    final_params: np.ndarray | None = None
    fa_results: list[dict] = field(default_factory=list)
    sessions: list[dict] = field(default_factory=list)
    client_reports: list[ClientRunReport] = field(default_factory=list)


def _run_fleet_over_task(
    fleet: list[DeviceProfile], host: str, task_port: int, task_id: str, days: int
) -> list[ClientRunReport]:
    manifests = {
        platform: fetch_manifest(host, task_port, platform)
        for platform in sorted({p.platform for p in fleet})
    }
    reports: list[ClientRunReport] = []
    lock = threading.Lock()

    def drive(profile: DeviceProfile) -> None:
        entries = [t for t in manifests[profile.platform] if t["task_id"] == task_id]
        if not entries:
            report = ClientRunReport(profile.client_id, task_id, error="task not in manifest")
        else:
            report = run_client(profile, host, entries[0], days=days)
        with lock:
            reports.append(report)

    threads = [threading.Thread(target=drive, args=(p,), daemon=True) for p in fleet]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return reports


def _await_session(orch: Orchestrator, session_id: str) -> dict:
    session = orch.get_session(session_id)
    session.join(timeout=600)
    view = session.view()
    if view["state"] != COMPLETED:
        raise DemoError(f"session {session_id} ended {view['state']}: {view['reason']}")
    return view


def run_demo(
    task: str,
    clients: int,
    rounds: int = 5,
    seed: int = 1,
    days: int = 60,
    dp: DPConfig | None = None,
    fa_epsilon: float | None = None,
    data_dir: str | Path | None = None,
    port_base: int = 9001,
    port_count: int = 8,
    force_platform: str | None = None,
    orchestrator: Orchestrator | None = None,
) -> DemoResult:
    """Run one demo task end to end and return its summary plus final state.

    Passing an orchestrator keeps it alive afterwards (the caller owns it);
    otherwise one is created on a temporary data directory and shut down.
    """
    if task not in DEMO_TASKS:
        raise DemoError(f"unknown task {task!r} (choose from {', '.join(DEMO_TASKS)})")
    started = time.perf_counter()
    own_orch = orchestrator is None
    if own_orch:
        directory = Path(data_dir) if data_dir else Path(tempfile.mkdtemp(prefix="fedfleet-demo-"))
        config = OrchestratorConfig(
            data_dir=directory, admin_port=0, task_port=0, port_base=port_base, port_count=port_count, seed=seed
        )
        orchestrator = Orchestrator(config, deterministic_clock=True)
        orchestrator.start()

    try:
        fleet = generate_fleet(clients, seed, force_platform=force_platform)
        dp = dp or DPConfig()
        if task == "sleep":
            result = _demo_fl(
                orchestrator, fleet, TASK_SLEEP, rounds, seed, days, dp,
                model_doc=to_document(new_linear_model("sleep_eff", 3)),
                hp=Hyperparams(seed=derive_seed(seed, "hp", TASK_SLEEP), **SLEEP_HP),
            )
        elif task == "activity":
            result = _demo_fl(
                orchestrator, fleet, TASK_ACTIVITY, rounds, seed, days, dp,
                model_doc=to_document(
                    new_mlp_model("activity_clf", 5, 16, 3, seed=derive_seed(seed, "model-init"))
                ),
                hp=Hyperparams(seed=derive_seed(seed, "hp", TASK_ACTIVITY), **ACTIVITY_HP),
            )
        elif task == "hitters":
            result = _demo_hitters(orchestrator, fleet, seed, days, fa_epsilon or 4.0)
        else:
            result = _demo_recommend(orchestrator, fleet, seed, days, fa_epsilon or 1.0)

        result.summary["duration_ms"] = int((time.perf_counter() - started) * 1000)
        result.summary["seed"] = seed
        result.summary["clients"] = clients
        result.summary["task"] = task
        result.sessions = orchestrator.list_sessions()
        return result
    finally:
        if own_orch:
            orchestrator.shutdown()


def _demo_fl(
    orch: Orchestrator,
    fleet: list[DeviceProfile],
    task_label: str,
    rounds: int,
    seed: int,
    days: int,
    dp: DPConfig,
    model_doc: dict,
    hp: Hyperparams,
) -> DemoResult:
    model_id, version = orch.register_model(model_doc)
    session_id = f"{task_label}-1"
    orch.create_session(
        kind=KIND_FL,
        session_id=session_id,
        model_id=model_id,
        model_version=version,
        task_label=task_label,
        rounds=rounds,
        min_clients=len(fleet),
        client_fraction=1.0,
        round_timeout=300.0,
        hyperparams=hp,
        dp=dp,
    )
    reports = _run_fleet_over_task(fleet, "127.0.0.1", orch.config.task_port, session_id, days)
    _await_session(orch, session_id)

    session = orch.get_session(session_id)
    final_params = np.array(session.global_params)
    records = orch.rounds(session_id)
    summary: dict = {"rounds": rounds}
    if task_label == TASK_SLEEP:
        summary["final_global_mse"] = records[-1]["global_loss"]
    else:
        trainer = trainer_for_model(from_document(model_doc))
        trainer.set_parameters(final_params)
        _, accuracy = trainer.evaluate(validation_dataset(task_label, orch.config.seed))
        summary["accuracy"] = accuracy
    return DemoResult(summary=summary, final_params=final_params, client_reports=reports)


def _demo_fa(
    orch: Orchestrator, fleet: list[DeviceProfile], session_id: str, query: dict, seed: int, days: int
) -> tuple[dict, list[ClientRunReport]]:
    orch.create_session(
        kind=KIND_FA,
        session_id=session_id,
        query=query,
        task_label=session_id,
        min_clients=len(fleet),
        round_timeout=300.0,
        hyperparams=Hyperparams(0.1, 1, None, seed=derive_seed(seed, "fa", session_id)),
    )
    reports = _run_fleet_over_task(fleet, "127.0.0.1", orch.config.task_port, session_id, days)
    _await_session(orch, session_id)
    result = orch.fa_result(query["query_id"])
    if result is None:
        raise DemoError(f"no result recorded for query {query['query_id']}")
    return result, reports


def _demo_hitters(
    orch: Orchestrator, fleet: list[DeviceProfile], seed: int, days: int, epsilon: float
) -> DemoResult:
    query = HeavyHittersQuery(
        query_id="steps-hitters",
        buckets=default_step_buckets(),
        k=3,
        epsilon=epsilon,
        cluster_by="cluster",
        attribute="steps",
    ).to_json()
    result, reports = _demo_fa(orch, fleet, "hitters-1", query, seed, days)
    return DemoResult(
        summary={"rounds": None, "fa_result": result}, fa_results=[result], client_reports=reports
    )


def _demo_recommend(
    orch: Orchestrator, fleet: list[DeviceProfile], seed: int, days: int, epsilon: float
) -> DemoResult:
    steps_query = DPMeanQuery("steps-mean", "steps", 0.0, 20000.0, epsilon).to_json()
    calories_query = DPMeanQuery("calories-mean", "calories", 0.0, 5000.0, epsilon).to_json()
    steps_result, reports_a = _demo_fa(orch, fleet, "recommend-steps", steps_query, seed, days)
    calories_result, reports_b = _demo_fa(orch, fleet, "recommend-calories", calories_query, seed, days)

    cohort = {
        "dp_mean_steps": steps_result["value"],
        "dp_mean_calories": calories_result["value"],
    }
    label_counts: dict[str, int] = {}
    for profile in fleet:
        records = generate_health_data(profile, days)
        labels = recommend(
            cohort,
            {"steps": mean_attribute(records, "steps"), "calories": mean_attribute(records, "calories")},
        )
        key = f"steps={labels['steps']},calories={labels['calories']}"
        label_counts[key] = label_counts.get(key, 0) + 1

    fa_result = {
        "cohort": cohort,
        "recommendations": dict(sorted(label_counts.items())),
        "queries": [steps_result, calories_result],
    }
    return DemoResult(
        summary={"rounds": None, "fa_result": fa_result},
        fa_results=[steps_result, calories_result],
        client_reports=reports_a + reports_b,
    )
