"""Simulated device: full protocol loop for training and analytics tasks.

A device discovers tasks over the framed discovery port, joins a session on
its dedicated port, and then reacts to whatever the server sends. Training
parameters pass through the device's platform encoding in both directions
(server wire format -> platform tensors -> local runtime, and back), which is
exactly the path a real heterogeneous fleet exercises. Update privatization
and report perturbation happen here, before anything leaves the device.

A lost connection is retried once, then the device gives up and the server
treats it as a straggler.
"""

from __future__ import annotations

import socket
from dataclasses import dataclass

import numpy as np

from . import protocol
from .aggregation import DPConfig, privatize_update
from .analytics import (
    DPMeanQuery,
    HeavyHittersQuery,
    bucketize,
    de_identify,
    krr_perturb,
    query_from_json,
)
from .fleet import (
    STREAM_DP,
    STREAM_FA,
    DeviceProfile,
    HealthRecord,
    build_task_dataset,
    generate_health_data,
    mean_attribute,
)
from .model_format import (
    CanonicalModel,
    decode_from_platform,
    encode_for_platform,
    from_document,
)
from .seeding import derive_rng, derive_seed
from .training import Hyperparams, NonFiniteLoss, trainer_for_model

APP_VERSION = "1.0.0"


@dataclass
class ClientRunReport:
    client_id: str
    task_id: str
    rounds_participated: int = 0
    final_local_loss: float | None = None
    fa_reported: bool = False
    error: str | None = None


def fetch_manifest(host: str, task_port: int, platform: str, app_version: str = APP_VERSION) -> list[dict]:
    with socket.create_connection((host, task_port), timeout=10) as sock:
        protocol.write_message(
            sock,
            protocol.Message(
                type=protocol.TASK_REQUEST,
                session="",
                payload={"platform": platform, "app_version": app_version},
            ),
        )
        reply = protocol.read_message(sock)
    if reply.type != protocol.TASK_MANIFEST:
        raise protocol.ProtocolError(f"expected TaskManifest, got {reply.type}")
    return reply.payload["tasks"]


def run_client(
    profile: DeviceProfile,
    host: str,
    task: dict,
    days: int = 60,
    app_version: str = APP_VERSION,
    records: list[HealthRecord] | None = None,
) -> ClientRunReport:
    report = ClientRunReport(client_id=profile.client_id, task_id=task["task_id"])
    if records is None:
        records = generate_health_data(profile, days)

    for attempt in range(2):
        try:
            _run_connection(profile, host, task, records, app_version, report)
            return report
        except (protocol.ConnectionClosed, OSError):
            if attempt == 0:
                continue
            report.error = "ConnectionLost"
        except protocol.ProtocolError as exc:
            report.error = f"ProtocolError: {exc}"
            return report
    return report


def _run_connection(
    profile: DeviceProfile,
    host: str,
    task: dict,
    records: list[HealthRecord],
    app_version: str,
    report: ClientRunReport,
) -> None:
    session_id = task["task_id"]
    with socket.create_connection((host, task["port"]), timeout=60) as sock:
        protocol.write_message(
            sock,
            protocol.Message(
                type=protocol.JOIN_REQUEST,
                session=session_id,
                payload={
                    "client_id": profile.client_id,
                    "platform": profile.platform,
                    "app_version": app_version,
                },
            ),
        )
        accept = protocol.read_message(sock)
        if accept.type == protocol.ERROR_MSG:
            raise protocol.ProtocolError(accept.payload["detail"])
        if accept.type != protocol.JOIN_ACCEPT:
            raise protocol.ProtocolError(f"expected JoinAccept, got {accept.type}")

        model_spec = accept.payload["model_spec"]
        trainer = None
        dataset = None
        spec_model: CanonicalModel | None = None
        if model_spec is not None:
            spec_model = from_document(model_spec)
            trainer = trainer_for_model(spec_model)
            dataset = build_task_dataset(task["kind"], profile, records)
        dp = DPConfig.from_json(task["dp"]) if task.get("dp") else DPConfig()

        while True:
            msg = protocol.read_message(sock)
            if msg.type == protocol.FIT_INS:
                _handle_fit(sock, msg, profile, spec_model, trainer, dataset, dp, session_id, report)
            elif msg.type == protocol.EVALUATE_INS:
                _handle_evaluate(sock, msg, profile, spec_model, trainer, dataset, session_id)
            elif msg.type == protocol.FA_QUERY_INS:
                _handle_fa_query(sock, msg, profile, records, session_id, report)
            elif msg.type == protocol.ROUND_END:
                if msg.payload["done"]:
                    if trainer is not None and msg.payload["global_params"]:
                        trainer.set_parameters(np.asarray(msg.payload["global_params"]))
                        report.final_local_loss = trainer.evaluate(dataset)[0]
                    return
            elif msg.type == protocol.ERROR_MSG:
                raise protocol.ProtocolError(msg.payload["detail"])
            else:
                raise protocol.ProtocolError(f"unexpected message type {msg.type}")


def _through_platform(spec_model: CanonicalModel, params: np.ndarray, platform: str) -> np.ndarray:
    """Round a flat vector through the device's platform representation."""
    carrier = CanonicalModel(
        spec_model.model_id, spec_model.version, spec_model.arch, list(spec_model.layers), params
    )
    encoding = encode_for_platform(carrier, platform)
    return decode_from_platform(encoding, spec_model)


def _handle_fit(sock, msg, profile, spec_model, trainer, dataset, dp, session_id, report) -> None:
    if trainer is None:
        raise protocol.ProtocolError("FitIns on a session without a model")
    round_no = msg.payload["round"]
    base = np.asarray(msg.payload["params"], dtype=np.float64)

    # wire -> platform tensors -> local runtime
    local = _through_platform(spec_model, base, profile.platform)
    trainer.set_parameters(local)

    hp_wire = Hyperparams.from_json(msg.payload["hyperparams"])
    hp = Hyperparams(
        learning_rate=hp_wire.learning_rate,
        epochs=hp_wire.epochs,
        batch_size=hp_wire.batch_size,
        seed=derive_seed(hp_wire.seed, profile.seed, round_no),
    )
    try:
        fit_report = trainer.fit(dataset, hp)
    except NonFiniteLoss:
        return  # diverged: contribute nothing this round

    # local runtime -> platform tensors -> wire
    trained = _through_platform(spec_model, fit_report.params, profile.platform)
    noise_rng = derive_rng(profile.seed, STREAM_DP, round_no)
    upload = privatize_update(base, trained, dp, noise_rng)

    protocol.write_message(
        sock,
        protocol.Message(
            type=protocol.FIT_RES,
            session=session_id,
            payload={
                "round": round_no,
                "params": [float(v) for v in upload],
                "num_examples": fit_report.num_examples,
            },
        ),
    )
    report.rounds_participated += 1
    report.final_local_loss = fit_report.final_loss


def _handle_evaluate(sock, msg, profile, spec_model, trainer, dataset, session_id) -> None:
    if trainer is None:
        raise protocol.ProtocolError("EvaluateIns on a session without a model")
    local = _through_platform(spec_model, np.asarray(msg.payload["params"]), profile.platform)
    trainer.set_parameters(local)
    loss, metric = trainer.evaluate(dataset)
    protocol.write_message(
        sock,
        protocol.Message(
            type=protocol.EVALUATE_RES,
            session=session_id,
            payload={
                "round": msg.payload["round"],
                "loss": loss,
                "metric": metric,
                "num_examples": dataset.n_examples,
            },
        ),
    )


def _handle_fa_query(sock, msg, profile, records, session_id, report) -> None:
    query = query_from_json(msg.payload["query"])
    rng = derive_rng(profile.seed, STREAM_FA, query.query_id)
    record = {
        "client_id": profile.client_id,
        "cluster": profile.cluster,
        query.attribute: mean_attribute(records, query.attribute),
    }
    if isinstance(query, HeavyHittersQuery):
        skeleton = de_identify(record, query.query_id, rng, cluster_attr=query.cluster_by)
        bucket = bucketize(record[query.attribute], query.buckets)
        skeleton.payload = krr_perturb(bucket, query.buckets.n_buckets, query.epsilon, rng)
    elif isinstance(query, DPMeanQuery):
        skeleton = de_identify(record, query.query_id, rng)
        skeleton.payload = float(np.clip(record[query.attribute], query.clip_lo, query.clip_hi))
    else:
        raise protocol.ProtocolError(f"unsupported query kind {type(query).__name__}")

    protocol.write_message(
        sock,
        protocol.Message(
            type=protocol.FA_REPORT_RES,
            session=session_id,
            payload={
                "pseudonym": skeleton.pseudonym,
                "payload": skeleton.payload,
                "cluster": skeleton.cluster,
            },
        ),
    )
    report.fa_reported = True
