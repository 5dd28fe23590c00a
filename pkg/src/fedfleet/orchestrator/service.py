"""Backend coordinator: registry, port pool, session lifecycle, task delivery.

Many sessions run in parallel, each on its own pool port; the coordinator
itself answers task-discovery requests on a fixed framed-protocol port and
backs everything with append-only JSON-lines persistence. On restart the
registry and all completed results come back exactly; sessions that were
in flight are recorded as Failed{Interrupted} - there is no mid-round resume.
"""

from __future__ import annotations

import socket
import threading

from .. import protocol
from ..analytics import query_from_json
from ..fleet import TASK_ACTIVITY, TASK_SLEEP, validation_dataset
from ..model_format import PLATFORMS, from_document
from ..training import Dataset
from .clock import LogicalClock, wall_clock
from .config import OrchestratorConfig
from .registry import ModelRegistry, RegistryEntry
from .session import (
    FAILED,
    IN_ROUND,
    KIND_FA,
    KIND_FL,
    WAITING,
    RoundRecord,
    Session,
    SessionConfig,
)
from .storage import FA_RESULTS, REGISTRY, ROUNDS, SESSIONS, JsonlStore


class OrchestratorError(Exception):
    pass


class PortPoolExhausted(OrchestratorError):
    pass


class UnknownModel(OrchestratorError):
    pass


class UnknownSession(OrchestratorError):
    pass


class Orchestrator:
    def __init__(self, config: OrchestratorConfig, deterministic_clock: bool = False):
        self.config = config
        self._deterministic_clock = deterministic_clock
        self.store = JsonlStore(config.data_dir)
        self.registry = ModelRegistry(
            clock=self._new_clock(), on_new_entry=lambda e: self.store.append(REGISTRY, e.to_json())
        )
        self._lock = threading.Lock()
        self._free_ports = sorted(range(config.port_base, config.port_base + config.port_count))
        self._sessions: dict[str, Session] = {}
        self._archived: dict[str, dict] = {}  # recovered (dead) session views
        self._rounds: dict[str, list[dict]] = {}
        self._fa_results: dict[str, dict] = {}
        self._session_counter = 0
        self._discovery: socket.socket | None = None
        self._started = False

    def _new_clock(self):
        return LogicalClock() if self._deterministic_clock else wall_clock

    # --- lifecycle -------------------------------------------------------------

    def start(self) -> None:
        self.recover()
        self._discovery = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._discovery.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._discovery.bind(("127.0.0.1", self.config.task_port))
        self._discovery.listen(128)
        if self.config.task_port == 0:
            self.config.task_port = self._discovery.getsockname()[1]
        threading.Thread(target=self._discovery_loop, name="task-discovery", daemon=True).start()
        self._started = True

    def shutdown(self) -> None:
        if self._discovery is not None:
            from .session import _close_now

            _close_now(self._discovery)
        for session in list(self._sessions.values()):
            session.stop("stopped")
        self._started = False

    def recover(self) -> None:
        for obj in self.store.read_all(REGISTRY):
            self.registry.restore(RegistryEntry.from_json(obj))
        for obj in self.store.read_all(ROUNDS):
            self._rounds.setdefault(obj["session_id"], []).append(obj)
        for obj in self.store.read_all(FA_RESULTS):
            self._fa_results[obj["query_id"]] = obj

        created: dict[str, dict] = {}
        terminal: dict[str, dict] = {}
        for obj in self.store.read_all(SESSIONS):
            if obj.get("event") == "created":
                created[obj["config"]["session_id"]] = obj["config"]
            elif obj.get("event") == "terminal":
                terminal[obj["session_id"]] = obj
        for session_id, cfg in created.items():
            end = terminal.get(session_id)
            if end is None:
                # interrupted mid-flight: record the failure so the next
                # recovery sees a consistent log
                end = {"event": "terminal", "session_id": session_id, "state": FAILED, "reason": "Interrupted"}
                self.store.append(SESSIONS, end)
            rounds = self._rounds.get(session_id, [])
            self._archived[session_id] = {
                "session_id": session_id,
                "kind": cfg["kind"],
                "state": end["state"],
                "reason": end.get("reason"),
                "port": None,
                "current_round": rounds[-1]["round"] if rounds else 0,
                "rounds": cfg["rounds"],
                "last_global_loss": rounds[-1]["global_loss"] if rounds else None,
                "n_clients_joined": 0,
                "task_label": cfg.get("task_label"),
                "model_id": cfg.get("model_id"),
                "model_version": cfg.get("model_version"),
                "query_id": (cfg.get("query") or {}).get("query_id"),
            }

    # --- registry --------------------------------------------------------------

    def register_model(self, document: dict) -> tuple[str, int]:
        return self.registry.register(document)

    def list_models(self) -> list[RegistryEntry]:
        return self.registry.list_entries()

    # --- sessions ----------------------------------------------------------------

    def create_session(
        self,
        kind: str,
        session_id: str | None = None,
        model_id: str | None = None,
        model_version: int | None = None,
        query: dict | None = None,
        task_label: str | None = None,
        rounds: int = 1,
        min_clients: int = 1,
        client_fraction: float = 1.0,
        round_timeout: float = 30.0,
        hyperparams=None,
        dp=None,
    ) -> Session:
        from ..aggregation import DPConfig
        from ..training import Hyperparams

        hyperparams = hyperparams or Hyperparams(0.1, 1)
        dp = dp or DPConfig()

        model_document = None
        parsed_query = None
        if kind == KIND_FL:
            if model_id is None:
                raise UnknownModel("FL session needs a model_id")
            entry = self.registry.get(model_id, model_version)
            if entry is None:
                raise UnknownModel(f"no registered model {model_id!r} version {model_version}")
            model_document = entry.document
            model_version = entry.version
        elif kind == KIND_FA:
            if query is None:
                raise OrchestratorError("FA session needs a query")
            parsed_query = query_from_json(query)
        else:
            raise OrchestratorError(f"unknown session kind {kind!r}")

        with self._lock:
            if session_id is None:
                self._session_counter += 1
                session_id = f"s-{self._session_counter:04d}"
            if session_id in self._sessions or session_id in self._archived:
                raise OrchestratorError(f"session id {session_id!r} already used")
            if not self._free_ports:
                raise PortPoolExhausted(f"all {self.config.port_count} pool ports are live")
            port = self._free_ports.pop(0)

        cfg = SessionConfig(
            session_id=session_id,
            kind=kind,
            rounds=rounds,
            min_clients=min_clients,
            client_fraction=client_fraction,
            round_timeout=round_timeout,
            hyperparams=hyperparams,
            dp=dp,
            model_id=model_id,
            model_version=model_version,
            query=parsed_query,
            task_label=task_label,
            port=port,
        )
        try:
            session = Session(
                cfg,
                model_document=model_document,
                validation=self._validation_for(task_label, model_document),
                record_clock=self._new_clock(),
                on_round=self._record_round,
                on_fa_result=self._record_fa_result,
                on_terminal=self._session_closed,
            )
        except OSError:
            with self._lock:
                self._free_ports.append(port)
                self._free_ports.sort()
            raise
        with self._lock:
            self._sessions[session_id] = session
        self.store.append(SESSIONS, {"event": "created", "config": cfg.to_json()})
        session.start()
        return session

    def _validation_for(self, task_label: str | None, model_document: dict | None) -> Dataset | None:
        if task_label not in (TASK_SLEEP, TASK_ACTIVITY) or model_document is None:
            return None
        dataset = validation_dataset(task_label, self.config.seed)
        model = from_document(model_document)
        if dataset.n_features != model.layers[0].shape[0]:
            return None
        return dataset

    def _record_round(self, record: RoundRecord) -> None:
        doc = record.to_json()
        with self._lock:
            self._rounds.setdefault(record.session_id, []).append(doc)
        self.store.append(ROUNDS, doc)

    def _record_fa_result(self, result: dict) -> None:
        with self._lock:
            self._fa_results[result["query_id"]] = result
        self.store.append(FA_RESULTS, result)

    def _session_closed(self, session: Session) -> None:
        view = session.view()
        self.store.append(
            SESSIONS,
            {
                "event": "terminal",
                "session_id": session.cfg.session_id,
                "state": view["state"],
                "reason": view["reason"],
            },
        )
        with self._lock:
            if session.cfg.port in range(self.config.port_base, self.config.port_base + self.config.port_count):
                self._free_ports.append(session.cfg.port)
                self._free_ports.sort()

    def get_session(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise UnknownSession(f"no session {session_id!r}")
        return session

    def session_view(self, session_id: str) -> dict:
        with self._lock:
            session = self._sessions.get(session_id)
            if session is None:
                archived = self._archived.get(session_id)
                if archived is None:
                    raise UnknownSession(f"no session {session_id!r}")
                return dict(archived)
        return session.view()

    def list_sessions(self) -> list[dict]:
        with self._lock:
            live = list(self._sessions.values())
            archived = [dict(v) for k, v in self._archived.items() if k not in self._sessions]
        views = [s.view() for s in live] + archived
        return sorted(views, key=lambda v: v["session_id"])

    def stop_session(self, session_id: str) -> dict:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            return self.session_view(session_id)  # archived sessions are already terminal
        session.stop("stopped")
        return session.view()

    def rounds(self, session_id: str) -> list[dict]:
        self.session_view(session_id)  # existence check
        with self._lock:
            return list(self._rounds.get(session_id, []))

    def fa_result(self, query_id: str) -> dict | None:
        with self._lock:
            return self._fa_results.get(query_id)

    def live_session_count(self) -> int:
        with self._lock:
            return sum(not s.terminal for s in self._sessions.values())

    # --- task discovery -------------------------------------------------------------

    def list_tasks(self, platform: str, app_version: str) -> list[dict]:
        """Manifest of joinable sessions for a platform. Data-driven: a device
        polling this sees new tasks with no client-side change."""
        if platform not in PLATFORMS:
            return []
        tasks = []
        with self._lock:
            sessions = [self._sessions[sid] for sid in sorted(self._sessions)]
        for session in sessions:
            view = session.view()
            if view["state"] not in (WAITING, IN_ROUND):
                continue
            cfg = session.cfg
            tasks.append(
                {
                    "task_id": cfg.session_id,
                    "model_id": cfg.model_id,
                    "model_version": cfg.model_version,
                    "kind": cfg.task_label or ("fa" if cfg.kind == KIND_FA else "fl"),
                    "port": cfg.port,
                    "hyperparams": cfg.hyperparams.to_json(),
                    "dp": cfg.dp.to_json(),
                }
            )
        return tasks

    def _discovery_loop(self) -> None:
        while True:
            try:
                conn, _ = self._discovery.accept()
            except OSError:
                return
            threading.Thread(target=self._serve_discovery, args=(conn,), daemon=True).start()

    def _serve_discovery(self, conn: socket.socket) -> None:
        try:
            with conn:
                msg = protocol.read_message(conn)
                if msg.type != protocol.TASK_REQUEST:
                    protocol.write_message(
                        conn,
                        protocol.Message(
                            type=protocol.ERROR_MSG,
                            session="",
                            payload={"code": "ExpectedTaskRequest", "detail": f"got {msg.type}"},
                        ),
                    )
                    return
                tasks = self.list_tasks(msg.payload["platform"], msg.payload["app_version"])
                protocol.write_message(
                    conn,
                    protocol.Message(type=protocol.TASK_MANIFEST, session="", payload={"tasks": tasks}),
                )
        except (protocol.ProtocolError, OSError):
            pass
