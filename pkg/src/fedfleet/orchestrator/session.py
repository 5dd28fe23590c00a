"""One training run or analytics query: its own port, state machine, rounds.

A session owns a TCP listener. Device connections are handled by one thread
each; handlers only register the device and forward its messages into the
session inbox. The single session thread runs the lifecycle: wait for the
minimum number of joined devices, then per round select participants, push
FitIns, collect FitRes until everyone selected answered or the deadline
passed, aggregate, evaluate on the server-held validation split, record, and
broadcast RoundEnd. Analytics sessions broadcast the query once and fold the
reports.

Results never depend on message arrival order: aggregation sorts by client
id, analytics sorts by pseudonym, and selection draws from the sorted joined
set. That is what makes concurrent sessions reproducible.
"""

from __future__ import annotations

import math
import queue
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .. import protocol
from ..aggregation import ClientUpdate, DPConfig, fedavg
from ..analytics import (
    DPMeanQuery,
    FAQuery,
    HeavyHittersQuery,
    PerturbedReport,
    dp_mean,
    dp_mean_result_json,
    heavy_hitters,
)
from ..model_format import PLATFORMS, from_document
from ..seeding import derive_rng
from ..training import Dataset, Hyperparams, trainer_for_model

KIND_FL = "FL"
KIND_FA = "FA"

CREATED = "Created"
WAITING = "WaitingForClients"
IN_ROUND = "InRound"
AGGREGATING = "Aggregating"
COMPLETED = "Completed"
FAILED = "Failed"

_ALLOWED = {
    (CREATED, WAITING),
    (WAITING, IN_ROUND),
    (IN_ROUND, AGGREGATING),
    (AGGREGATING, IN_ROUND),
    (AGGREGATING, COMPLETED),
}
_TERMINAL = {COMPLETED, FAILED}

# selection / FA noise stream tags
_STREAM_SELECTION = 2001
_STREAM_FA_NOISE = 2002


class SessionFailed(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class IllegalTransition(Exception):
    pass


@dataclass
class SessionConfig:
    session_id: str
    kind: str  # FL | FA
    rounds: int = 1
    min_clients: int = 1
    client_fraction: float = 1.0
    round_timeout: float = 30.0
    hyperparams: Hyperparams = field(default_factory=lambda: Hyperparams(0.1, 1))
    dp: DPConfig = field(default_factory=DPConfig)
    model_id: str | None = None
    model_version: int | None = None
    query: FAQuery | None = None
    task_label: str | None = None
    port: int = 0  # assigned by the coordinator, never user-chosen

    def __post_init__(self):
        if self.kind not in (KIND_FL, KIND_FA):
            raise ValueError(f"kind must be FL or FA, got {self.kind!r}")
        if self.kind == KIND_FA:
            self.rounds = 1
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.min_clients < 1:
            raise ValueError("min_clients must be >= 1")
        if not 0 < self.client_fraction <= 1:
            raise ValueError("client_fraction must be in (0, 1]")

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "kind": self.kind,
            "rounds": self.rounds,
            "min_clients": self.min_clients,
            "client_fraction": self.client_fraction,
            "round_timeout": self.round_timeout,
            "hyperparams": self.hyperparams.to_json(),
            "dp": self.dp.to_json(),
            "model_id": self.model_id,
            "model_version": self.model_version,
            "query": self.query.to_json() if self.query else None,
            "task_label": self.task_label,
            "port": self.port,
        }


@dataclass
class RoundRecord:
    session_id: str
    round: int
    n_selected: int
    n_completed: int
    global_loss: float | None
    started_at: float
    ended_at: float

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "round": self.round,
            "n_selected": self.n_selected,
            "n_completed": self.n_completed,
            "global_loss": self.global_loss,
            "started_at": self.started_at,
            "ended_at": self.ended_at,
        }


class _ClientConn:
    def __init__(self, client_id: str, platform: str, sock: socket.socket):
        self.client_id = client_id
        self.platform = platform
        self.sock = sock
        self.send_lock = threading.Lock()
        self.alive = True

    def send(self, msg: protocol.Message) -> bool:
        try:
            with self.send_lock:
                protocol.write_message(self.sock, msg)
            return True
        except OSError:
            self.alive = False
            return False


class Session:
    """Runs independently of every other session; owns its port exclusively."""

    def __init__(
        self,
        cfg: SessionConfig,
        model_document: dict | None = None,
        validation: Dataset | None = None,
        record_clock=time.time,
        on_round=None,
        on_fa_result=None,
        on_terminal=None,
    ):
        self.cfg = cfg
        self.model_document = model_document
        self.validation = validation
        self._record_clock = record_clock
        self._on_round = on_round or (lambda record: None)
        self._on_fa_result = on_fa_result or (lambda result: None)
        self._on_terminal = on_terminal or (lambda session: None)

        self.state = CREATED
        self.round = 0
        self.failure_reason: str | None = None
        self.state_history: list[tuple[str, int]] = [(CREATED, 0)]
        self.records: list[RoundRecord] = []
        self.fa_result: dict | None = None

        if cfg.kind == KIND_FL:
            model = from_document(model_document)
            self.global_params = np.array(model.params, dtype=np.float64)
            self.model_spec = {k: v for k, v in model_document.items() if k != "params"}
        else:
            self.global_params = np.zeros(0)
            self.model_spec = None

        self._clients: dict[str, _ClientConn] = {}
        self._inbox: queue.Queue = queue.Queue()
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._selection_rng = derive_rng(cfg.hyperparams.seed, _STREAM_SELECTION, cfg.session_id)

        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind(("127.0.0.1", cfg.port))
        self._listener.listen(128)
        if cfg.port == 0:
            self.cfg.port = self._listener.getsockname()[1]
        self._threads: list[threading.Thread] = []

    # --- lifecycle ----------------------------------------------------------

    def start(self) -> None:
        accept = threading.Thread(target=self._accept_loop, name=f"{self.cfg.session_id}-accept", daemon=True)
        run = threading.Thread(target=self._run_guarded, name=f"{self.cfg.session_id}-run", daemon=True)
        self._threads = [accept, run]
        accept.start()
        run.start()

    def join(self, timeout: float | None = None) -> None:
        self._threads[1].join(timeout)

    def stop(self, reason: str = "stopped") -> None:
        with self._lock:
            if self.state in _TERMINAL:
                return
        self._stop.set()
        self._fail(reason)

    @property
    def terminal(self) -> bool:
        with self._lock:
            return self.state in _TERMINAL

    def n_joined(self) -> int:
        with self._lock:
            return len(self._clients)

    def view(self) -> dict:
        with self._lock:
            last_loss = self.records[-1].global_loss if self.records else None
            return {
                "session_id": self.cfg.session_id,
                "kind": self.cfg.kind,
                "state": self.state,
                "reason": self.failure_reason,
                "port": self.cfg.port,
                "current_round": self.round,
                "rounds": self.cfg.rounds,
                "last_global_loss": last_loss,
                "n_clients_joined": len(self._clients),
                "task_label": self.cfg.task_label,
                "model_id": self.cfg.model_id,
                "model_version": self.cfg.model_version,
                "query_id": self.cfg.query.query_id if self.cfg.query else None,
            }

    def _transition(self, new_state: str, round_no: int | None = None) -> None:
        with self._lock:
            if self.state in _TERMINAL:
                raise IllegalTransition(f"{self.state} is terminal")
            if new_state == FAILED:
                pass  # reachable from any non-terminal state
            elif (self.state, new_state) not in _ALLOWED:
                raise IllegalTransition(f"{self.state} -> {new_state}")
            if new_state == IN_ROUND:
                expected = self.round + 1
                if round_no != expected:
                    raise IllegalTransition(f"round must increase to {expected}, got {round_no}")
                self.round = round_no
            self.state = new_state
            self.state_history.append((new_state, self.round))

    def _fail(self, reason: str) -> None:
        with self._lock:
            if self.state in _TERMINAL:
                return
            self.state = FAILED
            self.failure_reason = reason
            self.state_history.append((FAILED, self.round))
        self._broadcast_best_effort(
            protocol.Message(
                type=protocol.ERROR_MSG,
                session=self.cfg.session_id,
                payload={"code": "SessionFailed", "detail": reason},
            )
        )
        self._teardown()
        self._on_terminal(self)

    def _complete(self) -> None:
        self._transition(COMPLETED)
        self._teardown()
        self._on_terminal(self)

    def _teardown(self) -> None:
        self._stop.set()
        _close_now(self._listener)
        with self._lock:
            conns = list(self._clients.values())
            self._clients.clear()
        for conn in conns:
            _close_now(conn.sock)

    # --- connection handling --------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            handler = threading.Thread(target=self._handle_conn, args=(conn,), daemon=True)
            handler.start()

    def _handle_conn(self, sock: socket.socket) -> None:
        client: _ClientConn | None = None
        try:
            msg = protocol.read_message(sock)
            if msg.type != protocol.JOIN_REQUEST:
                self._reply_error(sock, "ExpectedJoin", f"first message must be JoinRequest, got {msg.type}")
                sock.close()
                return
            platform = msg.payload["platform"]
            if platform not in PLATFORMS:
                self._reply_error(sock, "UnknownPlatform", f"no encodings for platform {platform!r}")
                sock.close()
                return
            with self._lock:
                if self.state in _TERMINAL:
                    terminal = True
                else:
                    terminal = False
                    client = _ClientConn(msg.payload["client_id"], platform, sock)
                    self._clients[client.client_id] = client
            if terminal:
                self._reply_error(sock, "SessionOver", "session is no longer accepting clients")
                sock.close()
                return
            client.send(
                protocol.Message(
                    type=protocol.JOIN_ACCEPT,
                    session=self.cfg.session_id,
                    payload={"round": self.round, "model_spec": self.model_spec},
                )
            )
            while not self._stop.is_set():
                incoming = protocol.read_message(sock)
                self._inbox.put((client.client_id, incoming))
        except (protocol.ProtocolError, OSError):
            pass
        finally:
            if client is not None:
                client.alive = False
                with self._lock:
                    if self._clients.get(client.client_id) is client:
                        del self._clients[client.client_id]
                try:
                    sock.close()
                except OSError:
                    pass

    def _reply_error(self, sock: socket.socket, code: str, detail: str) -> None:
        try:
            protocol.write_message(
                sock,
                protocol.Message(
                    type=protocol.ERROR_MSG, session=self.cfg.session_id, payload={"code": code, "detail": detail}
                ),
            )
        except OSError:
            pass

    def _broadcast_best_effort(self, msg: protocol.Message) -> None:
        with self._lock:
            conns = list(self._clients.values())
        for conn in conns:
            conn.send(msg)

    # --- main loop --------------------------------------------------------------

    def _run_guarded(self) -> None:
        try:
            self._run()
        except SessionFailed as exc:
            self._fail(exc.reason)
        except IllegalTransition:
            if self._stop.is_set():
                return  # a concurrent stop() won the race to the terminal state
            raise
        except Exception as exc:  # surface bugs as session failure, never hang
            self._fail(f"internal error: {exc!r}")

    def _run(self) -> None:
        self._transition(WAITING)
        self._wait_for_clients()
        if self._stop.is_set():
            return
        if self.cfg.kind == KIND_FL:
            for round_no in range(1, self.cfg.rounds + 1):
                self._transition(IN_ROUND, round_no)
                record = self.run_round(round_no)
                self.records.append(record)
                self._on_round(record)
                self._broadcast_best_effort(
                    protocol.Message(
                        type=protocol.ROUND_END,
                        session=self.cfg.session_id,
                        payload={
                            "round": round_no,
                            "global_params": [float(v) for v in self.global_params],
                            "done": round_no == self.cfg.rounds,
                        },
                    )
                )
            self._complete()
        else:
            self._transition(IN_ROUND, 1)
            result = self.run_fa_query()
            self.fa_result = result
            self._on_fa_result(result)
            self._broadcast_best_effort(
                protocol.Message(
                    type=protocol.ROUND_END,
                    session=self.cfg.session_id,
                    payload={"round": 1, "global_params": [], "done": True},
                )
            )
            self._complete()

    def _wait_for_clients(self) -> None:
        deadline = time.monotonic() + self.cfg.round_timeout
        while not self._stop.is_set():
            if self.n_joined() >= self.cfg.min_clients:
                return
            if time.monotonic() >= deadline:
                raise SessionFailed("InsufficientClients")
            time.sleep(0.01)

    def _joined_snapshot(self) -> list[_ClientConn]:
        with self._lock:
            return [self._clients[cid] for cid in sorted(self._clients)]

    # --- FL round ------------------------------------------------------------------

    def run_round(self, round_no: int) -> RoundRecord:
        started_at = self._record_clock()
        hp_json = self.cfg.hyperparams.to_json()
        results: dict[str, protocol.Message] = {}
        n_selected = 0

        for attempt in range(2):
            joined = self._joined_snapshot()
            if not joined:
                continue
            n_select = selection_size(self.cfg.min_clients, self.cfg.client_fraction, len(joined))
            chosen_idx = self._selection_rng.choice(len(joined), size=n_select, replace=False)
            selected = [joined[i] for i in sorted(chosen_idx)]
            n_selected = len(selected)

            fit_ins = protocol.Message(
                type=protocol.FIT_INS,
                session=self.cfg.session_id,
                payload={
                    "round": round_no,
                    "params": [float(v) for v in self.global_params],
                    "hyperparams": hp_json,
                },
            )
            for conn in selected:
                conn.send(fit_ins)

            results = self._collect_fit_results(round_no, {c.client_id for c in selected})
            if len(results) >= self.cfg.min_clients:
                break
        else:
            raise SessionFailed("InsufficientClients")

        self._transition(AGGREGATING)
        platforms = {c.client_id: c.platform for c in self._joined_snapshot()}
        updates = [
            ClientUpdate(
                client_id=cid,
                round=round_no,
                params=np.asarray(msg.payload["params"], dtype=np.float64),
                num_examples=msg.payload["num_examples"],
                platform=platforms.get(cid, ""),
            )
            for cid, msg in results.items()
        ]
        self.global_params = fedavg(updates)
        global_loss = self._evaluate_global()
        return RoundRecord(
            session_id=self.cfg.session_id,
            round=round_no,
            n_selected=n_selected,
            n_completed=len(results),
            global_loss=global_loss,
            started_at=started_at,
            ended_at=self._record_clock(),
        )

    def _collect_fit_results(self, round_no: int, selected: set[str]) -> dict[str, protocol.Message]:
        deadline = time.monotonic() + self.cfg.round_timeout
        results: dict[str, protocol.Message] = {}
        while len(results) < len(selected):
            if self._stop.is_set():
                raise SessionFailed("stopped")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            try:
                client_id, msg = self._inbox.get(timeout=min(remaining, 0.05))
            except queue.Empty:
                continue
            if (
                msg.type == protocol.FIT_RES
                and msg.payload["round"] == round_no
                and client_id in selected
                and client_id not in results
            ):
                results[client_id] = msg
            # anything else is a straggler from an earlier attempt or an
            # unrelated message type: dropped, never merged into this round
        return results

    def _evaluate_global(self) -> float | None:
        if self.validation is None or self.model_document is None:
            return None
        model = from_document(self.model_document)
        if self.validation.n_features != _model_input_width(model):
            return None
        trainer = trainer_for_model(model)
        trainer.set_parameters(self.global_params)
        loss, _ = trainer.evaluate(self.validation)
        return float(loss)

    # --- FA query ---------------------------------------------------------------------

    def run_fa_query(self) -> dict:
        query = self.cfg.query
        joined = self._joined_snapshot()
        query_ins = protocol.Message(
            type=protocol.FA_QUERY_INS, session=self.cfg.session_id, payload={"query": query.to_json()}
        )
        for conn in joined:
            conn.send(query_ins)

        reports = self._collect_reports({c.client_id for c in joined})
        if len(reports) < self.cfg.min_clients:
            raise SessionFailed("InsufficientClients")

        self._transition(AGGREGATING)
        if isinstance(query, HeavyHittersQuery):
            result = heavy_hitters(reports, query).to_json()
        elif isinstance(query, DPMeanQuery):
            ordered = sorted(reports, key=lambda r: r.pseudonym)
            rng = derive_rng(self.cfg.hyperparams.seed, _STREAM_FA_NOISE, self.cfg.session_id)
            value = dp_mean([float(r.payload) for r in ordered], query, rng)
            result = dp_mean_result_json(query, value, len(reports))
        else:
            raise SessionFailed(f"unsupported query kind {type(query).__name__}")
        return result

    def _collect_reports(self, expected: set[str]) -> list[PerturbedReport]:
        deadline = time.monotonic() + self.cfg.round_timeout
        reports: dict[str, PerturbedReport] = {}
        while len(reports) < len(expected):
            if self._stop.is_set():
                raise SessionFailed("stopped")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            try:
                client_id, msg = self._inbox.get(timeout=min(remaining, 0.05))
            except queue.Empty:
                continue
            if msg.type == protocol.FA_REPORT_RES and client_id in expected and client_id not in reports:
                reports[client_id] = PerturbedReport(
                    query_id=self.cfg.query.query_id,
                    pseudonym=msg.payload["pseudonym"],
                    payload=msg.payload["payload"],
                    cluster=msg.payload["cluster"],
                )
        return list(reports.values())


def selection_size(min_clients: int, client_fraction: float, n_joined: int) -> int:
    """How many of the joined devices take part in a round: the fraction,
    floored at min_clients, capped at whoever is actually there."""
    return min(n_joined, max(min_clients, math.ceil(client_fraction * n_joined)))


def _model_input_width(model) -> int:
    return model.layers[0].shape[0]


def _close_now(sock: socket.socket) -> None:
    """Release the port immediately even with threads blocked on the socket.

    close() alone leaves a thread parked in accept()/recv() holding the kernel
    socket open (and the port with it); shutdown() forces those calls to
    return first.
    """
    try:
        sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    try:
        sock.close()
    except OSError:
        pass
