"""Command line entry points.

    fedfleet server --config config.json [--console DIR]
    fedfleet fleet --n 20 --server HOST:TASK_PORT --seed 3 [--days 60]
    fedfleet demo --task sleep --clients 10 --rounds 20 --seed 1 [...]
    fedfleet inspect --data-dir DATA

`server` runs the long-lived coordinator (admin HTTP API plus framed task
discovery). `fleet` is a thin client: it asks a running coordinator for its
task manifest and drives N simulated devices through every task. `demo` does
both in one process and prints a JSON summary. `inspect` dumps persisted
round records.
"""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path

import click

from .aggregation import DPConfig
from .client import run_client as run_one_client
from .client import fetch_manifest
from .fleet import generate_fleet
from .model_format import PLATFORMS
from .orchestrator import Orchestrator, OrchestratorConfig, StorageCorrupt
from .orchestrator.api import create_app
from .orchestrator.storage import ROUNDS, JsonlStore
from .runner import DEMO_TASKS, DemoError, run_demo


def _echo_summary(summary: dict) -> None:
    click.echo(json.dumps(summary, sort_keys=True))


def _serve_admin(orch: Orchestrator, console_dir: str | None, port: int, block: bool):
    import uvicorn

    app = create_app(orch, console_dir=console_dir)
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning"))
    if block:
        server.run()
        return server
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    while not server.started and thread.is_alive():
        time.sleep(0.02)
    return server


@click.group()
def main():
    """Federated learning and analytics coordinator with a simulated fleet."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--console", "console_dir", type=click.Path(file_okay=False), default=None,
              help="Serve a built dashboard from this directory under /console.")
def server(config_path, console_dir):
    """Run the coordinator until interrupted."""
    config = OrchestratorConfig.load(config_path)
    orch = Orchestrator(config)
    try:
        orch.start()
    except StorageCorrupt as exc:
        click.echo(f"error: persisted state is corrupt: {exc}", err=True)
        raise SystemExit(1)
    click.echo(
        f"coordinator up: admin http://127.0.0.1:{config.admin_port} "
        f"task discovery on port {config.task_port}",
        err=True,
    )
    try:
        _serve_admin(orch, console_dir, config.admin_port, block=True)
    finally:
        orch.shutdown()


@main.command()
@click.option("--n", "n_clients", type=int, required=True)
@click.option("--server", "address", required=True, help="HOST:TASK_PORT of a running coordinator.")
@click.option("--seed", type=int, default=0)
@click.option("--days", type=int, default=60)
def fleet(n_clients, address, seed, days):
    """Drive N simulated devices through every advertised task."""
    try:
        host, port_text = address.rsplit(":", 1)
        task_port = int(port_text)
    except ValueError:
        raise click.UsageError("--server must look like HOST:PORT")
    started = time.perf_counter()
    profiles = generate_fleet(n_clients, seed)
    try:
        manifests = {p: fetch_manifest(host, task_port, p) for p in PLATFORMS}
    except OSError as exc:
        click.echo(f"error: cannot reach coordinator at {address}: {exc}", err=True)
        raise SystemExit(1)

    reports = []
    lock = threading.Lock()

    def drive(profile):
        for task in manifests[profile.platform]:
            result = run_one_client(profile, host, task, days=days)
            with lock:
                reports.append(result)

    threads = [threading.Thread(target=drive, args=(p,), daemon=True) for p in profiles]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    failures = [r for r in reports if r.error]
    _echo_summary(
        {
            "task": "fleet",
            "clients": n_clients,
            "rounds": None,
            "tasks": sorted({r.task_id for r in reports}),
            "completed_runs": len(reports) - len(failures),
            "failed_runs": len(failures),
            "duration_ms": int((time.perf_counter() - started) * 1000),
            "seed": seed,
        }
    )
    if failures:
        raise SystemExit(1)


@main.command()
@click.option("--task", type=click.Choice(DEMO_TASKS), required=True)
@click.option("--clients", type=int, default=10)
@click.option("--rounds", type=int, default=5)
@click.option("--seed", type=int, default=1)
@click.option("--days", type=int, default=60)
@click.option("--data-dir", type=click.Path(file_okay=False), default=None)
@click.option("--port-base", type=int, default=9001)
@click.option("--dp/--no-dp", "dp_enabled", default=False, help="Privatize model updates on devices.")
@click.option("--dp-epsilon", type=float, default=1.0)
@click.option("--dp-delta", type=float, default=1e-5)
@click.option("--dp-clip", type=float, default=1.0)
@click.option("--dp-sigma-override", type=float, default=None)
@click.option("--fa-epsilon", type=float, default=None, help="Local-DP budget for analytics tasks.")
@click.option("--force-platform", type=click.Choice(PLATFORMS), default=None)
@click.option("--admin-port", type=int, default=None, help="Also serve the admin API on this port.")
@click.option("--console", "console_dir", type=click.Path(file_okay=False), default=None)
@click.option("--hold", is_flag=True, help="Keep serving the admin API after the demo finishes.")
def demo(task, clients, rounds, seed, days, data_dir, port_base, dp_enabled, dp_epsilon, dp_delta,
         dp_clip, dp_sigma_override, fa_epsilon, force_platform, admin_port, console_dir, hold):
    """Coordinator plus fleet in one process; prints a JSON summary."""
    dp = DPConfig(
        enabled=dp_enabled,
        clip_norm=dp_clip,
        epsilon=dp_epsilon,
        delta=dp_delta,
        sigma_override=dp_sigma_override,
    )
    orch = None
    admin_server = None
    if admin_port is not None or hold:
        import tempfile

        directory = Path(data_dir) if data_dir else Path(tempfile.mkdtemp(prefix="fedfleet-demo-"))
        config = OrchestratorConfig(
            data_dir=directory,
            admin_port=admin_port or 8080,
            task_port=0,
            port_base=port_base,
            port_count=8,
            seed=seed,
        )
        orch = Orchestrator(config, deterministic_clock=True)
        orch.start()
        admin_server = _serve_admin(orch, console_dir, config.admin_port, block=False)

    try:
        result = run_demo(
            task=task,
            clients=clients,
            rounds=rounds,
            seed=seed,
            days=days,
            dp=dp,
            fa_epsilon=fa_epsilon,
            data_dir=data_dir,
            port_base=port_base,
            force_platform=force_platform,
            orchestrator=orch,
        )
    except DemoError as exc:
        click.echo(f"error: {exc}", err=True)
        raise SystemExit(1)

    _echo_summary(result.summary)
    if hold:
        click.echo("holding admin API open; interrupt to exit", err=True)
        try:
            while True:
                time.sleep(0.5)
        except KeyboardInterrupt:
            pass
    if admin_server is not None:
        admin_server.should_exit = True
    if orch is not None:
        orch.shutdown()


@main.command()
@click.option("--data-dir", required=True, type=click.Path(exists=True, file_okay=False))
def inspect(data_dir):
    """Dump persisted round records as JSON."""
    store = JsonlStore(data_dir)
    try:
        records = store.read_all(ROUNDS)
    except StorageCorrupt as exc:
        click.echo(f"error: {exc}", err=True)
        raise SystemExit(1)
    records.sort(key=lambda r: (r.get("session_id", ""), r.get("round", 0)))
    click.echo(json.dumps(records, sort_keys=True, indent=2))


if __name__ == "__main__":
    main()
