"""Coordinator configuration.

File format (JSON):
    {"admin_port": 8080,
     "fl_port_pool": {"base": 9001, "size": 16},
     "data_dir": "./data",
     "seed": 0,
     "task_port": 8081}

task_port is optional and defaults to admin_port + 1; it carries the framed
task-discovery service (devices ask it which sessions exist before they know
any session port).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


@dataclass
class OrchestratorConfig:
    data_dir: Path
    admin_port: int = 8080
    task_port: int | None = None
    port_base: int = 9001
    port_count: int = 16
    seed: int = 0

    def __post_init__(self):
        self.data_dir = Path(self.data_dir)
        if self.task_port is None:
            self.task_port = self.admin_port + 1
        if self.port_count < 1:
            raise ValueError("fl_port_pool size must be >= 1")

    @staticmethod
    def load(path: str | Path) -> "OrchestratorConfig":
        with open(path) as fh:
            raw = json.load(fh)
        pool = raw.get("fl_port_pool", {})
        return OrchestratorConfig(
            data_dir=Path(raw["data_dir"]),
            admin_port=int(raw.get("admin_port", 8080)),
            task_port=None if raw.get("task_port") is None else int(raw["task_port"]),
            port_base=int(pool.get("base", 9001)),
            port_count=int(pool.get("size", 16)),
            seed=int(raw.get("seed", 0)),
        )

    def to_json(self) -> dict:
        return {
            "admin_port": self.admin_port,
            "task_port": self.task_port,
            "fl_port_pool": {"base": self.port_base, "size": self.port_count},
            "data_dir": str(self.data_dir),
            "seed": self.seed,
        }
