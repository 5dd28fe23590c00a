from .config import OrchestratorConfig
from .registry import InvalidModel, ModelRegistry, RegistryEntry
from .service import (
    Orchestrator,
    OrchestratorError,
    PortPoolExhausted,
    UnknownModel,
    UnknownSession,
)
from .session import RoundRecord, Session, SessionConfig, SessionFailed
from .storage import JsonlStore, StorageCorrupt

__all__ = [
    "InvalidModel",
    "JsonlStore",
    "ModelRegistry",
    "Orchestrator",
    "OrchestratorConfig",
    "OrchestratorError",
    "PortPoolExhausted",
    "RegistryEntry",
    "RoundRecord",
    "Session",
    "SessionConfig",
    "SessionFailed",
    "StorageCorrupt",
    "UnknownModel",
    "UnknownSession",
]
