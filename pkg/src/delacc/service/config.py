"""Project configuration: file schema, validation, workspace construction."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    tomllib = None

from .. import errors
from ..lifecycle import DeadlinePolicy
from ..mailroom import FileSpoolTransport, InMemoryTransport
from ..registry import is_valid_domain
from ..workspace import DEFAULT_CITATIONS, Workspace

STORAGE_ENV_VAR = "DELACC_STORAGE_PATH"

TRANSPORTS = ("in_memory", "file_spool")


@dataclass
class ProjectConfig:
    project_domain: str
    postal_address: str
    storage_path: Path
    deadline_policy: DeadlinePolicy = field(default_factory=DeadlinePolicy)
    per_participant_cap: int = 10
    per_controller_cap: int = 5
    transport: str = "in_memory"
    researchers_count: int = 1
    legal_citations: list[str] = field(default_factory=list)
    tokens: dict[str, str] = field(default_factory=dict)  # token -> role spec

    def __post_init__(self):
        if not is_valid_domain(self.project_domain):
            raise errors.InvalidConfig(
                f"project_domain {self.project_domain!r} is not a DNS-style name")
        if self.per_participant_cap <= 0 or self.per_controller_cap <= 0:
            raise errors.InvalidConfig("caps must be positive")
        if self.transport not in TRANSPORTS:
            raise errors.InvalidConfig(
                f"transport must be one of {TRANSPORTS}, got {self.transport!r}")
        if not self.postal_address.strip():
            raise errors.InvalidConfig("postal_address must be set")
        self.storage_path = Path(self.storage_path)

    def to_dict(self) -> dict:
        return {
            "project_domain": self.project_domain,
            "postal_address": self.postal_address,
            "storage_path": str(self.storage_path),
            "deadline_policy": self.deadline_policy.to_dict(),
            "per_participant_cap": self.per_participant_cap,
            "per_controller_cap": self.per_controller_cap,
            "transport": self.transport,
            "researchers_count": self.researchers_count,
            "legal_citations": list(self.legal_citations),
            "tokens": dict(self.tokens),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProjectConfig":
        policy = DeadlinePolicy.from_dict(data.get("deadline_policy", {})) \
            if data.get("deadline_policy") else DeadlinePolicy()
        return cls(
            project_domain=data["project_domain"],
            postal_address=data["postal_address"],
            storage_path=Path(data["storage_path"]),
            deadline_policy=policy,
            per_participant_cap=data.get("per_participant_cap", 10),
            per_controller_cap=data.get("per_controller_cap", 5),
            transport=data.get("transport", "in_memory"),
            researchers_count=data.get("researchers_count", 1),
            legal_citations=list(data.get("legal_citations", [])),
            tokens=dict(data.get("tokens", {})),
        )

    @classmethod
    def load(cls, path: Path) -> "ProjectConfig":
        """Read TOML or JSON config; DELACC_STORAGE_PATH overrides storage."""
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".toml":
            if tomllib is None:
                raise errors.InvalidConfig("TOML config requires python >= 3.11")
            data = tomllib.loads(text)
        else:
            data = json.loads(text)
        override = os.environ.get(STORAGE_ENV_VAR)
        if override:
            data["storage_path"] = override
        return cls.from_dict(data)

    def save(self, path: Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    def build_transport(self):
        if self.transport == "file_spool":
            return FileSpoolTransport(self.storage_path / "spool")
        return InMemoryTransport()

    def build_workspace(self) -> Workspace:
        return Workspace(
            project_domain=self.project_domain,
            postal_address=self.postal_address,
            policy=self.deadline_policy,
            per_participant_cap=self.per_participant_cap,
            per_controller_cap=self.per_controller_cap,
            transport=self.build_transport(),
            researchers_count=self.researchers_count,
            legal_citations=(tuple(self.legal_citations)
                             if self.legal_citations else DEFAULT_CITATIONS),
        )

    def load_or_create_workspace(self) -> Workspace:
        state_file = self.storage_path / "state.json"
        if state_file.exists():
            return Workspace.load(self.storage_path, transport=self.build_transport())
        return self.build_workspace()
