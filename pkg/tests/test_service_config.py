from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

from delacc import errors
from delacc.service.config import STORAGE_ENV_VAR, ProjectConfig


def write_config(tmp_path: Path, **overrides) -> Path:
    data = {
        "project_domain": "accessproject.example",
        "postal_address": "Access Project\nPO Box 1",
        "storage_path": str(tmp_path / "store"),
    }
    data.update(overrides)
    path = tmp_path / "delacc.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def test_load_json_config(tmp_path):
    config = ProjectConfig.load(write_config(tmp_path))
    assert config.project_domain == "accessproject.example"
    assert config.deadline_policy.response_window_days == 30
    assert config.transport == "in_memory"


def test_storage_env_var_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv(STORAGE_ENV_VAR, str(tmp_path / "elsewhere"))
    config = ProjectConfig.load(write_config(tmp_path))
    assert config.storage_path == tmp_path / "elsewhere"


def test_invalid_domain_rejected(tmp_path):
    with pytest.raises(errors.InvalidConfig):
        ProjectConfig.load(write_config(tmp_path, project_domain="not a domain!"))


def test_caps_must_be_positive(tmp_path):
    with pytest.raises(errors.InvalidConfig):
        ProjectConfig.load(write_config(tmp_path, per_participant_cap=0))


def test_unknown_transport_rejected(tmp_path):
    with pytest.raises(errors.InvalidConfig):
        ProjectConfig.load(write_config(tmp_path, transport="carrier_pigeon"))


@pytest.mark.skipif(sys.version_info < (3, 11), reason="tomllib is 3.11+")
def test_load_toml_config(tmp_path):
    path = tmp_path / "delacc.toml"
    path.write_text(
        'project_domain = "accessproject.example"\n'
        'postal_address = "Access Project\\nPO Box 1"\n'
        f'storage_path = "{tmp_path / "store"}"\n',
        encoding="utf-8",
    )
    config = ProjectConfig.load(path)
    assert config.project_domain == "accessproject.example"


def test_round_trip_save_load(tmp_path):
    config = ProjectConfig.load(write_config(tmp_path, per_controller_cap=3))
    out = tmp_path / "copy.json"
    config.save(out)
    restored = ProjectConfig.load(out)
    assert restored.to_dict() == config.to_dict()


def test_file_spool_transport_built_under_storage(tmp_path):
    config = ProjectConfig.load(write_config(tmp_path, transport="file_spool"))
    transport = config.build_transport()
    assert transport.name == "file_spool"
    assert transport.root == config.storage_path / "spool"
