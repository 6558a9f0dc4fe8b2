"""Self-describing checkpoint container.

A checkpoint is a ``torch.save`` archive of a plain dict carrying a magic
string and schema version, the model config, parameters keyed by module path
(``encoder.*``, ``mae_decoder.*``, ``heads.<task>.*``), optimizer state, the
epoch counter, RNG state and the verbatim experiment config text.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any

import torch

from .errors import ConfigError

MAGIC = "SOCIALMAE-CHECKPOINT"
SCHEMA_VERSION = 1


def save_checkpoint(
    path: str | Path,
    *,
    model_config: dict,
    state_dict: dict,
    kind: str,
    epoch: int = 0,
    optimizer_state: dict | None = None,
    rng_state: dict | None = None,
    config_text: str | None = None,
    extra: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "magic": MAGIC,
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "model_config": dict(model_config),
        "params": {k: v.detach().clone() for k, v in state_dict.items()},
        "optimizer": optimizer_state,
        "epoch": int(epoch),
        "rng_state": rng_state,
        "config_text": config_text,
        "extra": extra or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path) -> dict[str, Any]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("magic") != MAGIC:
        raise ConfigError(f"{path} is not a socialmae checkpoint")
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"{path} has schema version {payload.get('schema_version')}, expected {SCHEMA_VERSION}"
        )
    return payload
