"""Parameter checkpoints tagged with the hash of the config that made them."""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np

_META = "__meta__"


class CheckpointError(ValueError):
    """The file is missing, truncated or not a checkpoint."""

    def __init__(self, path, reason: str):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"corrupt checkpoint {self.path}: {reason}")


class ConfigMismatchError(ValueError):
    def __init__(self, expected: str, found: str):
        self.expected = expected
        self.found = found
        super().__init__(f"checkpoint config hash {found} does not match expected {expected}")


def save_checkpoint(path, params: dict, config_hash: str, config: dict | None = None) -> None:
    """Write arrays (or tensors) and provenance to an ``.npz`` archive."""
    arrays = {k: np.asarray(getattr(v, "data", v), dtype=np.float64) for k, v in params.items()}
    if _META in arrays:
        raise ValueError(f"{_META!r} is reserved")
    meta = json.dumps(dict(config_hash=config_hash, config=config or {}, keys=sorted(arrays)),
                      sort_keys=True)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays, **{_META: np.frombuffer(meta.encode(), dtype=np.uint8)})


def load_checkpoint(path, expected_hash: str | None = None) -> tuple[dict, dict]:
    """Return ``(params, meta)``; refuse a file made under a different config."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(path, "file not found")
    try:
        with np.load(path, allow_pickle=False) as archive:
            data = {k: archive[k] for k in archive.files}
    except (zipfile.BadZipFile, EOFError, OSError, ValueError) as exc:
        raise CheckpointError(path, f"{type(exc).__name__}: {exc}") from None
    if _META not in data:
        raise CheckpointError(path, "no metadata record")
    try:
        meta = json.loads(data.pop(_META).tobytes().decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(path, f"unreadable metadata: {exc}") from None
    if sorted(data) != meta.get("keys"):
        raise CheckpointError(path, "parameter list does not match metadata")
    if expected_hash is not None and meta["config_hash"] != expected_hash:
        raise ConfigMismatchError(expected_hash, meta["config_hash"])
    return data, meta
