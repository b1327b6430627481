"""Single-file npz checkpoints: named parameters, one or more optimizer
states, and a json metadata blob (epoch counter, config fingerprint)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_PARAM = "param/"
_OPT = "opt/"
_DEFAULT = "default"


@dataclass
class Checkpoint:
    params: dict = field(default_factory=dict)
    opt_states: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def opt_state(self) -> dict | None:
        return self.opt_states.get(_DEFAULT)

    def parameter_names(self) -> list[str]:
        return sorted(self.params)


def save_checkpoint(path, params: dict, opt_state=None, meta: dict | None = None):
    """opt_state may be a single Adam state dict or a mapping name -> state."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {_PARAM + name: np.asarray(value) for name, value in params.items()}
    states = {}
    if opt_state is not None:
        states = opt_state if "t" not in opt_state else {_DEFAULT: opt_state}
    for name, state in states.items():
        payload[f"{_OPT}{name}/t"] = np.asarray(state["t"], dtype=np.int64)
        for i, m in enumerate(state["m"]):
            payload[f"{_OPT}{name}/m/{i}"] = np.asarray(m)
        for i, v in enumerate(state["v"]):
            payload[f"{_OPT}{name}/v/{i}"] = np.asarray(v)
    payload["meta"] = np.frombuffer(
        json.dumps(meta or {}, sort_keys=True).encode(), dtype=np.uint8
    )
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    params = {}
    raw_states: dict = {}
    meta = {}
    with np.load(path) as archive:
        for key in archive.files:
            if key.startswith(_PARAM):
                params[key[len(_PARAM):]] = archive[key]
            elif key.startswith(_OPT):
                name, _, rest = key[len(_OPT):].partition("/")
                slot = raw_states.setdefault(name, {"t": 0, "m": {}, "v": {}})
                if rest == "t":
                    slot["t"] = int(archive[key])
                else:
                    kind, _, idx = rest.partition("/")
                    slot[kind][int(idx)] = archive[key]
            elif key == "meta":
                meta = json.loads(archive[key].tobytes().decode())
    opt_states = {
        name: {
            "t": slot["t"],
            "m": [slot["m"][i] for i in sorted(slot["m"])],
            "v": [slot["v"][i] for i in sorted(slot["v"])],
        }
        for name, slot in raw_states.items()
    }
    return Checkpoint(params=params, opt_states=opt_states, meta=meta)


def latest_epoch(directory, pattern="epoch_*.ckpt") -> int | None:
    """Highest epoch index k among epoch_{k}.ckpt files, or None if empty."""
    directory = Path(directory)
    if not directory.is_dir():
        return None
    epochs = []
    for entry in directory.glob(pattern):
        stem = entry.stem  # epoch_{k}
        try:
            epochs.append(int(stem.split("_", 1)[1]))
        except (IndexError, ValueError):
            continue
    return max(epochs) if epochs else None
