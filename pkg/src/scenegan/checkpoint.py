"""Versioned checkpoint archive.

A checkpoint is a plain zip file:

    format.json            {"format_version": 1, "kind": "scenegan-checkpoint"}
    config.json            per-section dataclass dumps (generator, train, ...)
    meta.json              step counter and free-form metadata
    arrays/<key>.npy       one little-endian .npy per array, keys are
                           hierarchical names like "generator/mapping.trunk.0.weight"

Everything is readable without this package: unzip + any .npy reader.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1
FORMAT_KIND = "scenegan-checkpoint"


@dataclass
class Checkpoint:
    configs: dict
    meta: dict
    arrays: dict[str, np.ndarray]

    @property
    def step(self) -> int:
        return int(self.meta["step"])


def save_checkpoint(path, configs: dict, meta: dict, arrays: dict[str, np.ndarray]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("format.json",
                    json.dumps({"format_version": FORMAT_VERSION, "kind": FORMAT_KIND}))
        zf.writestr("config.json", json.dumps(configs, indent=1, default=_jsonable))
        zf.writestr("meta.json", json.dumps(meta, indent=1, default=_jsonable))
        for key, arr in arrays.items():
            buf = io.BytesIO()
            np.save(buf, np.ascontiguousarray(arr))
            zf.writestr(f"arrays/{key}.npy", buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    with zipfile.ZipFile(Path(path), "r") as zf:
        fmt = json.loads(zf.read("format.json"))
        if fmt.get("kind") != FORMAT_KIND:
            raise ValueError(f"{path} is not a scenegan checkpoint")
        if fmt.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {fmt.get('format_version')}")
        configs = json.loads(zf.read("config.json"))
        meta = json.loads(zf.read("meta.json"))
        arrays = {}
        for name in zf.namelist():
            if name.startswith("arrays/") and name.endswith(".npy"):
                arrays[name[len("arrays/"):-len(".npy")]] = np.load(
                    io.BytesIO(zf.read(name))
                )
    return Checkpoint(configs=configs, meta=meta, arrays=arrays)


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj)} into checkpoint JSON")


# -- torch <-> array helpers -------------------------------------------------

def module_arrays(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    return {
        f"{prefix}/{name}": tensor.detach().cpu().numpy()
        for name, tensor in module.state_dict().items()
    }


def load_module(module: torch.nn.Module, arrays: dict[str, np.ndarray], prefix: str):
    state = {}
    skip = len(prefix) + 1
    for key, arr in arrays.items():
        if key.startswith(prefix + "/"):
            state[key[skip:]] = torch.from_numpy(arr.copy())
    module.load_state_dict(state)


def optimizer_arrays(opt: torch.optim.Optimizer, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    for idx, entry in opt.state_dict()["state"].items():
        for name, value in entry.items():
            tensor = value if torch.is_tensor(value) else torch.tensor(value)
            out[f"{prefix}/{idx}/{name}"] = tensor.detach().cpu().numpy()
    return out


def load_optimizer(opt: torch.optim.Optimizer, arrays: dict[str, np.ndarray], prefix: str):
    state_dict = opt.state_dict()
    state: dict[int, dict] = {}
    skip = len(prefix) + 1
    for key, arr in arrays.items():
        if not key.startswith(prefix + "/"):
            continue
        idx_str, name = key[skip:].split("/", 1)
        state.setdefault(int(idx_str), {})[name] = torch.from_numpy(arr.copy())
    state_dict["state"] = state
    opt.load_state_dict(state_dict)


def generator_state_arrays(state: torch.Tensor) -> np.ndarray:
    """torch.Generator byte state as a uint8 array."""
    return state.cpu().numpy().astype(np.uint8)


def restore_generator_state(gen: torch.Generator, arr: np.ndarray):
    gen.set_state(torch.from_numpy(arr.copy()).to(torch.uint8))
