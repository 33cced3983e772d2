"""Checkpoint container: ``manifest.json`` plus little-endian ``params.bin``."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .model import DenoiserConfig, ModelState, VideoDenoiser

FORMAT = "anicolor-checkpoint/1"
_DTYPES = {torch.float32: "<f4", torch.float64: "<f8"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(state: ModelState, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(path / "params.bin", "wb") as fh:
        for name, tensor in state.model.state_dict().items():
            code = _DTYPES.get(tensor.dtype)
            if code is None:
                raise CheckpointError(f"{name}: unsupported dtype {tensor.dtype}")
            blob = tensor.detach().cpu().numpy().astype(code).tobytes()
            fh.write(blob)
            entries.append({"name": name, "shape": list(tensor.shape), "dtype": code, "offset": offset, "nbytes": len(blob)})
            offset += len(blob)
    manifest = {
        "format": FORMAT,
        "stage": state.stage,
        "step": state.step,
        "config": state.config.to_dict(),
        "meta": {**state.meta, **(extra or {})},
        "params": entries,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return path


def load_checkpoint(path) -> ModelState:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise CheckpointError(f"no manifest in {path}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"unknown checkpoint format {manifest.get('format')!r}")
    config = DenoiserConfig.from_dict(manifest["config"])
    stage = manifest["stage"]
    entries = manifest["params"]
    dtype = torch.float64 if entries and entries[0]["dtype"] == "<f8" else torch.float32
    model = VideoDenoiser(config, stage).to(dtype)
    expected = model.state_dict()
    raw = (path / "params.bin").read_bytes()
    loaded = {}
    for e in entries:
        name = e["name"]
        if name not in expected:
            raise CheckpointError(f"unexpected parameter {name}")
        if tuple(e["shape"]) != tuple(expected[name].shape):
            raise CheckpointError(f"{name}: shape {tuple(e['shape'])} does not match config {tuple(expected[name].shape)}")
        if e["offset"] + e["nbytes"] > len(raw):
            raise CheckpointError(f"{name}: params.bin is truncated")
        arr = np.frombuffer(raw, dtype=e["dtype"], count=int(np.prod(e["shape"], dtype=np.int64)), offset=e["offset"])
        loaded[name] = torch.from_numpy(arr.reshape(e["shape"]).astype(arr.dtype.newbyteorder("=")))
    missing = set(expected) - set(loaded)
    if missing:
        raise CheckpointError(f"missing parameters: {sorted(missing)[:5]}")
    model.load_state_dict(loaded)
    return ModelState(model, stage, config, int(manifest["step"]), dict(manifest.get("meta", {})))
