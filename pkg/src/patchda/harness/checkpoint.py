"""Checkpoints: a raw parameter blob plus a JSON manifest with a checksum.

Layout of a checkpoint directory::

    manifest.json   config snapshot, phase, epoch, seed, tensor table, sha256
    params.bin      concatenated little-endian tensors in table order
"""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from patchda.errors import CheckpointError, InvalidConfigError
from patchda.harness.config import config_from_json
from patchda.model import VideoModel

FORMAT_VERSION = 1
_DTYPES = {torch.float32: "<f4", torch.float64: "<f8", torch.int64: "<i8"}


@dataclass
class Checkpoint:
    model: VideoModel
    config: object
    phase: str
    epoch: int
    extra: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.config.train.seed


def save_checkpoint(ckpt, path):
    os.makedirs(path, exist_ok=True)
    table, chunks, offset = [], [], 0
    for name, tensor in ckpt.model.state_dict().items():
        tensor = tensor.detach().cpu().contiguous()
        if tensor.dtype not in _DTYPES:
            raise CheckpointError(f"cannot serialise {name} of dtype {tensor.dtype}")
        raw = tensor.numpy().astype(_DTYPES[tensor.dtype]).tobytes()
        table.append(
            {"name": name, "shape": list(tensor.shape), "dtype": _DTYPES[tensor.dtype], "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format": FORMAT_VERSION,
        "phase": ckpt.phase,
        "epoch": ckpt.epoch,
        "seed": ckpt.seed,
        "rng_state": torch.get_rng_state().tolist(),
        "config": ckpt.config.to_dict(),
        "extra": ckpt.extra,
        "tensors": table,
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    with open(os.path.join(path, "params.bin"), "wb") as fh:
        fh.write(blob)
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def _compare_model_config(saved, expected):
    """Raise if the architecture in ``expected`` differs from the saved one."""
    diffs = [k for k in saved if k in expected and saved[k] != expected[k] and k != "ingest_dir"]
    if diffs:
        detail = ", ".join(f"{k}: checkpoint={saved[k]!r} config={expected[k]!r}" for k in sorted(diffs))
        raise CheckpointError(f"checkpoint/config mismatch ({detail})")


def load_checkpoint(path, expected_config=None):
    """Load and verify a checkpoint.

    ``expected_config`` (an :class:`ExperimentConfig`) is compared field by
    field against the saved model architecture.
    """
    try:
        with open(os.path.join(path, "manifest.json")) as fh:
            manifest = json.load(fh)
        with open(os.path.join(path, "params.bin"), "rb") as fh:
            blob = fh.read()
    except FileNotFoundError as exc:
        raise CheckpointError(f"incomplete checkpoint at {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint manifest at {path}: {exc}") from exc
    if manifest.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
    if hashlib.sha256(blob).hexdigest() != manifest.get("sha256"):
        raise CheckpointError(f"checksum mismatch in {path}/params.bin")

    try:
        cfg = config_from_json(manifest["config"])
    except InvalidConfigError as exc:
        raise CheckpointError(f"checkpoint config invalid: {exc}") from exc
    if expected_config is not None:
        # compare in JSON form so tuples and lists agree
        expected = json.loads(json.dumps(expected_config.to_dict()["model"]))
        _compare_model_config(manifest["config"]["model"], expected)

    model = VideoModel(cfg, phase=manifest["phase"])
    state = {}
    for entry in manifest["tensors"]:
        chunk = blob[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(chunk, dtype=entry["dtype"]).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("=")))
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"parameter table does not match the architecture: {exc}") from exc
    model.eval()
    return Checkpoint(model, cfg, manifest["phase"], manifest["epoch"], manifest.get("extra", {}))


def state_hash(state):
    """SHA-256 over a state dict (names and raw bytes, sorted by name)."""
    h = hashlib.sha256()
    for name in sorted(state):
        h.update(name.encode())
        h.update(state[name].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
