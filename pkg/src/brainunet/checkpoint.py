"""Checkpoint serialization and transfer loading.

A checkpoint is a directory holding:

* ``manifest.json``: format version, model config, training metadata, and a
  tensor table (name, shape, byte offset, element count) in blob order.
  Integer state tensors (batch-norm step counters) live here as plain ints.
* ``weights.bin``: every float state tensor concatenated as little-endian
  32-bit floats, in manifest order.

The layout is framework-neutral and byte-stable: loading a checkpoint and
saving it again reproduces both files bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .model import BrainUNet, ModelConfig, build_model

FORMAT_NAME = "brainunet-checkpoint"
FORMAT_VERSION = 1

MANIFEST_FILE = "manifest.json"
WEIGHTS_FILE = "weights.bin"


class CheckpointError(RuntimeError):
    """Raised for unreadable, corrupt or incompatible checkpoints."""


def _state_dict_of(model_or_state):
    if isinstance(model_or_state, torch.nn.Module):
        return model_or_state.state_dict()
    return dict(model_or_state)


def _build_payload(state, config: ModelConfig, stage=None, epoch=None,
                   metrics=None, extra=None):
    tensors = []
    int_tensors = {}
    chunks = []
    offset = 0
    for name, tensor in state.items():
        t = tensor.detach().cpu() if isinstance(tensor, torch.Tensor) else torch.as_tensor(tensor)
        if t.is_floating_point():
            blob = t.to(torch.float32).numpy().astype("<f4")
            numel = int(blob.size)
            tensors.append({"name": name, "shape": list(t.shape),
                            "offset": offset, "numel": numel})
            chunks.append(blob.tobytes())
            offset += numel * 4
        else:
            value = t.numpy()
            int_tensors[name] = value.item() if value.ndim == 0 else value.tolist()
    manifest = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "model_config": config.to_dict(),
        "stage": stage,
        "epoch": epoch,
        "metrics": metrics or {},
        "extra": extra or {},
        "tensors": tensors,
        "int_tensors": int_tensors,
        "total_bytes": offset,
    }
    blob = b"".join(chunks)
    return manifest, blob


def _manifest_bytes(manifest) -> bytes:
    return (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()


def save_checkpoint(model_or_state, path, config: ModelConfig, stage=None,
                    epoch=None, metrics=None, extra=None) -> Path:
    """Write a checkpoint directory; returns its path."""
    state = _state_dict_of(model_or_state)
    manifest, blob = _build_payload(state, config, stage, epoch, metrics, extra)
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / MANIFEST_FILE).write_bytes(_manifest_bytes(manifest))
    (path / WEIGHTS_FILE).write_bytes(blob)
    return path


def serialized_size(model_or_state, config: ModelConfig, **meta) -> int:
    """Exact on-disk size in bytes of the checkpoint this state would produce."""
    state = _state_dict_of(model_or_state)
    manifest, blob = _build_payload(state, config, **meta)
    return len(_manifest_bytes(manifest)) + len(blob)


def read_checkpoint_manifest(path) -> dict:
    """Parse and validate manifest.json without touching the weight blob."""
    path = Path(path)
    manifest_path = path / MANIFEST_FILE
    if not manifest_path.exists():
        raise CheckpointError(f"no checkpoint manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unparseable checkpoint manifest {manifest_path}: {exc}")
    if manifest.get("format") != FORMAT_NAME:
        raise CheckpointError(f"{manifest_path} is not a {FORMAT_NAME} manifest")
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} unsupported (expected {FORMAT_VERSION})"
        )
    return manifest


def load_checkpoint(path):
    """Read a checkpoint directory; returns (state_dict, manifest).

    Float tensors come back as float32 torch tensors, integer tensors as
    int64, in manifest order.  A blob whose size or per-tensor extent
    disagrees with the manifest raises CheckpointError naming the tensor.
    """
    path = Path(path)
    manifest = read_checkpoint_manifest(path)
    weights_path = path / WEIGHTS_FILE
    if not weights_path.exists():
        raise CheckpointError(f"missing {WEIGHTS_FILE} in {path}")
    blob = weights_path.read_bytes()
    if len(blob) != manifest["total_bytes"]:
        raise CheckpointError(
            f"{weights_path} holds {len(blob)} bytes, manifest says "
            f"{manifest['total_bytes']}"
        )
    state = {}
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        offset, numel = entry["offset"], entry["numel"]
        if int(np.prod(shape, dtype=np.int64)) != numel:
            raise CheckpointError(f"tensor {name!r}: shape {shape} disagrees with "
                                  f"numel {numel}")
        end = offset + numel * 4
        if end > len(blob):
            raise CheckpointError(
                f"tensor {name!r}: blob ends at {len(blob)} but tensor needs "
                f"bytes [{offset}, {end})"
            )
        arr = np.frombuffer(blob, dtype="<f4", count=numel, offset=offset)
        state[name] = torch.from_numpy(arr.copy()).reshape(shape)
    for name, value in manifest["int_tensors"].items():
        state[name] = torch.tensor(value, dtype=torch.int64)
    return state, manifest


class TransferReport:
    """What transfer_load copied and what it left freshly initialized."""

    def __init__(self, copied, reinitialized, skipped_source):
        self.copied = sorted(copied)
        self.reinitialized = sorted(reinitialized)
        self.skipped_source = sorted(skipped_source)

    @property
    def num_skipped(self):
        return len(self.reinitialized) + len(self.skipped_source)

    def __repr__(self):
        return (f"TransferReport(copied={len(self.copied)}, "
                f"reinitialized={len(self.reinitialized)}, "
                f"skipped_source={len(self.skipped_source)})")


def transfer_load(path, target_config: ModelConfig = None, seed: int = None):
    """Initialize a model from a checkpoint by name-and-shape matching.

    Every checkpoint tensor whose name and shape match the target model is
    copied; the rest of the target keeps its fresh initialization.  Returns
    (model, TransferReport).  Raises CheckpointError if nothing matches
    (almost certainly the wrong checkpoint).
    """
    source_state, manifest = load_checkpoint(path)
    if target_config is None:
        target_config = ModelConfig.from_dict(manifest["model_config"])
    model = build_model(target_config, seed=seed)
    target_state = model.state_dict()

    copied, reinitialized, skipped_source = [], [], []
    merged = {}
    copied_weights = 0
    for name, target_tensor in target_state.items():
        src = source_state.get(name)
        if src is not None and tuple(src.shape) == tuple(target_tensor.shape):
            merged[name] = src.to(target_tensor.dtype)
            copied.append(name)
            copied_weights += int(target_tensor.is_floating_point())
        else:
            merged[name] = target_tensor
            reinitialized.append(name)
    skipped_source = [n for n in source_state if n not in set(copied)]
    if copied_weights == 0:
        raise CheckpointError(
            f"no weight tensors in {path} match the target config; wrong checkpoint?"
        )
    model.load_state_dict(merged)
    return model, TransferReport(copied, reinitialized, skipped_source)
