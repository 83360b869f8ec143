"""The network and its checkpoint format.

The segmentation model is a 3D U-shaped encoder-decoder: residual double-conv
blocks at every stage, strided-convolution downsampling, transposed-conv
upsampling, and attention gates on each skip connection that learn where the
decoder should trust encoder detail.  The default configuration (depth 4,
base 32 filters doubling per stage) lands at ~23.7M parameters / ~95 MB -
small enough for commodity hardware.

Checkpoints are framework-neutral directories: `manifest.json` (format
version, model config, tensor table) + `weights.bin` (little-endian float32,
manifest order).  Transfer loading copies whatever matches by name and shape
and reports everything it skipped.
"""

import tempfile
from pathlib import Path

import numpy as np
import torch

from brainunet import (
    ModelConfig,
    build_model,
    count_parameters,
    generate_phantom,
    load_checkpoint,
    predict_probabilities,
    read_checkpoint_manifest,
    save_checkpoint,
    serialized_size,
    transfer_load,
)

work = Path(tempfile.mkdtemp(prefix="brainunet_demo_"))

# ---------------------------------------------------------------------------
# 1. Configurations: the default budget, and a toy for quick experiments
# ---------------------------------------------------------------------------
default_cfg = ModelConfig()
toy_cfg = ModelConfig(base_filters=4, depth=2)

default_model = build_model(default_cfg, seed=0)
print(f"default config: {count_parameters(default_model) / 1e6:.2f}M parameters, "
      f"{serialized_size(default_model, default_cfg) / 1e6:.1f} MB serialized")
del default_model  # free ~95 MB before the rest of the demo

toy = build_model(toy_cfg, seed=0)
print(f"toy config:     {count_parameters(toy) / 1e3:.1f}K parameters\n")

# ---------------------------------------------------------------------------
# 2. Forward contract: softmax probabilities at the input resolution
# ---------------------------------------------------------------------------
vol, mask = generate_phantom(seed=4, dims=(32, 32, 32))
probs = predict_probabilities(toy, vol)
print("probabilities:", probs.shape, "| per-voxel sums ~ 1:",
      bool(np.allclose(probs.sum(axis=0), 1.0, atol=1e-5)))

toy.eval()
with torch.no_grad():
    _, attention = toy(torch.from_numpy(vol.data).unsqueeze(0),
                       return_attention=True)
print("attention maps per skip level:",
      [tuple(a.shape[2:]) for a in attention],
      "| values in [0,1]:", all(float(a.min()) >= 0 and float(a.max()) <= 1
                                for a in attention))

# ---------------------------------------------------------------------------
# 3. Checkpoints: bitwise round trip
# ---------------------------------------------------------------------------
ckpt = save_checkpoint(toy, work / "toy_ckpt", toy_cfg, stage="pretrain",
                       epoch=0, metrics={"val_dice": 0.42})
manifest = read_checkpoint_manifest(ckpt)
print(f"\ncheckpoint at {ckpt}")
print(f"  tensors in blob: {len(manifest['tensors'])}, "
      f"total {manifest['total_bytes'] / 1e3:.0f} KB")

state, _ = load_checkpoint(ckpt)
identical = all(torch.equal(state[n], t) for n, t in toy.state_dict().items()
                if t.is_floating_point())
print("  reload is bitwise identical:", identical)

# ---------------------------------------------------------------------------
# 4. Transfer loading: name+shape matching with an explicit report
# ---------------------------------------------------------------------------
same, report = transfer_load(ckpt, toy_cfg, seed=1)
print("\ntransfer into the same config:", report)

three_class = ModelConfig(base_filters=4, depth=2, out_classes=3)
_, report = transfer_load(ckpt, three_class, seed=1)
print("transfer into a 3-class head:  ", report)
print("  reinitialized:", report.reinitialized)
print("\ndone.")
