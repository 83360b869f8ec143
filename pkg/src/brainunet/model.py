"""BrainUNet: a 3D residual-attention encoder-decoder for 4-class segmentation.

Layout with the default config (depth 4, base 32 filters doubling per stage):
encoder residual blocks at 32/64/128/256 channels, each followed by a
strided 2x2x2 downsampling convolution; a 512-channel bottleneck block; a
decoder of transposed-convolution upsampling, attention-gated skip
concatenation and residual blocks back down to 32; and a final 1x1x1
convolution to 4 classes with per-voxel softmax.  That lands at ~23.7M
trainable parameters, a deliberately lightweight budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .io import MultiModalVolume


@dataclass
class ModelConfig:
    in_channels: int = 3
    out_classes: int = 4
    depth: int = 4
    base_filters: int = 32
    attention_enabled: bool = True
    residual_enabled: bool = True

    def __post_init__(self):
        if self.base_filters < 1:
            raise ValueError(f"base_filters must be >= 1, got {self.base_filters}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.in_channels < 1 or self.out_classes < 2:
            raise ValueError(
                f"need in_channels >= 1 and out_classes >= 2, got "
                f"({self.in_channels}, {self.out_classes})"
            )

    def to_dict(self):
        return {
            "in_channels": self.in_channels, "out_classes": self.out_classes,
            "depth": self.depth, "base_filters": self.base_filters,
            "attention_enabled": self.attention_enabled,
            "residual_enabled": self.residual_enabled,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class ResidualBlock3d(nn.Module):
    """Two 3x3x3 conv + batch norm + ReLU layers with an additive skip path.

    out = ReLU(BN2(Conv2(ReLU(BN1(Conv1(x))))) + proj(x)), where proj is the
    identity when channel counts match and a 1x1x1 convolution otherwise.
    With ``residual=False`` the skip path is dropped entirely.
    """

    def __init__(self, in_channels: int, out_channels: int, residual: bool = True):
        super().__init__()
        self.residual = residual
        self.conv1 = nn.Conv3d(in_channels, out_channels, 3, padding=1)
        self.norm1 = nn.BatchNorm3d(out_channels)
        self.conv2 = nn.Conv3d(out_channels, out_channels, 3, padding=1)
        self.norm2 = nn.BatchNorm3d(out_channels)
        self.proj = None
        if residual and in_channels != out_channels:
            self.proj = nn.Conv3d(in_channels, out_channels, 1)

    def forward(self, x):
        y = F.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        if self.residual:
            y = y + (x if self.proj is None else self.proj(x))
        return F.relu(y)


class AttentionGate3d(nn.Module):
    """Soft gating of encoder skip features by coarser decoder context.

    alpha = sigmoid(psi(ReLU(Wx x + Wg g))), broadcast over channels; the
    gating signal g may sit at a coarser resolution, in which case its
    projection is resampled (trilinear) to x's grid.  Returns the gated
    features and the attention map.
    """

    def __init__(self, x_channels: int, gate_channels: int, inter_channels: int = None):
        super().__init__()
        if inter_channels is None:
            inter_channels = max(1, x_channels // 2)
        self.project_x = nn.Conv3d(x_channels, inter_channels, 1)
        self.project_g = nn.Conv3d(gate_channels, inter_channels, 1)
        self.psi = nn.Conv3d(inter_channels, 1, 1)

    def forward(self, x, g):
        gx = self.project_x(x)
        gg = self.project_g(g)
        if gg.shape[2:] != gx.shape[2:]:
            if any(gd > xd for gd, xd in zip(g.shape[2:], x.shape[2:])):
                raise ValueError(
                    f"gating signal dims {tuple(g.shape[2:])} must be coarser "
                    f"than or equal to skip dims {tuple(x.shape[2:])}"
                )
            gg = F.interpolate(gg, size=gx.shape[2:], mode="trilinear",
                               align_corners=False)
        alpha = torch.sigmoid(self.psi(F.relu(gx + gg)))
        return x * alpha, alpha


class BrainUNet(nn.Module):
    """U-shaped encoder-decoder over [B, 3, D, H, W] inputs.

    ``forward`` returns per-voxel class probabilities [B, 4, D, H, W]
    (softmax applied), and optionally the per-level attention maps.
    Spatial dims must be divisible by 2**depth.
    """

    def __init__(self, config: ModelConfig = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        widths = [cfg.base_filters * 2 ** i for i in range(cfg.depth + 1)]

        self.encoder_blocks = nn.ModuleList()
        self.downsamplers = nn.ModuleList()
        in_ch = cfg.in_channels
        for w in widths[:-1]:
            self.encoder_blocks.append(ResidualBlock3d(in_ch, w, cfg.residual_enabled))
            self.downsamplers.append(nn.Conv3d(w, w, 2, stride=2))
            in_ch = w
        self.bottleneck = ResidualBlock3d(widths[-2], widths[-1], cfg.residual_enabled)

        self.upsamplers = nn.ModuleList()
        self.attention_gates = nn.ModuleList()
        self.decoder_blocks = nn.ModuleList()
        for w_deep, w in zip(widths[::-1][:-1], widths[::-1][1:]):
            self.upsamplers.append(nn.ConvTranspose3d(w_deep, w, 2, stride=2))
            self.attention_gates.append(
                AttentionGate3d(w, w) if cfg.attention_enabled else None
            )
            self.decoder_blocks.append(ResidualBlock3d(2 * w, w, cfg.residual_enabled))

        self.head = nn.Conv3d(widths[0], cfg.out_classes, 1)
        self.apply(_init_weights)

    def _check_input(self, x):
        if x.ndim != 5 or x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected [B, {self.config.in_channels}, D, H, W], got {tuple(x.shape)}"
            )
        factor = 2 ** self.config.depth
        bad = [d for d in x.shape[2:] if d % factor != 0]
        if bad:
            raise ValueError(
                f"spatial dims {tuple(x.shape[2:])} must be divisible by "
                f"2**depth = {factor}"
            )

    def forward(self, x, return_attention: bool = False):
        self._check_input(x)
        skips = []
        h = x
        for block, down in zip(self.encoder_blocks, self.downsamplers):
            h = block(h)
            skips.append(h)
            h = down(h)
        h = self.bottleneck(h)

        attention_maps = []
        for up, gate, block, skip in zip(
            self.upsamplers, self.attention_gates, self.decoder_blocks, skips[::-1]
        ):
            h = up(h)
            if gate is not None:
                skip, alpha = gate(skip, h)
                attention_maps.append(alpha)
            h = block(torch.cat([skip, h], dim=1))

        probs = torch.softmax(self.head(h), dim=1)
        if return_attention:
            return probs, attention_maps
        return probs


def _init_weights(module):
    # variance-scaling fan-in for convolutions, zeros for biases
    if isinstance(module, (nn.Conv3d, nn.ConvTranspose3d)):
        nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm3d):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def build_model(config: ModelConfig = None, seed: int = None) -> BrainUNet:
    """Construct a BrainUNet, optionally with a reproducible initialization."""
    if seed is not None:
        torch.manual_seed(seed)
    return BrainUNet(config)


def count_parameters(model: nn.Module) -> int:
    """Number of trainable parameters."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def predict_probabilities(model: BrainUNet, vol) -> np.ndarray:
    """Forward one unbatched volume; returns float32 probabilities [K, D, H, W].

    Accepts a MultiModalVolume or a [C, D, H, W] array.  Runs in evaluation
    mode without gradients, so repeated calls on the same input are
    identical.
    """
    data = vol.data if isinstance(vol, MultiModalVolume) else np.asarray(vol)
    if data.ndim != 4:
        raise ValueError(f"expected [C, D, H, W], got shape {data.shape}")
    ref = next(model.parameters())
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            batch = torch.from_numpy(np.ascontiguousarray(data)).to(
                dtype=ref.dtype, device=ref.device).unsqueeze(0)
            probs = model(batch)[0]
    finally:
        if was_training:
            model.train()
    return probs.cpu().numpy().astype(np.float32)
