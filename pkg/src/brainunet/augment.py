"""Seeded training-time transforms, including simulated MRI artifacts.

Every transform takes an explicit numpy Generator; callers own their RNG
streams (one per worker), so there is no hidden global state and a pipeline
run is a pure function of (inputs, config, seed).

The motion and ghosting simulators work in k-space, the standard approach
for MRI artifact synthesis: motion blends the spectra of rigidly shifted
copies, ghosting attenuates periodic phase-encode lines, which materializes
as displaced replicas in image space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


@dataclass
class AugmentConfig:
    """Knobs for the stochastic pipeline; ranges are inclusive (lo, hi)."""

    flip_prob: float = 0.5
    scale_prob: float = 0.5
    gamma_prob: float = 0.5
    motion_prob: float = 0.5
    ghosting_prob: float = 0.5
    scale_range: tuple = (0.9, 1.1)
    gamma_range: tuple = (0.8, 1.2)
    motion_severity: float = 0.3
    ghosting_intensity: float = 0.3
    ghosting_num_ghosts: int = 4
    seed: int = 0

    def __post_init__(self):
        for name in ("flip_prob", "scale_prob", "gamma_prob", "motion_prob",
                     "ghosting_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        for name in ("scale_range", "gamma_range"):
            lo, hi = getattr(self, name)
            if not (0.0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        if not 0.0 <= self.motion_severity <= 1.0:
            raise ValueError(f"motion_severity must be in [0, 1], got {self.motion_severity}")
        if not 0.0 <= self.ghosting_intensity <= 1.0:
            raise ValueError(
                f"ghosting_intensity must be in [0, 1], got {self.ghosting_intensity}"
            )
        if self.ghosting_num_ghosts < 0:
            raise ValueError(f"ghosting_num_ghosts must be >= 0, got {self.ghosting_num_ghosts}")

    def to_dict(self):
        return {
            "flip_prob": self.flip_prob, "scale_prob": self.scale_prob,
            "gamma_prob": self.gamma_prob, "motion_prob": self.motion_prob,
            "ghosting_prob": self.ghosting_prob,
            "scale_range": list(self.scale_range),
            "gamma_range": list(self.gamma_range),
            "motion_severity": self.motion_severity,
            "ghosting_intensity": self.ghosting_intensity,
            "ghosting_num_ghosts": self.ghosting_num_ghosts,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("scale_range", "gamma_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _check_pair(vol, mask):
    if vol.ndim != 4:
        raise ValueError(f"volume must be [C,D,H,W], got shape {vol.shape}")
    if mask is not None and vol.shape[1:] != mask.shape:
        raise ValueError(
            f"volume spatial dims {vol.shape[1:]} != mask dims {mask.shape}"
        )


def random_flip(vol: np.ndarray, mask, rng: np.random.Generator):
    """Flip each spatial axis independently with probability 0.5.

    Volume and mask are flipped along exactly the same axes.
    """
    _check_pair(vol, mask)
    axes = [ax for ax in range(3) if rng.random() < 0.5]
    if not axes:
        return vol.copy(), None if mask is None else mask.copy()
    vol_axes = tuple(ax + 1 for ax in axes)
    out_vol = np.flip(vol, axis=vol_axes).copy()
    out_mask = None if mask is None else np.flip(mask, axis=tuple(axes)).copy()
    return out_vol, out_mask


def _zoom_about_center(arr3d, factor, order):
    # affine_transform pulls output voxels from input at matrix @ o + offset;
    # matrix (1/f) * I with offset c*(1 - 1/f) zooms about the volume center
    # and keeps the output shape, which covers the center crop/pad in one go.
    center = (np.asarray(arr3d.shape, dtype=np.float64) - 1) / 2
    inv = 1.0 / factor
    offset = center * (1.0 - inv)
    return ndimage.affine_transform(
        arr3d, np.diag([inv] * 3), offset=offset, order=order,
        mode="constant", cval=0.0, prefilter=False,
    )


def random_scale(vol: np.ndarray, mask, factor: float):
    """Zoom by ``factor`` about the center, keeping the original dims.

    Intensities are interpolated trilinearly, masks by nearest neighbor, so
    no new label values can appear.
    """
    _check_pair(vol, mask)
    if factor <= 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    out_vol = np.stack(
        [_zoom_about_center(vol[c].astype(np.float32), factor, order=1)
         for c in range(vol.shape[0])], axis=0)
    out_mask = None
    if mask is not None:
        out_mask = _zoom_about_center(mask, factor, order=0).astype(mask.dtype)
    return out_vol, out_mask


def random_gamma(vol: np.ndarray, gamma: float) -> np.ndarray:
    """Per-voxel v -> v**gamma.  Requires normalized intensities in [0, 1]."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if vol.min() < 0 or vol.max() > 1:
        raise ValueError(
            "gamma adjustment expects intensities in [0, 1]; run normalize first"
        )
    return np.power(vol, gamma)


def motion_artifact(vol: np.ndarray, severity: float, rng: np.random.Generator) -> np.ndarray:
    """Simulate bulk patient motion by k-space mixing of shifted copies.

    Per channel: blend the spectrum of the original with the spectra of
    ceil(4*severity) rigidly translated copies (random integer shifts of at
    most ceil(3*severity) voxels per axis) using random convex weights, then
    invert and take the magnitude.  severity=0 returns the input unchanged.
    """
    if not 0.0 <= severity <= 1.0:
        raise ValueError(f"severity must be in [0, 1], got {severity}")
    if vol.ndim != 4:
        raise ValueError(f"volume must be [C,D,H,W], got shape {vol.shape}")
    n_copies = int(np.ceil(4 * severity))
    if n_copies == 0:
        return vol.copy()
    max_shift = int(np.ceil(3 * severity))
    out = np.empty_like(vol, dtype=np.float32)
    for c in range(vol.shape[0]):
        chan = vol[c]
        spectra = [np.fft.fftn(chan)]
        for _ in range(n_copies):
            shift = rng.integers(-max_shift, max_shift + 1, size=3)
            spectra.append(np.fft.fftn(np.roll(chan, shift, axis=(0, 1, 2))))
        weights = rng.dirichlet(np.ones(len(spectra)))
        mixed = sum(w * s for w, s in zip(weights, spectra))
        out[c] = np.abs(np.fft.ifftn(mixed)).astype(np.float32)
    return out


def ghosting_artifact(vol: np.ndarray, intensity: float, num_ghosts: int,
                      axis: int = None, rng: np.random.Generator = None) -> np.ndarray:
    """Simulate phase-encode ghosting by periodic k-space line attenuation.

    Per channel: along the phase-encode axis, scale every ``num_ghosts``-th
    spectral line (indices k, 2k, ...; the DC line stays) by
    (1 - intensity), invert and take the magnitude.  This produces
    ``num_ghosts`` displaced replicas along that axis.  intensity=0 or
    num_ghosts=0 returns the input unchanged.  If ``axis`` is None it is
    drawn from ``rng``.
    """
    if not 0.0 <= intensity <= 1.0:
        raise ValueError(f"intensity must be in [0, 1], got {intensity}")
    if num_ghosts < 0:
        raise ValueError(f"num_ghosts must be >= 0, got {num_ghosts}")
    if vol.ndim != 4:
        raise ValueError(f"volume must be [C,D,H,W], got shape {vol.shape}")
    if intensity == 0.0 or num_ghosts == 0:
        return vol.copy()
    if axis is None:
        if rng is None:
            raise ValueError("provide an axis or an rng to draw one")
        axis = int(rng.integers(0, 3))
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1, or 2, got {axis}")

    fft_axis = axis + 1  # volume has a leading channel axis
    spectrum = np.fft.fft(vol, axis=fft_axis)
    picker = [slice(None)] * 4
    picker[fft_axis] = slice(num_ghosts, None, num_ghosts)
    spectrum[tuple(picker)] *= 1.0 - intensity
    return np.abs(np.fft.ifft(spectrum, axis=fft_axis)).astype(np.float32)


def apply_pipeline(vol: np.ndarray, mask, config: AugmentConfig,
                   rng: np.random.Generator):
    """Run the full stochastic chain: flip, scale, gamma, motion, ghosting.

    The five gate draws (one uniform per transform, in that order) are
    consumed first; each transform that fires then consumes its own draws.
    The output is a pure function of (vol, mask, config, rng state).
    """
    _check_pair(vol, mask)
    gates = rng.random(5)
    out_vol = vol
    out_mask = mask
    if gates[0] < config.flip_prob:
        out_vol, out_mask = random_flip(out_vol, out_mask, rng)
    if gates[1] < config.scale_prob:
        factor = rng.uniform(*config.scale_range)
        out_vol, out_mask = random_scale(out_vol, out_mask, factor)
    if gates[2] < config.gamma_prob:
        gamma = rng.uniform(*config.gamma_range)
        if -1e-6 <= out_vol.min() and out_vol.max() <= 1 + 1e-6:
            # repair interpolation round-off; genuinely unnormalized input
            # still trips random_gamma's range contract
            out_vol = np.clip(out_vol, 0.0, 1.0)
        out_vol = random_gamma(out_vol, gamma)
    if gates[3] < config.motion_prob:
        out_vol = motion_artifact(out_vol, config.motion_severity, rng)
    if gates[4] < config.ghosting_prob:
        out_vol = ghosting_artifact(out_vol, config.ghosting_intensity,
                                    config.ghosting_num_ghosts, axis=None, rng=rng)
    if out_vol is vol:
        out_vol = vol.copy()
    if out_mask is mask and mask is not None:
        out_mask = mask.copy()
    return out_vol, out_mask
