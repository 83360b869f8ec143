"""Synthetic multi-modal phantoms with known tumor geometry.

A phantom is a brain-shaped ellipsoid containing three nested tumor
subregions: an enhancing core (label 3) inside the non-enhancing core
(label 1) inside the FLAIR-hyperintense rim (label 2), on background 0.
Each channel renders the regions with its own contrast so that every
downstream metric has a nontrivial target in all three subregions.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .io import LabelMask, MultiModalVolume

MIN_DIMS = (16, 16, 16)

# Per-profile region intensities, rows are (brain, NETC=1, SNFH=2, ET=3).
# "standard" mimics a clean acquisition; "lowfield" pulls contrasts together,
# adds noise and blur, standing in for a different scanner domain.
_PROFILES = {
    "standard": {
        "flair": (0.35, 0.60, 0.85, 0.70),
        "t1ce": (0.40, 0.20, 0.45, 0.90),
        "t2w": (0.30, 0.75, 0.65, 0.50),
        "noise": 0.03,
        "blur": 0.0,
    },
    "lowfield": {
        "flair": (0.40, 0.52, 0.68, 0.58),
        "t1ce": (0.45, 0.33, 0.47, 0.72),
        "t2w": (0.35, 0.60, 0.54, 0.46),
        "noise": 0.06,
        "blur": 0.7,
    },
}

# Radii as fractions of volume dims; chosen so that every nonzero label
# covers at least 1% of the voxels even at the 16^3 minimum with the worst
# jitter draw.
_BRAIN_FRAC = 0.44
_REGION_FRACS = {2: 0.34, 1: 0.24, 3: 0.17}
_JITTER = (0.92, 1.08)


def _ellipsoid(dims, center, radii):
    grids = np.ogrid[tuple(slice(0, d) for d in dims)]
    acc = np.zeros(dims, dtype=np.float64)
    for g, c, r in zip(grids, center, radii):
        acc = acc + ((g - c) / r) ** 2
    return acc <= 1.0


def generate_phantom(seed: int, dims, profile: str = "standard"):
    """Build a deterministic (MultiModalVolume, LabelMask) pair.

    Pure function of (seed, dims, profile): the same arguments always
    produce identical arrays.  dims must be at least 16 on every axis.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < m for d, m in zip(dims, MIN_DIMS)):
        raise ValueError(f"phantom dims must be at least {MIN_DIMS}, got {dims}")
    if profile not in _PROFILES:
        raise ValueError(f"unknown profile {profile!r}, choose from {sorted(_PROFILES)}")
    prof = _PROFILES[profile]
    rng = np.random.default_rng(seed)
    dims_arr = np.asarray(dims, dtype=np.float64)

    brain_center = dims_arr / 2 + rng.uniform(-0.03, 0.03, 3) * dims_arr
    brain_radii = _BRAIN_FRAC * dims_arr
    brain = _ellipsoid(dims, brain_center, brain_radii)

    tumor_center = brain_center + rng.uniform(-0.05, 0.05, 3) * dims_arr
    mask = np.zeros(dims, dtype=np.int16)
    # paint outside-in so inner labels overwrite outer ones
    for label in (2, 1, 3):
        radii = _REGION_FRACS[label] * dims_arr * rng.uniform(*_JITTER, 3)
        mask[_ellipsoid(dims, tumor_center, radii)] = label

    channels = []
    for name in ("flair", "t1ce", "t2w"):
        base, netc, snfh, et = prof[name]
        chan = np.zeros(dims, dtype=np.float64)
        chan[brain] = base
        chan[mask == 1] = netc
        chan[mask == 2] = snfh
        chan[mask == 3] = et
        chan += rng.normal(0.0, prof["noise"], dims) * brain
        if prof["blur"] > 0:
            chan = ndimage.gaussian_filter(chan, prof["blur"])
        # keep the brain footprint strictly positive so the nonzero-voxel
        # logic downstream sees a stable foreground
        chan[brain] = np.maximum(chan[brain], 0.02)
        chan[~brain] = 0.0
        channels.append(chan.astype(np.float32))

    n_vox = float(np.prod(dims))
    for label in (1, 2, 3):
        frac = np.count_nonzero(mask == label) / n_vox
        if frac < 0.01:
            raise RuntimeError(
                f"phantom construction bug: label {label} covers {frac:.2%} < 1%"
            )

    vol = MultiModalVolume(data=np.stack(channels, axis=0))
    return vol, LabelMask(data=mask)
