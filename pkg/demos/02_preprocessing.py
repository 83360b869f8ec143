"""The deterministic preprocessing chain.

Order of operations before a volume reaches the network: percentile clipping
tames intensity outliers, per-channel min-max normalization maps the
foreground to [0, 1], and a fixed-size crop centered on the tumor bounding
box cuts the training window (zero-padding axes that are too small).  Each
step touches only nonzero voxels, because in skull-stripped brain MRI zero
means "outside the head".

Predictions made on the crop are restored to the original grid with
`restore_prediction`, the exact inverse of the crop.
"""

import numpy as np

from brainunet import (
    MultiModalVolume,
    apply_crop,
    compute_crop,
    generate_phantom,
    normalize,
    one_hot_decode,
    one_hot_encode,
    percentile_clip,
    restore_prediction,
)

vol, mask = generate_phantom(seed=1, dims=(80, 96, 64))

# ---------------------------------------------------------------------------
# 1. Percentile clipping (per channel, over nonzero voxels, exact idempotence)
# ---------------------------------------------------------------------------
spiked = vol.data.copy()
spiked[1, 40, 48, 32] = 50.0  # simulate a hot voxel in T1CE
vol_spiked = MultiModalVolume(data=spiked)

clipped = percentile_clip(vol_spiked, 0.5, 99.5)
print("T1CE max before clipping:", spiked[1].max())
print("T1CE max after  clipping:", clipped.data[1].max())

twice = percentile_clip(clipped, 0.5, 99.5)
assert np.array_equal(clipped.data, twice.data)
print("clipping twice with the same bounds changes nothing (idempotent)\n")

# ---------------------------------------------------------------------------
# 2. Normalization to [0, 1] on the foreground; background stays 0
# ---------------------------------------------------------------------------
normed = normalize(clipped)
for c, name in enumerate(("FLAIR", "T1CE", "T2W")):
    nz = normed.data[c][normed.data[c] != 0]
    print(f"{name}: foreground range [{nz.min():.3f}, {nz.max():.3f}]")
assert normed.data.min() >= 0 and normed.data.max() <= 1

# ---------------------------------------------------------------------------
# 3. Crop to the model input shape, centered on the tumor
# ---------------------------------------------------------------------------
spec = compute_crop(mask, target_dims=(64, 64, 64))
print("\ncrop start:", spec.start, "| dims:", spec.dims,
      "| padding:", spec.pad_before, spec.pad_after)

vol_crop = apply_crop(normed, spec)
mask_crop = apply_crop(mask, spec)
print("cropped volume:", vol_crop.data.shape, "| cropped mask:", mask_crop.data.shape)
kept = {k: int(np.count_nonzero(mask_crop.data == k)) for k in (1, 2, 3)}
total = {k: int(np.count_nonzero(mask.data == k)) for k in (1, 2, 3)}
print("tumor voxels kept by the crop:", kept, "of", total)

# ---------------------------------------------------------------------------
# 4. Restoring a crop-sized prediction to the original grid
# ---------------------------------------------------------------------------
restored = restore_prediction(mask_crop, spec)
assert restored.data.shape == mask.data.shape
assert np.array_equal(apply_crop(restored, spec).data, mask_crop.data)
print("\nrestore_prediction inverts the crop: window matches, zeros elsewhere")

# ---------------------------------------------------------------------------
# 5. One-hot encoding for the loss; argmax decoding breaks ties low
# ---------------------------------------------------------------------------
onehot = one_hot_encode(mask_crop)
decoded = one_hot_decode(onehot)
assert np.array_equal(decoded, mask_crop.data)
print("one-hot shape:", onehot.shape, "| decode(encode(m)) == m:", True)
print("\ndone.")
