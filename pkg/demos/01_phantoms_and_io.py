"""Synthetic phantom cases and NIfTI round trips.

Every capability in this toolkit can be exercised at desk scale without
clinical data: `generate_phantom` builds a brain-shaped volume holding three
nested tumor subregions (enhancing core 3, inside non-enhancing core 1,
inside the FLAIR-hyperintense rim 2) rendered with channel-specific contrast
in the fixed (FLAIR, T1CE, T2W) order.

This script walks the I/O layer: phantom generation, saving and reloading
NIfTI files bit-for-bit, modality stacking, and dataset manifests.
"""

import tempfile
from pathlib import Path

import numpy as np

from brainunet import (
    CaseRecord,
    ScalarVolume,
    generate_phantom,
    load_case,
    load_mask,
    load_volume,
    read_manifest,
    save_volume,
    stack_modalities,
    write_manifest,
)

work = Path(tempfile.mkdtemp(prefix="brainunet_demo_"))
print(f"working in {work}\n")

# ---------------------------------------------------------------------------
# 1. A deterministic phantom: same seed, same voxels.
# ---------------------------------------------------------------------------
vol, mask = generate_phantom(seed=0, dims=(48, 48, 48))
again, _ = generate_phantom(seed=0, dims=(48, 48, 48))
assert np.array_equal(vol.data, again.data)

print("phantom channels:", vol.data.shape, "| mask:", mask.data.shape)
for label, name in [(0, "background"), (1, "NETC"), (2, "SNFH"), (3, "ET")]:
    frac = np.count_nonzero(mask.data == label) / mask.data.size
    print(f"  label {label} ({name:10s}): {frac:6.2%} of voxels")

# Channel contrast differs by design: T1CE lights up the enhancing core,
# FLAIR the surrounding hyperintensity.
et = mask.data == 3
print("\nmean intensity inside the enhancing core:")
for c, name in enumerate(("FLAIR", "T1CE", "T2W")):
    print(f"  {name}: {vol.data[c][et].mean():.3f}")

# ---------------------------------------------------------------------------
# 2. NIfTI-1 round trips are exact, for floats and for integer masks.
# ---------------------------------------------------------------------------
flair = ScalarVolume(data=vol.data[0], spacing=(1.0, 1.0, 1.0))
save_volume(flair, work / "flair.nii.gz")
back = load_volume(work / "flair.nii.gz")
assert np.array_equal(back.data, flair.data)

save_volume(mask, work / "seg.nii.gz")
mask_back = load_mask(work / "seg.nii.gz")
assert np.array_equal(mask_back.data, mask.data)
print("\nsave -> load round trips are bitwise exact (float volume and int mask)")

# ---------------------------------------------------------------------------
# 3. Stacking enforces the channel contract: FLAIR, T1CE, T2W.
# ---------------------------------------------------------------------------
mods = {name: ScalarVolume(data=vol.data[c]) for c, name in
        enumerate(("flair", "t1ce", "t2w"))}
stacked = stack_modalities(mods["flair"], mods["t1ce"], mods["t2w"])
assert np.array_equal(stacked.data, vol.data)
print("stacked shape:", stacked.data.shape, "(channel order FLAIR, T1CE, T2W)")

# ---------------------------------------------------------------------------
# 4. Dataset manifests: one JSON file naming each case's files and split.
# ---------------------------------------------------------------------------
case_dir = work / "case-000"
case_dir.mkdir()
for c, name in enumerate(("flair", "t1ce", "t2w")):
    save_volume(ScalarVolume(data=vol.data[c]), case_dir / f"{name}.nii.gz")
save_volume(mask, case_dir / "seg.nii.gz")
record = CaseRecord(case_id="case-000",
                    flair="case-000/flair.nii.gz", t1ce="case-000/t1ce.nii.gz",
                    t2w="case-000/t2w.nii.gz", mask="case-000/seg.nii.gz",
                    split="train")
write_manifest([record], work / "manifest.json")

loaded = read_manifest(work / "manifest.json")
case_vol, case_mask = load_case(loaded[0], work)
print(f"manifest round trip: {loaded[0].case_id} -> volume {case_vol.data.shape}, "
      f"mask labels {[int(v) for v in np.unique(case_mask.data)]}")
print("\ndone.")
