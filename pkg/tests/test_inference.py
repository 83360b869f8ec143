import csv
from pathlib import Path

import numpy as np
import pytest
import torch

from brainunet.inference import (
    SlidingWindowSpec,
    TimingRow,
    benchmark_inference,
    crop_predict,
    sliding_window_predict,
    window_starts,
)
from brainunet.io import read_manifest
from brainunet.model import ModelConfig, build_model, predict_probabilities
from brainunet.phantom import generate_phantom

TOY = ModelConfig(base_filters=2, depth=2)


@pytest.fixture(scope="module")
def toy_model():
    return build_model(TOY, seed=0).eval()


class TestWindowStarts:
    def test_covering_layout(self):
        assert window_starts(240, 128, 64) == [0, 64, 112]
        assert window_starts(128, 128, 64) == [0]
        assert window_starts(155, 128, 128) == [0, 27]
        assert window_starts(100, 128, 64) == [0]

    def test_every_voxel_covered(self):
        for length, patch, stride in ((37, 16, 9), (64, 32, 32), (50, 16, 7)):
            covered = np.zeros(length, dtype=bool)
            for s in window_starts(length, patch, stride):
                covered[s:s + patch] = True
            assert covered.all()


class TestSlidingWindowSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            SlidingWindowSpec(overlap=1.0)
        with pytest.raises(ValueError):
            SlidingWindowSpec(blending="triangle")
        with pytest.raises(ValueError):
            SlidingWindowSpec(patch=(0, 8, 8))

    def test_patch_depth_compatibility_checked(self, toy_model, phantom32):
        vol, _ = phantom32
        spec = SlidingWindowSpec(patch=(30, 30, 30))
        with pytest.raises(ValueError, match="divisible"):
            sliding_window_predict(toy_model, vol, spec)


class TestSlidingWindowPredict:
    def test_single_window_equals_direct_forward(self, toy_model, phantom32):
        vol, _ = phantom32
        for overlap in (0.0, 0.5):
            spec = SlidingWindowSpec(patch=(32, 32, 32), overlap=overlap)
            mask, debug = sliding_window_predict(toy_model, vol, spec,
                                                 return_debug=True)
            assert debug["num_windows"] == 1
            direct = np.argmax(predict_probabilities(toy_model, vol), axis=0)
            assert np.array_equal(mask.data, direct)

    def test_disjoint_windows_equal_independent_predictions(self, toy_model):
        vol_a, _ = generate_phantom(seed=1, dims=(16, 16, 16))
        vol_b, _ = generate_phantom(seed=2, dims=(16, 16, 16))
        stacked = np.concatenate([vol_a.data, vol_b.data], axis=3)  # [3,16,16,32]
        spec = SlidingWindowSpec(patch=(16, 16, 16), overlap=0.0, blending="uniform")
        mask, debug = sliding_window_predict(toy_model, stacked, spec,
                                             return_debug=True)
        assert debug["num_windows"] == 2
        direct_a = np.argmax(predict_probabilities(toy_model, vol_a.data), axis=0)
        direct_b = np.argmax(predict_probabilities(toy_model, vol_b.data), axis=0)
        assert np.array_equal(mask.data[:, :, :16], direct_a)
        assert np.array_equal(mask.data[:, :, 16:], direct_b)

    def test_output_dims_match_input_with_padding(self, toy_model):
        vol, _ = generate_phantom(seed=5, dims=(20, 24, 18))
        spec = SlidingWindowSpec(patch=(16, 16, 16), overlap=0.25)
        mask = sliding_window_predict(toy_model, vol, spec)
        assert mask.data.shape == (20, 24, 18)
        assert set(np.unique(mask.data)) <= {0, 1, 2, 3}

    def test_weights_cover_and_probabilities_normalized(self, toy_model):
        vol, _ = generate_phantom(seed=4, dims=(24, 24, 24))
        spec = SlidingWindowSpec(patch=(16, 16, 16), overlap=0.5)
        mask, debug = sliding_window_predict(toy_model, vol, spec, return_debug=True)
        assert np.all(debug["weight_sum"] > 0)
        sums = debug["probabilities"].sum(axis=0)
        assert np.allclose(sums, 1.0, atol=1e-4)

    def test_geometry_carried(self, toy_model):
        vol, _ = generate_phantom(seed=6, dims=(16, 16, 16))
        vol.spacing = (1.0, 1.0, 2.0)
        mask = sliding_window_predict(toy_model, vol,
                                      SlidingWindowSpec(patch=(16, 16, 16)))
        assert mask.spacing == (1.0, 1.0, 2.0)

    def test_deterministic(self, toy_model, phantom32):
        vol, _ = phantom32
        spec = SlidingWindowSpec(patch=(16, 16, 16), overlap=0.5)
        a = sliding_window_predict(toy_model, vol, spec)
        b = sliding_window_predict(toy_model, vol, spec)
        assert np.array_equal(a.data, b.data)


class TestCropPredict:
    def test_restores_original_dims(self, toy_model):
        vol, _ = generate_phantom(seed=9, dims=(24, 40, 20))
        mask = crop_predict(toy_model, vol, crop_dims=(16, 16, 16))
        assert mask.data.shape == (24, 40, 20)
        assert set(np.unique(mask.data)) <= {0, 1, 2, 3}


class TestBenchmark:
    @pytest.fixture()
    def phantom_manifest(self, tmp_path):
        from brainunet.cli import main
        assert main(["phantom", "--out", str(tmp_path / "data"), "--count", "5",
                     "--seed", "0", "--dims", "16"]) == 0
        return tmp_path / "data" / "manifest.json"

    def test_five_cases_table_structure(self, toy_model, phantom_manifest, tmp_path):
        records = read_manifest(phantom_manifest)
        table = benchmark_inference(
            records, phantom_manifest.parent, toy_model, tmp_path / "preds",
            spec=SlidingWindowSpec(patch=(16, 16, 16)), devices=("cpu",))
        rows = table.to_rows()
        assert len(rows) == 6
        assert rows[-1]["Case ID"] == "Average"
        times = [r["CPU Time (s)"] for r in rows[:-1]]
        assert rows[-1]["CPU Time (s)"] == pytest.approx(np.mean(times), abs=1e-3)
        assert all(t > 0 for t in times)
        csv_path = tmp_path / "timing.csv"
        table.to_csv(csv_path)
        with open(csv_path) as fh:
            parsed = list(csv.DictReader(fh))
        assert list(parsed[0]) == ["Case ID", "CPU Time (s)"]
        assert parsed[-1]["Case ID"] == "Average"
        assert (tmp_path / "preds" / f"{records[0].case_id}.nii.gz").exists()

    def test_empty_case_list_rejected(self, toy_model, tmp_path):
        with pytest.raises(ValueError, match="at least one"):
            benchmark_inference([], tmp_path, toy_model, tmp_path / "p")

    def test_bad_mode_rejected(self, toy_model, phantom_manifest, tmp_path):
        records = read_manifest(phantom_manifest)
        with pytest.raises(ValueError, match="mode"):
            benchmark_inference(records, phantom_manifest.parent, toy_model,
                                tmp_path / "p", mode="turbo")

    def test_timing_row_positive(self):
        with pytest.raises(ValueError, match="positive"):
            TimingRow(case_id="x", device="cpu", seconds=0.0)

    def test_reference_fixture_matches_table_layout(self):
        # the published reference table is documentation (absolute times are
        # hardware-dependent), but its layout must be what to_csv() emits:
        # Case ID column, per-device time columns, internally consistent
        # Average row
        fixture = Path(__file__).resolve().parent.parent / "docs" / "reference_timings.csv"
        with open(fixture) as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0].keys()) == ["Case ID", "GPU (P100) Time (s)",
                                        "CPU Time (s)"]
        assert rows[-1]["Case ID"] == "Average"
        for col in ("GPU (P100) Time (s)", "CPU Time (s)"):
            per_case = [float(r[col]) for r in rows[:-1]]
            assert float(rows[-1][col]) == pytest.approx(np.mean(per_case), abs=0.005)
