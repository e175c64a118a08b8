import json

import numpy as np
import pytest
from scipy.stats import spearmanr

from vtcd.errors import DimensionError, ValidationError
from vtcd.phantom import (
    DegradationSpec,
    PhantomSpec,
    build_dataset,
    degrade_volume,
    generate_phantom,
    load_manifest,
    load_pair,
    noise_ramp,
)
from vtcd.volume import Volume3D


class TestGeneratePhantom:
    def test_deterministic(self):
        spec = PhantomSpec(seed=7)
        a = generate_phantom(spec)
        b = generate_phantom(spec)
        assert np.array_equal(a.data, b.data)

    def test_zero_cells_is_constant_background(self):
        spec = PhantomSpec(num_cells=0, background_level=0.2)
        vol = generate_phantom(spec)
        assert np.all(vol.data == np.float32(0.2))

    def test_bright_fraction_in_oracle_band(self):
        # Band from scripts/phantom_band_oracle.py: guaranteed
        # [0.003860, 0.071793] for any valid 5-cell configuration at these
        # parameters (typical MC values 0.032..0.050).
        spec = PhantomSpec(dims=(64, 64, 32), num_cells=5, seed=0)
        threshold = (spec.background_level + spec.membrane_level) / 2
        for seed in (0, 1, 2):
            vol = generate_phantom(PhantomSpec(dims=(64, 64, 32), num_cells=5, seed=seed))
            frac = float(np.mean(vol.data > threshold))
            assert 0.003860 <= frac <= 0.071793

    def test_unplaceable_spec_rejected(self):
        with pytest.raises(ValidationError):
            PhantomSpec(dims=(8, 8, 8), radius_range=(6.0, 7.0))

    def test_isotropic_gradient_statistics(self):
        # clean phantoms should look the same along all three axes
        vol = generate_phantom(PhantomSpec(dims=(48, 48, 48), num_cells=4, seed=3)).data
        grads = [np.abs(np.diff(vol, axis=ax)).mean() for ax in range(3)]
        assert max(grads) < 2.0 * min(grads)


class TestDegradeVolume:
    def test_identity_pipeline(self):
        vol = generate_phantom(PhantomSpec(seed=1))
        deg = DegradationSpec(sigma0=0.0, sigma1=0.0, axial_factor=1, axial_blur_sigma=0.0)
        out = degrade_volume(vol, deg)
        assert np.array_equal(out.data, vol.data)

    def test_output_shape(self):
        vol = generate_phantom(PhantomSpec(dims=(16, 16, 32), radius_range=(3, 5), seed=0))
        out = degrade_volume(vol, DegradationSpec(axial_factor=4))
        assert out.dims == (16, 16, 8)

    def test_nondividing_factor_rejected(self):
        vol = generate_phantom(PhantomSpec(dims=(16, 16, 30), radius_range=(3, 5), seed=0))
        with pytest.raises(DimensionError):
            degrade_volume(vol, DegradationSpec(axial_factor=4))

    def test_noise_ramp_stds(self):
        # 3*(std of the sample std) bounds from scripts/phantom_band_oracle.py:
        # 6.63e-4 at sigma 0.02 and 3.315e-3 at sigma 0.10 for 64*64 samples.
        base = Volume3D(np.full((64, 64, 8), 0.5, dtype=np.float32))
        deg = DegradationSpec(sigma0=0.02, sigma1=0.08, axial_factor=1, axial_blur_sigma=0.0, seed=5)
        out = degrade_volume(base, deg).data.astype(np.float64)
        s_first = out[:, :, 0].std(ddof=1)
        s_last = out[:, :, -1].std(ddof=1)
        assert abs(s_first - 0.02) <= 6.63e-4
        assert abs(s_last - 0.10) <= 3.315e-3

    def test_noise_std_monotone_in_depth(self):
        base = Volume3D(np.full((32, 32, 16), 0.5, dtype=np.float32))
        for seed in (0, 1, 2):
            deg = DegradationSpec(sigma0=0.02, sigma1=0.1, axial_factor=1, axial_blur_sigma=0.0, seed=seed)
            out = degrade_volume(base, deg).data
            stds = [out[:, :, z].std() for z in range(16)]
            rho, _ = spearmanr(np.arange(16), stds)
            assert rho > 0.9

    def test_deterministic(self):
        vol = generate_phantom(PhantomSpec(seed=2))
        deg = DegradationSpec(seed=3)
        assert np.array_equal(degrade_volume(vol, deg).data, degrade_volume(vol, deg).data)

    def test_degraded_volume_is_axially_anisotropic(self):
        vol = generate_phantom(PhantomSpec(dims=(32, 32, 32), seed=4))
        out = degrade_volume(vol, DegradationSpec(sigma0=0.0, sigma1=0.0, seed=0)).data
        up = np.repeat(out, 4, axis=2)  # crude re-expansion for comparison
        lateral = np.abs(np.diff(up, axis=0)).mean()
        axial = np.abs(np.diff(up, axis=2)).mean()
        assert axial < lateral  # z detail was blurred away

    def test_ramp_single_slice(self):
        assert noise_ramp(DegradationSpec(sigma0=0.07), 1).tolist() == [0.07]


class TestBuildDataset:
    def test_split_and_shapes(self, tmp_path):
        pspec = PhantomSpec(dims=(16, 16, 16), radius_range=(3, 5), seed=0)
        dspec = DegradationSpec(axial_factor=4, seed=0)
        manifest = build_dataset(5, pspec, dspec, tmp_path / "ds")
        assert len(manifest.entries) == 5
        assert len(manifest.train_indices) == 4
        assert len(manifest.eval_indices) == 1
        for i in range(5):
            clean, degraded = load_pair(manifest, i)
            assert clean.dims == (16, 16, 16)
            assert degraded.dims == (16, 16, 4)

    def test_rebuild_is_identical(self, tmp_path):
        pspec = PhantomSpec(dims=(16, 16, 16), radius_range=(3, 5), seed=1)
        dspec = DegradationSpec(axial_factor=2, seed=1)
        build_dataset(2, pspec, dspec, tmp_path / "a")
        build_dataset(2, pspec, dspec, tmp_path / "b")
        for name in ("clean_0000.vol", "degraded_0001.vol", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_manifest_round_trip(self, tmp_path):
        pspec = PhantomSpec(dims=(16, 16, 16), radius_range=(3, 5), seed=2)
        dspec = DegradationSpec(axial_factor=2, seed=2)
        manifest = build_dataset(3, pspec, dspec, tmp_path / "ds")
        back = load_manifest(tmp_path / "ds" / "manifest.json")
        assert back.train_indices == manifest.train_indices
        assert [e.clean_path for e in back.entries] == [e.clean_path for e in manifest.entries]
        assert back.entries[1].degradation_spec.seed == dspec.seed + 1

    def test_manifest_missing_volume_rejected(self, tmp_path):
        pspec = PhantomSpec(dims=(16, 16, 16), radius_range=(3, 5), seed=2)
        manifest = build_dataset(2, pspec, DegradationSpec(axial_factor=2), tmp_path / "ds")
        (tmp_path / "ds" / "clean_0001.vol").unlink()
        with pytest.raises(ValidationError, match="missing"):
            load_manifest(tmp_path / "ds" / "manifest.json")

    def test_manifest_is_valid_json_with_split(self, tmp_path):
        pspec = PhantomSpec(dims=(16, 16, 16), radius_range=(3, 5), seed=0)
        build_dataset(2, pspec, DegradationSpec(axial_factor=2), tmp_path / "ds")
        doc = json.loads((tmp_path / "ds" / "manifest.json").read_text())
        assert doc["format_version"] == 1
        assert sorted(doc["split"]) == ["eval", "train"]
        assert set(doc["split"]["train"]).isdisjoint(doc["split"]["eval"])
