import json

import numpy as np
import pytest

from fert.config import (
    AdcCube,
    Axis,
    ImageKind,
    RadarConfig,
    RadarImage,
    config_from_dict,
    default_config,
    derive_params,
    load_config,
    range_bin_of,
)
from fert.errors import ConfigError, DomainError, FileSystemError

# Frozen against hand arithmetic: c = 299792458 m/s, B = 1 GHz, f_c = 60 GHz,
# 64 chirps at 391.55 us, 128 samples per chirp.
RANGE_RES = 0.149896229
WAVELENGTH = 4.996540966666667e-3
VEL_RES = 0.09969474127
MAX_VEL = 3.19023172064


class TestDerivedParams:
    def test_frozen_values(self):
        d = derive_params(default_config())
        assert d.range_resolution == pytest.approx(RANGE_RES, rel=1e-9)
        assert d.wavelength == pytest.approx(WAVELENGTH, rel=1e-9)
        assert d.velocity_resolution == pytest.approx(VEL_RES, rel=1e-6)
        assert d.max_velocity == pytest.approx(MAX_VEL, rel=1e-6)
        assert d.n_range_bins == 64
        assert d.n_doppler_bins == 64
        assert d.max_range == pytest.approx(64 * RANGE_RES, rel=1e-9)

    def test_unambiguous_span_is_half_doppler_axis(self):
        d = derive_params(default_config())
        # +-max_velocity across n_chirps bins: one bin is exactly vel_res
        assert d.max_velocity == pytest.approx(d.velocity_resolution * d.n_doppler_bins / 2)

    def test_face_range_lands_in_low_bins(self):
        cfg = default_config()
        assert range_bin_of(cfg, 0.25) == pytest.approx(1.66782, abs=1e-4)
        assert range_bin_of(cfg, 0.0) == 0.0

    def test_range_outside_span_rejected(self):
        cfg = default_config()
        with pytest.raises(DomainError):
            range_bin_of(cfg, -0.1)
        with pytest.raises(DomainError):
            range_bin_of(cfg, 1e4)

    def test_default_spacing_is_half_wavelength(self):
        cfg = default_config()
        assert cfg.antenna_spacing == pytest.approx(WAVELENGTH / 2, rel=1e-9)


class TestRadarConfigValidation:
    def test_defaults_valid(self):
        cfg = RadarConfig()
        assert cfg.n_rx == 3 and cfg.n_chirps == 64 and cfg.n_samples == 128

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_samples": 100},
            {"n_chirps": 48},
            {"n_tx": 0},
            {"n_rx": 0},
            {"bandwidth": 0.0},
            {"frame_period": -1.0},
            {"antenna_spacing": 0.0},
        ],
    )
    def test_bad_fields_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            RadarConfig(**kwargs)

    def test_chirps_must_fit_in_frame(self):
        with pytest.raises(ConfigError, match="fit"):
            RadarConfig(frame_period=1e-3)


class TestConfigFromDict:
    def base(self):
        return {
            "n_tx": 1,
            "n_rx": 3,
            "n_chirps": 64,
            "n_samples": 128,
            "frame_period": 50e-3,
            "chirp_to_chirp": 391.55e-6,
            "bandwidth": 1e9,
            "carrier_freq": 60e9,
            "adc_rate": 2e6,
        }

    def test_round_trip(self):
        cfg = config_from_dict(self.base())
        assert cfg == default_config()

    def test_unknown_key_rejected(self):
        raw = self.base()
        raw["bandwith"] = 1e9
        with pytest.raises(ConfigError, match="unknown"):
            config_from_dict(raw)

    def test_missing_key_rejected(self):
        raw = self.base()
        del raw["bandwidth"]
        with pytest.raises(ConfigError, match="missing"):
            config_from_dict(raw)

    def test_int_fields_reject_floats(self):
        raw = self.base()
        raw["n_chirps"] = 64.0
        with pytest.raises(ConfigError):
            config_from_dict(raw)

    def test_null_spacing_means_half_wavelength(self):
        raw = self.base()
        raw["antenna_spacing"] = None
        cfg = config_from_dict(raw)
        assert cfg.antenna_spacing == pytest.approx(WAVELENGTH / 2, rel=1e-9)

    def test_load_config(self, tmp_path):
        p = tmp_path / "radar.json"
        p.write_text(json.dumps(self.base()))
        assert load_config(p) == default_config()

    def test_load_config_missing_file(self, tmp_path):
        with pytest.raises(FileSystemError):
            load_config(tmp_path / "absent.json")

    def test_load_config_bad_json(self, tmp_path):
        p = tmp_path / "radar.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(p)


class TestImageTypes:
    def axis(self, n, name="range"):
        return Axis(name=name, unit="m", values=np.arange(n, dtype=float))

    def test_radar_image_valid(self):
        img = RadarImage(
            kind=ImageKind.RDI,
            data=np.ones((4, 6)),
            row_axis=self.axis(4),
            col_axis=self.axis(6, "velocity"),
        )
        assert img.shape == (4, 6)

    def test_radar_image_axis_mismatch(self):
        with pytest.raises(DomainError):
            RadarImage(
                kind=ImageKind.RDI,
                data=np.ones((4, 6)),
                row_axis=self.axis(5),
                col_axis=self.axis(6),
            )

    def test_radar_image_rejects_negative_and_nan(self):
        with pytest.raises(DomainError):
            RadarImage(
                kind=ImageKind.RAI,
                data=np.full((2, 2), -1.0),
                row_axis=self.axis(2),
                col_axis=self.axis(2),
            )
        bad = np.ones((2, 2))
        bad[0, 0] = np.nan
        with pytest.raises(DomainError):
            RadarImage(
                kind=ImageKind.RAI, data=bad, row_axis=self.axis(2), col_axis=self.axis(2)
            )

    def test_adc_cube_shape_check(self):
        cfg = default_config()
        cube = AdcCube(data=np.zeros((3, 64, 128), dtype=np.float32))
        cube.validate_against(cfg)
        with pytest.raises(DomainError):
            AdcCube(data=np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(DomainError):
            AdcCube(data=np.zeros((3, 64, 64), dtype=np.float32)).validate_against(cfg)

    def test_adc_cube_rejects_nan(self):
        bad = np.zeros((1, 2, 4), dtype=np.float32)
        bad[0, 0, 0] = np.inf
        with pytest.raises(DomainError):
            AdcCube(data=bad)
