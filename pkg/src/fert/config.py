"""Radar configuration and the shared cube/image value types.

Everything downstream derives its geometry from RadarConfig. Derived
quantities (resolutions, bin counts, wavelength) are always recomputed
from the config, never stored separately, so they cannot drift.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, FileSystemError

C_LIGHT = 299_792_458.0  # vacuum speed of light, m/s

_OPTIONAL_KEYS = {"n_tx": 1, "n_rx": 3, "adc_rate": 2.0e6, "antenna_spacing": None}
_REQUIRED_KEYS = (
    "n_chirps",
    "n_samples",
    "frame_period",
    "chirp_to_chirp",
    "bandwidth",
    "carrier_freq",
)


def _power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class RadarConfig:
    """Chirp-sequence parameters of the sensor.

    Defaults describe a 60 GHz radar with one transmit and three receive
    antennas arranged in an L (rx0 at the corner, rx1 on the azimuth leg,
    rx2 on the elevation leg). Times are seconds, frequencies Hz,
    lengths meters.
    """

    n_tx: int = 1
    n_rx: int = 3
    n_chirps: int = 64
    n_samples: int = 128
    frame_period: float = 50e-3
    chirp_to_chirp: float = 391.55e-6
    bandwidth: float = 1.0e9
    carrier_freq: float = 60.0e9
    adc_rate: float = 2.0e6
    antenna_spacing: float | None = None  # None -> half wavelength

    def __post_init__(self):
        if self.n_tx < 1:
            raise ConfigError(f"n_tx must be >= 1, got {self.n_tx}")
        if self.n_rx < 1:
            raise ConfigError(f"n_rx must be >= 1, got {self.n_rx}")
        if not _power_of_two(self.n_samples):
            raise ConfigError(f"n_samples must be a power of two, got {self.n_samples}")
        if not _power_of_two(self.n_chirps):
            raise ConfigError(f"n_chirps must be a power of two, got {self.n_chirps}")
        for name in ("frame_period", "chirp_to_chirp", "bandwidth", "carrier_freq", "adc_rate"):
            if not float(getattr(self, name)) > 0.0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_chirps * self.chirp_to_chirp > self.frame_period:
            raise ConfigError(
                "chirps do not fit in the frame: "
                f"{self.n_chirps} * {self.chirp_to_chirp} s > {self.frame_period} s"
            )
        if self.antenna_spacing is None:
            object.__setattr__(self, "antenna_spacing", 0.5 * C_LIGHT / self.carrier_freq)
        elif not self.antenna_spacing > 0.0:
            raise ConfigError(f"antenna_spacing must be positive, got {self.antenna_spacing}")


@dataclass(frozen=True)
class DerivedParams:
    """Quantities implied by a RadarConfig; see derive_params."""

    range_resolution: float  # m per range bin
    max_range: float  # m, n_range_bins * range_resolution
    wavelength: float  # m
    velocity_resolution: float  # m/s per Doppler bin
    max_velocity: float  # m/s, unambiguous span is +-max_velocity
    n_range_bins: int
    n_doppler_bins: int


def derive_params(cfg: RadarConfig) -> DerivedParams:
    """Compute resolutions and bin counts from the chirp parameters.

    range_resolution = c / (2 B); the range FFT keeps n_samples / 2 bins.
    velocity_resolution = wavelength / (2 n_chirps chirp_to_chirp);
    max_velocity = wavelength / (4 chirp_to_chirp).
    """
    rr = C_LIGHT / (2.0 * cfg.bandwidth)
    n_range_bins = cfg.n_samples // 2
    wl = C_LIGHT / cfg.carrier_freq
    return DerivedParams(
        range_resolution=rr,
        max_range=n_range_bins * rr,
        wavelength=wl,
        velocity_resolution=wl / (2.0 * cfg.n_chirps * cfg.chirp_to_chirp),
        max_velocity=wl / (4.0 * cfg.chirp_to_chirp),
        n_range_bins=n_range_bins,
        n_doppler_bins=cfg.n_chirps,
    )


def range_bin_of(cfg: RadarConfig, rng: float) -> float:
    """Fractional range-bin index of a target at `rng` meters."""
    d = derive_params(cfg)
    if not 0.0 <= rng <= d.max_range:
        raise DomainError(f"range {rng} m outside [0, {d.max_range:.4f}] m")
    return rng / d.range_resolution


def config_from_dict(raw: dict) -> RadarConfig:
    """Build a validated RadarConfig from a flat dict (e.g. parsed JSON)."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be an object, got {type(raw).__name__}")
    known = set(_REQUIRED_KEYS) | set(_OPTIONAL_KEYS)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    missing = [k for k in _REQUIRED_KEYS if k not in raw]
    if missing:
        raise ConfigError(f"missing config keys: {missing}")
    kwargs = {}
    for key in known:
        value = raw.get(key, _OPTIONAL_KEYS.get(key))
        if value is None and key == "antenna_spacing":
            kwargs[key] = None
            continue
        if key in ("n_tx", "n_rx", "n_chirps", "n_samples"):
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{key} must be an integer, got {value!r}")
            kwargs[key] = value
        else:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{key} must be a number, got {value!r}")
            kwargs[key] = float(value)
    return RadarConfig(**kwargs)


def load_config(path: str | Path) -> RadarConfig:
    """Load a RadarConfig from a JSON file (flat object, SI units)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileSystemError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def default_config() -> RadarConfig:
    """The shipped sensor parameter set (same values as data/default_radar.json)."""
    return RadarConfig()


class ImageKind(Enum):
    RDI = "rdi"
    MICRO_RDI = "micro_rdi"
    RAI = "rai"
    REI = "rei"


@dataclass(frozen=True)
class Axis:
    """Physical annotation of one image axis."""

    name: str
    unit: str
    values: np.ndarray  # one entry per bin

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))


@dataclass(frozen=True)
class RadarImage:
    """A 2-D magnitude image with labeled axes. Values are finite and >= 0."""

    kind: ImageKind
    data: np.ndarray
    row_axis: Axis
    col_axis: Axis

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DomainError(f"RadarImage data must be 2-D, got shape {data.shape}")
        if data.shape[0] != len(self.row_axis.values) or data.shape[1] != len(self.col_axis.values):
            raise DomainError(
                f"axis lengths {(len(self.row_axis.values), len(self.col_axis.values))} "
                f"do not match data shape {data.shape}"
            )
        if not np.isfinite(data).all():
            raise DomainError("RadarImage contains non-finite values")
        if (data < 0).any():
            raise DomainError("RadarImage is a magnitude image; negative values found")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class AdcCube:
    """One frame of raw IF samples, shape [n_rx][n_chirps][n_samples], float32."""

    data: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise DomainError(f"AdcCube data must be 3-D, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise DomainError("AdcCube contains non-finite samples")
        object.__setattr__(self, "data", data)

    def validate_against(self, cfg: RadarConfig) -> None:
        expect = (cfg.n_rx, cfg.n_chirps, cfg.n_samples)
        if self.data.shape != expect:
            raise DomainError(f"cube shape {self.data.shape} does not match config {expect}")
