"""Synthetic FMCW scenes: point scatterers with small radial vibrations.

Each scatterer contributes a real-valued IF tone per chirp,

    s(n) = A * cos(2 pi f_b * n / f_adc + phi)

with beat frequency f_b = 2 B R(t) / (c T_active) and phase

    phi = 4 pi R(t) / lambda + 2 pi (d_rx . u) / lambda,

where R(t) = base_range + vibration_amp * sin(2 pi f_vib t + phase0)
+ drift_velocity * t is evaluated at each chirp start, d_rx is the
receive element offset on the L-shaped array and u = (sin az, sin el).
With T_active = n_samples / f_adc the beat tone lands on range bin
R / range_resolution independent of the ADC rate.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .config import AdcCube, C_LIGHT, RadarConfig, derive_params
from .errors import ConfigError, DomainError, FileSystemError
from .formats import LABELS, ManifestEntry, Recording, write_manifest, write_recording

DEFAULT_NOISE_FLOOR = 0.05
_JITTER = 0.20  # every drawn template parameter is scaled by U[1 - _JITTER, 1 + _JITTER]


@dataclass(frozen=True)
class Scatterer:
    """One point reflector. Angles in degrees, lengths in meters, freq in Hz."""

    base_range: float
    azimuth: float = 0.0
    elevation: float = 0.0
    amplitude: float = 1.0
    vibration_amp: float = 0.0
    vibration_freq: float = 0.0
    vibration_phase: float = 0.0
    drift_velocity: float = 0.0

    def __post_init__(self):
        if self.base_range <= 0.0:
            raise DomainError(f"base_range must be positive, got {self.base_range}")
        if abs(self.azimuth) > 60.0 or abs(self.elevation) > 60.0:
            raise DomainError(
                f"scatterer angles ({self.azimuth}, {self.elevation}) outside +-60 deg field of view"
            )
        if self.vibration_amp < 0.0 or self.vibration_freq < 0.0:
            raise DomainError("vibration parameters must be non-negative")


def _rx_offsets(cfg: RadarConfig) -> np.ndarray:
    """Element positions (azimuth_offset, elevation_offset) of the L-shaped array."""
    d = cfg.antenna_spacing
    offsets = np.zeros((cfg.n_rx, 2))
    if cfg.n_rx > 1:
        offsets[1] = (d, 0.0)
    if cfg.n_rx > 2:
        offsets[2] = (0.0, d)
    # Additional elements, if configured, extend the azimuth leg.
    for i in range(3, cfg.n_rx):
        offsets[i] = ((i - 1) * d, 0.0)
    return offsets


def synth_frame(
    cfg: RadarConfig,
    scatterers: list[Scatterer],
    t0: float,
    noise: float = DEFAULT_NOISE_FLOOR,
    rng: np.random.Generator | None = None,
    frame_index: int = 0,
) -> AdcCube:
    """Synthesize one frame of IF samples starting at absolute time t0."""
    d = derive_params(cfg)
    t_chirp = t0 + np.arange(cfg.n_chirps) * cfg.chirp_to_chirp  # [C]
    tau = np.arange(cfg.n_samples) / cfg.adc_rate  # [S]
    t_active = cfg.n_samples / cfg.adc_rate
    offsets = _rx_offsets(cfg)  # [R, 2]

    cube = np.zeros((cfg.n_rx, cfg.n_chirps, cfg.n_samples))
    for sc in scatterers:
        r_t = (
            sc.base_range
            + sc.vibration_amp * np.sin(2.0 * math.pi * sc.vibration_freq * t_chirp + sc.vibration_phase)
            + sc.drift_velocity * t_chirp
        )  # [C]
        if (r_t <= 0).any() or (r_t > d.max_range).any():
            raise DomainError(
                f"scatterer leaves [0, {d.max_range:.3f}] m during the frame "
                f"(base {sc.base_range} m, drift {sc.drift_velocity} m/s at t0={t0:.3f} s)"
            )
        f_beat = 2.0 * cfg.bandwidth * r_t / (C_LIGHT * t_active)  # [C]
        u = np.array([math.sin(math.radians(sc.azimuth)), math.sin(math.radians(sc.elevation))])
        steer = 2.0 * math.pi * (offsets @ u) / d.wavelength  # [R]
        phi = 4.0 * math.pi * r_t / d.wavelength  # [C]
        arg = (
            2.0 * math.pi * f_beat[None, :, None] * tau[None, None, :]
            + phi[None, :, None]
            + steer[:, None, None]
        )
        cube += sc.amplitude * np.cos(arg)

    if noise < 0.0:
        raise DomainError(f"noise must be non-negative, got {noise}")
    if noise > 0.0:
        if rng is None:
            raise ConfigError("noise > 0 requires an rng")
        cube = cube + rng.normal(0.0, noise, size=cube.shape)
    return AdcCube(data=cube.astype(np.float32), frame_index=frame_index)


def synth_recording(
    cfg: RadarConfig,
    scatterers: list[Scatterer],
    n_frames: int,
    noise: float,
    rng: np.random.Generator,
    label: str | None = None,
    seed: int = 0,
) -> Recording:
    """Synthesize consecutive frames at the configured frame period."""
    frames = np.empty((n_frames, cfg.n_rx, cfg.n_chirps, cfg.n_samples), dtype=np.float32)
    for i in range(n_frames):
        cube = synth_frame(cfg, scatterers, t0=i * cfg.frame_period, noise=noise, rng=rng, frame_index=i)
        frames[i] = cube.data
    return Recording(frames=frames, label=label, seed=seed)


# ---------------------------------------------------------------- scene templates

def load_templates(path: str | Path | None = None) -> dict:
    """Load class templates; defaults to the packaged data file."""
    if path is None:
        text = resources.files("fert.data").joinpath("class_templates.json").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise FileSystemError(f"cannot read templates {path}: {exc}") from exc
    try:
        templates = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"templates are not valid JSON: {exc}") from exc
    missing = [label for label in LABELS if label not in templates]
    if missing:
        raise ConfigError(f"templates missing classes: {missing}")
    return templates


_SCATTERER_FIELDS = (
    "base_range",
    "azimuth",
    "elevation",
    "amplitude",
    "vibration_amp",
    "vibration_freq",
    "drift_velocity",
)


def _draw(value, rng: np.random.Generator) -> float:
    """Draw one template field: scalars stay put, [lo, hi] is uniform; then jitter."""
    if isinstance(value, (list, tuple)):
        if len(value) != 2 or value[0] > value[1]:
            raise ConfigError(f"template range must be [lo, hi], got {value}")
        base = rng.uniform(float(value[0]), float(value[1]))
    else:
        base = float(value)
    return base * rng.uniform(1.0 - _JITTER, 1.0 + _JITTER)


def scene_for_class(
    label: str, rng: np.random.Generator, templates: dict | None = None
) -> list[Scatterer]:
    """Draw one scene realization for a class. rng consumption order is fixed."""
    if templates is None:
        templates = load_templates()
    if label not in templates:
        raise ConfigError(f"no template for class {label!r}")
    out = []
    for spec in templates[label]["scatterers"]:
        unknown = set(spec) - set(_SCATTERER_FIELDS)
        if unknown:
            raise ConfigError(f"unknown scatterer fields {sorted(unknown)} in template {label!r}")
        kwargs = {name: _draw(spec[name], rng) for name in _SCATTERER_FIELDS if name in spec}
        kwargs["vibration_phase"] = rng.uniform(0.0, 2.0 * math.pi)
        out.append(Scatterer(**kwargs))
    return out


def template_noise_floor(templates: dict, label: str) -> float:
    return float(templates[label].get("noise_floor", DEFAULT_NOISE_FLOOR))


# ---------------------------------------------------------------- dataset generation

def generate_dataset(
    cfg: RadarConfig,
    out_dir: str | Path,
    per_class: int,
    n_frames: int,
    seed: int,
    templates: dict | None = None,
    noise_scale: float = 1.0,
) -> Path:
    """Write per_class recordings for each class plus a manifest; returns the manifest path.

    Each recording gets its own child seed derived from `seed`, stored in its
    header, and is wholly determined by that child seed: regenerating with the
    same arguments produces byte-identical files.
    """
    if per_class < 1:
        raise ConfigError(f"per_class must be >= 1, got {per_class}")
    if n_frames < 1:
        raise ConfigError(f"n_frames must be >= 1, got {n_frames}")
    if templates is None:
        templates = load_templates()
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FileSystemError(f"cannot create {out_dir}: {exc}") from exc

    children = np.random.SeedSequence(seed).spawn(len(LABELS) * per_class)
    entries = []
    for li, label in enumerate(LABELS):
        noise = template_noise_floor(templates, label) * noise_scale
        for i in range(per_class):
            child = children[li * per_class + i]
            child_seed = int(child.generate_state(1, np.uint64)[0])
            rng = np.random.Generator(np.random.PCG64(child_seed))
            scene = scene_for_class(label, rng, templates)
            rec = synth_recording(cfg, scene, n_frames, noise, rng, label=label, seed=child_seed)
            name = f"{label}_{i:03d}.ferd"
            write_recording(out_dir / name, rec)
            entries.append(
                ManifestEntry(path=Path(name), label=label, seed=child_seed, n_frames=n_frames)
            )
    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, entries)
    return manifest
