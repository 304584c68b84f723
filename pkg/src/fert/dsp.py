"""Stream DSP: raw IF cubes in, four temporally integrated radar images out.

Per-frame chain:

  range_fft -> [macro path] mti -> doppler_fft ............. RDI
            -> [micro path] 8-frame stack, mean removal,
               sinc low-pass, central-chunk Doppler FFT ..... micro-RDI
               + per-range-bin 2-element Capon .............. RAI / REI

Each modality then passes through a sliding-mean integrator with per-image
max normalization. The micro path stacks the eight frames that precede the
current one, so with an integration window W the first feature window is
emitted on frame W + 8 of the stream.

Conventions: range rows, Doppler/angle columns; Doppler spectra are
fftshifted so zero velocity sits at column n_chirps / 2; all magnitude
images are incoherent means over receive channels.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len
from scipy.signal import firwin

from .config import AdcCube, Axis, ImageKind, RadarConfig, RadarImage, derive_params
from .errors import ConfigError, PipelineError
from .formats import Recording

MICRO_FRAMES = 8  # range spectrograms stacked by the micro path
CAPON_LOADING = 1e-3  # diagonal loading, relative to mean element power
DEFAULT_WINDOW = 200  # integration depth of the sliding-mean stage

_TAPS_CACHE: dict[tuple[int, float], np.ndarray] = {}


def _hann(n: int) -> np.ndarray:
    return np.hanning(n)


def sinc_taps(n_taps: int = 31, cutoff: float = 0.25) -> np.ndarray:
    """Hamming-windowed sinc low-pass; cutoff is a fraction of Nyquist."""
    key = (n_taps, cutoff)
    if key not in _TAPS_CACHE:
        _TAPS_CACHE[key] = firwin(n_taps, cutoff, window="hamming")
    return _TAPS_CACHE[key]


def _convolve_same(x: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    """Centered 'same' convolution along one axis; odd symmetric taps give zero phase."""
    # 5-smooth FFT length: the raw linear-convolution length is often a large
    # prime multiple, which drops pocketfft onto its slow generic path.
    n = next_fast_len(x.shape[axis] + len(taps) - 1)
    spec = np.fft.fft(x, n=n, axis=axis)
    tspec = np.fft.fft(taps, n=n)
    shape = [1] * x.ndim
    shape[axis] = n
    full = np.fft.ifft(spec * tspec.reshape(shape), axis=axis)
    start = (len(taps) - 1) // 2
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + x.shape[axis])
    return full[tuple(index)]


# ---------------------------------------------------------------- range / Doppler

def range_fft(cube: np.ndarray | AdcCube, windowed: bool = True) -> np.ndarray:
    """Fast-time FFT of one frame.

    Removes the per-chirp mean, applies a Hann window (unless windowed is
    False, kept for oracle checks), and keeps the first n_samples / 2 bins
    of the spectrum of the real input. Output is complex,
    shape [n_rx][n_chirps][n_samples // 2].
    """
    data = cube.data if isinstance(cube, AdcCube) else cube
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 3:
        raise PipelineError(f"range_fft expects [rx][chirp][sample], got shape {x.shape}")
    n_samples = x.shape[-1]
    x = x - x.mean(axis=-1, keepdims=True)
    if windowed:
        x = x * _hann(n_samples)[None, None, :]
    return np.fft.rfft(x, axis=-1)[..., : n_samples // 2]


@dataclass
class MtiState:
    """Exponential clutter background, one complex value per (rx, range bin)."""

    alpha: float = 0.6
    background: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"mti alpha must be in (0, 1], got {self.alpha}")


def mti(profiles: np.ndarray, state: MtiState) -> tuple[np.ndarray, MtiState]:
    """Subtract the slow-moving background from one frame of range profiles.

    The background tracks the per-frame chirp mean: it is seeded with the
    first frame's mean, then updated as
    (1 - alpha) * background + alpha * mean. The current background is
    subtracted from every chirp, so static clutter cancels while anything
    with chirp-to-chirp variation passes.
    """
    if profiles.ndim != 3:
        raise PipelineError(f"mti expects [rx][chirp][bin], got shape {profiles.shape}")
    frame_mean = profiles.mean(axis=1)
    if state.background is None:
        state.background = frame_mean
    else:
        if state.background.shape != frame_mean.shape:
            raise PipelineError(
                f"mti state shape {state.background.shape} does not match frame {frame_mean.shape}"
            )
        state.background = (1.0 - state.alpha) * state.background + state.alpha * frame_mean
    return profiles - state.background[:, None, :], state


def _range_axis(cfg: RadarConfig) -> Axis:
    d = derive_params(cfg)
    return Axis("range", "m", np.arange(d.n_range_bins) * d.range_resolution)


def _velocity_axis(cfg: RadarConfig) -> Axis:
    d = derive_params(cfg)
    bins = np.arange(cfg.n_chirps) - cfg.n_chirps // 2
    return Axis("velocity", "m/s", bins * d.velocity_resolution)


def angle_grid(n_bins: int = 64, span_deg: float = 60.0) -> np.ndarray:
    return np.linspace(-span_deg, span_deg, n_bins)


def _doppler_image(profiles: np.ndarray, windowed: bool) -> np.ndarray:
    """Windowed slow-time FFT, shifted, magnitude, incoherent mean over rx."""
    n_chirps = profiles.shape[1]
    y = profiles
    if windowed:
        y = y * _hann(n_chirps)[None, :, None]
    spec = np.fft.fftshift(np.fft.fft(y, axis=1), axes=1)
    return np.abs(spec).mean(axis=0).T  # [range][doppler]


def doppler_fft(
    profiles: np.ndarray, cfg: RadarConfig, windowed: bool = True, kind: ImageKind = ImageKind.RDI
) -> RadarImage:
    """Range-Doppler image from one frame of (MTI-filtered) range profiles."""
    if profiles.shape != (cfg.n_rx, cfg.n_chirps, cfg.n_samples // 2):
        raise PipelineError(
            f"doppler_fft expects {(cfg.n_rx, cfg.n_chirps, cfg.n_samples // 2)}, got {profiles.shape}"
        )
    img = _doppler_image(profiles, windowed)
    return RadarImage(kind=kind, data=img, row_axis=_range_axis(cfg), col_axis=_velocity_axis(cfg))


# ---------------------------------------------------------------- micro path

class MicroBuffer:
    """Ring of the last MICRO_FRAMES per-rx range spectrograms."""

    def __init__(self, capacity: int = MICRO_FRAMES):
        if capacity < 1:
            raise ConfigError(f"micro buffer capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._frames: deque[np.ndarray] = deque(maxlen=capacity)

    def push(self, spectrogram: np.ndarray) -> None:
        if self._frames and spectrogram.shape != self._frames[0].shape:
            raise PipelineError(
                f"spectrogram shape {spectrogram.shape} does not match buffered {self._frames[0].shape}"
            )
        self._frames.append(spectrogram)

    @property
    def occupancy(self) -> int:
        return len(self._frames)

    @property
    def full(self) -> bool:
        return len(self._frames) == self.capacity

    def stacked(self) -> np.ndarray:
        """Concatenate along slow time: [n_rx][capacity * n_chirps][n_range_bins]."""
        if not self.full:
            raise PipelineError(f"micro buffer not full: {self.occupancy}/{self.capacity}")
        return np.concatenate(list(self._frames), axis=1)


def micro_rdi(
    buffer: MicroBuffer,
    cfg: RadarConfig,
    n_taps: int = 31,
    cutoff: float = 0.25,
    windowed: bool = True,
) -> tuple[RadarImage, np.ndarray] | None:
    """Micro-motion range-Doppler image from the stacked buffer.

    Returns None while the buffer is filling. Otherwise: remove the
    slow-time mean per range bin and the per-chirp mean across range bins,
    low-pass along slow time with a windowed sinc (zero phase), then
    Doppler-transform the central n_chirps slow-time samples. Also returns
    the filtered central block, [n_rx][n_chirps][n_range_bins] complex,
    which feeds the angle estimators.
    """
    if not buffer.full:
        return None
    block = buffer.stacked()
    block = block - block.mean(axis=1, keepdims=True)  # slow-time mean per range bin
    block = block - block.mean(axis=2, keepdims=True)  # per-chirp mean across range bins
    taps = sinc_taps(n_taps, cutoff)
    total = block.shape[1]
    half = cfg.n_chirps // 2
    c0 = total // 2 - half
    pad = (len(taps) - 1) // 2
    if c0 >= pad and c0 + cfg.n_chirps + pad <= total:
        # Only the central n_chirps filtered samples survive, and none of
        # them touches the zero-padded edges, so filter just that strip
        # with one small tensordot instead of transforming the whole span.
        win = np.lib.stride_tricks.sliding_window_view(block, len(taps), axis=1)
        strip = win[:, c0 - pad : c0 - pad + cfg.n_chirps, :, :]
        central = np.tensordot(strip, taps[::-1], axes=([3], [0]))
    else:
        filt = _convolve_same(block, taps, axis=1)
        central = filt[:, c0 : c0 + cfg.n_chirps, :]
    img = _doppler_image(central, windowed)
    image = RadarImage(
        kind=ImageKind.MICRO_RDI,
        data=img,
        row_axis=_range_axis(cfg),
        col_axis=_velocity_axis(cfg),
    )
    return image, central


# ---------------------------------------------------------------- angle estimation

def _steering(ratio: float, grid_deg: np.ndarray) -> np.ndarray:
    """2-element steering matrix [2][n_angles] with the phase-lag convention."""
    phase = -2.0j * math.pi * ratio * np.sin(np.radians(grid_deg))
    return np.vstack([np.ones_like(grid_deg, dtype=np.complex128), np.exp(phase)])


def _capon_batch(
    snapshots: np.ndarray, ratio: float, grid_deg: np.ndarray, loading: float = CAPON_LOADING
) -> tuple[np.ndarray, np.ndarray]:
    """Capon power for a batch of 2-element snapshot matrices.

    snapshots: [batch][2][n_snapshots] complex. Returns (power [batch][n_angles],
    degenerate mask [batch]); degenerate rows (all-zero snapshots) get a flat
    spectrum at the 1 / loading scale.
    """
    k = snapshots.shape[-1]
    cov = np.einsum("bik,bjk->bij", snapshots, snapshots.conj()) / k
    trace = np.real(cov[:, 0, 0] + cov[:, 1, 1])
    degenerate = trace <= 0.0
    load = loading * trace / 2.0
    cov = cov.copy()
    cov[:, 0, 0] += load
    cov[:, 1, 1] += load
    det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] * cov[:, 1, 0]
    det = np.where(degenerate, 1.0, det)
    inv = np.empty_like(cov)
    inv[:, 0, 0] = cov[:, 1, 1] / det
    inv[:, 1, 1] = cov[:, 0, 0] / det
    inv[:, 0, 1] = -cov[:, 0, 1] / det
    inv[:, 1, 0] = -cov[:, 1, 0] / det
    steer = _steering(ratio, grid_deg)  # [2][G]
    quad = np.real(np.einsum("ig,bij,jg->bg", steer.conj(), inv, steer))
    quad = np.maximum(quad, np.finfo(np.float64).tiny)
    power = 1.0 / quad
    power[degenerate] = 1.0 / loading
    return power, degenerate


def capon_spectrum(
    snapshots: np.ndarray,
    spacing_over_lambda: float,
    grid_deg: np.ndarray | None = None,
    loading: float = CAPON_LOADING,
) -> tuple[np.ndarray, bool]:
    """Capon (minimum-variance) angular power spectrum for one antenna pair.

    snapshots: [2][n_snapshots] complex, n_snapshots >= 2. The sample
    covariance gets diagonal loading of loading * (trace / 2). Returns the
    power on the angle grid plus a degenerate flag (True when the snapshots
    are all zero, in which case the spectrum is flat and meaningless).
    """
    snapshots = np.asarray(snapshots, dtype=np.complex128)
    if snapshots.ndim != 2 or snapshots.shape[0] != 2:
        raise PipelineError(f"capon expects [2][n_snapshots], got shape {snapshots.shape}")
    if snapshots.shape[1] < 2:
        raise PipelineError(f"capon needs >= 2 snapshots, got {snapshots.shape[1]}")
    if grid_deg is None:
        grid_deg = angle_grid()
    power, degenerate = _capon_batch(snapshots[None], spacing_over_lambda, grid_deg, loading)
    return power[0], bool(degenerate[0])


def _angle_axis(grid_deg: np.ndarray, name: str) -> Axis:
    return Axis(name, "deg", grid_deg)


def rai_rei(
    block: np.ndarray, cfg: RadarConfig, grid_deg: np.ndarray | None = None
) -> tuple[RadarImage, RadarImage]:
    """Range-azimuth and range-elevation images from the micro slow-time block.

    Per range bin, the Capon snapshots are the slow-time samples of the
    (rx0, rx1) pair for azimuth and (rx0, rx2) for elevation. Degenerate
    bins come out as zero rows.
    """
    if cfg.n_rx < 3:
        raise ConfigError(f"angle images need 3 receive channels, config has {cfg.n_rx}")
    d = derive_params(cfg)
    if block.shape != (cfg.n_rx, cfg.n_chirps, d.n_range_bins):
        raise PipelineError(
            f"angle block must be {(cfg.n_rx, cfg.n_chirps, d.n_range_bins)}, got {block.shape}"
        )
    if grid_deg is None:
        grid_deg = angle_grid()
    ratio = cfg.antenna_spacing / d.wavelength
    images = []
    for kind, pair, axis_name in (
        (ImageKind.RAI, (0, 1), "azimuth"),
        (ImageKind.REI, (0, 2), "elevation"),
    ):
        # Conjugate so the element phase progression matches the steering
        # vector's phase-lag convention.
        snaps = np.conj(block[pair, :, :]).transpose(2, 0, 1)  # [bins][2][n_chirps]
        power, degenerate = _capon_batch(snaps, ratio, grid_deg)
        power[degenerate] = 0.0
        images.append(
            RadarImage(
                kind=kind,
                data=power,
                row_axis=_range_axis(cfg),
                col_axis=_angle_axis(grid_deg, axis_name),
            )
        )
    return images[0], images[1]


# ---------------------------------------------------------------- temporal integration

def _max_normalize(img: np.ndarray) -> np.ndarray:
    peak = img.max()
    if peak <= 0.0:
        return np.zeros_like(img, dtype=np.float32)
    return (img / peak).astype(np.float32)


class SlidingMeanNorm:
    """Per-pixel mean of the last `window` images, max-normalized to [0, 1].

    Returns None until `window` images have been seen. window = 1 reduces to
    per-image normalization, which is the ablation mode.
    """

    def __init__(self, window: int):
        if window < 1:
            raise ConfigError(f"integration window must be >= 1, got {window}")
        self.window = window
        self._buf: np.ndarray | None = None
        self._sum: np.ndarray | None = None
        self._cursor = 0
        self._count = 0

    def push(self, img: np.ndarray) -> np.ndarray | None:
        img = np.asarray(img, dtype=np.float64)
        if self._buf is None:
            self._buf = np.zeros((self.window,) + img.shape)
            self._sum = np.zeros(img.shape)
        elif img.shape != self._buf.shape[1:]:
            raise PipelineError(f"image shape {img.shape} does not match ring {self._buf.shape[1:]}")
        # Running sum keeps the push O(image) instead of O(window * image);
        # the occasional full re-sum washes out accumulated rounding drift.
        if self._count >= self.window:
            self._sum -= self._buf[self._cursor]
        self._sum += img
        self._buf[self._cursor] = img
        self._cursor = (self._cursor + 1) % self.window
        self._count += 1
        if self._count % (64 * self.window) == 0:
            np.sum(self._buf, axis=0, out=self._sum)
        if self._count < self.window:
            return None
        return _max_normalize(self._sum / self.window)


def e_respd(images, window: int) -> list[np.ndarray]:
    """Batch form of the sliding integrator: one output per input once warm."""
    ring = SlidingMeanNorm(window)
    out = []
    for img in images:
        res = ring.push(np.asarray(img))
        if res is not None:
            out.append(res)
    return out


# ---------------------------------------------------------------- full pipeline

@dataclass(frozen=True)
class FeatureWindow:
    """One temporally integrated four-modality sample."""

    rdi: RadarImage
    micro_rdi: RadarImage
    rai: RadarImage
    rei: RadarImage
    window: int

    def stack(self) -> np.ndarray:
        """Float32 [4][rows][cols] in the order rdi, micro_rdi, rai, rei."""
        return np.stack(
            [
                self.rdi.data,
                self.micro_rdi.data,
                self.rai.data,
                self.rei.data,
            ]
        ).astype(np.float32)


class Pipeline:
    """Stateful stream processor: one AdcCube in, at most one FeatureWindow out.

    Holds the MTI background, the micro-path frame stack, and the four
    sliding integrators. Single stream, single thread; create one Pipeline
    per recording.
    """

    def __init__(
        self,
        cfg: RadarConfig,
        window: int = DEFAULT_WINDOW,
        mti_alpha: float = 0.6,
        n_angle_bins: int = 64,
        angle_span_deg: float = 60.0,
    ):
        if cfg.n_rx < 3:
            raise ConfigError(f"pipeline needs 3 receive channels, config has {cfg.n_rx}")
        self.cfg = cfg
        self.window = window
        self.grid = angle_grid(n_angle_bins, angle_span_deg)
        self._mti = MtiState(alpha=mti_alpha)
        self._micro = MicroBuffer()
        self._rings = {kind: SlidingMeanNorm(window) for kind in ImageKind}
        self._axes: dict[ImageKind, tuple[Axis, Axis]] = {}
        self.frames_seen = 0

    def _wrap(self, kind: ImageKind, data: np.ndarray) -> RadarImage:
        row, col = self._axes[kind]
        return RadarImage(kind=kind, data=data, row_axis=row, col_axis=col)

    def push(self, cube: AdcCube) -> FeatureWindow | None:
        cube.validate_against(self.cfg)
        self.frames_seen += 1
        spect = range_fft(cube.data)

        # Micro path first: it consumes the spectrograms of the preceding
        # MICRO_FRAMES frames, so the current frame is pushed afterwards.
        outputs: dict[ImageKind, np.ndarray | None] = {}
        if self._micro.full:
            micro_img, central = micro_rdi(self._micro, self.cfg)
            rai_img, rei_img = rai_rei(central, self.cfg, self.grid)
            for img in (micro_img, rai_img, rei_img):
                self._axes.setdefault(img.kind, (img.row_axis, img.col_axis))
                outputs[img.kind] = self._rings[img.kind].push(img.data)
        else:
            outputs[ImageKind.MICRO_RDI] = None
            outputs[ImageKind.RAI] = None
            outputs[ImageKind.REI] = None
        self._micro.push(spect)

        filtered, self._mti = mti(spect, self._mti)
        rdi_img = doppler_fft(filtered, self.cfg)
        self._axes.setdefault(ImageKind.RDI, (rdi_img.row_axis, rdi_img.col_axis))
        outputs[ImageKind.RDI] = self._rings[ImageKind.RDI].push(rdi_img.data)

        if any(outputs[kind] is None for kind in ImageKind):
            return None
        return FeatureWindow(
            rdi=self._wrap(ImageKind.RDI, outputs[ImageKind.RDI]),
            micro_rdi=self._wrap(ImageKind.MICRO_RDI, outputs[ImageKind.MICRO_RDI]),
            rai=self._wrap(ImageKind.RAI, outputs[ImageKind.RAI]),
            rei=self._wrap(ImageKind.REI, outputs[ImageKind.REI]),
            window=self.window,
        )


def process_stream(recording: Recording, cfg: RadarConfig, window: int = DEFAULT_WINDOW):
    """Run a recording through a fresh Pipeline.

    Yields (frame_number, FeatureWindow) with 1-based frame numbers; the
    first emission arrives on frame window + MICRO_FRAMES.
    """
    pipe = Pipeline(cfg, window=window)
    for i in range(recording.n_frames):
        cube = AdcCube(data=recording.frames[i], frame_index=i)
        fw = pipe.push(cube)
        if fw is not None:
            yield i + 1, fw
