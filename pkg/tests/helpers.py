"""Oracles shared between test modules, independent of the library code."""
import numpy as np


def naive_dft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """O(N^2) DFT straight from the definition, in float64."""
    x = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)
    n = x.shape[-1]
    idx = np.arange(n)
    w = np.exp(-2j * np.pi * np.outer(idx, idx) / n)
    return np.moveaxis(x @ w, -1, axis)


def two_element_snapshots(
    angle_deg: float,
    spacing_over_lambda: float,
    n_snapshots: int,
    snr_db: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Plane-wave snapshots for a 2-element array.

    The second element lags by 2 pi (d / lambda) sin(angle), the same
    convention the estimator's steering vectors use. Unit-power complex
    signal plus white noise at the requested SNR; shape [2][n_snapshots].
    """
    phase = rng.uniform(0.0, 2.0 * np.pi, n_snapshots)
    sig = np.exp(1j * phase)
    steer = np.exp(-2j * np.pi * spacing_over_lambda * np.sin(np.radians(angle_deg)))
    x = np.vstack([sig, sig * steer])
    noise_std = 10.0 ** (-snr_db / 20.0) / np.sqrt(2.0)
    x += noise_std * (
        rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
    )
    return x


def rel_err(got: np.ndarray, want: np.ndarray) -> float:
    """Max abs deviation over the peak magnitude of the reference."""
    scale = np.abs(want).max()
    if scale == 0.0:
        return float(np.abs(got - want).max())
    return float(np.abs(got - want).max() / scale)
