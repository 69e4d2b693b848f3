"""Stochastic single-epoch transforms used to build multiviewed contrastive batches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import signal as sps

from .config import AugmentationConfig
from .signal_io import EPOCH_SAMPLES, FS


@dataclass
class ViewPair:
    view_a: np.ndarray
    view_b: np.ndarray
    label: int


def view_rng(seed: int, sample_index: int, view_index: int) -> np.random.Generator:
    """Independent stream per (seed, sample, view), so batches replay under any schedule."""
    return np.random.default_rng([seed, sample_index, view_index])


def amplitude_scale(x: np.ndarray, factor: float) -> np.ndarray:
    return x * factor


def time_shift(x: np.ndarray, shift: int) -> np.ndarray:
    """Delay by ``shift`` samples (advance when negative); vacated samples become zero."""
    out = np.zeros_like(x)
    if shift >= 0:
        out[shift:] = x[: x.size - shift]
    else:
        out[:shift] = x[-shift:]
    return out


def amplitude_shift(x: np.ndarray, offset: float) -> np.ndarray:
    return x + offset


def zero_mask(x: np.ndarray, start: int, length: int) -> np.ndarray:
    out = x.copy()
    out[start : start + length] = 0.0
    return out


def band_stop(x: np.ndarray, lower_hz: float, width_hz: float = 2.0, fs: float = FS) -> np.ndarray:
    """Zero-phase 4th-order Butterworth band-reject over [lower_hz, lower_hz + width_hz]."""
    upper = lower_hz + width_hz
    if lower_hz <= 0 or upper >= fs / 2:
        raise ValueError(f"stop band [{lower_hz}, {upper}] Hz must lie inside (0, {fs / 2}) Hz")
    sos = sps.butter(2, [lower_hz, upper], btype="bandstop", fs=fs, output="sos")
    return sps.sosfiltfilt(sos, x)


def apply_pipeline(x: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """Apply the six transforms in order, each firing independently with its probability.

    Continuous parameters are uniform over [min, max]; shift and mask lengths
    are uniform integers over the closed range.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (EPOCH_SAMPLES,):
        raise ValueError(f"augmentation expects a single {EPOCH_SAMPLES}-sample epoch, got shape {x.shape}")

    def fires(tr) -> bool:
        return tr.prob > 0 and rng.random() < tr.prob

    if fires(cfg.amplitude_scale):
        x = amplitude_scale(x, rng.uniform(cfg.amplitude_scale.min, cfg.amplitude_scale.max))
    if fires(cfg.time_shift):
        x = time_shift(x, int(rng.integers(int(cfg.time_shift.min), int(cfg.time_shift.max) + 1)))
    if fires(cfg.amplitude_shift):
        x = amplitude_shift(x, rng.uniform(cfg.amplitude_shift.min, cfg.amplitude_shift.max))
    if fires(cfg.zero_mask):
        length = int(rng.integers(int(cfg.zero_mask.min), int(cfg.zero_mask.max) + 1))
        length = min(length, x.size)
        start = int(rng.integers(0, x.size - length + 1))
        x = zero_mask(x, start, length)
    if fires(cfg.gaussian_noise):
        sigma = rng.uniform(cfg.gaussian_noise.min, cfg.gaussian_noise.max)
        x = x + rng.normal(0.0, sigma, x.size)
    if fires(cfg.band_stop):
        x = band_stop(x, rng.uniform(cfg.band_stop.min, cfg.band_stop.max), cfg.band_stop_width)
    return x


def make_view_pair(x: np.ndarray, label: int, cfg: AugmentationConfig, seed: int, sample_index: int) -> ViewPair:
    a = apply_pipeline(x, cfg, view_rng(seed, sample_index, 0))
    b = apply_pipeline(x, cfg, view_rng(seed, sample_index, 1))
    return ViewPair(a, b, int(label))


def multiview_batch(
    epochs: np.ndarray,
    labels: Sequence[int],
    cfg: AugmentationConfig,
    seed: int,
    sample_indices: Sequence[int],
) -> Tuple[np.ndarray, np.ndarray]:
    """Two views per epoch, interleaved (a0, b0, a1, b1, ...), with matching labels."""
    views = np.empty((2 * len(epochs), EPOCH_SAMPLES))
    for i, (x, idx) in enumerate(zip(epochs, sample_indices)):
        pair = make_view_pair(x, labels[i], cfg, seed, int(idx))
        views[2 * i] = pair.view_a
        views[2 * i + 1] = pair.view_b
    return views, np.repeat(np.asarray(labels, dtype=np.int64), 2)
