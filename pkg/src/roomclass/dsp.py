"""Signal-processing kernels: convolution, log-power STFT and spectral frame features.

All functions are pure and operate on :class:`Signal` containers or plain
numpy arrays.  The STFT framing zero-pads the tail so that a signal of ``N``
samples always produces ``ceil(N / hop)`` frames; with 5 s of 16 kHz audio,
320-sample frames and a 160-sample hop this gives a 500 x 161 matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

from roomclass.errors import DataError, RateMismatchError

__all__ = [
    "Signal",
    "StftConfig",
    "Spectrogram",
    "SpectralFrameFeatures",
    "convolve",
    "frame_signal",
    "log_power_stft",
    "magnitude_stft",
    "spectral_features",
    "frame_features",
    "read_wav",
    "write_wav",
]


@dataclass(frozen=True)
class Signal:
    """Mono sample sequence with its sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DataError(f"Signal must be 1-D, got shape {samples.shape}")
        if int(self.sample_rate) <= 0 or int(self.sample_rate) != self.sample_rate:
            raise DataError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise DataError("Signal contains non-finite samples")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    """STFT framing.  Defaults follow 20 ms frames at 16 kHz with half overlap."""

    frame_size: int = 320
    hop: int = 160
    window: str = "hanning"
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.frame_size <= 0 or self.frame_size % 2:
            raise DataError(f"frame_size must be positive and even, got {self.frame_size}")
        if not 0 < self.hop <= self.frame_size:
            raise DataError(f"hop must be in (0, frame_size], got {self.hop}")
        if self.window not in ("hanning", "rectangular"):
            raise DataError(f"unknown window {self.window!r}")
        if not self.log_floor > 0:
            raise DataError("log_floor must be positive")

    @property
    def n_bins(self) -> int:
        return self.frame_size // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        return math.ceil(n_samples / self.hop)

    def bin_frequencies(self, sample_rate: int) -> np.ndarray:
        """Centre frequency (Hz) of every DFT bin."""
        return np.arange(self.n_bins) * sample_rate / self.frame_size

    def window_array(self) -> np.ndarray:
        if self.window == "rectangular":
            return np.ones(self.frame_size)
        return sps.get_window("hann", self.frame_size, fftbins=True)


@dataclass(frozen=True)
class Spectrogram:
    """Log-power STFT matrix ``[n_frames, n_bins]`` with framing metadata."""

    values: np.ndarray
    bin_freqs: np.ndarray
    frame_times: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class SpectralFrameFeatures:
    centroid: float
    bandwidth: float
    rolloff: float
    degenerate: bool = False


def convolve(speech: Signal, air: Signal) -> Signal:
    """Full linear convolution of ``speech`` with ``air`` (length N + N_h - 1)."""
    if speech.sample_rate != air.sample_rate:
        raise RateMismatchError(
            f"sample rates differ: speech {speech.sample_rate} Hz, air {air.sample_rate} Hz"
        )
    if len(speech) == 0 or len(air) == 0:
        raise DataError("convolve requires non-empty inputs")
    # fftconvolve round-off is ~1e-16 relative; direct method for tiny inputs
    out = sps.convolve(speech.samples, air.samples, mode="full", method="auto")
    return Signal(out, speech.sample_rate)


def frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Split ``x`` into ``ceil(len(x)/hop)`` frames, zero-padding the tail."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 1:
        raise DataError("cannot frame an empty signal")
    n_frames = cfg.n_frames(x.shape[0])
    needed = (n_frames - 1) * cfg.hop + cfg.frame_size
    padded = np.zeros(needed)
    padded[: x.shape[0]] = x
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.frame_size)[:: cfg.hop]
    return frames[:n_frames]


def _spectrum(sig: Signal, cfg: StftConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not np.all(np.isfinite(sig.samples)):
        raise DataError("non-finite samples")
    frames = frame_signal(sig.samples, cfg) * cfg.window_array()
    spec = np.fft.rfft(frames, axis=1)
    bin_freqs = cfg.bin_frequencies(sig.sample_rate)
    frame_times = np.arange(frames.shape[0]) * cfg.hop / sig.sample_rate
    return spec, bin_freqs, frame_times


def log_power_stft(sig: Signal, cfg: StftConfig | None = None) -> Spectrogram:
    """Windowed log-power STFT, ``log(max(|X|^2, log_floor))`` per frame and bin."""
    cfg = cfg or StftConfig()
    spec, bin_freqs, frame_times = _spectrum(sig, cfg)
    power = spec.real**2 + spec.imag**2
    values = np.log(np.maximum(power, cfg.log_floor))
    return Spectrogram(values, bin_freqs, frame_times, cfg)


def magnitude_stft(sig: Signal, cfg: StftConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Linear STFT magnitudes ``[n_frames, n_bins]`` and bin centre frequencies."""
    cfg = cfg or StftConfig()
    spec, bin_freqs, _ = _spectrum(sig, cfg)
    return np.abs(spec), bin_freqs


def spectral_features(frame_magnitudes, bin_freqs, rolloff_fraction: float = 0.85) -> SpectralFrameFeatures:
    """Centroid, bandwidth and roll-off of one magnitude frame.

    Centroid and bandwidth are weighted by the linear magnitudes; the roll-off
    is the lowest bin frequency at which cumulative energy (squared magnitude)
    reaches ``rolloff_fraction`` of the frame total.  An all-zero frame returns
    zeros with the roll-off at the first bin and ``degenerate=True``.
    """
    mags = np.asarray(frame_magnitudes, dtype=np.float64)
    freqs = np.asarray(bin_freqs, dtype=np.float64)
    if mags.shape != freqs.shape or mags.ndim != 1:
        raise DataError("magnitudes and bin_freqs must be 1-D of equal length")
    if np.any(mags < 0):
        raise DataError("magnitudes must be non-negative")
    if np.any(np.diff(freqs) <= 0):
        raise DataError("bin_freqs must be strictly increasing")
    if not 0 < rolloff_fraction <= 1:
        raise DataError("rolloff_fraction must be in (0, 1]")
    total = mags.sum()
    if total == 0:
        return SpectralFrameFeatures(0.0, 0.0, float(freqs[0]), degenerate=True)
    centroid = float(np.dot(mags, freqs) / total)
    bandwidth = float(np.sqrt(np.dot(mags, (freqs - centroid) ** 2)))
    energy = np.cumsum(mags**2)
    k = int(np.searchsorted(energy, rolloff_fraction * energy[-1], side="left"))
    return SpectralFrameFeatures(centroid, bandwidth, float(freqs[min(k, freqs.shape[0] - 1)]))


def frame_features(magnitudes: np.ndarray, bin_freqs, rolloff_fraction: float = 0.85) -> np.ndarray:
    """Vectorised :func:`spectral_features` over frames; returns ``[n_frames, 3]``.

    Columns are centroid, bandwidth, roll-off.  All-zero frames give
    ``(0, 0, f_0)``.
    """
    mags = np.asarray(magnitudes, dtype=np.float64)
    freqs = np.asarray(bin_freqs, dtype=np.float64)
    total = mags.sum(axis=1)
    safe = np.where(total > 0, total, 1.0)
    centroid = mags @ freqs / safe
    bandwidth = np.sqrt(np.einsum("ik,ik->i", mags, (freqs[None, :] - centroid[:, None]) ** 2))
    energy = np.cumsum(mags**2, axis=1)
    reached = energy >= rolloff_fraction * energy[:, -1:]
    rolloff = freqs[np.argmax(reached, axis=1)]
    zero = total == 0
    centroid[zero] = 0.0
    bandwidth[zero] = 0.0
    rolloff[zero] = freqs[0]
    return np.column_stack([centroid, bandwidth, rolloff])


def read_wav(path, channel: int | None = None, expected_rate: int | None = None) -> Signal:
    """Read a 16-bit PCM or 32-bit float WAV file as a mono :class:`Signal`.

    Multi-channel files are rejected unless ``channel`` selects one.  No
    resampling is done: a file at a rate other than ``expected_rate`` raises.
    """
    rate, data = wavfile.read(Path(path))
    if data.ndim == 2:
        if channel is None:
            raise DataError(f"{path}: {data.shape[1]} channels; pass channel= to select one")
        data = data[:, channel]
    elif channel not in (None, 0):
        raise DataError(f"{path}: mono file has no channel {channel}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported WAV sample type {data.dtype}")
    if expected_rate is not None and rate != expected_rate:
        raise RateMismatchError(f"{path}: {rate} Hz, expected {expected_rate} Hz (resample first)")
    return Signal(samples, rate)


def write_wav(path, sig: Signal, pcm16: bool = False) -> None:
    if pcm16:
        data = np.clip(np.round(sig.samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = sig.samples.astype(np.float32)
    wavfile.write(Path(path), sig.sample_rate, data)
