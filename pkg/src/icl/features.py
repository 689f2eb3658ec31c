"""Frame-based spectrogram features: STFT, log-Mel, and pseudo-CQT.

All three features share one framing scheme (Hann window, zero-padding
to the FFT size). The Mel spectrogram applies a triangular filterbank,
uniform on the Mel axis, to the frame power spectrum and takes log10.
The CQT is the frame-based spectral-kernel variant: each frame's full
FFT is inner-producted with the FFT of a Hann-windowed complex
exponential per geometrically spaced center frequency, and the
magnitude is kept.

A small binary cache format ("ICLF") stores extracted features as
row-major little-endian float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LOG_FLOOR = 1e-10

KIND_STFT = "stft"
KIND_MEL = "mel"
KIND_CQT = "cqt"
KINDS = (KIND_STFT, KIND_MEL, KIND_CQT)
_KIND_CODES = {KIND_STFT: 0, KIND_MEL: 1, KIND_CQT: 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}

CACHE_MAGIC = b"ICLF"
CACHE_VERSION = 1


class FeatureError(Exception):
    pass


# ---------------------------------------------------------------------------
# Framing


@dataclass(frozen=True)
class FrameConfig:
    """Analysis framing: 50 ms Hann frames with a 25 ms shift by default."""

    frame_len_ms: float = 50.0
    frame_shift_ms: float = 25.0
    fft_size: int | None = None  # next power of two >= frame samples when None

    def __post_init__(self):
        if not 0 < self.frame_shift_ms <= self.frame_len_ms:
            raise FeatureError(
                f"frame shift {self.frame_shift_ms} ms must be in (0, {self.frame_len_ms}]")

    def frame_samples(self, sample_rate: float) -> int:
        return int(round(self.frame_len_ms * 1e-3 * sample_rate))

    def shift_samples(self, sample_rate: float) -> int:
        return max(1, int(round(self.frame_shift_ms * 1e-3 * sample_rate)))

    def resolve_fft_size(self, sample_rate: float) -> int:
        frame = self.frame_samples(sample_rate)
        if self.fft_size is not None:
            if self.fft_size < frame:
                raise FeatureError(f"fft_size {self.fft_size} < frame of {frame} samples")
            return self.fft_size
        n = 1
        while n < frame:
            n *= 2
        return n


@dataclass
class Spectrogram:
    """Time-frequency matrix [n_frames, n_bins] with axis metadata."""

    kind: str
    values: np.ndarray
    frame_times: np.ndarray
    bin_freqs: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FeatureError(f"unknown spectrogram kind {self.kind!r}")
        if not np.all(np.isfinite(self.values)):
            raise FeatureError(f"non-finite values in {self.kind} spectrogram")


def frame_count(n_samples: int, frame: int, shift: int) -> int:
    """Number of full frames: floor((N - frame)/shift) + 1 for N >= frame."""
    if n_samples < frame:
        raise FeatureError(f"signal of {n_samples} samples shorter than one {frame}-sample frame")
    return (n_samples - frame) // shift + 1


def hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _frames(samples: np.ndarray, sample_rate: float, cfg: FrameConfig):
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise FeatureError(f"expected mono 1-D samples, got shape {x.shape}")
    frame = cfg.frame_samples(sample_rate)
    shift = cfg.shift_samples(sample_rate)
    n = frame_count(x.size, frame, shift)
    windows = sliding_window_view(x, frame)[::shift][:n]
    times = (np.arange(n) * shift + frame / 2.0) / sample_rate
    return windows * hann(frame), times


def _resolve_input(segment, sample_rate):
    """Accept an AudioSegment-like object or a raw sample array."""
    if hasattr(segment, "samples") and hasattr(segment, "sample_rate"):
        return np.asarray(segment.samples), float(segment.sample_rate)
    if sample_rate is None:
        raise FeatureError("sample_rate is required when passing raw samples")
    return np.asarray(segment), float(sample_rate)


# ---------------------------------------------------------------------------
# STFT


def stft(segment, cfg: FrameConfig = FrameConfig(), sample_rate: float | None = None) -> Spectrogram:
    """One-sided magnitude spectrogram of Hann-windowed frames."""
    samples, sr = _resolve_input(segment, sample_rate)
    windowed, times = _frames(samples, sr, cfg)
    nfft = cfg.resolve_fft_size(sr)
    mags = np.abs(np.fft.rfft(windowed, n=nfft, axis=1))
    freqs = np.fft.rfftfreq(nfft, d=1.0 / sr)
    return Spectrogram(KIND_STFT, mags, times, freqs)


# ---------------------------------------------------------------------------
# Mel


def mel_scale(f):
    """Hz -> Mel, 2595 * log10(1 + f/700); strictly increasing, mel(0) = 0."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise FeatureError("mel_scale requires nonnegative frequencies")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    out = 700.0 * (np.power(10.0, m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class MelFilterBank:
    """Triangular filters uniform on the Mel axis, each row peaking at 1."""

    n_filters: int
    weights: np.ndarray  # [n_filters, n_fft_bins]
    center_freqs: np.ndarray
    sample_rate: float
    fft_size: int


def build_mel_filterbank(n_filters: int, cfg: FrameConfig, sample_rate: float,
                         f_min: float = 0.0, f_max: float | None = None) -> MelFilterBank:
    if n_filters < 1:
        raise FeatureError("n_filters must be >= 1")
    nyquist = sample_rate / 2.0
    f_max = nyquist if f_max is None else f_max
    if not 0 <= f_min < f_max <= nyquist:
        raise FeatureError(f"bad mel range [{f_min}, {f_max}] for Nyquist {nyquist}")
    nfft = cfg.resolve_fft_size(sample_rate)
    bin_freqs = np.fft.rfftfreq(nfft, d=1.0 / sample_rate)
    if n_filters > bin_freqs.size:
        raise FeatureError(
            f"{n_filters} mel filters exceed the {bin_freqs.size} available FFT bins")

    grid = mel_to_hz(np.linspace(mel_scale(f_min), mel_scale(f_max), n_filters + 2))
    lower, centers, upper = grid[:-2], grid[1:-1], grid[2:]
    up = (bin_freqs[None, :] - lower[:, None]) / np.maximum(centers - lower, 1e-12)[:, None]
    down = (upper[:, None] - bin_freqs[None, :]) / np.maximum(upper - centers, 1e-12)[:, None]
    weights = np.maximum(0.0, np.minimum(up, down))

    peaks = weights.max(axis=1)
    if np.any(peaks <= 0):
        dead = int(np.argmin(peaks))
        raise FeatureError(
            f"mel filter {dead} covers no FFT bin; increase fft_size or reduce n_filters")
    weights /= peaks[:, None]
    return MelFilterBank(n_filters, weights, centers, sample_rate, nfft)


def mel_spectrogram(segment, cfg: FrameConfig = FrameConfig(), n_filters: int = 300,
                    sample_rate: float | None = None,
                    bank: MelFilterBank | None = None) -> Spectrogram:
    """log10(filterbank @ power spectrum + 1e-10), shape [n_frames, n_filters]."""
    samples, sr = _resolve_input(segment, sample_rate)
    if bank is None:
        bank = build_mel_filterbank(n_filters, cfg, sr)
    elif bank.sample_rate != sr or bank.fft_size != cfg.resolve_fft_size(sr):
        raise FeatureError("mel filterbank was built for a different sample rate or FFT size")
    windowed, times = _frames(samples, sr, cfg)
    spectrum = np.abs(np.fft.rfft(windowed, n=bank.fft_size, axis=1))
    power = np.square(spectrum)
    values = np.log10(power @ bank.weights.T + LOG_FLOOR)
    return Spectrogram(KIND_MEL, values, times, bank.center_freqs.copy())


# ---------------------------------------------------------------------------
# CQT


def cqt_frequencies(f_min: float, f_max: float, bins_per_octave: int) -> np.ndarray:
    """Geometric grid f_k = 2^(k/b) * f_min for every f_k <= f_max."""
    if not 0 < f_min < f_max:
        raise FeatureError(f"bad CQT range [{f_min}, {f_max}]")
    if bins_per_octave < 1:
        raise FeatureError("bins_per_octave must be >= 1")
    n_bins = int(np.floor(bins_per_octave * np.log2(f_max / f_min))) + 1
    freqs = f_min * np.power(2.0, np.arange(n_bins) / bins_per_octave)
    # Guard the top bin against log2 rounding landing just past f_max.
    while freqs.size and freqs[-1] > f_max * (1 + 1e-12):
        freqs = freqs[:-1]
    return freqs


@dataclass
class CqtKernelBank:
    """Spectral-domain CQT kernels for one (sample_rate, fft_size) pair."""

    bins_per_octave: int
    f_min: float
    f_max: float
    center_freqs: np.ndarray
    q_factor: float
    kernels: np.ndarray  # complex [n_bins, fft_size]
    sample_rate: float
    fft_size: int
    kernel_lengths: np.ndarray = field(repr=False, default=None)


def build_cqt_kernels(cfg: FrameConfig, sample_rate: float, f_min: float = 50.0,
                      f_max: float | None = None, bins_per_octave: int = 36) -> CqtKernelBank:
    nyquist = sample_rate / 2.0
    f_max = 0.95 * nyquist if f_max is None else f_max
    if f_max > nyquist:
        raise FeatureError(f"CQT f_max {f_max} Hz above Nyquist {nyquist} Hz")
    freqs = cqt_frequencies(f_min, f_max, bins_per_octave)
    q = 1.0 / (2.0 ** (1.0 / bins_per_octave) - 1.0)
    nfft = cfg.resolve_fft_size(sample_rate)
    kernels = np.zeros((freqs.size, nfft), dtype=np.complex128)
    lengths = np.empty(freqs.size, dtype=np.int64)
    for k, fk in enumerate(freqs):
        n_k = min(int(np.ceil(q * sample_rate / fk)), nfft)
        lengths[k] = n_k
        t = np.arange(n_k) / sample_rate
        kern = hann(n_k) * np.exp(2j * np.pi * fk * t)
        kern /= np.abs(kern).sum()
        kernels[k, :n_k] = kern
    return CqtKernelBank(bins_per_octave, f_min, float(f_max), freqs, q,
                         np.fft.fft(kernels, axis=1), sample_rate, nfft, lengths)


def cqt_spectrogram(segment, cfg: FrameConfig = FrameConfig(),
                    kernels: CqtKernelBank | None = None,
                    sample_rate: float | None = None, **kernel_kwargs) -> Spectrogram:
    """|<frame FFT, kernel>| per frame and bin, shape [n_frames, n_bins].

    The frequency-domain product over the full FFT equals the time-domain
    inner product of the windowed frame with each kernel (Parseval), so bins
    respond like matched filters at their center frequencies.
    """
    samples, sr = _resolve_input(segment, sample_rate)
    if kernels is None:
        kernels = build_cqt_kernels(cfg, sr, **kernel_kwargs)
    elif kernels.sample_rate != sr or kernels.fft_size != cfg.resolve_fft_size(sr):
        raise FeatureError("CQT kernel bank was built for a different sample rate or FFT size")
    windowed, times = _frames(samples, sr, cfg)
    spectra = np.fft.fft(windowed, n=kernels.fft_size, axis=1)
    values = np.abs(spectra @ kernels.kernels.conj().T) / kernels.fft_size
    return Spectrogram(KIND_CQT, values, times, kernels.center_freqs.copy())


# ---------------------------------------------------------------------------
# Normalization


@dataclass(frozen=True)
class FeatureStats:
    """Global scalar mean/std of one feature kind over the training split."""

    kind: str
    mean: float
    std: float


def compute_feature_stats(arrays, kind: str) -> FeatureStats:
    """Stats over a list of spectrogram value arrays (training split only)."""
    values = [a.values if isinstance(a, Spectrogram) else np.asarray(a) for a in arrays]
    if not values:
        raise FeatureError("cannot compute feature stats from an empty set")
    flat = np.concatenate([v.reshape(-1).astype(np.float64) for v in values])
    return FeatureStats(kind, float(flat.mean()), max(float(flat.std()), 1e-8))


def normalize_features(stats: FeatureStats, spectrogram):
    """(x - mean)/std with train-split statistics; kind must match."""
    if isinstance(spectrogram, Spectrogram):
        if spectrogram.kind != stats.kind:
            raise FeatureError(
                f"stats for kind {stats.kind!r} applied to {spectrogram.kind!r} spectrogram")
        values = (spectrogram.values - stats.mean) / stats.std
        return Spectrogram(spectrogram.kind, values,
                           spectrogram.frame_times.copy(), spectrogram.bin_freqs.copy())
    return (np.asarray(spectrogram, dtype=np.float64) - stats.mean) / stats.std


# ---------------------------------------------------------------------------
# Binary feature cache


def write_feature_cache(path, values: np.ndarray, kind: str, label: int) -> None:
    """Write one feature matrix: magic, version, kind, dims, label, f32 data."""
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise FeatureError(f"feature cache stores 2-D matrices, got shape {arr.shape}")
    header = CACHE_MAGIC + struct.pack("<HBIII", CACHE_VERSION, _KIND_CODES[kind],
                                       arr.shape[0], arr.shape[1], int(label))
    Path(path).write_bytes(header + arr.tobytes())


def read_feature_cache(path) -> tuple[str, int, np.ndarray]:
    """Read a cache file back as (kind, label, float32 matrix)."""
    buf = Path(path).read_bytes()
    if buf[:4] != CACHE_MAGIC:
        raise FeatureError(f"bad feature cache magic in {path}: {buf[:4]!r}")
    version, code, n_frames, n_bins, label = struct.unpack_from("<HBIII", buf, 4)
    if version != CACHE_VERSION:
        raise FeatureError(f"unsupported feature cache version {version}")
    if code not in _KIND_NAMES:
        raise FeatureError(f"unknown feature kind code {code} in {path}")
    expected = 19 + 4 * n_frames * n_bins
    if len(buf) != expected:
        raise FeatureError(f"feature cache {path} has {len(buf)} bytes, expected {expected}")
    data = np.frombuffer(buf, dtype="<f4", count=n_frames * n_bins, offset=19)
    return _KIND_NAMES[code], int(label), data.reshape(n_frames, n_bins).copy()
