"""Waveform to log-mel conversion, z-score standardization and Griffin-Lim inversion."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

LOG_FLOOR = 1e-10


class DspError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DspError("waveform must be mono (1-D)")
        if int(self.sample_rate) <= 0:
            raise DspError("sample_rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise DspError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class DspConfig:
    fft_size: int = 2048
    hop: int = 256
    mel_bins: int = 256
    sample_rate: int = 32000
    clip_seconds: float = 5.0
    zscore_mean: float = -13.369
    zscore_std: float = 13.162

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size % 2:
            raise DspError("fft_size must be a positive even number")
        if not 0 < self.hop <= self.fft_size // 2:
            raise DspError("hop must be in (0, fft_size/2]")
        if self.mel_bins < 1 or self.sample_rate <= 0 or self.clip_seconds <= 0:
            raise DspError("mel_bins, sample_rate and clip_seconds must be positive")
        if not self.zscore_std > 0:
            raise DspError("zscore_std must be positive")

    @property
    def stft_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def clip_samples(self) -> int:
        return int(round(self.clip_seconds * self.sample_rate))

    @property
    def frames(self) -> int:
        return frame_count(self.clip_samples, self.hop)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Spectrogram:
    """Mel-bin by frame grid; row 0 is the lowest mel band."""

    values: np.ndarray
    frame_hop_seconds: float
    mel_edges: np.ndarray
    standardized: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DspError("spectrogram values must be 2-D (mel_bins, frames)")
        if not np.all(np.isfinite(values)):
            raise DspError("spectrogram contains non-finite values")
        edges = np.asarray(self.mel_edges, dtype=np.float64)
        if edges.shape != (values.shape[0] + 2,) or np.any(np.diff(edges) <= 0):
            raise DspError("mel_edges must be strictly increasing with length mel_bins + 2")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mel_edges", edges)

    @property
    def mel_bins(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]

    def replace(self, **changes) -> "Spectrogram":
        return dataclasses.replace(self, **changes)


def frame_count(n_samples: int, hop: int) -> int:
    """Number of frames of a centered STFT."""
    return 1 + n_samples // hop


def segment(w: Waveform, clip_seconds: float) -> list[Waveform]:
    """Cut ``w`` into consecutive non-overlapping clips, zero-padding the last one."""
    if clip_seconds <= 0:
        raise DspError("clip_seconds must be positive")
    if len(w) == 0:
        raise DspError("empty input")
    size = int(round(clip_seconds * w.sample_rate))
    clips = []
    for start in range(0, len(w), size):
        chunk = w.samples[start:start + size]
        if chunk.shape[0] < size:
            chunk = np.concatenate([chunk, np.zeros(size - chunk.shape[0])])
        clips.append(Waveform(chunk, w.sample_rate))
    return clips


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_edges_hz(cfg: DspConfig) -> np.ndarray:
    mels = np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2.0), cfg.mel_bins + 2)
    return mel_to_hz(mels)


_FILTERBANK_CACHE: dict = {}


def mel_filterbank(cfg: DspConfig) -> np.ndarray:
    """HTK-scale triangular filters with unit peak, shape (mel_bins, stft_bins)."""
    key = (cfg.sample_rate, cfg.fft_size, cfg.mel_bins)
    if key in _FILTERBANK_CACHE:
        return _FILTERBANK_CACHE[key]
    edges = mel_edges_hz(cfg)
    freqs = np.linspace(0.0, cfg.sample_rate / 2.0, cfg.stft_bins)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    _FILTERBANK_CACHE[key] = fb
    return fb


def hann(n: int) -> np.ndarray:
    # periodic Hann; satisfies constant overlap-add for hop = n/4
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _frames(padded: np.ndarray, fft_size: int, hop: int, n_frames: int) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(padded, fft_size)
    return view[: (n_frames - 1) * hop + 1: hop]


def stft(samples: np.ndarray, fft_size: int, hop: int) -> np.ndarray:
    """Centered, reflect-padded Hann STFT; returns (stft_bins, frames) complex."""
    samples = np.asarray(samples, dtype=np.float64)
    pad = fft_size // 2
    if samples.shape[0] <= pad:
        padded = np.pad(samples, pad, mode="constant")
    else:
        padded = np.pad(samples, pad, mode="reflect")
    n_frames = frame_count(samples.shape[0], hop)
    frames = _frames(padded, fft_size, hop, n_frames)
    return np.fft.rfft(frames * hann(fft_size), axis=1).T


def logmel(w: Waveform, cfg: DspConfig) -> Spectrogram:
    if w.sample_rate != cfg.sample_rate:
        raise DspError(f"sample rate {w.sample_rate} does not match config {cfg.sample_rate}")
    if len(w) != cfg.clip_samples:
        raise DspError(f"clip length {len(w)} != {cfg.clip_samples} samples")
    return logmel_any(w.samples, cfg)


def logmel_any(samples: np.ndarray, cfg: DspConfig) -> Spectrogram:
    """Log-mel of an arbitrary-length buffer (no clip-length check)."""
    power = np.abs(stft(samples, cfg.fft_size, cfg.hop)) ** 2
    mel = mel_filterbank(cfg) @ power
    values = np.log(np.maximum(mel, LOG_FLOOR))
    return Spectrogram(values, cfg.hop / cfg.sample_rate, mel_edges_hz(cfg), standardized=False)


def standardize(s: Spectrogram, cfg: DspConfig) -> Spectrogram:
    if s.standardized:
        raise DspError("spectrogram is already standardized")
    return s.replace(values=(s.values - cfg.zscore_mean) / cfg.zscore_std, standardized=True)


def unstandardize(s: Spectrogram, cfg: DspConfig) -> Spectrogram:
    if not s.standardized:
        raise DspError("spectrogram is not standardized")
    return s.replace(values=s.values * cfg.zscore_std + cfg.zscore_mean, standardized=False)


def mel_to_linear(mel_power: np.ndarray, cfg: DspConfig, iterations: int = 50) -> np.ndarray:
    """Non-negative least-squares inversion of the mel projection (projected gradient).

    Solves ``min_S ||M S - mel_power||^2`` subject to ``S >= 0`` column-wise and
    returns the linear-frequency power estimate, shape (stft_bins, frames).
    """
    fb = mel_filterbank(cfg)
    step = 1.0 / np.linalg.norm(fb, 2) ** 2
    # start from the transpose solution rescaled per filter mass
    mass = fb.sum(axis=0)
    est = fb.T @ mel_power / np.maximum(mass, 1e-12)[:, None]
    for _ in range(iterations):
        est = np.maximum(est - step * (fb.T @ (fb @ est - mel_power)), 0.0)
    return est


def _overlap_add(frames: np.ndarray, hop: int, length: int) -> np.ndarray:
    n_frames, size = frames.shape
    out = np.zeros(length)
    if size % hop == 0:
        blocks = out.reshape(-1, hop) if length % hop == 0 else None
        if blocks is not None:
            parts = frames.reshape(n_frames, size // hop, hop)
            for k in range(size // hop):
                blocks[k:k + n_frames] += parts[:, k]
            return out
    for t in range(n_frames):
        out[t * hop: t * hop + size] += frames[t]
    return out


@dataclass
class GriffinLimResult:
    waveform: Waveform
    errors: list = field(default_factory=list)


def griffin_lim_magnitude(magnitude: np.ndarray, fft_size: int, hop: int, iterations: int,
                          seed: int) -> tuple[np.ndarray, list]:
    """Phase reconstruction for a centered-STFT magnitude grid.

    The unknown is the padded signal of length ``(frames-1)*hop + fft_size`` so
    that the least-squares ISTFT is an exact orthogonal projection onto
    consistent spectrograms; the returned error sequence (distance from the
    current STFT to the target-magnitude set) is therefore non-increasing.
    """
    if iterations < 1:
        raise DspError("iterations must be >= 1")
    n_bins, n_frames = magnitude.shape
    if n_bins != fft_size // 2 + 1:
        raise DspError("magnitude rows must equal fft_size/2 + 1")
    window = hann(fft_size)
    length = (n_frames - 1) * hop + fft_size
    wsum = _overlap_add(np.tile(window ** 2, (n_frames, 1)), hop, length)
    wsum = np.maximum(wsum, 1e-12)

    def analysis(x):
        frames = _frames(x, fft_size, hop, n_frames)
        return np.fft.rfft(frames * window, axis=1).T

    def synthesis(spec):
        frames = np.fft.irfft(spec.T, n=fft_size, axis=1) * window
        return _overlap_add(frames, hop, length) / wsum

    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(magnitude.shape))
    # DC and Nyquist bins of a real signal are real-valued
    phase[0] = phase[-1] = 1.0
    x = synthesis(magnitude * phase)
    errors = []
    for _ in range(iterations):
        spec = analysis(x)
        errors.append(float(np.linalg.norm(np.abs(spec) - magnitude)))
        x = synthesis(magnitude * np.exp(1j * np.angle(spec)))
    return x, errors


def griffin_lim(s: Spectrogram, cfg: DspConfig, iterations: int = 32, seed: int = 0,
                return_errors: bool = False):
    """Render an unstandardized log-mel spectrogram as audio.

    Output length is ``frames * hop`` samples.
    """
    if s.standardized:
        raise DspError("unstandardize first")
    if iterations < 1:
        raise DspError("iterations must be >= 1")
    # cells at the log floor carry no recoverable energy
    mel_power = np.where(s.values > np.log(LOG_FLOOR) + 1e-9, np.exp(s.values), 0.0)
    linear_power = mel_to_linear(mel_power, cfg)
    magnitude = np.sqrt(linear_power)
    padded, errors = griffin_lim_magnitude(magnitude, cfg.fft_size, cfg.hop, iterations, seed)
    start = cfg.fft_size // 2
    out = Waveform(padded[start:start + s.frames * cfg.hop], cfg.sample_rate)
    if return_errors:
        return GriffinLimResult(out, errors)
    return out


def read_wav(path: str | Path) -> Waveform:
    """Read PCM 16/24/32-bit or float WAV; multichannel input is averaged to mono."""
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # scipy left-justifies 24-bit PCM into int32
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        samples = data.astype(np.float64)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return Waveform(samples, rate)


def write_wav(path: str | Path, w: Waveform) -> None:
    wavfile.write(str(path), w.sample_rate, w.samples.astype(np.float32))


def conform(w: Waveform, cfg: DspConfig) -> Waveform:
    """Bring ``w`` to the configured rate by integer decimation; reject other rates."""
    if w.sample_rate == cfg.sample_rate:
        return w
    ratio = w.sample_rate / cfg.sample_rate
    factor = int(round(ratio))
    if factor >= 2 and abs(ratio - factor) < 1e-9:
        return Waveform(w.samples[::factor], cfg.sample_rate)
    raise DspError(f"sample rate {w.sample_rate} Hz is not an integer multiple of {cfg.sample_rate} Hz")
