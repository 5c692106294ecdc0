"""Stochastic waveform and spectrogram augmentations for training.

Every function takes an explicit ``numpy.random.Generator``; the pipeline
derives one substream per instance from ``(seed, epoch, instance index)`` so
results do not depend on batch composition or worker timing.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dsp import DspConfig, Spectrogram, Waveform, logmel, standardize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugmentConfig:
    p_time_shift: float = 1.0
    p_background: float = 0.5
    p_colored_noise: float = 0.2
    p_gain: float = 0.2
    p_mixup: float = 0.8
    p_nocall: float = 0.075
    p_freq_mask: float = 0.5
    p_time_mask: float = 0.3
    mixup_max_partners: int = 3
    shift_window_seconds: float = 8.0
    background_snr_db: tuple = (3.0, 30.0)
    colored_snr_db: tuple = (10.0, 40.0)
    gain_range_db: tuple = (-12.0, 12.0)
    mask_max_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for name in ("p_time_shift", "p_background", "p_colored_noise", "p_gain",
                     "p_mixup", "p_nocall", "p_freq_mask", "p_time_mask"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} is not a probability")
        if self.mixup_max_partners < 2:
            raise ValueError("mixup_max_partners must be >= 2")
        if not 0.0 <= self.mask_max_fraction <= 1.0:
            raise ValueError("mask_max_fraction must be in [0, 1]")
        for name in ("background_snr_db", "colored_snr_db", "gain_range_db"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be an ordered interval")
            object.__setattr__(self, name, (float(lo), float(hi)))

    @classmethod
    def disabled(cls, **kw) -> "AugmentConfig":
        probs = dict(p_time_shift=0.0, p_background=0.0, p_colored_noise=0.0, p_gain=0.0,
                     p_mixup=0.0, p_nocall=0.0, p_freq_mask=0.0, p_time_mask=0.0)
        probs.update(kw)
        return cls(**probs)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class LabeledClip:
    waveform: Waveform
    labels: np.ndarray
    context: Waveform | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or not np.all((labels == 0) | (labels == 1)):
            raise ValueError("labels must be a binary vector")
        object.__setattr__(self, "labels", labels.astype(np.int8))

    def with_waveform(self, samples: np.ndarray) -> "LabeledClip":
        return dataclasses.replace(self, waveform=Waveform(samples, self.waveform.sample_rate))


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def _scale_for_snr(signal: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    noise_rms = _rms(noise)
    if noise_rms == 0.0:
        return 0.0
    signal_rms = _rms(signal)
    if signal_rms == 0.0:
        # silent clip: place the noise at a fixed low level instead of infinite gain
        signal_rms = 1e-3
    return signal_rms / (noise_rms * 10.0 ** (snr_db / 20.0))


def _fit_length(noise: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if noise.shape[0] >= n:
        start = int(rng.integers(0, noise.shape[0] - n + 1))
        return noise[start:start + n]
    reps = int(np.ceil(n / noise.shape[0]))
    return np.tile(noise, reps)[:n]


def time_shift(clip: LabeledClip, context: Waveform | None, rng: np.random.Generator,
               window_seconds: float = 8.0) -> LabeledClip:
    """Uniform random crop of clip length out of a window of the surrounding context.

    ``context`` is the recording around the event, centered on the clip; it is
    cut (or zero-padded) to ``window_seconds`` before cropping.
    """
    n = len(clip.waveform)
    if context is None:
        context = clip.waveform
    window = int(round(window_seconds * clip.waveform.sample_rate))
    ctx = context.samples
    if ctx.shape[0] > window:
        start = (ctx.shape[0] - window) // 2
        ctx = ctx[start:start + window]
    if ctx.shape[0] < n:
        ctx = np.pad(ctx, (0, n - ctx.shape[0]))
    offset = int(rng.integers(0, ctx.shape[0] - n + 1))
    return clip.with_waveform(ctx[offset:offset + n].copy())


def mix_background(clip: LabeledClip, noise_pool: Sequence[Waveform], rng: np.random.Generator,
                   snr_db: tuple = (3.0, 30.0)) -> LabeledClip:
    if not noise_pool:
        log.warning("background pool is empty; skipping background mixing")
        return clip
    noise = noise_pool[int(rng.integers(0, len(noise_pool)))].samples
    noise = _fit_length(noise, len(clip.waveform), rng)
    snr = rng.uniform(*snr_db)
    g = _scale_for_snr(clip.waveform.samples, noise, snr)
    return clip.with_waveform(clip.waveform.samples + g * noise)


def colored_noise_samples(n: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS noise with power spectral density proportional to 1/f**alpha."""
    spectrum = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    freqs = np.fft.rfftfreq(n)
    freqs[0] = freqs[1] if n > 1 else 1.0
    spectrum *= freqs ** (-alpha / 2.0)
    spectrum[0] = 0.0
    noise = np.fft.irfft(spectrum, n=n)
    rms = _rms(noise)
    return noise / rms if rms > 0 else noise


def colored_noise(clip: LabeledClip, rng: np.random.Generator,
                  snr_db: tuple = (10.0, 40.0), alpha: float | None = None) -> LabeledClip:
    if alpha is None:
        alpha = rng.uniform(0.0, 2.0)
    noise = colored_noise_samples(len(clip.waveform), alpha, rng)
    g = _scale_for_snr(clip.waveform.samples, noise, rng.uniform(*snr_db))
    return clip.with_waveform(clip.waveform.samples + g * noise)


def gain(clip: LabeledClip, rng: np.random.Generator, gain_range_db: tuple = (-12.0, 12.0),
         db: float | None = None) -> LabeledClip:
    if db is None:
        db = rng.uniform(*gain_range_db)
    return clip.with_waveform(clip.waveform.samples * 10.0 ** (db / 20.0))


def mix_clips(clips: Sequence[LabeledClip], weights) -> LabeledClip:
    """Weighted waveform sum with hard (OR) label union."""
    weights = np.asarray(weights, dtype=np.float64)
    samples = sum(w * c.waveform.samples for w, c in zip(weights, clips))
    labels = np.zeros_like(clips[0].labels)
    for c in clips:
        labels = labels | c.labels
    return LabeledClip(Waveform(samples, clips[0].waveform.sample_rate), labels)


def mixup(batch: Sequence[LabeledClip], rng: np.random.Generator, p: float = 0.8,
          max_partners: int = 3) -> list[LabeledClip]:
    """Multi-label mixup: each selected instance is mixed with 1..max_partners-1 others."""
    if len(batch) < 2:
        raise ValueError("mixup needs a batch of at least 2 clips")
    out = []
    for i, clip in enumerate(batch):
        if rng.random() >= p:
            out.append(clip)
            continue
        k = int(rng.integers(2, max_partners + 1))
        others = [j for j in range(len(batch)) if j != i]
        picks = rng.choice(others, size=min(k - 1, len(others)), replace=False)
        members = [clip] + [batch[int(j)] for j in picks]
        weights = rng.dirichlet(np.ones(len(members)))
        out.append(mix_clips(members, weights))
    return out


def nocall_swap(clip: LabeledClip, noise_pool: Sequence[Waveform],
                rng: np.random.Generator) -> LabeledClip:
    if not noise_pool:
        log.warning("no-call pool is empty; skipping no-call swap")
        return clip
    noise = noise_pool[int(rng.integers(0, len(noise_pool)))].samples
    noise = _fit_length(noise, len(clip.waveform), rng)
    return LabeledClip(Waveform(noise.copy(), clip.waveform.sample_rate),
                       np.zeros_like(clip.labels))


def mask_band(values: np.ndarray, axis: int, width: int, start: int) -> np.ndarray:
    out = values.copy()
    index = [slice(None), slice(None)]
    index[axis] = slice(start, start + width)
    out[tuple(index)] = 0.0
    return out


def _random_mask(values: np.ndarray, axis: int, max_fraction: float,
                 rng: np.random.Generator) -> np.ndarray:
    size = values.shape[axis]
    width = int(rng.integers(0, int(max_fraction * size) + 1))
    start = int(rng.integers(0, size - width + 1))
    return mask_band(values, axis, width, start)


def spec_masks(s: Spectrogram, rng: np.random.Generator, cfg: AugmentConfig) -> Spectrogram:
    """Frequency then time masking; masked cells are set to 0 (the standardized mean)."""
    if not s.standardized:
        raise ValueError("spectrogram masks expect a standardized spectrogram")
    values = s.values
    if rng.random() < cfg.p_freq_mask:
        values = _random_mask(values, 0, cfg.mask_max_fraction, rng)
    if rng.random() < cfg.p_time_mask:
        values = _random_mask(values, 1, cfg.mask_max_fraction, rng)
    return s.replace(values=values)


# instance index reserved for the batch-level stream (mixup, no-call)
BATCH_STREAM = 2 ** 31


def instance_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


@dataclass
class AugmentPipeline:
    """Waveform ops, then mixup / no-call on the batch, then log-mel and masks."""

    cfg: AugmentConfig
    dsp: DspConfig
    background_pool: list = field(default_factory=list)
    nocall_pool: list = field(default_factory=list)

    def waveforms(self, clips: Sequence[LabeledClip], epoch: int, batch_index: int
                  ) -> list[LabeledClip]:
        cfg = self.cfg
        out = []
        for i, clip in enumerate(clips):
            rng = instance_rng(cfg.seed, epoch, batch_index, i)
            if rng.random() < cfg.p_time_shift:
                clip = time_shift(clip, clip.context, rng, cfg.shift_window_seconds)
            if rng.random() < cfg.p_background:
                clip = mix_background(clip, self.background_pool, rng, cfg.background_snr_db)
            if rng.random() < cfg.p_colored_noise:
                clip = colored_noise(clip, rng, cfg.colored_snr_db)
            if rng.random() < cfg.p_gain:
                clip = gain(clip, rng, cfg.gain_range_db)
            out.append(clip)
        batch_rng = instance_rng(cfg.seed, epoch, batch_index, BATCH_STREAM)
        if len(out) >= 2 and cfg.p_mixup > 0:
            out = mixup(out, batch_rng, cfg.p_mixup, cfg.mixup_max_partners)
        if cfg.p_nocall > 0:
            out = [nocall_swap(c, self.nocall_pool, batch_rng) if batch_rng.random() < cfg.p_nocall
                   else c for c in out]
        return out

    def __call__(self, clips: Sequence[LabeledClip], epoch: int = 0, batch_index: int = 0
                 ) -> tuple[list[Spectrogram], np.ndarray]:
        clips = self.waveforms(clips, epoch, batch_index)
        specs = []
        for i, clip in enumerate(clips):
            rng = instance_rng(self.cfg.seed, epoch, batch_index, i, 1)
            s = standardize(logmel(clip.waveform, self.dsp), self.dsp)
            specs.append(spec_masks(s, rng, self.cfg))
        return specs, np.stack([c.labels for c in clips])
