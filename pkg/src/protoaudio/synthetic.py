"""Synthetic multi-label corpus of planted tone/chirp motifs with known locations.

Each class owns one motif (chirps, harmonic combs, trills, clicks,
pulse trains, noise bands) confined to a frequency band. Clips contain one to three
motifs over low-level colored noise; ground-truth boxes are recorded in
spectrogram (mel row, frame) coordinates, half-open.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import colored_noise_samples
from .dsp import DspConfig, Waveform, hz_to_mel, mel_edges_hz

# Each band fills one 32-row cell of the default 256-band grid, and a 2 s motif
# covers about 5% of a 5 s clip, so a motif is resolvable by the extractor's
# cell lattice and commensurate with a 95th-percentile box.
MOTIFS = (
    # name, kind, f_lo, f_hi (Hz)
    ("up_chirp_low", "up", 900.0, 1580.0),
    ("down_chirp_low", "down", 900.0, 1580.0),
    ("harmonic_comb", "harmonic", 370.0, 840.0),
    ("trill_mid", "trill", 2800.0, 4350.0),
    ("pulses_mid", "pulses", 1650.0, 2700.0),
    ("tone_pair", "pair", 4500.0, 6800.0),
    ("clicks_high", "clicks", 6950.0, 10400.0),
    ("noise_band_high", "noise", 10600.0, 15500.0),
)


@dataclass
class SyntheticClip:
    clip_id: str
    waveform: Waveform
    labels: np.ndarray
    boxes: list = field(default_factory=list)   # (class, (f_lo, f_hi, t_lo, t_hi))


def _chirp(t, f0, f1):
    dur = t[-1] if t[-1] > 0 else 1.0
    return np.sin(2 * np.pi * (f0 * t + 0.5 * (f1 - f0) * t * t / dur))


def _gate(t, period, on, sr, edge=0.004):
    """On/off envelope with raised-cosine edges (hard gates splatter across bands)."""
    rect = ((t % period) < on).astype(float)
    k = np.hanning(max(3, int(edge * sr)))
    return np.convolve(rect, k / k.sum(), mode="same")


def _band_noise(f_lo, f_hi, n, sr, rng):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(freqs < f_lo) | (freqs > f_hi)] = 0.0
    return np.fft.irfft(spec, n=n)


def motif_samples(kind: str, f_lo: float, f_hi: float, n: int, sr: int,
                  rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / sr
    if kind in ("up", "down"):
        # syllable train: 120 ms sweeps repeated every 160 ms
        period, syllable = int(0.16 * sr), int(0.12 * sr)
        ts = np.arange(syllable) / sr
        f0, f1 = (f_lo, f_hi) if kind == "up" else (f_hi, f_lo)
        unit = _chirp(ts, f0, f1) * np.hanning(syllable)
        x = np.zeros(n)
        for start in range(0, n - syllable + 1, period):
            x[start:start + syllable] = unit
    elif kind == "harmonic":
        # the harmonics of a 120 Hz fundamental that fall inside the band
        ks = range(int(np.ceil(f_lo / 120.0)), int(f_hi // 120.0) + 1)
        x = sum(np.sin(2 * np.pi * 120.0 * k * t + k) for k in ks)
    elif kind == "trill":
        mid, dev = 0.5 * (f_lo + f_hi), 0.5 * (f_hi - f_lo)
        phase = 2 * np.pi * (mid * t - dev / (2 * np.pi * 12.0) * np.cos(2 * np.pi * 12.0 * t))
        x = np.sin(phase)
    elif kind == "clicks":
        # 15 ms band-limited bursts every 125 ms
        x = _gate(t, 0.125, 0.015, sr) * _band_noise(f_lo, f_hi, n, sr, rng)
    elif kind == "pulses":
        x = _gate(t, 0.2, 0.1, sr) * np.sin(2 * np.pi * 0.5 * (f_lo + f_hi) * t)
    elif kind == "pair":
        # tones a quarter of the way in from each band edge (log scale)
        f_a, f_b = (f_lo * (f_hi / f_lo) ** r for r in (0.25, 0.75))
        x = np.sin(2 * np.pi * f_a * t) + np.sin(2 * np.pi * f_b * t)
    elif kind == "noise":
        x = _band_noise(f_lo, f_hi, n, sr, rng)
    else:
        raise ValueError(f"unknown motif kind {kind!r}")
    x = x / (np.sqrt(np.mean(x ** 2)) + 1e-12)
    # short raised-cosine fades avoid broadband clicks at the edges
    fade = min(n // 8, int(0.02 * sr))
    if fade > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        x[:fade] *= ramp
        x[-fade:] *= ramp[::-1]
    return x


def hz_to_row(f: float, cfg: DspConfig) -> float:
    """Fractional mel-row index whose filter peaks at frequency ``f``."""
    edges_mel = hz_to_mel(mel_edges_hz(cfg))
    centers = edges_mel[1:-1]
    return float(np.interp(hz_to_mel(f), centers, np.arange(centers.shape[0])))


def motif_box(kind: str, f_lo: float, f_hi: float, start: int, n: int, cfg: DspConfig) -> tuple:
    lo = int(np.floor(hz_to_row(f_lo, cfg)))
    hi = int(np.ceil(hz_to_row(f_hi, cfg))) + 1
    t_lo = start // cfg.hop
    t_hi = (start + n) // cfg.hop + 1
    return max(lo, 0), min(hi, cfg.mel_bins), max(t_lo, 0), min(t_hi, cfg.frames)


def make_clip(rng: np.random.Generator, cfg: DspConfig, classes: list[int], clip_id: str,
              motif_seconds: float = 2.5, snr_db: float = 20.0, repeats: dict | None = None,
              motifs=MOTIFS, onsets: dict | None = None) -> SyntheticClip:
    """One clip with the given classes planted at uniformly random onsets (motifs may overlap).

    ``onsets`` maps a class to explicit start times in seconds, overriding
    both the random draw and ``repeats`` for that class.
    """
    n_total = cfg.clip_samples
    sr = cfg.sample_rate
    n = int(motif_seconds * sr)
    signal = np.zeros(n_total)
    boxes = []
    for c in classes:
        _, kind, f_lo, f_hi = motifs[c]
        starts = (onsets or {}).get(c)
        if starts is None:
            starts = [int(rng.integers(0, n_total - n)) for _ in range((repeats or {}).get(c, 1))]
        else:
            starts = [int(round(x * sr)) for x in starts]
            if any(x < 0 or x + n > n_total for x in starts):
                raise ValueError("motif onset places the motif outside the clip")
        for start in starts:
            amp = 10 ** (rng.uniform(-3.0, 3.0) / 20.0)
            signal[start:start + n] += amp * motif_samples(kind, f_lo, f_hi, n, sr, rng)
            boxes.append((c, motif_box(kind, f_lo, f_hi, start, n, cfg)))
    noise = colored_noise_samples(n_total, rng.uniform(0.5, 1.5), rng)
    noise *= 10 ** (-snr_db / 20.0)
    wave = 0.1 * (signal + noise)
    labels = np.zeros(len(motifs), dtype=np.int8)
    labels[list(classes)] = 1
    return SyntheticClip(clip_id, Waveform(wave, sr), labels, boxes)


def make_corpus(n: int, seed: int, cfg: DspConfig | None = None, prefix: str = "clip",
                max_classes: int = 3, motifs=MOTIFS, **kw) -> list[SyntheticClip]:
    """``n`` clips with 1..max_classes distinct motifs each (weighted toward one)."""
    cfg = cfg or DspConfig()
    rng = np.random.default_rng(seed)
    clips = []
    n_cls = len(motifs)
    for i in range(n):
        k = int(rng.choice(np.arange(1, max_classes + 1),
                           p=_count_probs(max_classes)))
        classes = sorted(rng.choice(n_cls, size=k, replace=False).tolist())
        clips.append(make_clip(rng, cfg, classes, f"{prefix}_{i:05d}", motifs=motifs, **kw))
    return clips


def _count_probs(max_classes: int) -> np.ndarray:
    p = 0.5 ** np.arange(max_classes)
    return p / p.sum()
