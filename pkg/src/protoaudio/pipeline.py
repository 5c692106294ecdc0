"""Glue between audio, the frozen extractor and the prototype model."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from . import dsp
from .embed import EmbeddingMap, ToyBackbone
from .evaluation import EvalTable, report
from .protonet import PrototypeBank, forward


def spectrogram(w: dsp.Waveform, cfg: dsp.DspConfig) -> dsp.Spectrogram:
    return dsp.standardize(dsp.logmel(w, cfg), cfg)


def embed_waveform(w: dsp.Waveform, cfg: dsp.DspConfig, backbone: ToyBackbone) -> EmbeddingMap:
    return backbone.extract(spectrogram(w, cfg))


def embed_recording(w: dsp.Waveform, cfg: dsp.DspConfig, backbone: ToyBackbone
                    ) -> list[EmbeddingMap]:
    """Segment a recording into clips and embed each one."""
    return [embed_waveform(c, cfg, backbone) for c in dsp.segment(w, cfg.clip_seconds)]


def embed_many(waves: Iterable[dsp.Waveform], cfg: dsp.DspConfig, backbone: ToyBackbone
               ) -> np.ndarray:
    return np.stack([embed_waveform(w, cfg, backbone).values for w in waves])


def predict_scores(embeddings: np.ndarray, bank: PrototypeBank, batch_size: int = 256
                   ) -> np.ndarray:
    out = []
    for start in range(0, embeddings.shape[0], batch_size):
        _, pred = forward(embeddings[start:start + batch_size], bank)
        out.append(pred.confidences)
    return np.concatenate(out) if out else np.zeros((0, bank.num_classes))


def evaluate(embeddings: np.ndarray, labels: np.ndarray, bank: PrototypeBank,
             mask: Sequence[bool] | None = None, dataset: str = "") -> dict:
    """Clip-level confidences, masked to the target classes, summarized as a report dict."""
    scores = predict_scores(embeddings, bank)
    table = EvalTable(labels, scores, None if mask is None else np.asarray(mask, bool),
                      list(bank.class_names))
    return report(table, dataset)
