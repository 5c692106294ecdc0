"""Prototype-based, interpretable multi-label audio classification over frozen embeddings."""

from .dsp import DspConfig, Spectrogram, Waveform
from .embed import EmbeddingMap, ToyBackbone, ToyBackboneConfig
from .objective import LossConfig
from .protonet import PrototypeBank, init_bank, load_checkpoint, save_checkpoint
from .trainer import EmbeddingDataset, TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "DspConfig", "EmbeddingDataset", "EmbeddingMap", "LossConfig", "PrototypeBank",
    "Spectrogram", "ToyBackbone", "ToyBackboneConfig", "TrainConfig", "Waveform", "fit",
    "init_bank", "load_checkpoint", "save_checkpoint",
]
