"""Prototype layer and class-wired non-negative head.

Shapes: C classes, J prototypes per class, D embedding channels, and
embedding maps of H x W cells.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embed import EmbeddingMap

CHECKPOINT_MAGIC = b"APPB"
CHECKPOINT_VERSION = 1
MIN_NORM = 1e-8


class CheckpointError(ValueError):
    pass


@dataclass
class PrototypeBank:
    prototypes: np.ndarray      # (C, J, D)
    head_weights: np.ndarray    # (C, J), non-negative
    head_bias: np.ndarray       # (C,)
    class_names: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        self.head_weights = np.asarray(self.head_weights, dtype=np.float64)
        self.head_bias = np.asarray(self.head_bias, dtype=np.float64)
        c, j, _ = self.prototypes.shape
        if self.head_weights.shape != (c, j) or self.head_bias.shape != (c,):
            raise ValueError("head shapes do not match the prototype grid")
        if np.any(self.head_weights < 0):
            raise ValueError("head weights must be non-negative")
        if not self.class_names:
            self.class_names = [f"class_{i}" for i in range(c)]
        if len(self.class_names) != c:
            raise ValueError("class_names length must equal the number of classes")

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def per_class(self) -> int:
        return self.prototypes.shape[1]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[2]

    def copy(self) -> "PrototypeBank":
        return PrototypeBank(self.prototypes.copy(), self.head_weights.copy(),
                             self.head_bias.copy(), list(self.class_names), dict(self.metadata))

    def project_weights(self) -> None:
        np.maximum(self.head_weights, 0.0, out=self.head_weights)

    def unit_prototypes(self) -> np.ndarray:
        norms = np.linalg.norm(self.prototypes, axis=-1, keepdims=True)
        if np.any(norms < MIN_NORM):
            raise ValueError("zero-norm prototype")
        return self.prototypes / norms

    def equal(self, other: "PrototypeBank") -> bool:
        return (np.array_equal(self.prototypes, other.prototypes)
                and np.array_equal(self.head_weights, other.head_weights)
                and np.array_equal(self.head_bias, other.head_bias))


def init_bank(num_classes: int, per_class: int, dim: int, seed: int = 0,
              class_names=None) -> PrototypeBank:
    """Unit prototypes uniform on the sphere, head weights 1, biases -2."""
    if min(num_classes, per_class, dim) < 1:
        raise ValueError("C, J and D must all be >= 1")
    rng = np.random.default_rng(seed)
    protos = rng.standard_normal((num_classes, per_class, dim))
    norms = np.linalg.norm(protos, axis=-1, keepdims=True)
    # resample the (measure-zero) degenerate draws
    while np.any(norms < MIN_NORM):
        bad = norms[..., 0] < MIN_NORM
        protos[bad] = rng.standard_normal((int(bad.sum()), dim))
        norms = np.linalg.norm(protos, axis=-1, keepdims=True)
    return PrototypeBank(protos / norms, np.ones((num_classes, per_class)),
                         np.full(num_classes, -2.0), list(class_names or []))


@dataclass
class SimilarityResult:
    maps: np.ndarray      # (..., C, J, H, W)
    pooled: np.ndarray    # (..., C, J)
    argmax: np.ndarray    # (..., C, J, 2) integer (h, w)


@dataclass
class Prediction:
    logits: np.ndarray
    confidences: np.ndarray


def unit_cells(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalize embedding cells along the last axis; zero cells stay zero."""
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    valid = norms > 0
    return np.where(valid, z / np.where(valid, norms, 1.0), 0.0), valid[..., 0]


def _as_grid(z) -> np.ndarray:
    return z.values.astype(np.float64) if isinstance(z, EmbeddingMap) else np.asarray(z, np.float64)


def similarity(z, bank: PrototypeBank) -> SimilarityResult:
    """Cosine-similarity maps and global max-pooling.

    ``z`` is an :class:`EmbeddingMap`, an (H, W, D) array, or a batch
    (N, H, W, D). Ties in the max are resolved to the first cell in
    row-major order.
    """
    grid = _as_grid(z)
    if grid.shape[-1] != bank.dim:
        raise ValueError(f"embedding depth {grid.shape[-1]} != prototype dim {bank.dim}")
    zt, _ = unit_cells(grid)
    pt = bank.unit_prototypes()
    maps = np.einsum("...hwd,cjd->...cjhw", zt, pt, optimize=True)
    np.clip(maps, -1.0, 1.0, out=maps)
    flat = maps.reshape(maps.shape[:-2] + (-1,))
    idx = np.argmax(flat, axis=-1)
    pooled = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    w = grid.shape[-2]
    argmax = np.stack([idx // w, idx % w], axis=-1)
    return SimilarityResult(maps, pooled, argmax)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def head_logits(pooled: np.ndarray, bank: PrototypeBank) -> np.ndarray:
    return np.einsum("...cj,cj->...c", pooled, bank.head_weights) + bank.head_bias


def predict(sim: SimilarityResult | np.ndarray, bank: PrototypeBank) -> Prediction:
    pooled = sim.pooled if isinstance(sim, SimilarityResult) else np.asarray(sim)
    if pooled.shape[-2:] != bank.head_weights.shape:
        raise ValueError("pooled similarities do not match the bank shape")
    logits = head_logits(pooled, bank)
    return Prediction(logits, sigmoid(logits))


def forward(z, bank: PrototypeBank) -> tuple[SimilarityResult, Prediction]:
    sim = similarity(z, bank)
    return sim, predict(sim, bank)


def save_checkpoint(path: str | Path, bank: PrototypeBank, metadata: dict | None = None) -> None:
    c, j, d = bank.prototypes.shape
    trailer = json.dumps({"class_names": list(bank.class_names),
                          "metadata": {**bank.metadata, **(metadata or {})}},
                         sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIIII", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, c, j, d))
        fh.write(bank.prototypes.astype("<f4").tobytes())
        fh.write(bank.head_weights.astype("<f4").tobytes())
        fh.write(bank.head_bias.astype("<f4").tobytes())
        fh.write(trailer)


def load_checkpoint(path: str | Path) -> PrototypeBank:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic")
    _, version, c, j, d = struct.unpack_from("<4sIIII", data, 0)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 20
    sizes = (c * j * d, c * j, c)
    arrays = []
    for n in sizes:
        end = pos + 4 * n
        if end > len(data):
            raise CheckpointError("truncated payload")
        arrays.append(np.frombuffer(data[pos:end], dtype="<f4").astype(np.float64))
        pos = end
    try:
        trailer = json.loads(data[pos:].decode("utf-8")) if pos < len(data) else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("malformed JSON trailer") from exc
    return PrototypeBank(arrays[0].reshape(c, j, d), arrays[1].reshape(c, j), arrays[2],
                         trailer.get("class_names", []), trailer.get("metadata", {}))
