"""Frozen embedding maps: a seeded convolutional extractor and a binary embedding store."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dsp import Spectrogram

STORE_MAGIC = b"APEM"
STORE_VERSION = 1
# refuse single records above this many float32 values (1 GiB)
MAX_RECORD_VALUES = 1 << 28


class StoreError(ValueError):
    pass


class BadMagic(StoreError):
    pass


class TruncatedPayload(StoreError):
    pass


class DimensionOverflow(StoreError):
    pass


@dataclass(frozen=True)
class EmbeddingMap:
    """H_z x W_z x D feature grid; axis 0 is frequency, axis 1 is time."""

    values: np.ndarray
    stride_freq: int = 1
    stride_time: int = 1
    # receptive-field geometry, used to map cells back to spectrogram pixels
    field_freq: int = 1
    field_time: int = 1

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3 or min(values.shape) < 1:
            raise ValueError("embedding map must be a non-empty (h, w, d) grid")
        if not np.all(np.isfinite(values)):
            raise ValueError("embedding map contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]

    @property
    def d(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class ConvLayer:
    kernel: tuple
    stride: tuple
    channels: int
    # share weights across the kernel's time taps (sum-pools over time)
    tie_time: bool = False


def _default_layers():
    # patchify stem followed by 2x2 downsampling stages; cumulative stride 32
    return (
        ConvLayer((4, 4), (4, 4), 32),
        ConvLayer((2, 2), (2, 2), 64, tie_time=True),
        ConvLayer((2, 2), (2, 2), 96, tie_time=True),
        ConvLayer((2, 2), (2, 2), 128, tie_time=True),
    )


@dataclass(frozen=True)
class ToyBackboneConfig:
    layers: tuple = field(default_factory=_default_layers)
    seed: int = 0

    def __post_init__(self):
        layers = tuple(l if isinstance(l, ConvLayer) else ConvLayer(
            tuple(l["kernel"]), tuple(l["stride"]), int(l["channels"]),
            bool(l.get("tie_time", False))) for l in self.layers)
        if not layers:
            raise ValueError("backbone needs at least one layer")
        for l in layers:
            if min(l.kernel) < 1 or min(l.stride) < 1 or l.channels < 1:
                raise ValueError(f"invalid layer {l}")
        object.__setattr__(self, "layers", layers)

    @property
    def strides(self) -> tuple:
        sf = st = 1
        for l in self.layers:
            sf *= l.stride[0]
            st *= l.stride[1]
        return sf, st

    @property
    def receptive_field(self) -> tuple:
        rf, rt = 1, 1
        jf, jt = 1, 1
        for l in self.layers:
            rf += (l.kernel[0] - 1) * jf
            rt += (l.kernel[1] - 1) * jt
            jf *= l.stride[0]
            jt *= l.stride[1]
        return rf, rt

    def output_shape(self, height: int, width: int) -> tuple:
        for l in self.layers:
            height = (height - l.kernel[0]) // l.stride[0] + 1
            width = (width - l.kernel[1]) // l.stride[1] + 1
            if height < 1 or width < 1:
                raise ValueError("spectrogram is smaller than the backbone receptive field")
        return height, width, self.layers[-1].channels

    def to_dict(self) -> dict:
        return {"seed": self.seed,
                "layers": [{"kernel": list(l.kernel), "stride": list(l.stride),
                            "channels": l.channels, "tie_time": l.tie_time}
                           for l in self.layers]}


def _orthogonal(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    return q if rows >= cols else q.T


def _zero_sum_orthogonal(fan_in: int, channels: int, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal filters confined to the complement of the constant input direction."""
    if fan_in < 2:
        return _orthogonal(fan_in, channels, rng)
    # orthonormal basis of {x : sum(x) = 0}
    basis = np.linalg.qr(np.eye(fan_in) - 1.0 / fan_in)[0][:, : fan_in - 1]
    return basis @ _orthogonal(fan_in - 1, channels, rng)


def _conv_valid(x: np.ndarray, weight: np.ndarray, stride: tuple) -> np.ndarray:
    """x: (H, W, Cin); weight: (kh, kw, Cin, Cout) -> (H', W', Cout)."""
    kh, kw = weight.shape[:2]
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(0, 1))
    windows = windows[::stride[0], ::stride[1]]  # (H', W', Cin, kh, kw)
    return np.einsum("hwcij,ijco->hwo", windows, weight, optimize=True)


class ToyBackbone:
    """Seeded, frozen stack of valid convolutions; rectifiers between layers, linear output."""

    def __init__(self, cfg: ToyBackboneConfig | None = None):
        self.cfg = cfg or ToyBackboneConfig()
        rng = np.random.default_rng(self.cfg.seed)
        weights = []
        cin = 1
        for layer in self.cfg.layers:
            kh, kw = layer.kernel
            taps = 1 if layer.tie_time else kw
            fan_in = kh * taps * cin
            mat = _zero_sum_orthogonal(fan_in, layer.channels, rng) * np.sqrt(2.0 / kw * taps)
            w = mat.reshape(kh, taps, cin, layer.channels)
            if layer.tie_time:
                w = np.repeat(w, kw, axis=1)
            w.setflags(write=False)
            weights.append(w)
            cin = layer.channels
        self._weights = tuple(weights)

    @property
    def weights(self) -> tuple:
        return self._weights

    def checksum(self) -> str:
        h = hashlib.sha256()
        for w in self._weights:
            h.update(np.ascontiguousarray(w).tobytes())
        return h.hexdigest()

    def forward(self, values: np.ndarray) -> np.ndarray:
        x = np.asarray(values, dtype=np.float64)[:, :, None]
        self.cfg.output_shape(x.shape[0], x.shape[1])
        last = len(self._weights) - 1
        for i, (layer, w) in enumerate(zip(self.cfg.layers, self._weights)):
            x = _conv_valid(x, w, layer.stride)
            # final stage is a linear projection so cell embeddings are signed
            if i < last:
                x = np.maximum(x, 0.0)
        return x

    def extract(self, s: Spectrogram) -> EmbeddingMap:
        if not s.standardized:
            raise ValueError("backbone expects a standardized spectrogram")
        sf, st = self.cfg.strides
        rf, rt = self.cfg.receptive_field
        return EmbeddingMap(self.forward(s.values), sf, st, rf, rt)


def extract(s: Spectrogram, cfg: ToyBackboneConfig | None = None) -> EmbeddingMap:
    return ToyBackbone(cfg).extract(s)


_HEADER = struct.Struct("<4sII")
_RECORD = struct.Struct("<IIIII")


def save_embeddings(path: str | Path, items: Iterable[tuple[str, EmbeddingMap]]) -> None:
    items = list(items)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(STORE_MAGIC, STORE_VERSION, len(items)))
        for item_id, emb in items:
            raw_id = item_id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw_id)))
            fh.write(raw_id)
            fh.write(_RECORD.pack(emb.h, emb.w, emb.d, emb.stride_freq, emb.stride_time))
            fh.write(np.ascontiguousarray(emb.values, dtype="<f4").tobytes())


def _take(buf: memoryview, pos: int, n: int) -> tuple[memoryview, int]:
    if pos + n > len(buf):
        raise TruncatedPayload("truncated payload")
    return buf[pos:pos + n], pos + n


def load_embeddings(path: str | Path, field_size: tuple | None = None
                    ) -> list[tuple[str, EmbeddingMap]]:
    """Read an embedding store written by :func:`save_embeddings`.

    The file format carries strides only; ``field_size`` (receptive field in
    spectrogram pixels) defaults to the strides, i.e. non-overlapping cells.
    """
    data = memoryview(Path(path).read_bytes())
    if len(data) < _HEADER.size or bytes(data[:4]) != STORE_MAGIC:
        raise BadMagic("bad magic")
    _, version, count = _HEADER.unpack_from(data, 0)
    if version != STORE_VERSION:
        raise StoreError(f"unsupported store version {version}")
    pos = _HEADER.size
    items = []
    for _ in range(count):
        chunk, pos = _take(data, pos, 4)
        (id_len,) = struct.unpack("<I", chunk)
        chunk, pos = _take(data, pos, id_len)
        item_id = bytes(chunk).decode("utf-8")
        chunk, pos = _take(data, pos, _RECORD.size)
        h, w, d, sf, st = _RECORD.unpack(chunk)
        n = h * w * d
        if n > MAX_RECORD_VALUES or min(h, w, d) < 1:
            raise DimensionOverflow(f"record {item_id!r} has invalid dimensions {h}x{w}x{d}")
        chunk, pos = _take(data, pos, 4 * n)
        values = np.frombuffer(chunk, dtype="<f4").reshape(h, w, d).copy()
        ff, ft = field_size if field_size is not None else (sf, st)
        items.append((item_id, EmbeddingMap(values, sf, st, ff, ft)))
    return items


def stack(maps: Sequence[EmbeddingMap]) -> np.ndarray:
    """Stack equally-shaped maps into an (N, H, W, D) float64 array."""
    return np.stack([m.values for m in maps]).astype(np.float64)
