"""Prototype projection onto training data and visual/audible explanation artifacts."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dsp
from .embed import EmbeddingMap
from .protonet import PrototypeBank, similarity

log = logging.getLogger(__name__)


@dataclass
class ProjectionEntry:
    prototype_id: tuple
    instance_id: str
    similarity: float
    argmax_cell: tuple
    rank: int = 0
    box: tuple | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prototype_id"] = list(self.prototype_id)
        d["argmax_cell"] = list(self.argmax_cell)
        d["box"] = list(self.box) if self.box is not None else None
        return d


@dataclass
class Heatmap:
    values: np.ndarray          # (mel_bins, frames)
    prototype_id: tuple
    instance_id: str = ""


def project(bank: PrototypeBank, embeddings: Sequence[tuple[str, EmbeddingMap]] | np.ndarray,
            k: int, ids: Sequence[str] | None = None, chunk: int = 256) -> dict:
    """Top-``k`` most similar training instances per prototype.

    Returns ``{(c, j): [ProjectionEntry, ...]}`` sorted by pooled similarity
    descending, ties by position in the store. Streams over the store in
    chunks so only pooled values and argmax cells are kept.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if isinstance(embeddings, np.ndarray):
        grids = embeddings
        ids = list(ids) if ids is not None else [str(i) for i in range(grids.shape[0])]
    else:
        ids = [item_id for item_id, _ in embeddings]
        grids = None
    n = len(ids)
    if n == 0:
        raise ValueError("embedding set is empty")
    if k > n:
        log.warning("k=%d exceeds the %d available instances; returning all", k, n)
        k = n
    pooled_parts, argmax_parts = [], []
    for start in range(0, n, chunk):
        if grids is not None:
            batch = grids[start:start + chunk]
        else:
            batch = np.stack([m.values for _, m in embeddings[start:start + chunk]])
        sim = similarity(batch, bank)
        pooled_parts.append(sim.pooled)
        argmax_parts.append(sim.argmax)
    pooled = np.concatenate(pooled_parts)     # (N, C, J)
    argmax = np.concatenate(argmax_parts)     # (N, C, J, 2)
    out = {}
    index = np.arange(n)
    for c in range(bank.num_classes):
        for j in range(bank.per_class):
            order = np.lexsort((index, -pooled[:, c, j]))[:k]
            out[(c, j)] = [ProjectionEntry((c, j), ids[i], float(pooled[i, c, j]),
                                           tuple(int(v) for v in argmax[i, c, j]), rank)
                           for rank, i in enumerate(order)]
    return out


def cell_centers(n_cells: int, stride: int, field_size: int) -> np.ndarray:
    """Spectrogram pixel at the center of each cell's receptive field (rounded down)."""
    return np.arange(n_cells) * stride + (field_size - 1) // 2


def upscale(cell_map: np.ndarray, out_shape: tuple, stride: tuple, field_size: tuple) -> np.ndarray:
    """Separable bilinear interpolation from cell centers to every spectrogram pixel."""
    h, w = cell_map.shape
    rows = cell_centers(h, stride[0], field_size[0])
    cols = cell_centers(w, stride[1], field_size[1])
    ry, rx = np.arange(out_shape[0]), np.arange(out_shape[1])
    tmp = np.empty((h, out_shape[1]))
    for i in range(h):
        tmp[i] = np.interp(rx, cols, cell_map[i]) if w > 1 else cell_map[i, 0]
    out = np.empty(out_shape)
    for x in range(out_shape[1]):
        out[:, x] = np.interp(ry, rows, tmp[:, x]) if h > 1 else tmp[0, x]
    return out


def heatmap(s: dsp.Spectrogram, z: EmbeddingMap, bank: PrototypeBank, c: int, j: int,
            instance_id: str = "") -> Heatmap:
    if not z.stride_freq or not z.stride_time:
        raise ValueError("embedding map lacks stride metadata")
    sim = similarity(z, bank)
    values = upscale(sim.maps[c, j], s.values.shape, (z.stride_freq, z.stride_time),
                     (z.field_freq, z.field_time))
    return Heatmap(values, (c, j), instance_id)


def percentile_box(h: Heatmap | np.ndarray, q: float = 0.95) -> tuple:
    """Smallest rectangle (f_lo, f_hi, t_lo, t_hi), half-open, containing all pixels above the q-quantile."""
    values = h.values if isinstance(h, Heatmap) else np.asarray(h)
    threshold = np.quantile(values, q)
    rows, cols = np.nonzero(values > threshold)
    if rows.size == 0:
        log.warning("heatmap is constant above the %.2f quantile; using the full frame", q)
        return 0, values.shape[0], 0, values.shape[1]
    return int(rows.min()), int(rows.max()) + 1, int(cols.min()), int(cols.max()) + 1


def box_iou(a: tuple, b: tuple) -> float:
    f = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    t = max(0, min(a[3], b[3]) - max(a[2], b[2]))
    inter = f * t
    area = (a[1] - a[0]) * (a[3] - a[2]) + (b[1] - b[0]) * (b[3] - b[2]) - inter
    return inter / area if area > 0 else 0.0


@dataclass
class Contribution:
    prototype_id: tuple
    class_name: str
    similarity: float
    weight: float
    contribution: float
    heatmap: Heatmap | None = None
    box: tuple | None = None
    exemplars: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"prototype_id": list(self.prototype_id), "class": self.class_name,
                "similarity": self.similarity, "weight": self.weight,
                "contribution": self.contribution,
                "box": list(self.box) if self.box is not None else None,
                "exemplars": [e.to_dict() for e in self.exemplars]}


@dataclass
class LocalExplanation:
    logits: np.ndarray
    bias: np.ndarray
    contributions: list

    def to_dict(self) -> dict:
        return {"logits": self.logits.tolist(), "bias": self.bias.tolist(),
                "contributions": [c.to_dict() for c in self.contributions]}


def explain_prediction(s: dsp.Spectrogram, z: EmbeddingMap, bank: PrototypeBank, top_m: int,
                       projection: dict | None = None, q: float = 0.95) -> LocalExplanation:
    """Rank prototypes by weight x pooled similarity, with heatmap and box for each."""
    sim = similarity(z, bank)
    contrib = bank.head_weights * sim.pooled
    logits = contrib.sum(axis=1) + bank.head_bias
    flat = np.argsort(-contrib, axis=None, kind="stable")[:max(0, top_m)]
    items = []
    for f in flat:
        c, j = np.unravel_index(f, contrib.shape)
        c, j = int(c), int(j)
        hm = Heatmap(upscale(sim.maps[c, j], s.values.shape, (z.stride_freq, z.stride_time),
                             (z.field_freq, z.field_time)), (c, j))
        items.append(Contribution((c, j), bank.class_names[c], float(sim.pooled[c, j]),
                                  float(bank.head_weights[c, j]), float(contrib[c, j]), hm,
                                  percentile_box(hm, q),
                                  list((projection or {}).get((c, j), []))))
    return LocalExplanation(logits, bank.head_bias.copy(), items)


def _colorize(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    from matplotlib import colormaps

    norm = (values - lo) / (hi - lo) if hi > lo else np.zeros_like(values)
    rgba = colormaps["viridis"](np.clip(norm, 0.0, 1.0))
    # row 0 is the lowest mel band; images put low frequencies at the bottom
    return (rgba[::-1, :, :3] * 255).astype(np.uint8)


def _draw_box(img: np.ndarray, box: tuple, color=(255, 64, 64)) -> np.ndarray:
    out = img.copy()
    n_rows = img.shape[0]
    f_lo, f_hi, t_lo, t_hi = box
    top, bottom = n_rows - f_hi, n_rows - 1 - f_lo
    out[top, t_lo:t_hi] = color
    out[bottom, t_lo:t_hi] = color
    out[top:bottom + 1, t_lo] = color
    out[top:bottom + 1, t_hi - 1] = color
    return out


CSV_FIELDS = ("c", "j", "instance", "similarity", "f_lo", "f_hi", "t_lo", "t_hi")


def render(s: dsp.Spectrogram, hm: Heatmap, box: tuple, stem: str | Path,
           similarity_value: float | None = None, cfg: dsp.DspConfig | None = None,
           audio: bool = False, gl_iterations: int = 32, seed: int = 0) -> dict:
    """Write ``<stem>.png`` (heatmap), ``<stem>_box.png``, ``<stem>.csv`` and optionally ``<stem>.wav``."""
    from PIL import Image

    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    spec_img = _colorize(s.values, s.values.min(), s.values.max()).astype(np.float64)
    heat_img = _colorize(hm.values, -1.0, 1.0).astype(np.float64)
    blended = (0.5 * spec_img + 0.5 * heat_img).astype(np.uint8)
    paths = {"heatmap": stem.with_suffix(".png"), "box": stem.parent / f"{stem.name}_box.png",
             "csv": stem.with_suffix(".csv")}
    Image.fromarray(blended).save(paths["heatmap"])
    Image.fromarray(_draw_box(spec_img.astype(np.uint8), box)).save(paths["box"])
    c, j = hm.prototype_id
    sim_value = similarity_value if similarity_value is not None else float(hm.values.max())
    with open(paths["csv"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        writer.writerow([c, j, hm.instance_id, f"{sim_value:.8f}", *box])
    if audio:
        if cfg is None:
            raise ValueError("audio rendering needs the DSP config")
        paths["wav"] = stem.with_suffix(".wav")
        write_box_audio(s, box, cfg, paths["wav"], gl_iterations, seed)
    return paths


def box_audio(s: dsp.Spectrogram, box: tuple, cfg: dsp.DspConfig, iterations: int = 32,
              seed: int = 0) -> dsp.Waveform:
    """Griffin-Lim rendering of the boxed region; everything outside the box is floored."""
    raw = dsp.unstandardize(s, cfg) if s.standardized else s
    f_lo, f_hi, t_lo, t_hi = box
    floor = np.log(dsp.LOG_FLOOR)
    patch = np.full((raw.mel_bins, t_hi - t_lo), floor)
    patch[f_lo:f_hi] = raw.values[f_lo:f_hi, t_lo:t_hi]
    return dsp.griffin_lim(raw.replace(values=patch), cfg, iterations, seed)


def write_box_audio(s, box, cfg, path, iterations=32, seed=0) -> dsp.Waveform:
    w = box_audio(s, box, cfg, iterations, seed)
    dsp.write_wav(path, w)
    return w


def write_index(path: str | Path, entries: Sequence[ProjectionEntry], bank: PrototypeBank) -> None:
    Path(path).write_text(json.dumps({
        "class_names": list(bank.class_names),
        "entries": [e.to_dict() for e in entries],
    }, indent=2) + "\n")
