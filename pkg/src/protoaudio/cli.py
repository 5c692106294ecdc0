"""Command-line entry points: preprocess, train, eval, project, explain, render-audio.

Every command reads one TOML config (sections per module), validates it before
any compute, and writes its outputs plus a JSON snapshot of the resolved config
under ``--out``. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import tomli

from . import dsp, evaluation, explain, synthetic
from .augment import AugmentConfig, AugmentPipeline, LabeledClip
from .embed import EmbeddingMap, ToyBackbone, ToyBackboneConfig, load_embeddings, save_embeddings
from .objective import LossConfig
from .protonet import init_bank, load_checkpoint, similarity
from .trainer import EmbeddingDataset, TrainConfig, fit

log = logging.getLogger("protoaudio")

SPLITS = ("train", "val", "test")
STORE_NAME = "embeddings.apem"


class UsageError(Exception):
    """Bad flags or an invalid config/manifest; reported with exit code 2."""


# ---------------------------------------------------------------- config

@dataclasses.dataclass
class RunConfig:
    classes: list
    seed: int
    dsp: dsp.DspConfig
    augment: AugmentConfig
    augment_enabled: bool
    background: list
    backbone: ToyBackboneConfig
    per_class: int
    loss: LossConfig
    train: TrainConfig
    mask: str | None
    store: str | None

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes), "seed": self.seed, "dsp": self.dsp.to_dict(),
            "augment": {**self.augment.to_dict(), "enabled": self.augment_enabled,
                        "background": list(self.background)},
            "backbone": self.backbone.to_dict(),
            "model": {"per_class": self.per_class},
            "loss": dataclasses.asdict(self.loss), "train": self.train.to_dict(),
            "eval": {"mask": self.mask}, "data": {"store": self.store},
        }


def _section(doc: dict, name: str) -> dict:
    value = doc.get(name, {})
    if not isinstance(value, dict):
        raise UsageError(f"config section [{name}] must be a table")
    return dict(value)


def _build(cls, values: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise UsageError(f"unknown keys in [{section}]: {unknown}")
    for k, v in values.items():
        if isinstance(v, list):
            values[k] = tuple(v)
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid [{section}]: {exc}") from exc


def load_config(path: str | Path | None, seed: int | None = None) -> RunConfig:
    doc = {}
    if path is not None:
        try:
            doc = tomli.loads(Path(path).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except tomli.TOMLDecodeError as exc:
            raise UsageError(f"malformed config {path}: {exc}") from exc
    known = {"classes", "seed", "dsp", "augment", "backbone", "model", "loss", "train",
             "eval", "data"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise UsageError(f"unknown config entries: {unknown}")
    classes = doc.get("classes")
    if classes is None:
        classes = [m[0] for m in synthetic.MOTIFS]
    if (not isinstance(classes, list) or not classes
            or not all(isinstance(c, str) and c for c in classes)):
        raise UsageError("classes must be a non-empty list of names")
    if len(set(classes)) != len(classes):
        raise UsageError("class names must be unique")
    run_seed = int(seed if seed is not None else doc.get("seed", 0))

    aug = _section(doc, "augment")
    enabled = bool(aug.pop("enabled", False))
    background = [str(p) for p in aug.pop("background", [])]
    aug.setdefault("seed", run_seed)
    if seed is not None:
        aug["seed"] = run_seed

    bb = _section(doc, "backbone")
    try:
        backbone = ToyBackboneConfig(**bb) if bb else ToyBackboneConfig()
    except (TypeError, KeyError, ValueError) as exc:
        raise UsageError(f"invalid [backbone]: {exc}") from exc

    model = _section(doc, "model")
    per_class = model.pop("per_class", 5)
    if model:
        raise UsageError(f"unknown keys in [model]: {sorted(model)}")
    if not isinstance(per_class, int) or per_class < 1:
        raise UsageError("model.per_class must be a positive integer")

    train = _section(doc, "train")
    train.setdefault("seed", run_seed)
    if seed is not None:
        train["seed"] = run_seed

    ev = _section(doc, "eval")
    data = _section(doc, "data")
    return RunConfig(
        classes=list(classes), seed=run_seed,
        dsp=_build(dsp.DspConfig, _section(doc, "dsp"), "dsp"),
        augment=_build(AugmentConfig, aug, "augment"), augment_enabled=enabled,
        background=background, backbone=backbone, per_class=per_class,
        loss=_build(LossConfig, _section(doc, "loss"), "loss"),
        train=_build(TrainConfig, train, "train"),
        mask=ev.get("mask"), store=data.get("store"),
    )


def write_snapshot(out: Path, cfg: RunConfig, command: str, extra: dict | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    snap = {"command": command, "config": cfg.to_dict(),
            "backbone_checksum": ToyBackbone(cfg.backbone).checksum(), **(extra or {})}
    (out / f"config.{command}.json").write_text(json.dumps(snap, indent=2, sort_keys=True) + "\n")


# -------------------------------------------------------------- manifest

@dataclasses.dataclass
class Record:
    id: str
    labels: list
    split: str
    audio_path: str | None = None
    embedding_id: str | None = None
    segment: int | None = None


def read_manifest(path: str | Path, classes: list) -> list[Record]:
    """JSON-lines manifest; ids unique, labels drawn from the config class list."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read manifest {path}: {exc}") from exc
    base = Path(path).parent
    records, seen = [], set()
    known = set(classes)
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise UsageError(f"manifest line {n}: {exc}") from exc
        rid = row.get("id")
        if not isinstance(rid, str) or not rid:
            raise UsageError(f"manifest line {n}: missing id")
        if rid in seen:
            raise UsageError(f"manifest line {n}: duplicate id {rid!r}")
        seen.add(rid)
        labels = row.get("labels", [])
        bad = sorted(set(labels) - known)
        if bad:
            raise UsageError(f"manifest line {n}: unknown classes {bad}")
        split = row.get("split", "train")
        if split not in SPLITS:
            raise UsageError(f"manifest line {n}: split must be one of {SPLITS}")
        audio = row.get("audio_path")
        if audio is not None and not Path(audio).is_absolute():
            audio = str(base / audio)
        if audio is None and row.get("embedding_id") is None:
            raise UsageError(f"manifest line {n}: needs audio_path or embedding_id")
        records.append(Record(rid, list(labels), split, audio, row.get("embedding_id"),
                              row.get("segment")))
    return records


def label_matrix(records: list[Record], classes: list) -> np.ndarray:
    index = {c: k for k, c in enumerate(classes)}
    y = np.zeros((len(records), len(classes)), dtype=np.int8)
    for i, r in enumerate(records):
        for name in r.labels:
            y[i, index[name]] = 1
    return y


# ---------------------------------------------------------------- data

def _read_audio(path: str, cfg: dsp.DspConfig) -> dsp.Waveform:
    return dsp.conform(dsp.read_wav(path), cfg)


def record_clip(r: Record, cfg: dsp.DspConfig) -> dsp.Waveform:
    """The (single) clip a record refers to: its segment of the recording."""
    if r.audio_path is None:
        raise RuntimeError(f"record {r.id!r} has no audio")
    clips = dsp.segment(_read_audio(r.audio_path, cfg), cfg.clip_seconds)
    k = r.segment or 0
    if k >= len(clips):
        raise RuntimeError(f"record {r.id!r}: segment {k} out of range")
    return clips[k]


def _store_path(cfg: RunConfig, manifest: str | Path) -> Path:
    return Path(cfg.store) if cfg.store else Path(manifest).parent / STORE_NAME


def load_split(records: list[Record], cfg: RunConfig, manifest: str | Path,
               backbone: ToyBackbone) -> tuple[np.ndarray, np.ndarray, list[Record]]:
    """Embeddings (N, H, W, D) and labels for ``records``; store lookups or on-the-fly extraction."""
    if not records:
        return np.zeros((0,)), np.zeros((0, len(cfg.classes)), np.int8), []
    store = None
    if any(r.embedding_id is not None for r in records):
        path = _store_path(cfg, manifest)
        if not path.exists():
            raise RuntimeError(f"embedding store {path} not found")
        store = dict(load_embeddings(path))
    grids, out_records = [], []
    for r in records:
        if r.embedding_id is not None:
            if r.embedding_id not in store:
                raise RuntimeError(f"embedding {r.embedding_id!r} missing from the store")
            grids.append(store[r.embedding_id].values)
            out_records.append(r)
        else:
            clips = dsp.segment(_read_audio(r.audio_path, cfg.dsp), cfg.dsp.clip_seconds)
            for k, clip in enumerate(clips):
                s = dsp.standardize(dsp.logmel(clip, cfg.dsp), cfg.dsp)
                grids.append(backbone.extract(s).values)
                out_records.append(dataclasses.replace(r, segment=k))
    z = np.stack(grids).astype(np.float64)
    return z, label_matrix(out_records, cfg.classes), out_records


def _split(records, name):
    return [r for r in records if r.split == name]


# -------------------------------------------------------------- commands

def cmd_preprocess(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    records = read_manifest(args.manifest, cfg.classes)
    write_snapshot(out, cfg, "preprocess", {"manifest": str(args.manifest)})
    backbone = ToyBackbone(cfg.backbone)
    if not records:
        log.warning("manifest is empty; writing an empty store")
    items, rows, errors = [], [], []
    total, total_sq, count = 0.0, 0.0, 0
    for r in records:
        if r.audio_path is None:
            errors.append({"id": r.id, "error": "record has no audio_path"})
            continue
        try:
            wave = _read_audio(r.audio_path, cfg.dsp)
        except (OSError, ValueError) as exc:
            errors.append({"id": r.id, "error": str(exc)})
            continue
        for k, clip in enumerate(dsp.segment(wave, cfg.dsp.clip_seconds)):
            raw = dsp.logmel(clip, cfg.dsp)
            total += float(raw.values.sum())
            total_sq += float(np.square(raw.values).sum())
            count += raw.values.size
            emb_id = f"{r.id}#{k}"
            items.append((emb_id, backbone.extract(dsp.standardize(raw, cfg.dsp))))
            audio = os.path.relpath(Path(r.audio_path).resolve(), out.resolve())
            rows.append({"id": emb_id, "embedding_id": emb_id, "audio_path": audio,
                         "segment": k, "labels": r.labels, "split": r.split})
    save_embeddings(out / STORE_NAME, items)
    (out / "manifest.jsonl").write_text("".join(json.dumps(x) + "\n" for x in rows))
    mean = total / count if count else None
    std = float(np.sqrt(max(total_sq / count - mean * mean, 0.0))) if count else None
    stats = {"count": len(items), "values": count, "logmel_mean": mean, "logmel_std": std,
             "embedding_shape": list(items[0][1].values.shape) if items else None}
    (out / "stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    if errors:
        (out / "errors.json").write_text(json.dumps(errors, indent=2) + "\n")
        log.error("%d record(s) failed; see %s", len(errors), out / "errors.json")
        return 1
    log.info("wrote %d embeddings to %s", len(items), out / STORE_NAME)
    return 0


def _audio_featurizer(records, y, cfg: RunConfig, backbone: ToyBackbone):
    pool = [_read_audio(p, cfg.dsp) for p in cfg.background]
    pipe = AugmentPipeline(cfg.augment, cfg.dsp, pool, pool)
    waves = [record_clip(r, cfg.dsp) for r in records]

    def featurize(idx, epoch, batch_index):
        clips = [LabeledClip(waves[i], y[i].astype(np.int8)) for i in idx]
        specs, labels = pipe(clips, epoch, batch_index)
        return np.stack([backbone.extract(s).values for s in specs]), labels.astype(np.float64)

    return featurize


def cmd_train(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    records = read_manifest(args.manifest, cfg.classes)
    train_recs = _split(records, "train")
    if not train_recs:
        raise RuntimeError("manifest has no train records")
    write_snapshot(out, cfg, "train", {"manifest": str(args.manifest)})
    backbone = ToyBackbone(cfg.backbone)
    z, y, train_recs = load_split(train_recs, cfg, args.manifest, backbone)
    val = None
    val_recs = _split(records, "val")
    if val_recs:
        zv, yv, val_recs = load_split(val_recs, cfg, args.manifest, backbone)
        val = EmbeddingDataset(zv, yv, [r.id for r in val_recs])
    bank = init_bank(len(cfg.classes), cfg.per_class, z.shape[-1], seed=cfg.seed,
                     class_names=cfg.classes)
    bank.metadata.update({"seed": cfg.seed, "backbone_checksum": backbone.checksum()})
    dataset = EmbeddingDataset(z, y, [r.id for r in train_recs])
    featurize = None
    if cfg.augment_enabled:
        if any(r.audio_path is None for r in train_recs):
            raise RuntimeError("augmentation needs audio_path for every train record")
        featurize = _audio_featurizer(train_recs, y, cfg, backbone)
    state = fit(bank, dataset if featurize is None else None, val, cfg.train, cfg.loss, out,
                featurize=featurize, n_train=len(dataset))
    if featurize is not None and cfg.train.prototype_init == "data":
        log.info("prototypes were warm-started from clean (unaugmented) embeddings")
    summary = {"best_val_loss": state.best_val_loss, "steps": state.step,
               "checkpoint": state.best_checkpoint_path}
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("best checkpoint %s (loss %.6f)", state.best_checkpoint_path, state.best_val_loss)
    return 0


def _load_bank(args, cfg: RunConfig):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    bank = load_checkpoint(args.checkpoint)
    if list(bank.class_names) != list(cfg.classes):
        raise RuntimeError("checkpoint classes differ from the config class list")
    return bank


def cmd_eval(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    bank = _load_bank(args, cfg)
    records = read_manifest(args.manifest, cfg.classes)
    test = _split(records, "test") or records
    write_snapshot(out, cfg, "eval", {"manifest": str(args.manifest),
                                      "checkpoint": str(args.checkpoint)})
    z, y, _ = load_split(test, cfg, args.manifest, ToyBackbone(cfg.backbone))
    if z.ndim != 4:
        raise RuntimeError("no test instances to evaluate")
    mask_path = args.mask or cfg.mask
    mask = evaluation.read_mask(mask_path, cfg.classes) if mask_path else None
    from .pipeline import evaluate

    rep = evaluate(z, y, bank, mask, dataset=str(args.manifest))
    evaluation.write_report(out / "report.json", rep)
    log.info("AUROC %s  cmAP %s  top-1 %s", rep["auroc"], rep["cmap"], rep["top1"])
    return 0


def _spectrogram(r: Record, cfg: RunConfig) -> dsp.Spectrogram | None:
    if r.audio_path is None:
        return None
    return dsp.standardize(dsp.logmel(record_clip(r, cfg.dsp), cfg.dsp), cfg.dsp)


def _grid_shape(cfg: RunConfig) -> tuple:
    return cfg.dsp.mel_bins, cfg.dsp.frames


def cmd_project(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    bank = _load_bank(args, cfg)
    records = read_manifest(args.manifest, cfg.classes)
    train = _split(records, "train")
    if not train:
        raise RuntimeError("manifest has no train records")
    write_snapshot(out, cfg, "project", {"manifest": str(args.manifest),
                                         "checkpoint": str(args.checkpoint), "k": args.k})
    backbone = ToyBackbone(cfg.backbone)
    z, _, train = load_split(train, cfg, args.manifest, backbone)
    proj = explain.project(bank, z, args.k, ids=[r.id for r in train])
    by_id = {r.id: (i, r) for i, r in enumerate(train)}
    sf, st = cfg.backbone.strides
    rf, rt = cfg.backbone.receptive_field
    root = out / "explanations"
    entries = []
    for (c, j), ranked in sorted(proj.items()):
        for e in ranked:
            i, r = by_id[e.instance_id]
            emb = EmbeddingMap(z[i], sf, st, rf, rt)
            s = _spectrogram(r, cfg)
            shape = s.values.shape if s is not None else _grid_shape(cfg)
            cell_map = similarity(emb, bank).maps[c, j]
            hm = explain.Heatmap(explain.upscale(cell_map, shape, (sf, st), (rf, rt)), (c, j),
                                 e.instance_id)
            e.box = explain.percentile_box(hm)
            stem = root / cfg.classes[c] / f"proto_{j}" / f"rank_{e.rank}"
            if s is not None:
                explain.render(s, hm, e.box, stem, e.similarity)
            else:
                _write_box_csv(stem, hm, e)
            entries.append(e)
    explain.write_index(root / "index.json", entries, bank)
    log.info("projected %d prototypes onto %d instances", len(proj), len(train))
    return 0


def _write_box_csv(stem: Path, hm, e) -> None:
    import csv

    stem.parent.mkdir(parents=True, exist_ok=True)
    with open(stem.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(explain.CSV_FIELDS)
        w.writerow([*hm.prototype_id, hm.instance_id, f"{e.similarity:.8f}", *e.box])


def cmd_explain(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    bank = _load_bank(args, cfg)
    records = read_manifest(args.manifest, cfg.classes)
    test = [r for r in (_split(records, "test") or records) if r.audio_path is not None]
    if not test:
        raise RuntimeError("explain needs test records with audio")
    write_snapshot(out, cfg, "explain", {"manifest": str(args.manifest),
                                         "checkpoint": str(args.checkpoint),
                                         "top_m": args.top_m})
    backbone = ToyBackbone(cfg.backbone)
    projection = None
    index = out / "explanations" / "index.json"
    if index.exists():
        projection = _read_projection(index)
    root = out / "local"
    summary = []
    for r in test:
        clips = ([record_clip(r, cfg.dsp)] if r.segment is not None else
                 dsp.segment(_read_audio(r.audio_path, cfg.dsp), cfg.dsp.clip_seconds))
        for k, clip in enumerate(clips):
            s = dsp.standardize(dsp.logmel(clip, cfg.dsp), cfg.dsp)
            z = backbone.extract(s)
            ex = explain.explain_prediction(s, z, bank, args.top_m, projection)
            name = r.id if r.segment is not None else f"{r.id}#{k}"
            stem_dir = root / _safe(name)
            for rank, contrib in enumerate(ex.contributions):
                contrib.heatmap.instance_id = name
                c, j = contrib.prototype_id
                explain.render(s, contrib.heatmap, contrib.box,
                               stem_dir / f"rank_{rank}_{_safe(cfg.classes[c])}_{j}",
                               contrib.similarity)
            stem_dir.mkdir(parents=True, exist_ok=True)
            (stem_dir / "explanation.json").write_text(
                json.dumps({"id": name, **ex.to_dict()}, indent=2) + "\n")
            summary.append(name)
    (root / "index.json").write_text(json.dumps({"instances": summary}, indent=2) + "\n")
    return 0


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def _read_projection(path: Path) -> dict:
    data = json.loads(path.read_text())
    out = {}
    for e in data["entries"]:
        entry = explain.ProjectionEntry(tuple(e["prototype_id"]), e["instance_id"],
                                        e["similarity"], tuple(e["argmax_cell"]), e["rank"],
                                        tuple(e["box"]) if e["box"] is not None else None)
        out.setdefault(entry.prototype_id, []).append(entry)
    return out


def cmd_render_audio(args, cfg: RunConfig) -> int:
    """Griffin-Lim WAVs for the boxed regions of an existing projection under ``--out``."""
    out = Path(args.out)
    index = out / "explanations" / "index.json"
    if not index.exists():
        raise RuntimeError(f"{index} not found; run `project` first")
    records = {r.id: r for r in read_manifest(args.manifest, cfg.classes)}
    projection = _read_projection(index)
    written = 0
    for (c, j), entries in sorted(projection.items()):
        for e in entries:
            r = records.get(e.instance_id)
            if r is None or r.audio_path is None:
                log.warning("no audio for %s; skipping", e.instance_id)
                continue
            s = _spectrogram(r, cfg)
            path = out / "explanations" / cfg.classes[c] / f"proto_{j}" / f"rank_{e.rank}.wav"
            path.parent.mkdir(parents=True, exist_ok=True)
            explain.write_box_audio(s, e.box, cfg.dsp, path, seed=cfg.seed)
            written += 1
    log.info("wrote %d WAV file(s)", written)
    return 0


def cmd_synth(args, cfg: RunConfig) -> int:
    """Write the planted-motif corpus as WAVs plus a manifest (a desk-scale demo dataset)."""
    if len(cfg.classes) != len(synthetic.MOTIFS):
        raise UsageError(f"the synthetic corpus has {len(synthetic.MOTIFS)} classes; "
                         f"the config lists {len(cfg.classes)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "audio").mkdir(exist_ok=True)
    rows, truth = [], {}
    for split, n, offset in (("train", args.n_train, 1), ("val", args.n_val, 3),
                             ("test", args.n_test, 2)):
        for clip in synthetic.make_corpus(n, cfg.seed * 1000 + offset, cfg.dsp, prefix=split):
            path = out / "audio" / f"{clip.clip_id}.wav"
            dsp.write_wav(path, clip.waveform)
            names = [cfg.classes[c] for c in np.flatnonzero(clip.labels)]
            rows.append({"id": clip.clip_id, "audio_path": f"audio/{path.name}",
                         "labels": names, "split": split})
            truth[clip.clip_id] = [{"class": cfg.classes[c], "box": list(b)} for c, b in clip.boxes]
    (out / "manifest.jsonl").write_text("".join(json.dumps(x) + "\n" for x in rows))
    (out / "boxes.json").write_text(json.dumps(truth, indent=2) + "\n")
    return 0


COMMANDS = {"preprocess": cmd_preprocess, "train": cmd_train, "eval": cmd_eval,
            "project": cmd_project, "explain": cmd_explain, "render-audio": cmd_render_audio,
            "synth": cmd_synth}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protoaudio", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=True):
        p.add_argument("-v", "--verbose", action="store_true", help="log progress")
        p.add_argument("--config", help="TOML run config")
        p.add_argument("--out", required=True, help="output / run directory")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        if manifest:
            p.add_argument("--manifest", required=True, help="JSON-lines manifest")
        return p

    common(sub.add_parser("preprocess", help="audio -> embedding store"))
    common(sub.add_parser("train", help="fit prototypes and head"))
    p = common(sub.add_parser("eval", help="AUROC / cmAP / top-1 report"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mask", help="file of class names to evaluate")
    p = common(sub.add_parser("project", help="top-k training exemplars per prototype"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", type=int, default=5)
    p = common(sub.add_parser("explain", help="local explanations for test clips"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--top-m", type=int, default=5)
    common(sub.add_parser("render-audio", help="Griffin-Lim audio for projected boxes"))
    p = common(sub.add_parser("synth", help="write the synthetic motif corpus"), manifest=False)
    p.add_argument("--n-train", type=int, default=400)
    p.add_argument("--n-val", type=int, default=0)
    p.add_argument("--n-test", type=int, default=100)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    for flag in ("k", "top_m", "n_train", "n_val", "n_test"):
        value = getattr(args, flag, None)
        if value is not None and value < (1 if flag in ("k", "top_m") else 0):
            parser.error(f"--{flag.replace('_', '-')} must be positive")
    try:
        cfg = load_config(args.config, args.seed)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"protoaudio: usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 1
        log.debug("failure", exc_info=True)
        print(f"protoaudio: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
