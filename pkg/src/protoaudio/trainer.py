"""Phase-2 training: AdamW over prototypes and head with a warmup + cosine schedule."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .objective import LossConfig, evaluate_total_loss, ortho_loss, total_loss_and_grads
from .protonet import PrototypeBank, save_checkpoint, unit_cells

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr_prototypes: float = 0.05
    lr_head: float = 5e-4
    weight_decay: float = 1e-4
    warmup_ratio: float = 0.05
    betas: tuple = (0.9, 0.999)
    eps_adam: float = 1e-8
    seed: int = 0
    # "data": seed prototypes from discriminative training cells; "random": keep the bank as given
    prototype_init: str = "data"

    def __post_init__(self):
        if self.prototype_init not in ("data", "random"):
            raise ValueError("prototype_init must be 'data' or 'random'")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ValueError("warmup_ratio must be in [0, 1)")
        if self.lr_prototypes < 0 or self.lr_head < 0:
            raise ValueError("learning rates must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def lr_at(step: int, total_steps: int, base_lr: float, warmup_ratio: float) -> float:
    """Linear warmup from 0, then half-cosine decay to 0 at ``total_steps``."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError("step must lie in [0, total_steps]")
    warmup = warmup_ratio * total_steps
    if step < warmup:
        return base_lr * step / warmup
    progress = (step - warmup) / (total_steps - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Decoupled-weight-decay Adam over named parameter arrays, updated in place."""

    def __init__(self, params: dict, betas=(0.9, 0.999), eps=1e-8):
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict, lrs: dict, decay: dict) -> None:
        b1, b2 = self.betas
        self.t += 1
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            lr = lrs[k]
            if lr == 0.0:
                continue
            if decay.get(k, 0.0):
                p -= lr * decay[k] * p
            p -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_dict(self) -> dict:
        out = {"t": np.array(self.t)}
        for k in self.m:
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    def load_state_dict(self, state) -> None:
        self.t = int(state["t"])
        for k in self.m:
            self.m[k] = np.array(state[f"m.{k}"], dtype=np.float64)
            self.v[k] = np.array(state[f"v.{k}"], dtype=np.float64)


# parameter name -> optimizer group
GROUPS = {"prototypes": "prototypes", "head_weights": "head", "head_bias": "head"}


@dataclass
class EmbeddingDataset:
    """In-memory (N, H, W, D) embeddings with binary labels and string ids."""

    embeddings: np.ndarray
    labels: np.ndarray
    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.embeddings.shape[0] != self.labels.shape[0]:
            raise ValueError("embeddings and labels disagree on N")
        # a NaN cell would otherwise be read as a zero (silent) cell
        if not np.all(np.isfinite(self.embeddings)):
            raise ValueError("embeddings contain non-finite values")
        if not self.ids:
            self.ids = [str(i) for i in range(len(self))]

    def __len__(self):
        return self.embeddings.shape[0]


@dataclass
class TrainState:
    bank: PrototypeBank
    optimizer: AdamW
    step: int = 0
    epoch: int = 0
    total_steps: int = 0
    best_val_loss: float = math.inf
    best_checkpoint_path: str | None = None
    history: list = field(default_factory=list)

    @classmethod
    def fresh(cls, bank: PrototypeBank, cfg: TrainConfig, n_train: int) -> "TrainState":
        params = _params(bank)
        steps = cfg.epochs * math.ceil(n_train / cfg.batch_size)
        return cls(bank, AdamW(params, cfg.betas, cfg.eps_adam), total_steps=steps)


def _params(bank: PrototypeBank) -> dict:
    return {"prototypes": bank.prototypes, "head_weights": bank.head_weights,
            "head_bias": bank.head_bias}


def shuffle_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch), 7])).permutation(n)


def warm_start(bank: PrototypeBank, embeddings: np.ndarray, labels: np.ndarray, seed: int,
               n_candidates: int = 256, n_eval: int = 200, max_cosine: float = 0.5
               ) -> PrototypeBank:
    """Seed prototypes with training cells that separate their class from the rest.

    For each class, ``n_candidates`` cells are drawn from positive instances
    and scored by mean pooled similarity on positives minus negatives over a
    random evaluation subset. The best candidates whose mutual |cosine| stays
    below ``max_cosine`` replace the class's prototypes; slots left unfilled
    (and classes without positives) keep their current values. Modifies
    ``bank`` in place and returns it.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if z.ndim != 4 or z.shape[0] != y.shape[0]:
        raise ValueError("embeddings must be (N, H, W, D) with one label row per instance")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 11]))
    unit, _ = unit_cells(z)
    n, h, w, d = z.shape
    cells = unit.reshape(n, h * w, d)
    ev = rng.choice(n, size=min(n_eval, n), replace=False)
    for c in range(bank.num_classes):
        pos = np.flatnonzero(y[:, c] == 1)
        if pos.size == 0:
            continue
        cand = cells[rng.choice(pos, size=n_candidates), rng.integers(0, h * w, size=n_candidates)]
        cand = cand[np.linalg.norm(cand, axis=1) > 0]
        pooled = np.einsum("nkd,md->nmk", cells[ev], cand, optimize=True).max(axis=2)
        is_pos = y[ev, c] == 1
        if not is_pos.any() or is_pos.all():
            score = pooled.mean(axis=0)
        else:
            score = pooled[is_pos].mean(axis=0) - pooled[~is_pos].mean(axis=0)
        chosen = []
        for m in np.argsort(-score, kind="stable"):
            if all(abs(cand[m] @ cand[k]) < max_cosine for k in chosen):
                chosen.append(m)
            if len(chosen) == bank.per_class:
                break
        for j, m in enumerate(chosen):
            bank.prototypes[c, j] = cand[m]
    return bank


# featurize(batch_indices, epoch, batch_index) -> (embeddings (B,H,W,D), labels (B,C))
Featurizer = Callable[[np.ndarray, int, int], tuple]


def train_epoch(state: TrainState, dataset: EmbeddingDataset | None, cfg: TrainConfig,
                loss_cfg: LossConfig, featurize: Featurizer | None = None, n: int | None = None,
                log_fh=None) -> TrainState:
    """One pass of shuffled mini-batches with AdamW and non-negativity projection.

    Either ``dataset`` (precomputed embeddings) or ``featurize`` together with
    ``n`` (instances produced on the fly, e.g. augmented audio) must be given.
    """
    n = len(dataset) if dataset is not None else n
    if not n:
        raise TrainingError("training set is empty")
    if state.total_steps == 0:
        state.total_steps = cfg.epochs * math.ceil(n / cfg.batch_size)
    order = shuffle_order(cfg.seed, state.epoch, n)
    params = _params(state.bank)
    decay = {"prototypes": cfg.weight_decay, "head_weights": cfg.weight_decay, "head_bias": 0.0}
    base = {"prototypes": cfg.lr_prototypes, "head": cfg.lr_head}
    for b, start in enumerate(range(0, n, cfg.batch_size)):
        idx = order[start:start + cfg.batch_size]
        if featurize is not None:
            z, y = featurize(idx, state.epoch, b)
        else:
            z, y = dataset.embeddings[idx], dataset.labels[idx]
        report = total_loss_and_grads(z, y, state.bank, loss_cfg)
        if not np.isfinite(report.total) or not np.isfinite(report.grad_norm()):
            ids = [dataset.ids[i] for i in idx] if dataset is not None else idx.tolist()
            raise TrainingError(f"non-finite loss at step {state.step}; batch ids: {ids}")
        step_for_lr = min(state.step, state.total_steps)
        group_lr = {g: lr_at(step_for_lr, state.total_steps, base[g], cfg.warmup_ratio)
                    for g in base}
        lrs = {k: group_lr[GROUPS[k]] for k in params}
        grads = {"prototypes": report.grad_prototypes, "head_weights": report.grad_weights,
                 "head_bias": report.grad_bias}
        state.optimizer.step(params, grads, lrs, decay)
        state.bank.project_weights()
        state.step += 1
        record = {"step": state.step, "epoch": state.epoch, "lr_prototypes": group_lr["prototypes"],
                  "lr_head": group_lr["head"], "asym": report.asym, "ortho": report.ortho,
                  "total": report.total, "grad_norm": report.grad_norm()}
        state.history.append(record)
        if log_fh is not None:
            log_fh.write(json.dumps(record) + "\n")
    state.epoch += 1
    return state


def validate(bank: PrototypeBank, dataset: EmbeddingDataset, loss_cfg: LossConfig,
             batch_size: int = 256) -> float:
    """Total loss averaged over the full set, without augmentation or mutation."""
    if len(dataset) == 0:
        raise TrainingError("validation set is empty")
    no_ortho = LossConfig(loss_cfg.gamma_pos, loss_cfg.gamma_neg, loss_cfg.clip_m, 0.0)
    asym_sum = 0.0
    for start in range(0, len(dataset), batch_size):
        z = dataset.embeddings[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        asym_sum += evaluate_total_loss(z, y, bank, no_ortho) * z.shape[0]
    return asym_sum / len(dataset) + loss_cfg.lambda1 * ortho_loss(bank.prototypes)[0]


def fit(bank: PrototypeBank, train: EmbeddingDataset | None, val: EmbeddingDataset | None,
        cfg: TrainConfig, loss_cfg: LossConfig, out_dir: str | Path | None = None,
        featurize: Featurizer | None = None, n_train: int | None = None) -> TrainState:
    """Train for ``cfg.epochs``, validating once per epoch and keeping the best checkpoint.

    When ``val`` is None the training loss of the epoch is used for selection.
    Returns the final state; ``state.bank`` is replaced by the best bank.
    """
    n = len(train) if train is not None else n_train
    if cfg.prototype_init == "data":
        if train is not None:
            warm_start(bank, train.embeddings, train.labels, cfg.seed)
        else:
            log.warning("data-driven prototype init needs precomputed embeddings; keeping the given bank")
    state = TrainState.fresh(bank, cfg, n)
    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "train_log.jsonl", "w")
    best_bank = bank.copy()
    try:
        for _ in range(cfg.epochs):
            train_epoch(state, train, cfg, loss_cfg, featurize, n, log_fh)
            if val is not None:
                loss = validate(state.bank, val, loss_cfg)
            else:
                losses = [r["total"] for r in state.history if r["epoch"] == state.epoch - 1]
                loss = float(np.mean(losses))
            log.info("epoch %d validation loss %.6f", state.epoch, loss)
            if log_fh is not None:
                log_fh.write(json.dumps({"epoch": state.epoch, "val_loss": loss}) + "\n")
            if loss < state.best_val_loss:
                state.best_val_loss = loss
                best_bank = state.bank.copy()
                if out is not None:
                    path = out / "best.appb"
                    save_checkpoint(path, best_bank, {"epoch": state.epoch, "val_loss": loss})
                    save_optimizer_state(out / "best.optim.npz", state)
                    state.best_checkpoint_path = str(path)
    finally:
        if log_fh is not None:
            log_fh.close()
    state.bank = best_bank
    return state


def save_optimizer_state(path: str | Path, state: TrainState) -> None:
    """Sidecar with full-precision parameters and AdamW moments for resuming."""
    arrays = {f"param.{k}": v for k, v in _params(state.bank).items()}
    arrays.update(state.optimizer.state_dict())
    arrays["counters"] = np.array([state.step, state.epoch, state.total_steps])
    np.savez(path, **arrays)


def load_optimizer_state(path: str | Path, bank: PrototypeBank, cfg: TrainConfig) -> TrainState:
    data = np.load(path)
    for k, v in _params(bank).items():
        v[...] = data[f"param.{k}"]
    opt = AdamW(_params(bank), cfg.betas, cfg.eps_adam)
    opt.load_state_dict(data)
    step, epoch, total = (int(x) for x in data["counters"])
    return TrainState(bank, opt, step=step, epoch=epoch, total_steps=total)
