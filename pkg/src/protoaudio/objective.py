"""Asymmetric classification loss, prototype orthogonality loss, and their gradients."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .protonet import PrototypeBank, head_logits, sigmoid, similarity, unit_cells

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    gamma_pos: float = 0.0
    gamma_neg: float = 2.0
    clip_m: float = 0.05
    lambda1: float = 1.0

    def __post_init__(self):
        if self.gamma_pos < 0 or self.gamma_neg < 0 or self.lambda1 < 0:
            raise ValueError("gamma_pos, gamma_neg and lambda1 must be non-negative")
        if not 0.0 <= self.clip_m < 1.0:
            raise ValueError("clip_m must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossReport:
    asym: float
    ortho: float
    total: float
    grad_prototypes: np.ndarray
    grad_weights: np.ndarray
    grad_bias: np.ndarray
    logits: np.ndarray | None = None

    def grad_norm(self) -> float:
        return float(np.sqrt(np.sum(self.grad_prototypes ** 2) + np.sum(self.grad_weights ** 2)
                             + np.sum(self.grad_bias ** 2)))


def _safe_pow(base: np.ndarray, exponent: float) -> np.ndarray:
    # 0**0 == 1, and negative exponents only ever meet positive bases
    return np.power(base, exponent) if exponent != 0 else np.ones_like(base)


def asym_loss_elementwise(conf: np.ndarray, labels: np.ndarray, cfg: LossConfig
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Per-element asymmetric loss and its derivative w.r.t. the confidence.

    Positives: ``-(1-p)^g+ log p``; negatives: ``-p_m^g- log(1-p_m)`` with
    ``p_m = max(p - m, 0)``. ``p`` is clamped to [1e-7, 1 - 1e-7]; the
    derivative is zero where the clamp or the clip is active.
    """
    conf = np.asarray(conf, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if conf.shape != labels.shape:
        raise ValueError(f"shape mismatch: scores {conf.shape} vs labels {labels.shape}")
    p = np.clip(conf, PROB_CLAMP, 1.0 - PROB_CLAMP)
    inside = (conf > PROB_CLAMP) & (conf < 1.0 - PROB_CLAMP)
    gp, gn = cfg.gamma_pos, cfg.gamma_neg

    q = 1.0 - p
    loss_pos = -_safe_pow(q, gp) * np.log(p)
    d_pos = -_safe_pow(q, gp) / p
    if gp != 0:
        d_pos = d_pos + gp * _safe_pow(q, gp - 1.0) * np.log(p)

    pm = np.maximum(p - cfg.clip_m, 0.0)
    active = pm > 0
    pm_safe = np.where(active, pm, 0.5)   # placeholder, masked out below
    loss_neg = np.where(active, -_safe_pow(pm_safe, gn) * np.log1p(-pm_safe), 0.0)
    d_neg = _safe_pow(pm_safe, gn) / (1.0 - pm_safe)
    if gn != 0:
        d_neg = d_neg - gn * _safe_pow(pm_safe, gn - 1.0) * np.log1p(-pm_safe)
    d_neg = np.where(active, d_neg, 0.0)

    pos = labels > 0.5
    loss = np.where(pos, loss_pos, loss_neg)
    grad = np.where(pos, d_pos, d_neg) * inside
    return loss, grad


def asym_loss(conf: np.ndarray, labels: np.ndarray, cfg: LossConfig
              ) -> tuple[float, np.ndarray]:
    """Mean asymmetric loss over all N x C elements and its gradient w.r.t. the logits."""
    conf = np.asarray(conf, dtype=np.float64)
    loss, d_conf = asym_loss_elementwise(conf, labels, cfg)
    d_logits = d_conf * conf * (1.0 - conf) / loss.size
    return float(loss.mean()), d_logits


def ortho_loss(bank_or_prototypes) -> tuple[float, np.ndarray]:
    """Normalized orthogonality penalty ``sum_c ||P~ P~^T - I||_F^2 / (C J^2)`` and its gradient."""
    protos = (bank_or_prototypes.prototypes if isinstance(bank_or_prototypes, PrototypeBank)
              else np.asarray(bank_or_prototypes, dtype=np.float64))
    c, j, _ = protos.shape
    norms = np.linalg.norm(protos, axis=-1, keepdims=True)
    if np.any(norms < 1e-8):
        raise ValueError("zero-norm prototype")
    unit = protos / norms
    resid = np.einsum("cjd,ckd->cjk", unit, unit) - np.eye(j)
    scale = 1.0 / (c * j * j)
    loss = scale * float(np.sum(resid ** 2))
    d_unit = 4.0 * scale * np.einsum("cjk,ckd->cjd", resid, unit)
    # back through p / ||p||
    radial = np.sum(d_unit * unit, axis=-1, keepdims=True)
    grad = (d_unit - radial * unit) / norms
    return loss, grad


def total_loss_and_grads(embeddings: np.ndarray, labels: np.ndarray, bank: PrototypeBank,
                         cfg: LossConfig) -> LossReport:
    """Asymmetric + lambda1 * orthogonality loss with gradients for every bank parameter.

    ``embeddings`` is an (N, H, W, D) batch; embeddings are constants (frozen
    backbone). Classification gradient reaches a prototype only through the
    winning cell of each instance's max-pool.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n = z.shape[0]
    sim = similarity(z, bank)
    logits = head_logits(sim.pooled, bank)
    conf = sigmoid(logits)
    asym, d_logits = asym_loss(conf, labels, cfg)           # (N, C)

    grad_bias = d_logits.sum(axis=0)
    grad_weights = np.einsum("nc,ncj->cj", d_logits, sim.pooled)
    d_pooled = d_logits[:, :, None] * bank.head_weights[None]   # (N, C, J)

    zt, _ = unit_cells(z)
    h_idx, w_idx = sim.argmax[..., 0], sim.argmax[..., 1]      # (N, C, J)
    winners = zt[np.arange(n)[:, None, None], h_idx, w_idx]     # (N, C, J, D)
    norms = np.linalg.norm(bank.prototypes, axis=-1, keepdims=True)
    pt = bank.prototypes / norms
    # d s / d p = (z~ - s p~) / ||p||; zero cells give s = 0 and z~ = 0, hence no gradient
    d_s_d_p = (winners - sim.pooled[..., None] * pt[None]) / norms[None]
    grad_protos = np.einsum("ncj,ncjd->cjd", d_pooled, d_s_d_p)

    ortho, grad_ortho = ortho_loss(bank.prototypes)
    if cfg.lambda1 != 0:
        grad_protos = grad_protos + cfg.lambda1 * grad_ortho
    return LossReport(asym, ortho, asym + cfg.lambda1 * ortho, grad_protos, grad_weights,
                      grad_bias, logits)


def evaluate_total_loss(embeddings: np.ndarray, labels: np.ndarray, bank: PrototypeBank,
                        cfg: LossConfig) -> float:
    """Loss value only (used by finite-difference checks and validation)."""
    sim = similarity(embeddings, bank)
    conf = sigmoid(head_logits(sim.pooled, bank))
    loss, _ = asym_loss_elementwise(conf, labels, cfg)
    return float(loss.mean()) + cfg.lambda1 * ortho_loss(bank.prototypes)[0]
