"""Adversarial, contrastive, reconstruction and perceptual objectives."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .autodiff import Tensor, l2_norm
from .autodiff import functional as F

LOG_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1e-6  # adversarial, translation objective
    lambda2: float = 2e-3  # perceptual, translation objective
    lambda3: float = 1.0  # adversarial, coupled objective
    lambda4: float = 0.3  # perceptual, coupled objective
    lambda5: float = 0.3  # reconstruction, coupled objective
    margin: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v < 0 or not np.isfinite(v):
                raise ValueError(f"{f.name} must be a finite non-negative number, got {v}")
        if self.margin <= 0:
            raise ValueError("margin must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _log(p: Tensor) -> Tensor:
    return p.log(LOG_EPS)


def bce_real_fake(p_real: Tensor, p_fake: Tensor) -> Tensor:
    """-[mean log p_real + mean log(1 - p_fake)]."""
    return -(_log(p_real).mean() + _log(1.0 - p_fake).mean())


def d_loss_and_probs(D, real: Tensor, fake: Tensor, cond: Tensor | None
                     ) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Discriminator loss plus the probabilities it assigned to real and fake."""
    if real.shape != fake.shape:
        raise ValueError(f"real {real.shape} and fake {fake.shape} differ")
    p_real, p_fake = D(cond, real), D(cond, fake.detach())
    return bce_real_fake(p_real, p_fake), p_real.data, p_fake.data


def adversarial_d_loss(D, real: Tensor, fake: Tensor, cond: Tensor | None) -> Tensor:
    return d_loss_and_probs(D, real, fake, cond)[0]


def adversarial_g_loss(D, fake: Tensor, cond: Tensor | None) -> Tensor:
    """Non-saturating generator objective -mean log D(fake)."""
    return -_log(D(cond, fake)).mean()


def contrastive_terms(z1: Tensor, z2: Tensor, y: np.ndarray, margin: float) -> Tensor:
    """Per-pair contrastive loss: 1/2 d^2 for genuine (y=0), 1/2 max(0, m-d)^2 for impostor."""
    if z1.shape != z2.shape:
        raise ValueError(f"embedding shapes differ: {z1.shape} vs {z2.shape}")
    y = np.asarray(y, dtype=z1.dtype).reshape(-1)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 (genuine) or 1 (impostor)")
    diff = z1 - z2
    if diff.ndim == 1:
        diff = diff.reshape(1, -1)
    d = l2_norm(diff, axis=1)
    genuine = 0.5 * (diff * diff).sum(axis=1)
    hinge = F.relu(margin - d)
    impostor = 0.5 * hinge * hinge
    return genuine * (1 - y) + impostor * y


def contrastive(z1: Tensor, z2: Tensor, y, margin: float = 1.0) -> Tensor:
    return contrastive_terms(z1, z2, np.atleast_1d(y), margin).mean()


def coupling_loss(z_vis: Tensor, z_nir: Tensor, labels, margin: float = 1.0) -> Tensor:
    """Batch mean of the contrastive loss over (VIS, NIR) embedding pairs."""
    labels = np.asarray(labels)
    if labels.size == 0 or z_vis.shape[0] == 0:
        raise ValueError("empty pair batch")
    if labels.size != z_vis.shape[0]:
        raise ValueError("one label per pair required")
    return contrastive_terms(z_vis, z_nir, labels, margin).mean()


def l2_reconstruction(output: Tensor, target: Tensor) -> Tensor:
    if output.shape != target.shape:
        raise ValueError(f"shapes differ: {output.shape} vs {target.shape}")
    d = output - target
    return (d * d).mean()


def perceptual(output: Tensor, target: Tensor, V) -> Tensor:
    """Mean absolute difference of fixed features; V's parameters get no gradient."""
    if output.shape != target.shape:
        raise ValueError(f"shapes differ: {output.shape} vs {target.shape}")
    return (V(output) - V(target.detach())).abs().mean()


def total_cgan(l2, adv, perc, w: LossWeights):
    return l2 + w.lambda1 * adv + w.lambda2 * perc


def total_cpgan(cpl, gan, perc, l2, w: LossWeights):
    return cpl + w.lambda3 * gan + w.lambda4 * perc + w.lambda5 * l2
