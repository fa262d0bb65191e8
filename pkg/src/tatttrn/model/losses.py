"""Reconstruction and angular-margin losses (torch, differentiable)."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from ..errors import InvalidStateError

BCE_EPS = 1e-7
COS_EPS = 1e-7


def l2_normalize(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return x / x.norm(dim=dim, keepdim=True).clamp_min(1e-12)


def bce(target: torch.Tensor, pred: torch.Tensor, eps: float = BCE_EPS) -> torch.Tensor:
    """Mean per-pixel binary cross-entropy; ``pred`` is clamped to [eps, 1-eps]."""
    if target.shape != pred.shape:
        raise ValueError(f"bce shape mismatch: {tuple(target.shape)} vs {tuple(pred.shape)}")
    p = pred.clamp(eps, 1.0 - eps)
    return -(target * torch.log(p) + (1.0 - target) * torch.log1p(-p)).mean()


def rec_loss(T: torch.Tensor, R_T: torch.Tensor, I: torch.Tensor, R_I: torch.Tensor) -> torch.Tensor:
    return bce(T, R_T) + bce(I, R_I)


def arcface_logits(embeddings: torch.Tensor, labels: torch.Tensor, weights: torch.Tensor,
                   m: float, s: float, eps: float = COS_EPS) -> torch.Tensor:
    """s * cos(theta_j) for j != y, s * cos(theta_y + m) for the true class."""
    if embeddings.ndim != 2 or weights.ndim != 2 or embeddings.shape[1] != weights.shape[1]:
        raise ValueError("embeddings must be NxK and weights CxK")
    labels = torch.as_tensor(labels, dtype=torch.long, device=embeddings.device)
    if labels.shape != (embeddings.shape[0],):
        raise ValueError("need one label per embedding")
    C = weights.shape[0]
    if labels.numel() and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    cos = (l2_normalize(embeddings) @ l2_normalize(weights).t()).clamp(-1.0, 1.0)
    cos_y = cos.gather(1, labels[:, None])
    # cos(theta + m) = cos.cos(m) - sin.sin(m); clamp keeps sqrt differentiable
    sin_y = torch.sqrt(1.0 - cos_y.clamp(-1.0 + eps, 1.0 - eps) ** 2)
    phi = cos_y * math.cos(m) - sin_y * math.sin(m)
    logits = cos.scatter(1, labels[:, None], phi)
    return s * logits


def arcface_loss(embeddings: torch.Tensor, labels: torch.Tensor, weights: torch.Tensor,
                 m: float = 0.5, s: float = 64.0) -> torch.Tensor:
    logits = arcface_logits(embeddings, labels, weights, m, s)
    return F.cross_entropy(logits, torch.as_tensor(labels, dtype=torch.long))


def total_loss(L_I_arc, L_T_arc, L_rec, lam: float = 4.0):
    """(L_I_arc + L_T_arc + lam * L_rec) / 3. Raises on non-finite input."""
    parts = [torch.as_tensor(v) for v in (L_I_arc, L_T_arc, L_rec)]
    if not all(bool(torch.isfinite(p).all()) for p in parts) or not math.isfinite(lam):
        raise InvalidStateError("non-finite loss component")
    return (L_I_arc + L_T_arc + lam * L_rec) / 3.0
