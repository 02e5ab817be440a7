"""GRU categorical head for the POI type given arrival time and agent embedding."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

PROB_EPS = 1e-9


@dataclass(frozen=True)
class PoiConfig:
    n_poi: int
    latent_dim: int
    hidden: int = 64
    layers: int = 1

    @property
    def step_width(self) -> int:
        return self.latent_dim + 1 + self.n_poi


class PoiTypeModel(nn.Module):
    def __init__(self, cfg: PoiConfig):
        super().__init__()
        self.cfg = cfg
        self.rnn = nn.GRU(cfg.step_width, cfg.hidden, num_layers=cfg.layers, batch_first=True)
        self.head = nn.Linear(cfg.hidden, cfg.n_poi)
        self.double()

    def forward(self, steps: torch.Tensor, state=None):
        """steps (B, n, D_h+1+K) -> logits (B, n, K), final hidden state."""
        if steps.shape[-1] != self.cfg.step_width:
            raise ValueError(f"step width {steps.shape[-1]} != {self.cfg.step_width}")
        g, state = self.rnn(steps, state)
        return self.head(g), state


def poi_step_features(h, t_norm: float, prev_c=None, n_poi: int | None = None) -> np.ndarray:
    """[h ; t_norm ; previous POI one-hot]; ``prev_c=None`` means first step (all zeros)."""
    h = np.asarray(h, dtype=np.float64).reshape(-1)
    if prev_c is None:
        if n_poi is None:
            raise ValueError("n_poi is required when prev_c is None")
        prev = np.zeros(n_poi)
    else:
        prev = np.asarray(prev_c, dtype=np.float64).reshape(-1)
        if n_poi is not None and prev.shape[0] != n_poi:
            raise ValueError(f"prev_c width {prev.shape[0]} != {n_poi}")
    return np.concatenate([h, [float(t_norm)], prev])


def step_tensor(h: torch.Tensor, t_norm: torch.Tensor, poi: torch.Tensor, n_poi: int) -> torch.Tensor:
    """Batched step features with teacher forcing.

    h (B, D_h), t_norm (B, n), poi (B, n) long; step 0 gets an all-zero
    previous-POI block.
    """
    b, n = t_norm.shape
    prev = torch.zeros(b, n, n_poi, dtype=torch.float64)
    if n > 1:
        prev[:, 1:] = nn.functional.one_hot(poi[:, :-1].clamp_min(0), n_poi).to(torch.float64)
    return torch.cat([h[:, None, :].expand(b, n, h.shape[-1]), t_norm[..., None], prev], dim=-1)


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def poi_distribution(model: PoiTypeModel, features) -> np.ndarray:
    """Distribution over POI types at the last step of a (n, F) feature prefix."""
    x = torch.as_tensor(np.asarray(features, dtype=np.float64))
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("features must be a non-empty (n, F) array")
    with torch.no_grad():
        logits, _ = model(x[None])
    return softmax_np(logits[0, -1].numpy())


def poi_nll(dist, c: int) -> float:
    dist = np.asarray(dist, dtype=np.float64)
    if not 0 <= c < dist.shape[0]:
        raise IndexError(f"POI index {c} out of range [0, {dist.shape[0]})")
    return -math.log(max(float(dist[c]), PROB_EPS))


def poi_nll_torch(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Element-wise -log(max(p_c, eps)) from logits; same floor as :func:`poi_nll`."""
    logp = torch.log_softmax(logits, dim=-1).gather(-1, target[..., None]).squeeze(-1)
    return -torch.clamp(logp, min=math.log(PROB_EPS))
