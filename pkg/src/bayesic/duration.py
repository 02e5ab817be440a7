"""Attention-based neural density over stay duration.

The network maps (h, t, c) to mixture weights; component means and standard
deviations are global learnable parameters shared by every input.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import _kernels

SIGMA_FLOOR = 1e-3
LOSS_EPS = 1e-30
PROB_EPS = 1e-9
BIN_WIDTH = 0.01
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DurationConfig:
    n_poi: int
    latent_dim: int
    n_components: int = 8
    d_model: int = 32
    n_heads: int = 4
    layers: int = 1
    ff_dim: int = 64
    sigma_floor: float = SIGMA_FLOOR


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        for name in ("weights", "means", "stds"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(-1))
        if not (self.weights.shape == self.means.shape == self.stds.shape):
            raise ValueError("weights, means and stds must have equal length")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-6:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if np.any(self.stds <= 0):
            raise ValueError("component stds must be > 0")

    def __len__(self) -> int:
        return self.weights.shape[0]


class DurationModel(nn.Module):
    def __init__(self, cfg: DurationConfig):
        super().__init__()
        self.cfg = cfg
        self.h_proj = nn.Linear(cfg.latent_dim, cfg.d_model)
        self.t_proj = nn.Linear(1, cfg.d_model)
        self.c_embed = nn.Embedding(cfg.n_poi, cfg.d_model)
        layer = nn.TransformerEncoderLayer(cfg.d_model, cfg.n_heads, cfg.ff_dim, dropout=0.0, batch_first=True)
        self.attention = nn.TransformerEncoder(layer, cfg.layers, enable_nested_tensor=False)
        self.head = nn.Linear(cfg.d_model, cfg.n_components)
        k = cfg.n_components
        self.mu = nn.Parameter(torch.linspace(0.0, 1.0, k, dtype=torch.float64))
        self.log_sigma = nn.Parameter(torch.full((k,), math.log(1.0 / k), dtype=torch.float64))
        self.double()

    def init_components(self, d_norm) -> None:
        """Means at the component quantiles of training durations, stds at std / K."""
        d = np.asarray(d_norm, dtype=np.float64)
        k = self.cfg.n_components
        mu = np.quantile(d, (np.arange(k) + 0.5) / k)
        sigma = max(float(np.std(d)) / k, self.cfg.sigma_floor)
        with torch.no_grad():
            self.mu.copy_(torch.as_tensor(mu))
            self.log_sigma.fill_(math.log(sigma))

    def logits(self, h: torch.Tensor, t_norm: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        """h (N, D_h), t_norm (N,), c (N,) long -> mixture logits (N, K_mix)."""
        tokens = torch.stack([self.h_proj(h), self.t_proj(t_norm[:, None]), self.c_embed(c)], dim=1)
        return self.head(self.attention(tokens).mean(dim=1))

    def stds(self) -> torch.Tensor:
        return torch.exp(self.log_sigma).clamp_min(self.cfg.sigma_floor)

    def log_density(self, logits: torch.Tensor, d_norm: torch.Tensor) -> torch.Tensor:
        log_w = torch.log_softmax(logits, dim=-1)
        sigma = self.stds()
        z = (d_norm[..., None] - self.mu) / sigma
        log_pdf = -0.5 * z * z - torch.log(sigma) - _LOG_SQRT_2PI
        return torch.logsumexp(log_w + log_pdf, dim=-1)

    def nll(self, logits: torch.Tensor, d_norm: torch.Tensor) -> torch.Tensor:
        """Element-wise -log(max(density, 1e-30))."""
        return -torch.clamp(self.log_density(logits, d_norm), min=math.log(LOSS_EPS))


def duration_mixture(model: DurationModel, h, t_norm: float, c: int) -> GaussianMixture:
    if not 0 <= c < model.cfg.n_poi:
        raise IndexError(f"POI index {c} out of range [0, {model.cfg.n_poi})")
    with torch.no_grad():
        logits = model.logits(torch.as_tensor(np.asarray(h, dtype=np.float64))[None],
                              torch.tensor([float(t_norm)], dtype=torch.float64),
                              torch.tensor([c]))
        w = torch.softmax(logits[0], dim=-1).numpy()
        return GaussianMixture(w, model.mu.detach().numpy().copy(), model.stds().numpy().copy())


def mixture_density(gm: GaussianMixture, d_norm) -> float | np.ndarray:
    """sum_k m_k N(d; mu_k, sigma_k); scalar in, scalar out."""
    d = np.atleast_1d(np.asarray(d_norm, dtype=np.float64))
    n = d.shape[0]
    out = _kernels.mixture_pdf(d, np.broadcast_to(gm.weights, (n, len(gm))),
                               np.broadcast_to(gm.means, (n, len(gm))),
                               np.broadcast_to(gm.stds, (n, len(gm))))
    return float(out[0]) if np.ndim(d_norm) == 0 else out


def duration_nll(gm: GaussianMixture, d_norm: float) -> float:
    return -math.log(max(mixture_density(gm, d_norm), LOSS_EPS))


def density_to_probability(density):
    """Density times the 0.01 normalised-duration bin, clipped to [1e-9, 1]."""
    return np.clip(np.asarray(density, dtype=np.float64) * BIN_WIDTH, PROB_EPS, 1.0)


def duration_probability(gm: GaussianMixture, d_norm: float) -> float:
    return float(density_to_probability(mixture_density(gm, d_norm)))
