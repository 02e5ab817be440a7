"""Transformer autoencoder producing per-agent embeddings."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
import torch
from torch import nn

from .dataset import MobilityDataset
from .encoding import EncodedSequence, NormalizationStats, sequence_features


@dataclass(frozen=True)
class EmbeddingConfig:
    width: int  # K + 2
    d_model: int = 64
    n_heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 2
    ff_dim: int = 128
    latent_dim: int = 32
    window: int = 64


def sinusoidal_table(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return pe


class EmbeddingModel(nn.Module):
    """Encoder maps [E_0, E_1..E_n] to h (output slot 0); decoder rebuilds E_1..E_n
    from positional queries attending to h."""

    def __init__(self, cfg: EmbeddingConfig):
        super().__init__()
        self.cfg = cfg
        self.e0 = nn.Parameter(torch.randn(cfg.width, dtype=torch.float64))
        self.input_proj = nn.Linear(cfg.width, cfg.d_model)
        self.register_buffer("pe", sinusoidal_table(cfg.window + 1, cfg.d_model), persistent=False)
        enc_layer = nn.TransformerEncoderLayer(cfg.d_model, cfg.n_heads, cfg.ff_dim, dropout=0.0,
                                               batch_first=True)
        self.encoder = nn.TransformerEncoder(enc_layer, cfg.encoder_layers, enable_nested_tensor=False)
        self.to_latent = nn.Linear(cfg.d_model, cfg.latent_dim)
        self.from_latent = nn.Linear(cfg.latent_dim, cfg.d_model)
        dec_layer = nn.TransformerDecoderLayer(cfg.d_model, cfg.n_heads, cfg.ff_dim, dropout=0.0,
                                               batch_first=True)
        self.decoder = nn.TransformerDecoder(dec_layer, cfg.decoder_layers)
        self.output_proj = nn.Linear(cfg.d_model, cfg.width)
        self.double()

    def encode(self, body: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """body (B, n, W), mask (B, n) True on real steps -> h (B, latent_dim)."""
        b, n, w = body.shape
        if w != self.cfg.width:
            raise ValueError(f"input width {w} != model width {self.cfg.width}")
        if n > self.cfg.window:
            raise ValueError(f"sequence length {n} exceeds window {self.cfg.window}")
        x = torch.cat([self.e0.expand(b, 1, w), body], dim=1)
        x = self.input_proj(x) + self.pe[: n + 1]
        pad = None
        if mask is not None:
            pad = torch.cat([torch.zeros(b, 1, dtype=torch.bool, device=mask.device), ~mask], dim=1)
        out = self.encoder(x, src_key_padding_mask=pad)
        return self.to_latent(out[:, 0])

    def decode(self, h: torch.Tensor, n: int, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """h (B, latent_dim) -> reconstruction (B, n, W)."""
        if not 1 <= n <= self.cfg.window:
            raise ValueError(f"n must be in [1, {self.cfg.window}], got {n}")
        b = h.shape[0]
        queries = self.pe[1 : n + 1].expand(b, n, self.cfg.d_model)
        memory = self.from_latent(h)[:, None, :]
        pad = None if mask is None else ~mask
        out = self.decoder(queries, memory, tgt_key_padding_mask=pad)
        return self.output_proj(out)

    def forward(self, body, mask=None):
        h = self.encode(body, mask)
        return h, self.decode(h, body.shape[1], mask)


def embed(model: EmbeddingModel, seq: EncodedSequence) -> np.ndarray:
    """Embedding h of one encoded sequence; the sequence's own prefix is used as E_0."""
    body = torch.as_tensor(seq.body, dtype=torch.float64)[None]
    with torch.no_grad():
        saved = model.e0.detach().clone()
        try:
            model.e0.copy_(torch.as_tensor(seq.prefix, dtype=torch.float64))
            h = model.encode(body)
        finally:
            model.e0.copy_(saved)
    return h[0].numpy().copy()


def reconstruct(model: EmbeddingModel, h, n: int) -> np.ndarray:
    with torch.no_grad():
        out = model.decode(torch.as_tensor(np.asarray(h), dtype=torch.float64)[None], n)
    return out[0].numpy().copy()


def reconstruction_loss(target, recon, mask=None):
    """Mean squared error over real steps: sum ||E_i - Ê_i||^2 / (n * |E|).

    Works on numpy arrays (returns float) or tensors (returns a 0-d tensor).
    Inputs are (n, W) or batched (B, n, W); with a mask, n counts only real
    steps across the whole batch.
    """
    as_numpy = not isinstance(target, torch.Tensor)
    t = torch.as_tensor(target, dtype=torch.float64)
    r = torch.as_tensor(recon, dtype=torch.float64) if as_numpy else recon
    if t.shape != r.shape:
        raise ValueError(f"shape mismatch {tuple(t.shape)} vs {tuple(r.shape)}")
    sq = ((t - r) ** 2).sum(dim=-1)
    if mask is None:
        n = sq.numel()
        total = sq.sum()
    else:
        m = torch.as_tensor(mask, dtype=torch.bool)
        n = int(m.sum())
        total = (sq * m).sum()
    loss = total / (max(n, 1) * t.shape[-1])
    return float(loss) if as_numpy else loss


def window_slices(n: int, window: int) -> list[slice]:
    return [slice(i, min(i + window, n)) for i in range(0, n, window)]


def pad_windows(body: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Split (n, W) into zero-padded (n_windows, window, W) plus a validity mask."""
    slices = window_slices(body.shape[0], window)
    out = np.zeros((len(slices), window, body.shape[1]))
    mask = np.zeros((len(slices), window), dtype=bool)
    for i, s in enumerate(slices):
        k = s.stop - s.start
        out[i, :k] = body[s]
        mask[i, :k] = True
    return out, mask


def compute_agent_embeddings(
    model: EmbeddingModel,
    train: MobilityDataset,
    stats: NormalizationStats,
    agent_ids=None,
) -> dict[int, np.ndarray]:
    """Mean of window embeddings per agent; agents with no training data get zeros."""
    latent = model.cfg.latent_dim
    ids = sorted(train.agents) if agent_ids is None else list(agent_ids)
    out: dict[int, np.ndarray] = {}
    with torch.no_grad():
        for aid in ids:
            seq = train.agents.get(aid)
            if seq is None or len(seq) == 0:
                out[aid] = np.zeros(latent)
                continue
            body = sequence_features(seq.staypoints, stats).body(stats.n_poi)
            windows, mask = pad_windows(body, model.cfg.window)
            h = model.encode(torch.as_tensor(windows), torch.as_tensor(mask))
            out[aid] = h.mean(dim=0).numpy().copy()
    return out


def zero_embeddings(agent_ids, latent_dim: int) -> dict[int, np.ndarray]:
    return {aid: np.zeros(latent_dim) for aid in agent_ids}


def lookup_embedding(embeddings: Mapping[int, np.ndarray], agent_id: int, latent_dim: int) -> np.ndarray:
    h = embeddings.get(agent_id)
    return np.zeros(latent_dim) if h is None else h
